#include "skipdet/layers.hpp"

#include <algorithm>
#include <cstring>

namespace skipdet {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "Conv2d";
        case LayerKind::DepthwiseConv2d: return "DepthwiseConv2d";
        case LayerKind::BatchNorm: return "BatchNorm";
        case LayerKind::ReLU6: return "ReLU6";
        case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
        case LayerKind::Linear: return "Linear";
        case LayerKind::Softmax: return "Softmax";
        case LayerKind::Add: return "Add";
    }
    return "?";
}

void LayerSpec::validate() const {
    if (kind == LayerKind::Conv2d || kind == LayerKind::DepthwiseConv2d) {
        if (in_ch <= 0 || out_ch <= 0) throw std::invalid_argument("conv: channels must be > 0");
        if (kernel <= 0 || kernel % 2 == 0) throw std::invalid_argument("conv: kernel must be odd");
        if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
        if (groups < 1 || in_ch % groups || out_ch % groups)
            throw std::invalid_argument("conv: bad group count");
    }
    if (kind == LayerKind::Linear && (in_ch <= 0 || out_ch <= 0))
        throw std::invalid_argument("linear: channels must be > 0");
    if (kind == LayerKind::BatchNorm && in_ch <= 0)
        throw std::invalid_argument("batchnorm: channels must be > 0");
}

namespace {

template <typename T>
inline void axpy_n(std::size_t n, T a, const T* x, T* y) {
    if constexpr (std::is_same_v<T, float>) {
        kern::axpy(n, a, x, y);
    } else {
        for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
    }
}

template <typename T>
inline T dot_n(std::size_t n, const T* x, const T* y) {
    if constexpr (std::is_same_v<T, float>) {
        return kern::dot(n, x, y);
    } else {
        T acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc = std::fma(x[i], y[i], acc);
        return acc;
    }
}

template <typename T>
T kaiming_bound(int fan_in) {
    return T(std::sqrt(6.0 / double(fan_in)));
}

template <typename T>
void init_uniform(TensorT<T>& t, Rng& rng, T bound) {
    for (auto& v : t.data) v = T(rng.uniform(-double(bound), double(bound)));
}

inline int conv_out_dim(int in, int k, int s) {
    int p = k / 2;
    return (in + 2 * p - k) / s + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d (grouped; depthwise is groups == channels)
// ---------------------------------------------------------------------------

template <typename T>
Conv2dLayer<T>::Conv2dLayer(LayerSpec spec, Rng* init_rng) : Layer<T>(spec) {
    spec.validate();
    int cg = spec.in_ch / spec.groups;
    weight = TensorT<T>({spec.out_ch, cg, spec.kernel, spec.kernel});
    if (spec.bias) bias = TensorT<T>({spec.out_ch});
    if (init_rng) init_uniform(weight, *init_rng, kaiming_bound<T>(cg * spec.kernel * spec.kernel));
}

template <typename T>
void Conv2dLayer<T>::im2col(const TensorT<T>& x, int n, int c0, int cg) {
    const LayerSpec& sp = this->spec_;
    int k = sp.kernel, s = sp.stride, p = k / 2;
    int H = x.dim(2), W = x.dim(3);
    std::size_t plane = std::size_t(out_h_) * out_w_;
    cols_.assign(std::size_t(cg) * k * k * plane, T(0));
    for (int c = 0; c < cg; ++c) {
        const T* src = &x.data[((std::size_t(n) * x.dim(1) + c0 + c) * H) * W];
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                T* row = &cols_[(std::size_t(c) * k * k + kh * k + kw) * plane];
                for (int oh = 0; oh < out_h_; ++oh) {
                    int ih = oh * s - p + kh;
                    if (ih < 0 || ih >= H) continue;
                    const T* in_row = src + std::size_t(ih) * W;
                    T* out_row = row + std::size_t(oh) * out_w_;
                    for (int ow = 0; ow < out_w_; ++ow) {
                        int iw = ow * s - p + kw;
                        if (iw >= 0 && iw < W) out_row[ow] = in_row[iw];
                    }
                }
            }
        }
    }
}

template <typename T>
TensorT<T> Conv2dLayer<T>::forward(const TensorT<T>& x, bool train) {
    const LayerSpec& sp = this->spec_;
    if (x.ndim() != 4 || x.dim(1) != sp.in_ch)
        throw std::invalid_argument(std::string(layer_kind_name(sp.kind)) +
                                    ": input " + x.shape_str() + " incompatible with in_ch=" +
                                    std::to_string(sp.in_ch));
    int N = x.dim(0);
    out_h_ = conv_out_dim(x.dim(2), sp.kernel, sp.stride);
    out_w_ = conv_out_dim(x.dim(3), sp.kernel, sp.stride);
    std::size_t plane = std::size_t(out_h_) * out_w_;
    TensorT<T> y({N, sp.out_ch, out_h_, out_w_});

    const TensorT<T>* w = &weight;
    if (weight_quant) {
        saved_weight_ = weight_quant->apply(weight);
        w = &saved_weight_;
    } else if (train) {
        saved_weight_ = TensorT<T>();
    }

    int cg = sp.in_ch / sp.groups;
    int og = sp.out_ch / sp.groups;
    std::size_t wrow = std::size_t(cg) * sp.kernel * sp.kernel;
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < sp.groups; ++g) {
            im2col(x, n, g * cg, cg);
            for (int m = 0; m < og; ++m) {
                int oc = g * og + m;
                T* out_row = &y.data[(std::size_t(n) * sp.out_ch + oc) * plane];
                if (sp.bias) std::fill(out_row, out_row + plane, bias.data[oc]);
                const T* wr = &w->data[std::size_t(oc) * wrow];
                for (std::size_t kk = 0; kk < wrow; ++kk)
                    axpy_n(plane, wr[kk], &cols_[kk * plane], out_row);
            }
        }
    }
    if (train) {
        saved_input_ = x;
        this->has_state_ = true;
    }
    return y;
}

template <typename T>
TensorT<T> Conv2dLayer<T>::backward(const TensorT<T>& gy) {
    this->require_state(layer_kind_name(this->spec_.kind));
    const LayerSpec& sp = this->spec_;
    const TensorT<T>& x = saved_input_;
    const TensorT<T>& w = saved_weight_.numel() ? saved_weight_ : weight;
    int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    int k = sp.kernel, s = sp.stride, p = k / 2;
    std::size_t plane = std::size_t(out_h_) * out_w_;
    weight.ensure_grad();
    if (sp.bias) bias.ensure_grad();

    TensorT<T> dx({N, sp.in_ch, H, W});
    int cg = sp.in_ch / sp.groups;
    int og = sp.out_ch / sp.groups;
    std::size_t wrow = std::size_t(cg) * k * k;
    std::vector<T> dcols(wrow * plane);

    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < sp.groups; ++g) {
            im2col(x, n, g * cg, cg);
            std::fill(dcols.begin(), dcols.end(), T(0));
            for (int m = 0; m < og; ++m) {
                int oc = g * og + m;
                const T* gr = &gy.data[(std::size_t(n) * sp.out_ch + oc) * plane];
                T* dwr = &weight.grad[std::size_t(oc) * wrow];
                for (std::size_t kk = 0; kk < wrow; ++kk)
                    dwr[kk] += dot_n(plane, gr, &cols_[kk * plane]);
                if (sp.bias) {
                    T acc = 0;
                    for (std::size_t i = 0; i < plane; ++i) acc += gr[i];
                    bias.grad[oc] += acc;
                }
                const T* wr = &w.data[std::size_t(oc) * wrow];
                for (std::size_t kk = 0; kk < wrow; ++kk)
                    axpy_n(plane, wr[kk], gr, &dcols[kk * plane]);
            }
            // col2im accumulate
            for (int c = 0; c < cg; ++c) {
                T* dst = &dx.data[((std::size_t(n) * sp.in_ch + g * cg + c) * H) * W];
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const T* row = &dcols[(std::size_t(c) * k * k + kh * k + kw) * plane];
                        for (int oh = 0; oh < out_h_; ++oh) {
                            int ih = oh * s - p + kh;
                            if (ih < 0 || ih >= H) continue;
                            T* dst_row = dst + std::size_t(ih) * W;
                            const T* src_row = row + std::size_t(oh) * out_w_;
                            for (int ow = 0; ow < out_w_; ++ow) {
                                int iw = ow * s - p + kw;
                                if (iw >= 0 && iw < W) dst_row[iw] += src_row[ow];
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

template <typename T>
void Conv2dLayer<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".w", &weight});
    if (this->spec_.bias) out.push_back({prefix + ".b", &bias});
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

template <typename T>
BatchNormLayer<T>::BatchNormLayer(LayerSpec spec) : Layer<T>(spec) {
    spec.validate();
    gamma = TensorT<T>({spec.in_ch}, T(1));
    beta = TensorT<T>({spec.in_ch});
    running_mean = TensorT<T>({spec.in_ch});
    running_var = TensorT<T>({spec.in_ch}, T(1));
}

template <typename T>
TensorT<T> BatchNormLayer<T>::forward(const TensorT<T>& x, bool train) {
    const LayerSpec& sp = this->spec_;
    if (x.ndim() != 4 || x.dim(1) != sp.in_ch)
        throw std::invalid_argument("BatchNorm: input " + x.shape_str() + " incompatible with ch=" +
                                    std::to_string(sp.in_ch));
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::size_t plane = std::size_t(H) * W;
    std::size_t cnt = std::size_t(N) * plane;
    TensorT<T> y(x.shape);
    saved_xhat_ = TensorT<T>(x.shape);
    saved_invstd_.assign(std::size_t(C), T(0));
    saved_train_ = train;

    for (int c = 0; c < C; ++c) {
        T mean, var;
        if (train) {
            T sum = 0, sq = 0;
            for (int n = 0; n < N; ++n) {
                const T* src = &x.data[(std::size_t(n) * C + c) * plane];
                for (std::size_t i = 0; i < plane; ++i) {
                    sum += src[i];
                    sq += src[i] * src[i];
                }
            }
            mean = sum / T(cnt);
            var = sq / T(cnt) - mean * mean;
            if (var < T(0)) var = T(0);
            T m = T(sp.bn_momentum);
            running_mean.data[c] = (T(1) - m) * running_mean.data[c] + m * mean;
            running_var.data[c] = (T(1) - m) * running_var.data[c] + m * var;
        } else {
            mean = running_mean.data[c];
            var = running_var.data[c];
        }
        T invstd = T(1) / std::sqrt(var + T(sp.bn_eps));
        saved_invstd_[std::size_t(c)] = invstd;
        T g = gamma.data[c], b = beta.data[c];
        for (int n = 0; n < N; ++n) {
            const T* src = &x.data[(std::size_t(n) * C + c) * plane];
            T* xh = &saved_xhat_.data[(std::size_t(n) * C + c) * plane];
            T* dst = &y.data[(std::size_t(n) * C + c) * plane];
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (src[i] - mean) * invstd;
                dst[i] = g * xh[i] + b;
            }
        }
    }
    this->has_state_ = true;
    return y;
}

template <typename T>
TensorT<T> BatchNormLayer<T>::backward(const TensorT<T>& gy) {
    this->require_state("BatchNorm");
    int N = gy.dim(0), C = gy.dim(1), H = gy.dim(2), W = gy.dim(3);
    std::size_t plane = std::size_t(H) * W;
    std::size_t cnt = std::size_t(N) * plane;
    gamma.ensure_grad();
    beta.ensure_grad();
    TensorT<T> dx(gy.shape);

    for (int c = 0; c < C; ++c) {
        T sum_gy = 0, sum_gy_xh = 0;
        for (int n = 0; n < N; ++n) {
            const T* g = &gy.data[(std::size_t(n) * C + c) * plane];
            const T* xh = &saved_xhat_.data[(std::size_t(n) * C + c) * plane];
            for (std::size_t i = 0; i < plane; ++i) {
                sum_gy += g[i];
                sum_gy_xh += g[i] * xh[i];
            }
        }
        gamma.grad[c] += sum_gy_xh;
        beta.grad[c] += sum_gy;
        T invstd = saved_invstd_[std::size_t(c)];
        T gm = gamma.data[c];
        if (saved_train_) {
            T mg = sum_gy / T(cnt);
            T mgx = sum_gy_xh / T(cnt);
            for (int n = 0; n < N; ++n) {
                const T* g = &gy.data[(std::size_t(n) * C + c) * plane];
                const T* xh = &saved_xhat_.data[(std::size_t(n) * C + c) * plane];
                T* d = &dx.data[(std::size_t(n) * C + c) * plane];
                for (std::size_t i = 0; i < plane; ++i)
                    d[i] = gm * invstd * (g[i] - mg - xh[i] * mgx);
            }
        } else {
            for (int n = 0; n < N; ++n) {
                const T* g = &gy.data[(std::size_t(n) * C + c) * plane];
                T* d = &dx.data[(std::size_t(n) * C + c) * plane];
                for (std::size_t i = 0; i < plane; ++i) d[i] = gm * invstd * g[i];
            }
        }
    }
    return dx;
}

template <typename T>
void BatchNormLayer<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
}

// ---------------------------------------------------------------------------
// ReLU6 / GAP / Linear / Softmax
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> ReLU6Layer<T>::forward(const TensorT<T>& x, bool train) {
    if (act_quant) {
        if (train) this->has_state_ = true;
        return act_quant->forward(x, train);
    }
    TensorT<T> y(x.shape);
    if constexpr (std::is_same_v<T, float>) {
        kern::relu6(x.numel(), x.data.data(), y.data.data());
    } else {
        for (std::size_t i = 0; i < x.numel(); ++i)
            y.data[i] = std::min(std::max(x.data[i], T(0)), T(6));
    }
    if (train) {
        saved_input_ = x;
        this->has_state_ = true;
    }
    return y;
}

template <typename T>
TensorT<T> ReLU6Layer<T>::backward(const TensorT<T>& gy) {
    this->require_state("ReLU6");
    if (act_quant) return act_quant->backward(gy);
    TensorT<T> dx(gy.shape);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
        T v = saved_input_.data[i];
        dx.data[i] = (v > T(0) && v < T(6)) ? gy.data[i] : T(0);
    }
    return dx;
}

template <typename T>
TensorT<T> GlobalAvgPoolLayer<T>::forward(const TensorT<T>& x, bool train) {
    if (x.ndim() != 4) throw std::invalid_argument("GlobalAvgPool: expected 4-d input, got " + x.shape_str());
    int N = x.dim(0), C = x.dim(1);
    std::size_t plane = std::size_t(x.dim(2)) * x.dim(3);
    TensorT<T> y({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = &x.data[(std::size_t(n) * C + c) * plane];
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            y.at(n, c) = acc / T(plane);
        }
    if (train) {
        saved_shape_ = x.shape;
        this->has_state_ = true;
    }
    return y;
}

template <typename T>
TensorT<T> GlobalAvgPoolLayer<T>::backward(const TensorT<T>& gy) {
    this->require_state("GlobalAvgPool");
    TensorT<T> dx(saved_shape_);
    int N = saved_shape_[0], C = saved_shape_[1];
    std::size_t plane = std::size_t(saved_shape_[2]) * saved_shape_[3];
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T g = gy.at(n, c) / T(plane);
            T* dst = &dx.data[(std::size_t(n) * C + c) * plane];
            for (std::size_t i = 0; i < plane; ++i) dst[i] = g;
        }
    return dx;
}

template <typename T>
LinearLayer<T>::LinearLayer(LayerSpec spec, Rng* init_rng) : Layer<T>(spec) {
    spec.validate();
    weight = TensorT<T>({spec.out_ch, spec.in_ch});
    if (spec.bias) bias = TensorT<T>({spec.out_ch});
    if (init_rng) init_uniform(weight, *init_rng, kaiming_bound<T>(spec.in_ch));
}

template <typename T>
TensorT<T> LinearLayer<T>::forward(const TensorT<T>& x, bool train) {
    const LayerSpec& sp = this->spec_;
    if (x.ndim() != 2 || x.dim(1) != sp.in_ch)
        throw std::invalid_argument("Linear: input " + x.shape_str() + " incompatible with in=" +
                                    std::to_string(sp.in_ch));
    int N = x.dim(0);
    const TensorT<T>* w = &weight;
    if (weight_quant) {
        saved_weight_ = weight_quant->apply(weight);
        w = &saved_weight_;
    } else if (train) {
        saved_weight_ = TensorT<T>();
    }
    TensorT<T> y({N, sp.out_ch});
    for (int n = 0; n < N; ++n) {
        const T* xr = &x.data[std::size_t(n) * sp.in_ch];
        for (int o = 0; o < sp.out_ch; ++o) {
            T v = dot_n(std::size_t(sp.in_ch), &w->data[std::size_t(o) * sp.in_ch], xr);
            y.at(n, o) = sp.bias ? v + bias.data[o] : v;
        }
    }
    if (train) {
        saved_input_ = x;
        this->has_state_ = true;
    }
    return y;
}

template <typename T>
TensorT<T> LinearLayer<T>::backward(const TensorT<T>& gy) {
    this->require_state("Linear");
    const LayerSpec& sp = this->spec_;
    const TensorT<T>& w = saved_weight_.numel() ? saved_weight_ : weight;
    int N = saved_input_.dim(0);
    weight.ensure_grad();
    if (sp.bias) bias.ensure_grad();
    TensorT<T> dx({N, sp.in_ch});
    for (int n = 0; n < N; ++n) {
        const T* xr = &saved_input_.data[std::size_t(n) * sp.in_ch];
        T* dxr = &dx.data[std::size_t(n) * sp.in_ch];
        for (int o = 0; o < sp.out_ch; ++o) {
            T g = gy.at(n, o);
            if (g != T(0)) {
                axpy_n(std::size_t(sp.in_ch), g, xr, &weight.grad[std::size_t(o) * sp.in_ch]);
                axpy_n(std::size_t(sp.in_ch), g, &w.data[std::size_t(o) * sp.in_ch], dxr);
            }
            if (sp.bias) bias.grad[o] += g;
        }
    }
    return dx;
}

template <typename T>
void LinearLayer<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".w", &weight});
    if (this->spec_.bias) out.push_back({prefix + ".b", &bias});
}

template <typename T>
void softmax_rows(const TensorT<T>& x, TensorT<T>& out) {
    if (x.ndim() != 2) throw std::invalid_argument("softmax: expected 2-d input, got " + x.shape_str());
    int N = x.dim(0), K = x.dim(1);
    out = TensorT<T>(x.shape);
    for (int n = 0; n < N; ++n) {
        const T* xr = &x.data[std::size_t(n) * K];
        T* yr = &out.data[std::size_t(n) * K];
        T mx = xr[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, xr[k]);
        T sum = 0;
        for (int k = 0; k < K; ++k) {
            yr[k] = std::exp(xr[k] - mx);
            sum += yr[k];
        }
        for (int k = 0; k < K; ++k) yr[k] /= sum;
    }
}

template <typename T>
TensorT<T> SoftmaxLayer<T>::forward(const TensorT<T>& x, bool train) {
    TensorT<T> y;
    softmax_rows(x, y);
    if (train) {
        saved_output_ = y;
        this->has_state_ = true;
    }
    return y;
}

template <typename T>
TensorT<T> SoftmaxLayer<T>::backward(const TensorT<T>& gy) {
    this->require_state("Softmax");
    int N = gy.dim(0), K = gy.dim(1);
    TensorT<T> dx(gy.shape);
    for (int n = 0; n < N; ++n) {
        const T* y = &saved_output_.data[std::size_t(n) * K];
        const T* g = &gy.data[std::size_t(n) * K];
        T dotgy = 0;
        for (int k = 0; k < K; ++k) dotgy += g[k] * y[k];
        for (int k = 0; k < K; ++k) dx.data[std::size_t(n) * K + k] = y[k] * (g[k] - dotgy);
    }
    return dx;
}

template <typename T>
TensorT<T> add_forward(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("Add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    TensorT<T> y = a;
    if constexpr (std::is_same_v<T, float>) {
        kern::add(y.numel(), b.data.data(), y.data.data());
    } else {
        for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += b.data[i];
    }
    return y;
}

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, Rng* init_rng) {
    switch (spec.kind) {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d:
            return std::make_unique<Conv2dLayer<T>>(spec, init_rng);
        case LayerKind::BatchNorm:
            return std::make_unique<BatchNormLayer<T>>(spec);
        case LayerKind::ReLU6:
            return std::make_unique<ReLU6Layer<T>>();
        case LayerKind::GlobalAvgPool:
            return std::make_unique<GlobalAvgPoolLayer<T>>();
        case LayerKind::Linear:
            return std::make_unique<LinearLayer<T>>(spec, init_rng);
        case LayerKind::Softmax:
            return std::make_unique<SoftmaxLayer<T>>();
        case LayerKind::Add:
            throw std::invalid_argument("Add is binary; use add_forward");
    }
    throw std::invalid_argument("unknown layer kind");
}

template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;
template class ReLU6Layer<float>;
template class ReLU6Layer<double>;
template class GlobalAvgPoolLayer<float>;
template class GlobalAvgPoolLayer<double>;
template class LinearLayer<float>;
template class LinearLayer<double>;
template class SoftmaxLayer<float>;
template class SoftmaxLayer<double>;

template TensorT<float> add_forward(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> add_forward(const TensorT<double>&, const TensorT<double>&);
template void softmax_rows(const TensorT<float>&, TensorT<float>&);
template void softmax_rows(const TensorT<double>&, TensorT<double>&);
template std::unique_ptr<Layer<float>> make_layer<float>(const LayerSpec&, Rng*);
template std::unique_ptr<Layer<double>> make_layer<double>(const LayerSpec&, Rng*);

}  // namespace skipdet
