#include "skipdet/quant.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace skipdet::quant {

namespace {

long long round_half_away(double v) { return std::llround(v); }

int clamp_int(long long v, int lo, int hi) {
    return int(std::max((long long)lo, std::min((long long)hi, v)));
}

// round(num / den) with ties away from zero, den > 0
std::int64_t div_round_half_away(std::int64_t num, std::int64_t den) {
    if (num >= 0) return (num + den / 2) / den;
    return -((-num + den / 2) / den);
}

}  // namespace

// ---------------------------------------------------------------------------
// QuantParams
// ---------------------------------------------------------------------------

QuantParams QuantParams::weights_from_minmax(float lo, float hi) {
    if (!(lo <= hi)) throw std::invalid_argument("weights_from_minmax: lo > hi");
    QuantParams p;
    p.qmin = -128;
    p.qmax = 127;
    double s = (double(hi) - double(lo)) / 255.0;
    p.scale = float(std::max(s, 1e-8));
    p.zero_point = clamp_int(round_half_away(p.qmin - lo / p.scale), p.qmin, p.qmax);
    return p;
}

QuantParams QuantParams::activation_from_minmax(float lo, float hi) {
    if (!(lo <= hi)) throw std::invalid_argument("activation_from_minmax: lo > hi");
    lo = std::min(lo, 0.0f);
    hi = std::max(hi, 0.0f);
    QuantParams p;
    p.qmin = 0;
    p.qmax = 255;
    double s = (double(hi) - double(lo)) / 255.0;
    p.scale = float(std::max(s, 1e-8));
    p.zero_point = clamp_int(round_half_away(-lo / p.scale), p.qmin, p.qmax);
    return p;
}

int QuantParams::quantize(float v) const {
    return clamp_int(round_half_away(double(v) / scale) + zero_point, qmin, qmax);
}

// ---------------------------------------------------------------------------
// Weight fake-quant
// ---------------------------------------------------------------------------

Tensor MinMaxWeightQuant::apply(const Tensor& w) {
    return fakequant_weights(w, &params);
}

Tensor fakequant_weights(const Tensor& w, QuantParams* used) {
    if (w.numel() == 0) throw std::invalid_argument("fakequant_weights: empty tensor");
    float lo = w.data[0], hi = w.data[0];
    for (float v : w.data) {
        if (!std::isfinite(v)) throw std::invalid_argument("fakequant_weights: non-finite weight");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    QuantParams p = QuantParams::weights_from_minmax(lo, hi);
    if (used) *used = p;
    Tensor y(w.shape);
    for (std::size_t i = 0; i < w.numel(); ++i) y.data[i] = p.dequantize(p.quantize(w.data[i]));
    return y;
}

// ---------------------------------------------------------------------------
// PactClip
// ---------------------------------------------------------------------------

PactClip::PactClip(float alpha_init) : alpha({1}) {
    if (!(alpha_init > 0)) throw std::invalid_argument("PactClip: alpha_init must be positive");
    alpha.data[0] = alpha_init;
}

Tensor PactClip::forward(const Tensor& x, bool train) {
    if (alpha.data[0] < alpha_floor) alpha.data[0] = alpha_floor;  // positivity projection
    float a = alpha.data[0];
    float s = a / 255.0f;
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        float v = std::min(std::max(x.data[i], 0.0f), a);
        if (quantize) v = s * float(round_half_away(double(v) / s));
        y.data[i] = v;
    }
    if (train) saved_input_ = x;
    return y;
}

Tensor PactClip::backward(const Tensor& gy) {
    if (saved_input_.numel() != gy.numel())
        throw std::logic_error("PactClip: backward without a retained forward state");
    alpha.ensure_grad();
    float a = alpha.data[0];
    Tensor dx(gy.shape);
    double da = 0.0;
    for (std::size_t i = 0; i < gy.numel(); ++i) {
        float v = saved_input_.data[i];
        dx.data[i] = (v > 0.0f && v < a) ? gy.data[i] : 0.0f;
        if (v >= a) da += gy.data[i];
    }
    alpha.grad[0] += float(da) + 2.0f * l2 * a;  // L2 pull folded into the batch gradient
    return dx;
}

// ---------------------------------------------------------------------------
// BN folding
// ---------------------------------------------------------------------------

FoldedConv fold_batchnorm(const Conv2dLayer<float>& conv, const BatchNormLayer<float>& bn) {
    const LayerSpec& sp = conv.spec();
    float eps = bn.spec().bn_eps;
    if (bn.gamma.numel() != std::size_t(sp.out_ch))
        throw std::invalid_argument("fold_batchnorm: channel mismatch");

    FoldedConv out;
    out.weight = conv.weight;
    out.bias = Tensor({sp.out_ch});
    std::size_t per_oc = conv.weight.numel() / std::size_t(sp.out_ch);
    for (int oc = 0; oc < sp.out_ch; ++oc) {
        double var = double(bn.running_var.data[std::size_t(oc)]) + eps;
        if (!(var > 0)) throw std::runtime_error("fold_batchnorm: non-positive variance + eps");
        float f = float(double(bn.gamma.data[std::size_t(oc)]) / std::sqrt(var));
        for (std::size_t i = 0; i < per_oc; ++i)
            out.weight.data[std::size_t(oc) * per_oc + i] *= f;
        float b = sp.bias ? conv.bias.data[std::size_t(oc)] : 0.0f;
        out.bias.data[std::size_t(oc)] =
            bn.beta.data[std::size_t(oc)] + (b - bn.running_mean.data[std::size_t(oc)]) * f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// QatContext
// ---------------------------------------------------------------------------

QatContext::QatContext(ModelGraph& model, QatConfig cfg) : model_(model), cfg_(cfg) {
    if (cfg_.bits != 8 && cfg_.bits != 32)
        throw std::invalid_argument("QatContext: bits must be 8 or 32");
    if (cfg_.bits == 32) return;  // disabled: float path untouched

    model_.for_each_weighted_layer(
        [&](const std::string& name, Conv2dLayer<float>* c, LinearLayer<float>* l) {
            auto q = std::make_unique<MinMaxWeightQuant>();
            if (c) c->weight_quant = q.get();
            if (l) l->weight_quant = q.get();
            wq_[name] = std::move(q);
        });

    auto attach = [&](const std::string& site, ReLU6Layer<float>& act) {
        auto clip = std::make_unique<PactClip>(cfg_.alpha_init);
        clip->l2 = cfg_.alpha_l2;
        act.act_quant = clip.get();
        pact_[site] = {std::move(clip), &act};
    };
    attach("stem.relu6", model_.stem().act);
    auto& blocks = model_.blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        std::string p = "block" + std::to_string(i + 1);
        attach(p + ".relu6a", blocks[i].act1);
        attach(p + ".relu6b", blocks[i].act2);
    }
    if (model_.has_ee()) {
        attach("ee.relu6a", model_.ee_branch().act1);
        attach("ee.relu6b", model_.ee_branch().act2);
        attach("ee.relu6c", model_.ee_branch().act3);
    }
}

QatContext::~QatContext() {
    if (cfg_.bits == 32) return;
    model_.for_each_weighted_layer(
        [&](const std::string&, Conv2dLayer<float>* c, LinearLayer<float>* l) {
            if (c) c->weight_quant = nullptr;
            if (l) l->weight_quant = nullptr;
        });
    for (auto& [site, entry] : pact_) entry.second->act_quant = nullptr;
}

train::ExtraParams QatContext::extra_params() {
    train::ExtraParams out;
    for (auto& [site, entry] : pact_)
        out.push_back({site + ".alpha", &entry.first->alpha, site.rfind("ee.", 0) == 0});
    return out;
}

PactClip* QatContext::clip(const std::string& site) {
    auto it = pact_.find(site);
    return it == pact_.end() ? nullptr : it->second.first.get();
}

MinMaxWeightQuant* QatContext::weight_quant(const std::string& layer) {
    auto it = wq_.find(layer);
    return it == wq_.end() ? nullptr : it->second.get();
}

train::TrainConfig qat_defaults() {
    train::TrainConfig cfg;
    cfg.epochs = 100;
    cfg.initial_lr = 1e-2f;
    return cfg;
}

train::TrainResult qat_train(ModelGraph& model, QatContext& ctx, const data::Dataset& train_ds,
                             const data::Dataset& val_ds, const train::TrainConfig& cfg,
                             const LossWeights& weights) {
    return train::train(model, train_ds, val_ds, cfg, weights, ctx.extra_params());
}

// ---------------------------------------------------------------------------
// Fixed-point requantization
// ---------------------------------------------------------------------------

FixedPointMult FixedPointMult::from_double(double m) {
    if (!(m > 0) || !std::isfinite(m))
        throw std::invalid_argument("FixedPointMult: multiplier must be positive and finite");
    int exp = 0;
    double f = std::frexp(m, &exp);  // f in [0.5, 1)
    auto q = (std::int64_t)std::llround(f * double(std::int64_t(1) << 31));
    if (q == (std::int64_t(1) << 31)) {
        q >>= 1;
        ++exp;
    }
    FixedPointMult out;
    out.mantissa = std::int32_t(q);
    out.shift = -exp;
    return out;
}

std::int32_t FixedPointMult::apply(std::int64_t acc) const {
    std::int64_t t = acc * std::int64_t(mantissa);
    int total = 31 + shift;
    if (total <= 0) return std::int32_t(t << -total);
    std::int64_t half = std::int64_t(1) << (total - 1);
    std::int64_t r = t >= 0 ? (t + half) >> total : -(((-t) + half) >> total);
    return std::int32_t(r);
}

std::int32_t requantize(std::int64_t acc, const FixedPointMult& m, const QuantParams& out) {
    return clamp_int(std::int64_t(out.zero_point) + m.apply(acc), out.qmin, out.qmax);
}

// ---------------------------------------------------------------------------
// Export pipeline executors. One walk over the graph structure, two kernel
// sets: native int32 accumulation and an independent double-typed evaluation
// of the same integer codes (exact while |acc| < 2^53) sharing the export's
// requantization constants.
// ---------------------------------------------------------------------------

namespace {

int conv_out_dim(int in, int k, int s) { return (in + 2 * (k / 2) - k) / s + 1; }

struct Int8Ops {
    struct Act {
        std::vector<std::uint8_t> q;
        int c = 0, h = 0, w = 0;
        QuantParams p;
    };

    static Act input(const QuantizedModel& qm, const Image& img) {
        Act x;
        x.c = 1;
        x.h = img.h;
        x.w = img.w;
        x.p = qm.input;
        x.q.assign(img.pix.begin(), img.pix.end());  // scale 1/255, zp 0: codes = pixels
        return x;
    }

    static Act conv(const QConv& op, const Act& x) {
        const LayerSpec& sp = op.spec;
        int k = sp.kernel, s = sp.stride, pad = k / 2;
        Act y;
        y.c = sp.out_ch;
        y.h = conv_out_dim(x.h, k, s);
        y.w = conv_out_dim(x.w, k, s);
        y.p = op.out;
        y.q.assign(std::size_t(y.c) * y.h * y.w, 0);
        FixedPointMult M = FixedPointMult::from_double(double(x.p.scale) *
                                                       double(op.weight.params.scale) /
                                                       double(op.out.scale));
        int zx = x.p.zero_point, zw = op.weight.params.zero_point;
        int cg = sp.in_ch / sp.groups, og = sp.out_ch / sp.groups;
        std::size_t wrow = std::size_t(cg) * k * k;
        for (int oc = 0; oc < sp.out_ch; ++oc) {
            int g = oc / og;
            const std::int8_t* wr = &op.weight.q[std::size_t(oc) * wrow];
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox) {
                    std::int32_t acc = op.bias.empty() ? 0 : op.bias[std::size_t(oc)];
                    for (int ci = 0; ci < cg; ++ci) {
                        int ic = g * cg + ci;
                        for (int kh = 0; kh < k; ++kh) {
                            int iy = oy * s - pad + kh;
                            if (iy < 0 || iy >= x.h) continue;  // zero padding: r_x = 0
                            for (int kw = 0; kw < k; ++kw) {
                                int ix = ox * s - pad + kw;
                                if (ix < 0 || ix >= x.w) continue;
                                int xv = int(x.q[(std::size_t(ic) * x.h + iy) * x.w + ix]) - zx;
                                int wv = int(wr[std::size_t(ci) * k * k + kh * k + kw]) - zw;
                                acc += xv * wv;
                            }
                        }
                    }
                    y.q[(std::size_t(oc) * y.h + oy) * y.w + ox] =
                        std::uint8_t(requantize(acc, M, op.out));
                }
        }
        return y;
    }

    static Act add(const Act& a, const Act& b, const QuantParams& out) {
        FixedPointMult Ma = FixedPointMult::from_double(double(a.p.scale) / double(out.scale));
        FixedPointMult Mb = FixedPointMult::from_double(double(b.p.scale) / double(out.scale));
        Act y;
        y.c = a.c;
        y.h = a.h;
        y.w = a.w;
        y.p = out;
        y.q.resize(a.q.size());
        for (std::size_t i = 0; i < a.q.size(); ++i) {
            std::int64_t v = std::int64_t(out.zero_point) +
                             Ma.apply(int(a.q[i]) - a.p.zero_point) +
                             Mb.apply(int(b.q[i]) - b.p.zero_point);
            y.q[i] = std::uint8_t(clamp_int(v, out.qmin, out.qmax));
        }
        return y;
    }

    static Act gap(const Act& x) {
        Act y;
        y.c = x.c;
        y.h = y.w = 1;
        y.p = x.p;  // mean stays on the input grid
        y.q.resize(std::size_t(x.c));
        std::int64_t plane = std::int64_t(x.h) * x.w;
        for (int c = 0; c < x.c; ++c) {
            std::int64_t sum = 0;
            for (std::int64_t i = 0; i < plane; ++i)
                sum += int(x.q[std::size_t(c) * plane + std::size_t(i)]) - x.p.zero_point;
            y.q[std::size_t(c)] = std::uint8_t(
                clamp_int(x.p.zero_point + div_round_half_away(sum, plane), x.p.qmin, x.p.qmax));
        }
        return y;
    }

    static Act linear(const QConv& op, const Act& x) {
        const LayerSpec& sp = op.spec;
        Act y;
        y.c = sp.out_ch;
        y.h = y.w = 1;
        y.p = op.out;
        y.q.resize(std::size_t(sp.out_ch));
        FixedPointMult M = FixedPointMult::from_double(double(x.p.scale) *
                                                       double(op.weight.params.scale) /
                                                       double(op.out.scale));
        int zx = x.p.zero_point, zw = op.weight.params.zero_point;
        for (int o = 0; o < sp.out_ch; ++o) {
            std::int32_t acc = op.bias.empty() ? 0 : op.bias[std::size_t(o)];
            for (int i = 0; i < sp.in_ch; ++i)
                acc += (int(x.q[std::size_t(i)]) - zx) *
                       (int(op.weight.q[std::size_t(o) * sp.in_ch + i]) - zw);
            y.q[std::size_t(o)] = std::uint8_t(requantize(acc, M, op.out));
        }
        return y;
    }

    static float dequant(const Act& x, std::size_t i) {
        return x.p.dequantize(int(x.q[i]));
    }
};

// Independent evaluation: integer codes carried as doubles, accumulation in
// double (exact: every product of code offsets is an integer below 2^53),
// requantized through the same FixedPointMult as the int32 path.
struct SimOps {
    struct Act {
        std::vector<double> q;  // integer codes
        int c = 0, h = 0, w = 0;
        QuantParams p;
    };

    static Act input(const QuantizedModel& qm, const Image& img) {
        Act x;
        x.c = 1;
        x.h = img.h;
        x.w = img.w;
        x.p = qm.input;
        x.q.assign(img.pix.begin(), img.pix.end());
        return x;
    }

    static Act conv(const QConv& op, const Act& x) {
        const LayerSpec& sp = op.spec;
        int k = sp.kernel, s = sp.stride, pad = k / 2;
        Act y;
        y.c = sp.out_ch;
        y.h = conv_out_dim(x.h, k, s);
        y.w = conv_out_dim(x.w, k, s);
        y.p = op.out;
        y.q.assign(std::size_t(y.c) * y.h * y.w, 0.0);
        FixedPointMult M = FixedPointMult::from_double(double(x.p.scale) *
                                                       double(op.weight.params.scale) /
                                                       double(op.out.scale));
        double zx = x.p.zero_point, zw = op.weight.params.zero_point;
        int cg = sp.in_ch / sp.groups, og = sp.out_ch / sp.groups;
        std::size_t wrow = std::size_t(cg) * k * k;
        // loop nest deliberately differs from the int32 kernel (spatial-major)
        for (int oy = 0; oy < y.h; ++oy)
            for (int ox = 0; ox < y.w; ++ox)
                for (int oc = 0; oc < sp.out_ch; ++oc) {
                    int g = oc / og;
                    double acc = op.bias.empty() ? 0.0 : double(op.bias[std::size_t(oc)]);
                    for (int kh = 0; kh < k; ++kh) {
                        int iy = oy * s - pad + kh;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            int ix = ox * s - pad + kw;
                            if (ix < 0 || ix >= x.w) continue;
                            for (int ci = 0; ci < cg; ++ci) {
                                int ic = g * cg + ci;
                                double xv = x.q[(std::size_t(ic) * x.h + iy) * x.w + ix] - zx;
                                double wv = double(op.weight.q[std::size_t(oc) * wrow +
                                                               std::size_t(ci) * k * k + kh * k +
                                                               kw]) -
                                            zw;
                                acc += xv * wv;
                            }
                        }
                    }
                    y.q[(std::size_t(oc) * y.h + oy) * y.w + ox] =
                        double(requantize(std::llround(acc), M, op.out));
                }
        return y;
    }

    static Act add(const Act& a, const Act& b, const QuantParams& out) {
        FixedPointMult Ma = FixedPointMult::from_double(double(a.p.scale) / double(out.scale));
        FixedPointMult Mb = FixedPointMult::from_double(double(b.p.scale) / double(out.scale));
        Act y;
        y.c = a.c;
        y.h = a.h;
        y.w = a.w;
        y.p = out;
        y.q.resize(a.q.size());
        for (std::size_t i = 0; i < a.q.size(); ++i) {
            std::int64_t v = std::int64_t(out.zero_point) +
                             Ma.apply(std::llround(a.q[i]) - a.p.zero_point) +
                             Mb.apply(std::llround(b.q[i]) - b.p.zero_point);
            y.q[i] = double(clamp_int(v, out.qmin, out.qmax));
        }
        return y;
    }

    static Act gap(const Act& x) {
        Act y;
        y.c = x.c;
        y.h = y.w = 1;
        y.p = x.p;
        y.q.resize(std::size_t(x.c));
        std::int64_t plane = std::int64_t(x.h) * x.w;
        for (int c = 0; c < x.c; ++c) {
            double sum = 0;
            for (std::int64_t i = 0; i < plane; ++i)
                sum += x.q[std::size_t(c) * plane + std::size_t(i)] - x.p.zero_point;
            y.q[std::size_t(c)] = double(clamp_int(
                x.p.zero_point + div_round_half_away(std::llround(sum), plane), x.p.qmin,
                x.p.qmax));
        }
        return y;
    }

    static Act linear(const QConv& op, const Act& x) {
        const LayerSpec& sp = op.spec;
        Act y;
        y.c = sp.out_ch;
        y.h = y.w = 1;
        y.p = op.out;
        y.q.resize(std::size_t(sp.out_ch));
        FixedPointMult M = FixedPointMult::from_double(double(x.p.scale) *
                                                       double(op.weight.params.scale) /
                                                       double(op.out.scale));
        double zx = x.p.zero_point, zw = op.weight.params.zero_point;
        for (int o = 0; o < sp.out_ch; ++o) {
            double acc = op.bias.empty() ? 0.0 : double(op.bias[std::size_t(o)]);
            for (int i = 0; i < sp.in_ch; ++i)
                acc += (x.q[std::size_t(i)] - zx) *
                       (double(op.weight.q[std::size_t(o) * sp.in_ch + i]) - zw);
            y.q[std::size_t(o)] = double(requantize(std::llround(acc), M, op.out));
        }
        return y;
    }

    static float dequant(const Act& x, std::size_t i) {
        return x.p.dequantize(int(std::llround(x.q[i])));
    }
};

// Fake-quant float evaluation of the export: float32 kernels over
// dequantized weights, each output snapped to its grid.
struct FloatOps {
    struct Act {
        std::vector<float> q;  // dequantized values (not codes)
        int c = 0, h = 0, w = 0;
        QuantParams p;
    };

    static void snap(Act& x) {
        for (auto& e : x.q) e = x.p.dequantize(x.p.quantize(e));
    }

    static Act input(const QuantizedModel& qm, const Image& img) {
        Act x;
        x.c = 1;
        x.h = img.h;
        x.w = img.w;
        x.p = qm.input;
        x.q.resize(img.pix.size());
        for (std::size_t i = 0; i < img.pix.size(); ++i) x.q[i] = float(img.pix[i]) / 255.0f;
        return x;
    }

    static Act conv(const QConv& op, const Act& x) {
        const LayerSpec& sp = op.spec;
        Conv2dLayer<float> layer(sp, nullptr);
        layer.weight = Tensor(op.weight.shape);
        for (std::size_t i = 0; i < layer.weight.numel(); ++i)
            layer.weight.data[i] = op.weight.params.dequantize(int(op.weight.q[i]));
        float bias_scale = x.p.scale * op.weight.params.scale;
        layer.bias = Tensor({sp.out_ch});
        for (int o = 0; o < sp.out_ch; ++o)
            layer.bias.data[std::size_t(o)] = float(op.bias[std::size_t(o)]) * bias_scale;
        Tensor in({1, x.c, x.h, x.w});
        in.data = x.q;
        Tensor out = layer.forward(in, false);
        Act y;
        y.c = out.dim(1);
        y.h = out.dim(2);
        y.w = out.dim(3);
        y.p = op.out;
        y.q = std::move(out.data);
        snap(y);
        return y;
    }

    static Act add(const Act& a, const Act& b, const QuantParams& out) {
        Act y = a;
        y.p = out;
        for (std::size_t i = 0; i < y.q.size(); ++i) y.q[i] = a.q[i] + b.q[i];
        snap(y);
        return y;
    }

    static Act gap(const Act& x) {
        Act y;
        y.c = x.c;
        y.h = y.w = 1;
        y.p = x.p;
        y.q.resize(std::size_t(x.c));
        std::size_t plane = std::size_t(x.h) * x.w;
        for (int c = 0; c < x.c; ++c) {
            double s = 0;
            for (std::size_t i = 0; i < plane; ++i) s += x.q[std::size_t(c) * plane + i];
            y.q[std::size_t(c)] = float(s / double(plane));
        }
        snap(y);
        return y;
    }

    static Act linear(const QConv& op, const Act& x) {
        const LayerSpec& sp = op.spec;
        Act y;
        y.c = sp.out_ch;
        y.h = y.w = 1;
        y.p = op.out;
        y.q.resize(std::size_t(sp.out_ch));
        float bias_scale = x.p.scale * op.weight.params.scale;
        for (int o = 0; o < sp.out_ch; ++o) {
            double acc = double(op.bias[std::size_t(o)]) * bias_scale;
            for (int i = 0; i < sp.in_ch; ++i)
                acc += double(x.q[std::size_t(i)]) *
                       double(op.weight.params.dequantize(
                           int(op.weight.q[std::size_t(o) * sp.in_ch + i])));
            y.q[std::size_t(o)] = float(acc);
        }
        snap(y);
        return y;
    }

    static float dequant(const Act& x, std::size_t i) { return x.q[i]; }
};

template <typename Ops>
RawOutputs run_export(const QuantizedModel& qm, const Image& image) {
    using Act = typename Ops::Act;
    if (image.h != qm.bb.in_h || image.w != qm.bb.in_w)
        throw std::invalid_argument("int8 forward: image size does not match the exported input");

    Act x = Ops::input(qm, image);
    x = Ops::conv(qm.stem, x);

    RawOutputs out;
    struct HeadPlanes {
        int C = 0, H = 0, W = 0;
        std::vector<float> cls, box;
    };
    std::vector<HeadPlanes> hp(qm.heads.size());

    int total = qm.bb.total_layers();
    for (int l = 1; l <= total; ++l) {
        const auto& blk = qm.blocks[std::size_t(l - 1)];
        Act t = Ops::conv(blk.expand, x);
        t = Ops::conv(blk.dw, t);
        Act p = Ops::conv(blk.project, t);
        x = blk.residual ? Ops::add(p, x, blk.out) : std::move(p);

        if (qm.ee && l == qm.ee->attach_layer) {
            Act c1 = Ops::conv(qm.branch.conv1, x);
            Act c2 = Ops::conv(qm.branch.conv2, c1);
            Act g = Ops::gap(c2);
            Act f1 = Ops::linear(qm.branch.fc1, g);
            Act f2 = Ops::linear(qm.branch.fc2, f1);
            Tensor logits({1, 2});
            logits.data[0] = Ops::dequant(f2, 0);
            logits.data[1] = Ops::dequant(f2, 1);
            out.ee_logits = std::move(logits);
        }
        for (std::size_t h = 0; h < qm.heads.size(); ++h)
            if (qm.heads[h].attach_layer == l) {
                Act c = Ops::conv(qm.heads[h].cls, x);
                Act b = Ops::conv(qm.heads[h].box, x);
                hp[h].C = c.c;
                hp[h].H = c.h;
                hp[h].W = c.w;
                hp[h].cls.resize(c.q.size());
                hp[h].box.resize(b.q.size());
                for (std::size_t i = 0; i < c.q.size(); ++i) hp[h].cls[i] = Ops::dequant(c, i);
                for (std::size_t i = 0; i < b.q.size(); ++i) hp[h].box[i] = Ops::dequant(b, i);
            }
    }

    // cell-major flattening, identical to the float pipeline's layout
    int K = qm.hc.num_classes;
    int A = 0;
    for (std::size_t h = 0; h < hp.size(); ++h)
        A += hp[h].H * hp[h].W * qm.hc.anchors_per_cell(int(h));
    out.cls = Tensor({1, A, K});
    out.box = Tensor({1, A, 4});
    int base = 0;
    for (std::size_t h = 0; h < hp.size(); ++h) {
        int H = hp[h].H, W = hp[h].W;
        int acell = qm.hc.anchors_per_cell(int(h));
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                for (int a = 0; a < acell; ++a) {
                    int row = base + (y * W + xx) * acell + a;
                    for (int k = 0; k < K; ++k)
                        out.cls.data[std::size_t(row) * K + k] =
                            hp[h].cls[((std::size_t(a) * K + k) * H + y) * W + xx];
                    for (int k = 0; k < 4; ++k)
                        out.box.data[std::size_t(row) * 4 + k] =
                            hp[h].box[((std::size_t(a) * 4 + k) * H + y) * W + xx];
                }
        base += H * W * acell;
    }
    return out;
}

}  // namespace

RawOutputs int8_forward(const QuantizedModel& qm, const Image& image) {
    return run_export<Int8Ops>(qm, image);
}

RawOutputs simulate_int8(const QuantizedModel& qm, const Image& image) {
    return run_export<SimOps>(qm, image);
}

RawOutputs fakequant_float_forward(const QuantizedModel& qm, const Image& image) {
    return run_export<FloatOps>(qm, image);
}

// ---------------------------------------------------------------------------
// Export: fold, quantize weights, calibrate linear-site ranges, assemble
// ---------------------------------------------------------------------------

namespace {

// float reference of a folded conv using the model's own layer kernels
Tensor folded_forward(const FoldedConv& fc, const LayerSpec& spec, const Tensor& x) {
    LayerSpec sp = spec;
    sp.bias = true;
    Conv2dLayer<float> layer(sp, nullptr);
    layer.weight = fakequant_weights(fc.weight);
    layer.bias = fc.bias;
    return layer.forward(x, false);
}

void pact_apply(Tensor& x, float a) {
    float s = a / 255.0f;
    for (auto& v : x.data) {
        v = std::min(std::max(v, 0.0f), a);
        v = s * float(round_half_away(double(v) / s));
    }
}

struct Range {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    void see(const Tensor& t) {
        for (float v : t.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    QuantParams params() const {
        if (!(lo <= hi)) throw std::logic_error("export: empty calibration range");
        return QuantParams::activation_from_minmax(lo, hi);
    }
};

QuantParams pact_params(float a) {
    QuantParams p;
    p.scale = a / 255.0f;
    p.zero_point = 0;
    p.qmin = 0;
    p.qmax = 255;
    return p;
}

float require_clip(QatContext& ctx, const std::string& site) {
    PactClip* c = ctx.clip(site);
    if (!c) throw std::invalid_argument("export_int8: no clip value for site " + site);
    return c->clip_value();
}

QConv assemble_conv(const std::string& name, const LayerSpec& spec, const FoldedConv& fc,
                    const QuantParams& in, const QuantParams& out) {
    QConv q;
    q.spec = spec;
    q.spec.bias = true;
    q.out = out;
    QuantParams wp;
    fakequant_weights(fc.weight, &wp);  // parameters only; codes below
    q.weight.params = wp;
    q.weight.shape = fc.weight.shape;
    q.weight.q.resize(fc.weight.numel());
    for (std::size_t i = 0; i < fc.weight.numel(); ++i)
        q.weight.q[i] = std::int8_t(wp.quantize(fc.weight.data[i]));

    double bias_scale = double(in.scale) * double(wp.scale);
    q.bias.resize(fc.bias.numel());
    for (std::size_t i = 0; i < fc.bias.numel(); ++i) {
        long long b = round_half_away(double(fc.bias.data[i]) / bias_scale);
        if (b > std::numeric_limits<std::int32_t>::max() ||
            b < std::numeric_limits<std::int32_t>::min())
            throw std::runtime_error("export_int8: bias overflow in " + name);
        q.bias[i] = std::int32_t(b);
    }

    // worst-case int32 accumulator bound (affine codes, |r| <= 255 each side)
    long long taps = (long long)(spec.in_ch / spec.groups) * spec.kernel * spec.kernel;
    if (spec.kind == LayerKind::Linear) taps = spec.in_ch;
    long long rx = std::max(std::abs(in.qmax - in.zero_point), std::abs(in.qmin - in.zero_point));
    long long rw = std::max(std::abs(wp.qmax - wp.zero_point), std::abs(wp.qmin - wp.zero_point));
    long long worst = taps * rx * rw;
    long long bmax = 0;
    for (std::int32_t b : q.bias) bmax = std::max(bmax, std::llabs((long long)b));
    if (worst + bmax > std::numeric_limits<std::int32_t>::max())
        throw std::runtime_error("export_int8: worst-case accumulator overflow in " + name);
    return q;
}

FoldedConv as_folded(const Conv2dLayer<float>& c) {
    FoldedConv fc;
    fc.weight = c.weight;
    if (c.spec().bias)
        fc.bias = c.bias;
    else
        fc.bias = Tensor({c.spec().out_ch});
    return fc;
}

FoldedConv as_folded(const LinearLayer<float>& l) {
    FoldedConv fc;
    fc.weight = l.weight;
    if (l.spec().bias)
        fc.bias = l.bias;
    else
        fc.bias = Tensor({l.spec().out_ch});
    return fc;
}

// Per-tensor min-max weight quantization is defenseless against a folded
// channel whose BN sigma is near zero: gamma/sigma amplifies that channel's
// weights without bound, the shared scale balloons, and every healthy channel
// loses its resolution. Such a channel's float output is its BN beta plus
// amplified batch noise (its input barely moves), so shrinking the channel's
// deviation toward beta keeps the tensor quantizable at a cost the float
// network never relied on.
void limit_folded_channel_range(FoldedConv& fc, const BatchNormLayer<float>& bn) {
    int oc = fc.bias.dim(0);
    std::size_t per_oc = fc.weight.numel() / std::size_t(oc);
    std::vector<float> peak(static_cast<std::size_t>(oc), 0.0f);
    for (int c = 0; c < oc; ++c)
        for (std::size_t i = 0; i < per_oc; ++i)
            peak[std::size_t(c)] = std::max(
                peak[std::size_t(c)], std::abs(fc.weight.data[std::size_t(c) * per_oc + i]));
    std::vector<float> sorted = peak;
    std::nth_element(sorted.begin(), sorted.begin() + oc / 2, sorted.end());
    float cap = 8.0f * sorted[std::size_t(oc / 2)];
    if (!(cap > 0.0f)) return;
    for (int c = 0; c < oc; ++c) {
        if (peak[std::size_t(c)] <= cap) continue;
        float s = cap / peak[std::size_t(c)];
        for (std::size_t i = 0; i < per_oc; ++i) fc.weight.data[std::size_t(c) * per_oc + i] *= s;
        float beta = bn.beta.data[std::size_t(c)];
        fc.bias.data[std::size_t(c)] = beta + s * (fc.bias.data[std::size_t(c)] - beta);
    }
}

FoldedConv fold_tamed(const Conv2dLayer<float>& conv, const BatchNormLayer<float>& bn) {
    FoldedConv f = fold_batchnorm(conv, bn);
    limit_folded_channel_range(f, bn);
    return f;
}

Tensor linear_forward_f(const FoldedConv& fc, const LayerSpec& spec, const Tensor& x) {
    LayerSpec sp = spec;
    sp.bias = true;
    LinearLayer<float> layer(sp, nullptr);
    layer.weight = fakequant_weights(fc.weight);
    layer.bias = fc.bias;
    return layer.forward(x, false);
}

}  // namespace

QuantizedModel export_int8(ModelGraph& model, QatContext& ctx, const data::Dataset& calib) {
    if (ctx.config().bits != 8)
        throw std::invalid_argument("export_int8: context must be an 8-bit QAT context");
    if (calib.items.empty()) throw std::invalid_argument("export_int8: empty calibration set");

    const BackboneConfig& bb = model.backbone_config();
    int total = bb.total_layers();

    // fold BN into every backbone/branch conv
    FoldedConv stem_f = fold_tamed(*model.stem().conv, *model.stem().bn);
    struct BlockF {
        FoldedConv expand, dw, project;
        bool residual;
    };
    std::vector<BlockF> blocks_f;
    for (auto& blk : model.blocks())
        blocks_f.push_back({fold_tamed(blk.expand, blk.bn1), fold_tamed(blk.dw, blk.bn2),
                            fold_tamed(blk.project, blk.bn3), blk.use_residual()});
    FoldedConv ee_c1, ee_c2, ee_f1, ee_f2;
    if (model.has_ee()) {
        ee_c1 = fold_tamed(*model.ee_branch().conv1, *model.ee_branch().bn1);
        ee_c2 = fold_tamed(*model.ee_branch().conv2, *model.ee_branch().bn2);
        ee_f1 = as_folded(*model.ee_branch().fc1);
        ee_f2 = as_folded(*model.ee_branch().fc2);
    }

    // calibration pass: float walk with fake-quant weights and clipped
    // activations, observing ranges at the sites without a learned clip
    std::vector<Range> block_out(static_cast<std::size_t>(total));
    std::vector<Range> head_cls(model.heads().size()), head_box(model.heads().size());
    Range logits_range;
    float a_stem = require_clip(ctx, "stem.relu6");
    GlobalAvgPoolLayer<float> gap_f;
    for (const auto& item : calib.items) {
        Tensor x({1, 1, item.image.h, item.image.w});
        for (std::size_t i = 0; i < item.image.pix.size(); ++i)
            x.data[i] = float(item.image.pix[i]) / 255.0f;
        x = folded_forward(stem_f, model.stem().conv->spec(), x);
        pact_apply(x, a_stem);
        for (int l = 1; l <= total; ++l) {
            auto& bf = blocks_f[std::size_t(l - 1)];
            std::string p = "block" + std::to_string(l);
            Tensor t = folded_forward(bf.expand, model.blocks()[std::size_t(l - 1)].expand.spec(), x);
            pact_apply(t, require_clip(ctx, p + ".relu6a"));
            t = folded_forward(bf.dw, model.blocks()[std::size_t(l - 1)].dw.spec(), t);
            pact_apply(t, require_clip(ctx, p + ".relu6b"));
            t = folded_forward(bf.project, model.blocks()[std::size_t(l - 1)].project.spec(), t);
            if (bf.residual) t = add_forward(t, x);
            block_out[std::size_t(l - 1)].see(t);
            x = std::move(t);
            if (model.has_ee() && l == model.ee_config()->attach_layer) {
                Tensor h = folded_forward(ee_c1, model.ee_branch().conv1->spec(), x);
                pact_apply(h, require_clip(ctx, "ee.relu6a"));
                h = folded_forward(ee_c2, model.ee_branch().conv2->spec(), h);
                pact_apply(h, require_clip(ctx, "ee.relu6b"));
                h = gap_f.forward(h, false);
                h = linear_forward_f(ee_f1, model.ee_branch().fc1->spec(), h);
                pact_apply(h, require_clip(ctx, "ee.relu6c"));
                h = linear_forward_f(ee_f2, model.ee_branch().fc2->spec(), h);
                logits_range.see(h);
            }
            for (std::size_t hd = 0; hd < model.heads().size(); ++hd)
                if (model.heads()[hd].attach_layer == l) {
                    head_cls[hd].see(folded_forward(as_folded(*model.heads()[hd].cls),
                                                    model.heads()[hd].cls->spec(), x));
                    head_box[hd].see(folded_forward(as_folded(*model.heads()[hd].box),
                                                    model.heads()[hd].box->spec(), x));
                }
        }
    }

    // assemble in walk order, tracking each layer's input parameters
    QuantizedModel qm;
    qm.bb = bb;
    qm.ee = model.ee_config();
    qm.hc = model.head_config();
    qm.input.scale = 1.0f / 255.0f;
    qm.input.zero_point = 0;
    qm.input.qmin = 0;
    qm.input.qmax = 255;

    qm.stem = assemble_conv("stem.conv", model.stem().conv->spec(), stem_f, qm.input,
                            pact_params(a_stem));
    QuantParams cur = qm.stem.out;
    for (int l = 1; l <= total; ++l) {
        auto& bf = blocks_f[std::size_t(l - 1)];
        auto& blk = model.blocks()[std::size_t(l - 1)];
        std::string p = "block" + std::to_string(l);
        QuantizedModel::Block qb;
        qb.residual = bf.residual;
        QuantParams a1 = pact_params(require_clip(ctx, p + ".relu6a"));
        QuantParams a2 = pact_params(require_clip(ctx, p + ".relu6b"));
        QuantParams proj_out = block_out[std::size_t(l - 1)].params();
        qb.expand = assemble_conv(p + ".expand", blk.expand.spec(), bf.expand, cur, a1);
        qb.dw = assemble_conv(p + ".dw", blk.dw.spec(), bf.dw, a1, a2);
        qb.project = assemble_conv(p + ".project", blk.project.spec(), bf.project, a2, proj_out);
        qb.out = proj_out;
        qm.blocks.push_back(std::move(qb));
        cur = proj_out;

        if (model.has_ee() && l == model.ee_config()->attach_layer) {
            QuantParams b1 = pact_params(require_clip(ctx, "ee.relu6a"));
            QuantParams b2 = pact_params(require_clip(ctx, "ee.relu6b"));
            QuantParams b3 = pact_params(require_clip(ctx, "ee.relu6c"));
            qm.branch.conv1 =
                assemble_conv("ee.conv1", model.ee_branch().conv1->spec(), ee_c1, cur, b1);
            qm.branch.conv2 =
                assemble_conv("ee.conv2", model.ee_branch().conv2->spec(), ee_c2, b1, b2);
            qm.branch.fc1 =
                assemble_conv("ee.fc1", model.ee_branch().fc1->spec(), ee_f1, b2, b3);
            qm.branch.fc2 = assemble_conv("ee.fc2", model.ee_branch().fc2->spec(), ee_f2, b3,
                                          logits_range.params());
        }
        for (std::size_t hd = 0; hd < model.heads().size(); ++hd)
            if (model.heads()[hd].attach_layer == l) {
                QuantizedModel::Head qh;
                qh.attach_layer = l;
                std::string hn = "head" + std::to_string(hd);
                qh.cls = assemble_conv(hn + ".cls", model.heads()[hd].cls->spec(),
                                       as_folded(*model.heads()[hd].cls), cur,
                                       head_cls[hd].params());
                qh.box = assemble_conv(hn + ".box", model.heads()[hd].box->spec(),
                                       as_folded(*model.heads()[hd].box), cur,
                                       head_box[hd].params());
                qm.heads.push_back(std::move(qh));
            }
    }
    return qm;
}

// ---------------------------------------------------------------------------
// Container serialization
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json qp_json(const QuantParams& p) {
    return {{"scale", p.scale}, {"zp", p.zero_point}, {"qmin", p.qmin}, {"qmax", p.qmax}};
}

QuantParams qp_from(const json& j) {
    QuantParams p;
    p.scale = j.at("scale").get<float>();
    p.zero_point = j.at("zp").get<int>();
    p.qmin = j.at("qmin").get<int>();
    p.qmax = j.at("qmax").get<int>();
    return p;
}

json spec_json(const LayerSpec& s) {
    return {{"kind", int(s.kind)}, {"in", s.in_ch},      {"out", s.out_ch},
            {"k", s.kernel},       {"stride", s.stride}, {"groups", s.groups},
            {"bias", s.bias}};
}

LayerSpec spec_from(const json& j) {
    LayerSpec s;
    s.kind = LayerKind(j.at("kind").get<int>());
    s.in_ch = j.at("in").get<int>();
    s.out_ch = j.at("out").get<int>();
    s.kernel = j.at("k").get<int>();
    s.stride = j.at("stride").get<int>();
    s.groups = j.at("groups").get<int>();
    s.bias = j.at("bias").get<bool>();
    return s;
}

json conv_json(const QConv& c) {
    return {{"spec", spec_json(c.spec)},
            {"wshape", c.weight.shape},
            {"wq", qp_json(c.weight.params)},
            {"out", qp_json(c.out)},
            {"bias_len", c.bias.size()}};
}

QConv conv_from(const json& j) {
    QConv c;
    c.spec = spec_from(j.at("spec"));
    c.weight.shape = j.at("wshape").get<std::vector<int>>();
    c.weight.params = qp_from(j.at("wq"));
    c.out = qp_from(j.at("out"));
    std::size_t n = 1;
    for (int d : c.weight.shape) n *= std::size_t(d);
    c.weight.q.resize(n);
    c.bias.resize(j.at("bias_len").get<std::size_t>());
    return c;
}

template <typename Fn>
void walk_convs(QuantizedModel& qm, const Fn& fn) {
    fn(qm.stem);
    for (auto& b : qm.blocks) {
        fn(b.expand);
        fn(b.dw);
        fn(b.project);
    }
    if (qm.ee) {
        fn(qm.branch.conv1);
        fn(qm.branch.conv2);
        fn(qm.branch.fc1);
        fn(qm.branch.fc2);
    }
    for (auto& h : qm.heads) {
        fn(h.cls);
        fn(h.box);
    }
}

}  // namespace

void save_int8(const QuantizedModel& qm, const std::string& path) {
    json hdr;
    hdr["backbone"] = {{"in_h", qm.bb.in_h},
                       {"in_w", qm.bb.in_w},
                       {"in_ch", qm.bb.in_ch},
                       {"alpha", qm.bb.alpha},
                       {"stage_layers", qm.bb.stage_layers},
                       {"base_channels", qm.bb.base_channels},
                       {"expansion", qm.bb.expansion}};
    if (qm.ee)
        hdr["ee"] = {{"attach_layer", qm.ee->attach_layer},
                     {"mid_channels", qm.ee->mid_channels},
                     {"fc_hidden", qm.ee->fc_hidden}};
    else
        hdr["ee"] = nullptr;
    hdr["heads_cfg"] = {{"num_classes", qm.hc.num_classes},
                        {"scales_s4", qm.hc.scales_s4},
                        {"scales_s5", qm.hc.scales_s5},
                        {"aspect_ratios", qm.hc.aspect_ratios}};
    hdr["input"] = qp_json(qm.input);
    hdr["stem"] = conv_json(qm.stem);
    hdr["blocks"] = json::array();
    for (const auto& b : qm.blocks)
        hdr["blocks"].push_back({{"expand", conv_json(b.expand)},
                                 {"dw", conv_json(b.dw)},
                                 {"project", conv_json(b.project)},
                                 {"residual", b.residual},
                                 {"out", qp_json(b.out)}});
    if (qm.ee)
        hdr["branch"] = {{"conv1", conv_json(qm.branch.conv1)},
                         {"conv2", conv_json(qm.branch.conv2)},
                         {"fc1", conv_json(qm.branch.fc1)},
                         {"fc2", conv_json(qm.branch.fc2)}};
    hdr["heads"] = json::array();
    for (const auto& h : qm.heads)
        hdr["heads"].push_back(
            {{"attach", h.attach_layer}, {"cls", conv_json(h.cls)}, {"box", conv_json(h.box)}});

    std::string js = hdr.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_int8: cannot open " + path);
    f.write(QuantizedModel::magic, sizeof(QuantizedModel::magic));
    std::uint64_t len = js.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(js.data(), std::streamsize(js.size()));
    walk_convs(const_cast<QuantizedModel&>(qm), [&](QConv& c) {
        f.write(reinterpret_cast<const char*>(c.weight.q.data()),
                std::streamsize(c.weight.q.size()));
        f.write(reinterpret_cast<const char*>(c.bias.data()),
                std::streamsize(c.bias.size() * sizeof(std::int32_t)));
    });
    if (!f) throw std::runtime_error("save_int8: write failed for " + path);
}

QuantizedModel load_int8(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_int8: cannot open " + path);
    char magic[sizeof(QuantizedModel::magic)];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, QuantizedModel::magic, sizeof(magic)) != 0)
        throw std::runtime_error("load_int8: bad magic in " + path);
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string js(len, '\0');
    f.read(js.data(), std::streamsize(len));
    if (!f) throw std::runtime_error("load_int8: truncated header in " + path);
    json hdr = json::parse(js);

    QuantizedModel qm;
    const json& b = hdr.at("backbone");
    qm.bb.in_h = b.at("in_h").get<int>();
    qm.bb.in_w = b.at("in_w").get<int>();
    qm.bb.in_ch = b.at("in_ch").get<int>();
    qm.bb.alpha = b.at("alpha").get<float>();
    qm.bb.stage_layers = b.at("stage_layers").get<std::array<int, 5>>();
    qm.bb.base_channels = b.at("base_channels").get<std::array<int, 5>>();
    qm.bb.expansion = b.at("expansion").get<int>();
    if (!hdr.at("ee").is_null()) {
        EEBranchConfig ee;
        ee.attach_layer = hdr["ee"].at("attach_layer").get<int>();
        ee.mid_channels = hdr["ee"].at("mid_channels").get<int>();
        ee.fc_hidden = hdr["ee"].at("fc_hidden").get<int>();
        qm.ee = ee;
    }
    const json& hc = hdr.at("heads_cfg");
    qm.hc.num_classes = hc.at("num_classes").get<int>();
    qm.hc.scales_s4 = hc.at("scales_s4").get<std::vector<float>>();
    qm.hc.scales_s5 = hc.at("scales_s5").get<std::vector<float>>();
    qm.hc.aspect_ratios = hc.at("aspect_ratios").get<std::vector<float>>();
    qm.input = qp_from(hdr.at("input"));
    qm.stem = conv_from(hdr.at("stem"));
    for (const json& jb : hdr.at("blocks")) {
        QuantizedModel::Block blk;
        blk.expand = conv_from(jb.at("expand"));
        blk.dw = conv_from(jb.at("dw"));
        blk.project = conv_from(jb.at("project"));
        blk.residual = jb.at("residual").get<bool>();
        blk.out = qp_from(jb.at("out"));
        qm.blocks.push_back(std::move(blk));
    }
    if (qm.ee) {
        qm.branch.conv1 = conv_from(hdr.at("branch").at("conv1"));
        qm.branch.conv2 = conv_from(hdr.at("branch").at("conv2"));
        qm.branch.fc1 = conv_from(hdr.at("branch").at("fc1"));
        qm.branch.fc2 = conv_from(hdr.at("branch").at("fc2"));
    }
    for (const json& jh : hdr.at("heads")) {
        QuantizedModel::Head qh;
        qh.attach_layer = jh.at("attach").get<int>();
        qh.cls = conv_from(jh.at("cls"));
        qh.box = conv_from(jh.at("box"));
        qm.heads.push_back(std::move(qh));
    }
    walk_convs(qm, [&](QConv& c) {
        f.read(reinterpret_cast<char*>(c.weight.q.data()), std::streamsize(c.weight.q.size()));
        f.read(reinterpret_cast<char*>(c.bias.data()),
               std::streamsize(c.bias.size() * sizeof(std::int32_t)));
    });
    if (!f) throw std::runtime_error("load_int8: truncated blobs in " + path);
    return qm;
}

}  // namespace skipdet::quant
