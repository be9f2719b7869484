#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipdet/kernels.hpp"
#include "skipdet/rng.hpp"
#include "skipdet/tensor.hpp"

namespace skipdet {

enum class LayerKind {
    Conv2d,
    DepthwiseConv2d,
    BatchNorm,
    ReLU6,
    GlobalAvgPool,
    Linear,
    Softmax,
    Add,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::ReLU6;
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;   // odd for convs
    int stride = 1;
    int groups = 1;
    bool bias = true;
    float bn_eps = 1e-5f;
    float bn_momentum = 0.1f;

    static LayerSpec conv(int in_ch, int out_ch, int kernel, int stride = 1, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::Conv2d;
        s.in_ch = in_ch;
        s.out_ch = out_ch;
        s.kernel = kernel;
        s.stride = stride;
        s.bias = bias;
        return s;
    }
    static LayerSpec depthwise(int ch, int kernel, int stride = 1, bool bias = true) {
        LayerSpec s = conv(ch, ch, kernel, stride, bias);
        s.kind = LayerKind::DepthwiseConv2d;
        s.groups = ch;
        return s;
    }
    static LayerSpec batchnorm(int ch) {
        LayerSpec s;
        s.kind = LayerKind::BatchNorm;
        s.in_ch = s.out_ch = ch;
        return s;
    }
    static LayerSpec relu6() {
        LayerSpec s;
        s.kind = LayerKind::ReLU6;
        return s;
    }
    static LayerSpec gap() {
        LayerSpec s;
        s.kind = LayerKind::GlobalAvgPool;
        return s;
    }
    static LayerSpec linear(int in, int out, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::Linear;
        s.in_ch = in;
        s.out_ch = out;
        s.bias = bias;
        return s;
    }
    static LayerSpec softmax() {
        LayerSpec s;
        s.kind = LayerKind::Softmax;
        return s;
    }

    void validate() const;
};

template <typename T>
struct ParamRef {
    std::string name;
    TensorT<T>* tensor;
};

// Per-tensor affine weight fake-quantizer hook (see quant.hpp). Elementwise
// with straight-through gradient, so backward accumulates into the raw
// weights unchanged.
template <typename T>
struct WeightFakeQuant {
    virtual ~WeightFakeQuant() = default;
    virtual TensorT<T> apply(const TensorT<T>& w) = 0;
};

// Activation fake-quantizer hook for ReLU6 sites (see quant.hpp). When set,
// it replaces the fixed [0,6] clamp with a learnable-range quantized clamp.
template <typename T>
struct ActFakeQuant {
    virtual ~ActFakeQuant() = default;
    virtual TensorT<T> forward(const TensorT<T>& x, bool train) = 0;
    virtual TensorT<T> backward(const TensorT<T>& gy) = 0;
};

// One layer = forward with retained state + backward. Backward accumulates
// parameter gradients in-place and returns the input gradient.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    explicit Layer(LayerSpec spec) : spec_(spec) {}

    virtual TensorT<T> forward(const TensorT<T>& x, bool train) = 0;
    virtual TensorT<T> backward(const TensorT<T>& gy) = 0;
    virtual void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {}

    const LayerSpec& spec() const { return spec_; }

protected:
    LayerSpec spec_;
    bool has_state_ = false;

    void require_state(const char* who) const {
        if (!has_state_)
            throw std::logic_error(std::string(who) + ": backward without a retained forward state");
    }
};

template <typename T>
class Conv2dLayer final : public Layer<T> {
public:
    Conv2dLayer(LayerSpec spec, Rng* init_rng);

    TensorT<T> forward(const TensorT<T>& x, bool train) override;
    TensorT<T> backward(const TensorT<T>& gy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

    TensorT<T> weight;  // [out_ch, in_ch/groups, k, k]
    TensorT<T> bias;    // [out_ch] (empty when spec.bias == false)
    WeightFakeQuant<T>* weight_quant = nullptr;

private:
    TensorT<T> saved_input_;
    TensorT<T> saved_weight_;  // effective weight used in forward (quantized path)
    int out_h_ = 0, out_w_ = 0;
    std::vector<T> cols_;  // im2col scratch

    void im2col(const TensorT<T>& x, int n, int c0, int cg) ;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
public:
    BatchNormLayer(LayerSpec spec);

    TensorT<T> forward(const TensorT<T>& x, bool train) override;
    TensorT<T> backward(const TensorT<T>& gy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

    TensorT<T> gamma, beta;            // learnable
    TensorT<T> running_mean, running_var;  // eval-mode statistics

private:
    TensorT<T> saved_xhat_;
    std::vector<T> saved_invstd_;
    bool saved_train_ = false;
};

template <typename T>
class ReLU6Layer final : public Layer<T> {
public:
    ReLU6Layer() : Layer<T>(LayerSpec::relu6()) {}
    TensorT<T> forward(const TensorT<T>& x, bool train) override;
    TensorT<T> backward(const TensorT<T>& gy) override;

    ActFakeQuant<T>* act_quant = nullptr;

private:
    TensorT<T> saved_input_;
};

template <typename T>
class GlobalAvgPoolLayer final : public Layer<T> {
public:
    GlobalAvgPoolLayer() : Layer<T>(LayerSpec::gap()) {}
    TensorT<T> forward(const TensorT<T>& x, bool train) override;
    TensorT<T> backward(const TensorT<T>& gy) override;

private:
    std::vector<int> saved_shape_;
};

template <typename T>
class LinearLayer final : public Layer<T> {
public:
    LinearLayer(LayerSpec spec, Rng* init_rng);
    TensorT<T> forward(const TensorT<T>& x, bool train) override;
    TensorT<T> backward(const TensorT<T>& gy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

    TensorT<T> weight;  // [out, in]
    TensorT<T> bias;    // [out]
    WeightFakeQuant<T>* weight_quant = nullptr;

private:
    TensorT<T> saved_input_;
    TensorT<T> saved_weight_;
};

template <typename T>
class SoftmaxLayer final : public Layer<T> {
public:
    SoftmaxLayer() : Layer<T>(LayerSpec::softmax()) {}
    TensorT<T> forward(const TensorT<T>& x, bool train) override;
    TensorT<T> backward(const TensorT<T>& gy) override;

private:
    TensorT<T> saved_output_;
};

// Residual add. Binary, so it sits outside the single-input sequential
// interface; backward is identity into both operands.
template <typename T>
TensorT<T> add_forward(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, Rng* init_rng = nullptr);

// row-wise softmax on the last dim of a 2-d tensor
template <typename T>
void softmax_rows(const TensorT<T>& x, TensorT<T>& out);

extern template class Conv2dLayer<float>;
extern template class Conv2dLayer<double>;
extern template class BatchNormLayer<float>;
extern template class BatchNormLayer<double>;
extern template class ReLU6Layer<float>;
extern template class ReLU6Layer<double>;
extern template class GlobalAvgPoolLayer<float>;
extern template class GlobalAvgPoolLayer<double>;
extern template class LinearLayer<float>;
extern template class LinearLayer<double>;
extern template class SoftmaxLayer<float>;
extern template class SoftmaxLayer<double>;

}  // namespace skipdet
