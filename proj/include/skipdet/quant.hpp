#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "skipdet/datasynth.hpp"
#include "skipdet/model.hpp"
#include "skipdet/trainer.hpp"

namespace skipdet::quant {

// ---------------------------------------------------------------------------
// Affine 8-bit quantization parameters (per tensor)
// ---------------------------------------------------------------------------

struct QuantParams {
    float scale = 1.0f;  // > 0
    int zero_point = 0;
    int qmin = -128;
    int qmax = 127;

    // min-max affine fit; scale floored at 1e-8 (all-zero tensors)
    static QuantParams weights_from_minmax(float lo, float hi);
    // uint8 [0,255]; the range is widened to include 0 so the affine zero is
    // exactly representable (zero padding and ReLU zeros stay exact)
    static QuantParams activation_from_minmax(float lo, float hi);

    int quantize(float v) const;  // round half away from zero, clamped
    float dequantize(int q) const { return scale * float(q - zero_point); }
};

// Per-tensor min-max weight fake-quantizer. The layer applies it in forward
// and differentiates straight-through (gradients land on the raw weights).
class MinMaxWeightQuant final : public WeightFakeQuant<float> {
public:
    QuantParams params;  // refreshed by every apply()
    Tensor apply(const Tensor& w) override;
};

// one-shot dequantize(quantize(w)) with min-max parameters
Tensor fakequant_weights(const Tensor& w, QuantParams* used = nullptr);

// ---------------------------------------------------------------------------
// Learnable activation clipping: y = quantize(clamp(x, 0, alpha)) on a
// uniform 255-step grid over [0, alpha]. Gradients: dy/dx = 1 on (0, alpha),
// 0 outside; dy/dalpha = 1 where x >= alpha. An L2 pull on alpha is added to
// its gradient each backward call.
// ---------------------------------------------------------------------------

class PactClip final : public ActFakeQuant<float> {
public:
    explicit PactClip(float alpha_init = 6.0f);

    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& gy) override;

    float clip_value() const { return alpha.data[0]; }

    Tensor alpha;          // [1], learnable, kept >= alpha_floor by projection
    float l2 = 1e-4f;
    bool quantize = true;  // false = bare clamp (surrogate for gradient checks)
    static constexpr float alpha_floor = 1e-3f;

private:
    Tensor saved_input_;
};

// ---------------------------------------------------------------------------
// Batch-norm folding (eval-mode statistics)
// ---------------------------------------------------------------------------

struct FoldedConv {
    Tensor weight;  // conv layout
    Tensor bias;    // [out_ch], synthesized when the conv had none
};

// folded(x) == bn(conv(x)) with frozen running stats
FoldedConv fold_batchnorm(const Conv2dLayer<float>& conv, const BatchNormLayer<float>& bn);

// ---------------------------------------------------------------------------
// Quantization-aware training harness. Attaches a weight fake-quantizer to
// every conv/linear and a PactClip to every ReLU6 site for its lifetime;
// detaches in the destructor. bits == 32 attaches nothing, making training
// bit-identical to the float path.
// ---------------------------------------------------------------------------

struct QatConfig {
    int bits = 8;  // 8 or 32
    float alpha_init = 6.0f;
    float alpha_l2 = 1e-4f;
};

class QatContext {
public:
    QatContext(ModelGraph& model, QatConfig cfg = {});
    ~QatContext();
    QatContext(const QatContext&) = delete;
    QatContext& operator=(const QatContext&) = delete;

    // alpha tensors, for the optimizer (branch sites flagged as such)
    train::ExtraParams extra_params();

    PactClip* clip(const std::string& site);                // e.g. "block3.relu6a"
    MinMaxWeightQuant* weight_quant(const std::string& layer);  // e.g. "block3.dw"
    const QatConfig& config() const { return cfg_; }

private:
    ModelGraph& model_;
    QatConfig cfg_;
    std::map<std::string, std::unique_ptr<MinMaxWeightQuant>> wq_;
    std::map<std::string, std::pair<std::unique_ptr<PactClip>, ReLU6Layer<float>*>> pact_;
};

// trainer defaults for quantization-aware fine-tuning
train::TrainConfig qat_defaults();

// trainer::train with the context's clip values as extra parameters
train::TrainResult qat_train(ModelGraph& model, QatContext& ctx, const data::Dataset& train_ds,
                             const data::Dataset& val_ds, const train::TrainConfig& cfg,
                             const LossWeights& weights);

// ---------------------------------------------------------------------------
// Fixed-point requantization: value = mantissa * 2^-(31 + shift)
// ---------------------------------------------------------------------------

struct FixedPointMult {
    std::int32_t mantissa = 0;  // in [2^30, 2^31) for m > 0
    int shift = 0;

    static FixedPointMult from_double(double m);  // m > 0
    std::int32_t apply(std::int64_t acc) const;   // round half away from zero
};

std::int32_t requantize(std::int64_t acc, const FixedPointMult& m, const QuantParams& out);

// ---------------------------------------------------------------------------
// Exported full-integer model: BN folded into the convolutions, int8 weights,
// int32 biases at scale S_in * S_w, uint8 activations.
// ---------------------------------------------------------------------------

struct QTensorI8 {
    std::vector<int> shape;
    std::vector<std::int8_t> q;
    QuantParams params;
};

struct QConv {
    LayerSpec spec;  // Conv2d / DepthwiseConv2d / Linear geometry
    QTensorI8 weight;
    std::vector<std::int32_t> bias;  // scale = in.scale * weight.scale
    QuantParams out;                 // output activation parameters
};

struct QuantizedModel {
    static constexpr char magic[8] = {'S', 'K', 'D', 'Q', '8', 'v', '1', '\n'};

    BackboneConfig bb;
    std::optional<EEBranchConfig> ee;
    HeadConfig hc;
    QuantParams input;  // uint8 pixels: scale 1/255, zero point 0

    QConv stem;
    struct Block {
        QConv expand, dw, project;
        bool residual = false;
        QuantParams out;  // add-site parameters; equals project.out without residual
    };
    std::vector<Block> blocks;
    struct Branch {
        QConv conv1, conv2, fc1, fc2;
    } branch;
    struct Head {
        int attach_layer = 0;
        QConv cls, box;
    };
    std::vector<Head> heads;
};

// Folds BN, quantizes weights min-max, takes activation ranges from the
// context's clip values (ReLU6 sites) and from min-max observation over the
// calibration images (linear sites: block outputs, head outputs, logits).
// Throws when a layer's worst-case int32 accumulator could overflow.
QuantizedModel export_int8(ModelGraph& model, QatContext& ctx, const data::Dataset& calib);

// binary container: magic, json header, little-endian int8/int32 blobs
void save_int8(const QuantizedModel& qm, const std::string& path);
QuantizedModel load_int8(const std::string& path);

// Full-integer forward pass: int32 accumulation, fixed-point requantization
// per tensor, uint8 activations end to end. Outputs (SSD logits/offsets and
// exit-branch logits) are dequantized for decoding and the softmax gate.
RawOutputs int8_forward(const QuantizedModel& qm, const Image& image);

// Float-typed view of the same export. Accumulates products of dequantized
// grid values exactly (double), then applies the export's fixed-point
// requantization constants, so the gate decision provably matches
// int8_forward while the convolution loops are implemented independently.
RawOutputs simulate_int8(const QuantizedModel& qm, const Image& image);

// Textbook fake-quant float simulation of the export: float32 convolutions
// over dequantized weights, every tensor snapped to its export grid. Differs
// from int8_forward only by float accumulation rounding, so each output
// stays within one quantization step of the integer pipeline.
RawOutputs fakequant_float_forward(const QuantizedModel& qm, const Image& image);

}  // namespace skipdet::quant
