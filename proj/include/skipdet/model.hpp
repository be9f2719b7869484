#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "skipdet/layers.hpp"

namespace skipdet {

// channel rounding to a multiple of 8, never below 8, never shrinking by
// more than 10% (MobileNet convention)
int make_divisible8(float v);

struct BackboneConfig {
    int in_h = 96;
    int in_w = 128;
    int in_ch = 1;
    float alpha = 0.5f;
    std::array<int, 5> stage_layers{1, 2, 3, 4, 3};
    std::array<int, 5> base_channels{16, 24, 32, 64, 96};
    int expansion = 6;

    int total_layers() const;
    int scaled_channels(int stage) const;  // stage in 1..5
    int stem_channels() const { return scaled_channels(1); }
};

// stage (1..5) owning backbone layer l under cumulative stage_layers
int stage_of_layer(int l, const BackboneConfig& cfg);
std::vector<int> layers_of_stage(int stage, const BackboneConfig& cfg);

struct EEBranchConfig {
    int attach_layer = 9;
    int mid_channels = 64;
    int fc_hidden = 64;
    static constexpr int num_classes = 2;
};

struct HeadConfig {
    int num_classes = 3;  // background + object classes
    std::vector<float> scales_s4{0.15f, 0.30f};
    std::vector<float> scales_s5{0.45f, 0.70f};
    std::vector<float> aspect_ratios{1.0f, 2.0f, 0.5f};

    int anchors_per_cell(int head) const {
        return int((head == 0 ? scales_s4 : scales_s5).size() * aspect_ratios.size());
    }
};

struct ForwardStats {
    int blocks_evaluated = 0;
    int full_pipeline_runs = 0;  // heads evaluated
    int branch_runs = 0;
};

struct RawOutputs {
    Tensor cls;  // [N, A_total, K]
    Tensor box;  // [N, A_total, 4]
    std::optional<Tensor> ee_logits;  // [N, 2]
};

// Static per-layer accounting row (filled at build time from shape
// arithmetic; MACs follow the usual conv/linear formulas, element-wise ops
// count as zero MACs with a separate ops column).
struct LayerInfo {
    std::string name;
    LayerKind kind;
    int backbone_layer = 0;  // l owning this op; 0 = stem, -1 = branch, -2 = heads
    long long macs = 0;
    long long ops = 0;     // element-wise work not counted as MACs
    long long params = 0;  // learnable elements
};

struct NamedParam {
    std::string name;
    Tensor* tensor;
    bool ee_branch;
};

struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};

class InvertedResidual {
public:
    InvertedResidual(int in_ch, int out_ch, int stride, int expansion, Rng& init);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& gy);
    void collect(const std::string& prefix, std::vector<NamedParam>& params,
                 std::vector<NamedBuffer>& buffers, bool ee);

    bool use_residual() const { return use_res_; }

    Conv2dLayer<float> expand, dw, project;
    BatchNormLayer<float> bn1, bn2, bn3;
    ReLU6Layer<float> act1, act2;

private:
    bool use_res_;
};

class ModelGraph {
public:
    ModelGraph(const BackboneConfig& backbone, std::optional<EEBranchConfig> ee,
               const HeadConfig& heads, std::uint64_t init_seed);

    const BackboneConfig& backbone_config() const { return bb_; }
    const std::optional<EEBranchConfig>& ee_config() const { return ee_; }
    const HeadConfig& head_config() const { return hc_; }
    bool has_ee() const { return ee_.has_value(); }

    // full pipeline; train=true retains state for backward()
    RawOutputs forward_full(const Tensor& input, bool train = false, ForwardStats* stats = nullptr);

    // backbone prefix through layer l (stem included), numerically identical
    // to the corresponding slice of forward_full
    Tensor forward_to_layer(const Tensor& input, int l, bool train = false,
                            ForwardStats* stats = nullptr);

    // branch logits from a cached x_l (resumable gating path)
    Tensor ee_branch_forward(const Tensor& x_l, bool train = false);

    // prefix through layer l retaining the activations the suffix needs
    // (x_l plus any head inputs already passed)
    struct PrefixCache {
        int l = 0;
        Tensor x_l;
        std::vector<std::pair<int, Tensor>> head_acts;
    };
    PrefixCache forward_prefix(const Tensor& input, int l, ForwardStats* stats = nullptr);
    // continue to raw SSD outputs without recomputing the prefix
    RawOutputs resume_from(const PrefixCache& cache, ForwardStats* stats = nullptr);

    // reverse pass for a forward_full(train=true) call; ee gradient may be
    // empty when the branch is absent or its loss weight is zero
    void backward(const Tensor& cls_grad, const Tensor& box_grad, const Tensor& ee_logits_grad);

    std::vector<NamedParam> params();
    std::vector<NamedBuffer> buffers();
    void zero_grad();
    long long param_count();

    const std::vector<LayerInfo>& layer_table() const { return layer_table_; }
    // spatial shape (C,H,W) of the activation after backbone layer l
    std::array<int, 3> shape_after_layer(int l) const;
    std::array<int, 3> head_feature_shape(int head) const;
    int num_anchors() const;

    // QAT hook: assign weight quantizers to every conv/linear (see quant.hpp)
    void for_each_weighted_layer(const std::function<void(const std::string&, Conv2dLayer<float>*,
                                                          LinearLayer<float>*)>& fn);

    struct Stem {
        std::unique_ptr<Conv2dLayer<float>> conv;
        std::unique_ptr<BatchNormLayer<float>> bn;
        ReLU6Layer<float> act;
    };
    struct EEBranch {
        std::unique_ptr<Conv2dLayer<float>> conv1, conv2;
        std::unique_ptr<BatchNormLayer<float>> bn1, bn2;
        ReLU6Layer<float> act1, act2, act3;
        GlobalAvgPoolLayer<float> gap;
        std::unique_ptr<LinearLayer<float>> fc1, fc2;
    };
    struct Head {
        int attach_layer;  // l
        std::unique_ptr<Conv2dLayer<float>> cls, box;
    };

    Stem& stem() { return stem_; }
    std::vector<InvertedResidual>& blocks() { return blocks_; }
    EEBranch& ee_branch() { return branch_; }
    std::vector<Head>& heads() { return heads_; }

private:
    BackboneConfig bb_;
    std::optional<EEBranchConfig> ee_;
    HeadConfig hc_;
    Stem stem_;
    std::vector<InvertedResidual> blocks_;
    EEBranch branch_;
    std::vector<Head> heads_;
    std::vector<LayerInfo> layer_table_;
    std::vector<std::array<int, 3>> shape_after_;  // index 0 = stem output, i = layer i

    // saved activations for backward of head/branch attachment points
    Tensor saved_input_;
    bool trained_forward_ = false;

    void build_layer_table();
    Tensor flatten_heads(const std::vector<std::pair<Tensor, Tensor>>& head_raw, int which,
                         int N) const;
};

}  // namespace skipdet
