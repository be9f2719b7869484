#pragma once

#include <array>
#include <optional>
#include <vector>

#include "skipdet/boxes.hpp"
#include "skipdet/model.hpp"
#include "skipdet/tensor.hpp"

namespace skipdet {

struct Anchor {
    float cx = 0, cy = 0, w = 0, h = 0;
    Box to_box() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
};

struct AnchorSet {
    std::vector<Anchor> anchors;
    std::size_t size() const { return anchors.size(); }
};

// SSD-standard center-size encoding variances
inline constexpr std::array<float, 4> kBoxVariances{0.1f, 0.1f, 0.2f, 0.2f};
inline constexpr float kMatchIouThreshold = 0.5f;
inline constexpr int kHardNegativeRatio = 3;

// deterministic grid: centers at (i+0.5)/W_f, (j+0.5)/H_f; cell-major
// (y, x), then scale-major anchor index — matches the head flatten order
AnchorSet generate_anchors(const std::vector<std::array<int, 2>>& head_shapes_hw,
                           const std::vector<std::vector<float>>& scales_per_head,
                           const std::vector<float>& aspect_ratios);

AnchorSet anchors_for_model(const ModelGraph& model);

struct Assignment {
    std::vector<int> anchor_to_gt;  // -1 = background
    std::vector<float> anchor_iou;
    int num_positives = 0;
};

Assignment match_anchors(const AnchorSet& anchors, const std::vector<GroundTruthBox>& gts,
                         float iou_threshold = kMatchIouThreshold);

std::array<float, 4> encode_box(const Box& gt, const Anchor& anchor);
Box decode_box(const std::array<float, 4>& offsets, const Anchor& anchor);

struct LossWeights {
    float lambda = 1.0f;  // EE loss weight
    float w0 = 1.0f;      // non-empty class weight
    float w1 = 1.0f;      // empty class weight
};

struct SsdLossResult {
    float l_loc = 0;
    float l_cls = 0;
};

// raw_cls [N,A,K], raw_box [N,A,4]; grads (same shapes) accumulated when
// non-null. Smooth-L1 over positives normalized by positive count;
// cross-entropy over positives + 3:1 hard-mined negatives.
SsdLossResult ssd_loss(const Tensor& raw_cls, const Tensor& raw_box, const AnchorSet& anchors,
                       const std::vector<Assignment>& assignments,
                       const std::vector<std::vector<GroundTruthBox>>& gts,
                       Tensor* cls_grad = nullptr, Tensor* box_grad = nullptr);

// Eq-style weighted binary cross-entropy on the 2-class branch logits;
// y=1 means empty. logit_grad excludes the lambda factor.
float ee_loss(const Tensor& ee_logits, const std::vector<int>& y, const LossWeights& w,
              Tensor* logit_grad = nullptr);

inline float composite_loss(float l_loc, float l_cls, float l_ee, const LossWeights& w) {
    return l_loc + l_cls + w.lambda * l_ee;
}

}  // namespace skipdet
