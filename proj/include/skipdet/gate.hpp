#pragma once

#include <optional>
#include <string>
#include <vector>

#include "skipdet/datasynth.hpp"
#include "skipdet/loss.hpp"
#include "skipdet/metrics.hpp"
#include "skipdet/model.hpp"

namespace skipdet::gate {

struct NmsParams {
    float iou = 0.5f;
    float score_thresh = 0.01f;
    int top_k = 200;
};

// pixel raster -> [1,1,H,W] input scaled to [0,1]
Tensor image_to_input(const Image& image);
// pixel boxes -> normalized [0,1] coordinates
std::vector<GroundTruthBox> normalize_boxes(const std::vector<GroundTruthBox>& boxes, int img_w,
                                            int img_h);

// Decode raw SSD outputs for batch item n into score-filtered, per-class
// NMS-suppressed detections in normalized coordinates.
std::vector<Detection> decode_detections(const RawOutputs& raw, int n, const AnchorSet& anchors,
                                         const NmsParams& nms = {});

struct GateDecision {
    float p_empty = 0.0f;
    bool skipped = false;
    std::vector<Detection> detections;  // empty when skipped
};

// Runs the backbone prefix and branch; skips (returns no detections) when
// P(empty) >= tau, otherwise resumes from the cached activation without
// recomputing the prefix.
GateDecision gated_inference(ModelGraph& model, const Tensor& input, float tau,
                             const AnchorSet& anchors, ForwardStats* stats = nullptr,
                             const NmsParams& nms = {});

// One full-pipeline evaluation per image; every threshold question afterwards
// is answered by comparisons against these cached scores.
struct ScoreCache {
    std::vector<float> p_empty;
    std::vector<std::vector<Detection>> detections;  // full-pipeline outputs per image
    std::vector<int> y;                              // 1 = frame annotated empty
};

ScoreCache score_dataset(ModelGraph& model, const data::Dataset& ds, const NmsParams& nms = {});

// Ternary search over tau in [0.5,1] maximizing empty/non-empty accuracy,
// then snapped to the exhaustive 1e-3-grid maximum (accuracy is piecewise
// constant, so raw ternary search can stall on plateaus). Largest tau wins
// ties. Throws when the labels are single-class.
float optimize_threshold(const std::vector<float>& p_empty, const std::vector<int>& y);
float optimize_threshold(ModelGraph& model, const data::Dataset& val);

struct SweepPoint {
    float tau = 0.0f;
    float map = 0.0f;
    float skip_rate = 0.0f;
    float ee_accuracy = 0.0f;
    double mac_avg = 0.0;
};

std::vector<SweepPoint> threshold_sweep(const ScoreCache& cache,
                                        const std::vector<std::vector<GroundTruthBox>>& gts_norm,
                                        const std::vector<float>& taus, double mac_full,
                                        double mac_ee, int num_classes);
std::string sweep_csv(const std::vector<SweepPoint>& points);

struct ClassCounts {
    int tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
    std::vector<std::optional<float>> per_class_ap;
    float map = 0.0f;
    float map_no_ee = 0.0f;  // gating disabled
    float ee_accuracy = 0.0f;
    float ee_fpr = 0.0f;
    float skip_rate = 0.0f;
    std::optional<float> tau;                    // nullopt = gate disabled
    std::vector<ClassCounts> counts;             // per class id, at score >= 0.5
    std::string interpolation = "all-point";     // AP variant, for report comparability
};

// tau = nullopt evaluates with the gate disabled; skipped frames contribute
// no detections.
EvalReport evaluate(ModelGraph& model, const data::Dataset& ds, std::optional<float> tau,
                    const NmsParams& nms = {});
std::string to_json(const EvalReport& report);

}  // namespace skipdet::gate
