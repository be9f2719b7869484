#pragma once

#include <optional>
#include <tuple>
#include <vector>

#include "skipdet/boxes.hpp"

namespace skipdet {

// detections for one class across a dataset: (image index, score, box)
using ScoredBox = std::tuple<int, float, Box>;

// Greedy highest-score-first matching, each GT matched at most once; AP is
// the area under the precision-recall envelope (all-point interpolation).
// Returns nullopt when the class has zero GT instances.
std::optional<float> average_precision(std::vector<ScoredBox> detections,
                                       const std::vector<std::vector<Box>>& gts_per_image,
                                       float iou_thresh = 0.5f);

struct MapResult {
    std::vector<std::optional<float>> per_class;  // index by class id, 0 unused (background)
    float map = 0.0f;                             // mean over classes with >= 1 GT
};

MapResult mean_average_precision(const std::vector<std::vector<Detection>>& detections_per_image,
                                 const std::vector<std::vector<GroundTruthBox>>& gts_per_image,
                                 int num_classes, float iou_thresh = 0.5f);

struct EeMetrics {
    float accuracy = 0;
    float fpr = 0;  // non-empty classified empty (critical error)
    float skip_rate = 0;
};

// prediction = [p_empty >= tau]
EeMetrics ee_classification_metrics(const std::vector<float>& p_empty, const std::vector<int>& y,
                                    float tau);

}  // namespace skipdet
