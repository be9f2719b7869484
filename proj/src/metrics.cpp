#include "skipdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace skipdet {

std::optional<float> average_precision(std::vector<ScoredBox> detections,
                                       const std::vector<std::vector<Box>>& gts_per_image,
                                       float iou_thresh) {
    std::size_t total_gt = 0;
    for (const auto& g : gts_per_image) total_gt += g.size();
    if (total_gt == 0) return std::nullopt;

    std::sort(detections.begin(), detections.end(), [](const ScoredBox& a, const ScoredBox& b) {
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) > std::get<1>(b);
        return std::get<0>(a) < std::get<0>(b);
    });

    std::vector<std::vector<bool>> used(gts_per_image.size());
    for (std::size_t i = 0; i < used.size(); ++i) used[i].assign(gts_per_image[i].size(), false);

    std::vector<int> tp(detections.size(), 0);
    for (std::size_t d = 0; d < detections.size(); ++d) {
        int img = std::get<0>(detections[d]);
        const Box& box = std::get<2>(detections[d]);
        const auto& gts = gts_per_image[std::size_t(img)];
        int best = -1;
        float best_iou = iou_thresh;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            float v = iou(box, gts[g]);
            if (v >= best_iou && !used[std::size_t(img)][g]) {
                best_iou = v;
                best = int(g);
            }
        }
        if (best >= 0) {
            used[std::size_t(img)][std::size_t(best)] = true;
            tp[d] = 1;
        }
    }

    // precision-recall curve, then the area under its upper envelope
    std::vector<double> precision, recall;
    int cum_tp = 0;
    for (std::size_t d = 0; d < detections.size(); ++d) {
        cum_tp += tp[d];
        precision.push_back(double(cum_tp) / double(d + 1));
        recall.push_back(double(cum_tp) / double(total_gt));
    }
    for (int i = int(precision.size()) - 2; i >= 0; --i)
        precision[std::size_t(i)] = std::max(precision[std::size_t(i)], precision[std::size_t(i) + 1]);
    double ap = 0.0, prev_r = 0.0;
    for (std::size_t d = 0; d < detections.size(); ++d) {
        ap += (recall[d] - prev_r) * precision[d];
        prev_r = recall[d];
    }
    return float(ap);
}

MapResult mean_average_precision(const std::vector<std::vector<Detection>>& detections_per_image,
                                 const std::vector<std::vector<GroundTruthBox>>& gts_per_image,
                                 int num_classes, float iou_thresh) {
    MapResult out;
    out.per_class.resize(std::size_t(num_classes));
    double sum = 0.0;
    int counted = 0;
    for (int c = 1; c < num_classes; ++c) {
        std::vector<ScoredBox> dets;
        std::vector<std::vector<Box>> gts(gts_per_image.size());
        for (std::size_t i = 0; i < gts_per_image.size(); ++i) {
            for (const auto& g : gts_per_image[i])
                if (g.class_id == c) gts[i].push_back(g.box);
            if (i < detections_per_image.size())
                for (const auto& d : detections_per_image[i])
                    if (d.class_id == c) dets.push_back({int(i), d.score, d.box});
        }
        out.per_class[std::size_t(c)] = average_precision(std::move(dets), gts, iou_thresh);
        if (out.per_class[std::size_t(c)]) {
            sum += *out.per_class[std::size_t(c)];
            ++counted;
        }
    }
    out.map = counted ? float(sum / counted) : 0.0f;
    return out;
}

EeMetrics ee_classification_metrics(const std::vector<float>& p_empty, const std::vector<int>& y,
                                    float tau) {
    if (p_empty.size() != y.size())
        throw std::invalid_argument("ee_classification_metrics: size mismatch");
    EeMetrics m;
    std::size_t correct = 0, skipped = 0, fp = 0, nonempty = 0;
    for (std::size_t i = 0; i < p_empty.size(); ++i) {
        int pred = p_empty[i] >= tau ? 1 : 0;
        if (pred == y[i]) ++correct;
        if (pred == 1) ++skipped;
        if (y[i] == 0) {
            ++nonempty;
            if (pred == 1) ++fp;
        }
    }
    std::size_t n = p_empty.size();
    m.accuracy = n ? float(correct) / float(n) : 0.0f;
    m.skip_rate = n ? float(skipped) / float(n) : 0.0f;
    m.fpr = nonempty ? float(fp) / float(nonempty) : 0.0f;
    return m;
}

}  // namespace skipdet
