#include <algorithm>
#include <cmath>

#include "skipdet/loss.hpp"

namespace skipdet {

namespace {

inline float smooth_l1(float x) {
    float a = std::abs(x);
    return a < 1.0f ? 0.5f * x * x : a - 0.5f;
}
inline float smooth_l1_grad(float x) { return x > 1.0f ? 1.0f : (x < -1.0f ? -1.0f : x); }

}  // namespace

SsdLossResult ssd_loss(const Tensor& raw_cls, const Tensor& raw_box, const AnchorSet& anchors,
                       const std::vector<Assignment>& assignments,
                       const std::vector<std::vector<GroundTruthBox>>& gts, Tensor* cls_grad,
                       Tensor* box_grad) {
    int N = raw_cls.dim(0);
    int A = raw_cls.dim(1);
    int K = raw_cls.dim(2);
    if (int(anchors.size()) != A) throw std::invalid_argument("ssd_loss: anchor count mismatch");
    if (int(assignments.size()) != N || int(gts.size()) != N)
        throw std::invalid_argument("ssd_loss: per-image assignment/gt lists required");

    int total_pos = 0;
    for (const auto& a : assignments) total_pos += a.num_positives;
    float norm = float(std::max(total_pos, 1));

    if (cls_grad) *cls_grad = Tensor(raw_cls.shape);
    if (box_grad) *box_grad = Tensor(raw_box.shape);

    SsdLossResult out;
    std::vector<float> probs(static_cast<std::size_t>(K));
    std::vector<std::pair<float, int>> neg_losses;
    for (int n = 0; n < N; ++n) {
        const Assignment& as = assignments[std::size_t(n)];
        neg_losses.clear();
        for (int a = 0; a < A; ++a) {
            const float* logits = &raw_cls.data[(std::size_t(n) * A + a) * K];
            float mx = logits[0];
            for (int k = 1; k < K; ++k) mx = std::max(mx, logits[k]);
            float sum = 0;
            for (int k = 0; k < K; ++k) {
                probs[std::size_t(k)] = std::exp(logits[k] - mx);
                sum += probs[std::size_t(k)];
            }
            for (int k = 0; k < K; ++k) probs[std::size_t(k)] /= sum;

            int gt_idx = as.anchor_to_gt[std::size_t(a)];
            if (gt_idx >= 0) {
                int cls = gts[std::size_t(n)][std::size_t(gt_idx)].class_id;
                out.l_cls -= std::log(std::max(probs[std::size_t(cls)], 1e-12f)) / norm;
                if (cls_grad)
                    for (int k = 0; k < K; ++k)
                        cls_grad->data[(std::size_t(n) * A + a) * K + k] +=
                            (probs[std::size_t(k)] - (k == cls ? 1.0f : 0.0f)) / norm;
                // localization
                const auto target =
                    encode_box(gts[std::size_t(n)][std::size_t(gt_idx)].box, anchors.anchors[std::size_t(a)]);
                for (int k = 0; k < 4; ++k) {
                    float diff = raw_box.data[(std::size_t(n) * A + a) * 4 + k] - target[std::size_t(k)];
                    out.l_loc += smooth_l1(diff) / norm;
                    if (box_grad)
                        box_grad->data[(std::size_t(n) * A + a) * 4 + k] = smooth_l1_grad(diff) / norm;
                }
            } else {
                // candidate negative, ranked by background loss
                neg_losses.push_back({-std::log(std::max(probs[0], 1e-12f)), a});
            }
        }
        int want = std::max(kHardNegativeRatio * as.num_positives, kHardNegativeRatio);
        int n_neg = std::min<int>(want, int(neg_losses.size()));
        std::partial_sort(neg_losses.begin(), neg_losses.begin() + n_neg, neg_losses.end(),
                          [](const auto& x, const auto& y) {
                              return x.first != y.first ? x.first > y.first : x.second < y.second;
                          });
        for (int i = 0; i < n_neg; ++i) {
            int a = neg_losses[std::size_t(i)].second;
            out.l_cls += neg_losses[std::size_t(i)].first / norm;
            if (cls_grad) {
                const float* logits = &raw_cls.data[(std::size_t(n) * A + a) * K];
                float mx = logits[0];
                for (int k = 1; k < K; ++k) mx = std::max(mx, logits[k]);
                float sum = 0;
                for (int k = 0; k < K; ++k) {
                    probs[std::size_t(k)] = std::exp(logits[k] - mx);
                    sum += probs[std::size_t(k)];
                }
                for (int k = 0; k < K; ++k)
                    cls_grad->data[(std::size_t(n) * A + a) * K + k] +=
                        (probs[std::size_t(k)] / sum - (k == 0 ? 1.0f : 0.0f)) / norm;
            }
        }
    }
    return out;
}

float ee_loss(const Tensor& ee_logits, const std::vector<int>& y, const LossWeights& w,
              Tensor* logit_grad) {
    int N = ee_logits.dim(0);
    if (ee_logits.dim(1) != 2) throw std::invalid_argument("ee_loss: logits must be length 2");
    if (int(y.size()) != N) throw std::invalid_argument("ee_loss: label count mismatch");
    if (logit_grad) *logit_grad = Tensor(ee_logits.shape);

    Tensor p;
    softmax_rows(ee_logits, p);
    float loss = 0.0f;
    for (int n = 0; n < N; ++n) {
        int yi = y[std::size_t(n)];
        float weight = yi == 1 ? w.w1 : w.w0;
        float pt = std::max(p.at(n, yi), 1e-12f);
        loss -= weight * std::log(pt);
        if (logit_grad)
            for (int k = 0; k < 2; ++k)
                logit_grad->at(n, k) = weight * (p.at(n, k) - (k == yi ? 1.0f : 0.0f)) / float(N);
    }
    return loss / float(N);
}

}  // namespace skipdet
