#include <algorithm>
#include <cmath>

#include "skipdet/loss.hpp"

namespace skipdet {

float iou(const Box& a, const Box& b) {
    float ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    float iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    if (ix <= 0 || iy <= 0) return 0.0f;
    float inter = ix * iy;
    float uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0f;
}

AnchorSet generate_anchors(const std::vector<std::array<int, 2>>& head_shapes_hw,
                           const std::vector<std::vector<float>>& scales_per_head,
                           const std::vector<float>& aspect_ratios) {
    if (head_shapes_hw.size() != scales_per_head.size())
        throw std::invalid_argument("generate_anchors: one scale list per head required");
    for (const auto& s : scales_per_head)
        if (s.empty()) throw std::invalid_argument("generate_anchors: empty scale list");
    if (aspect_ratios.empty()) throw std::invalid_argument("generate_anchors: empty ratio list");

    AnchorSet set;
    for (std::size_t h = 0; h < head_shapes_hw.size(); ++h) {
        int H = head_shapes_hw[h][0], W = head_shapes_hw[h][1];
        if (H <= 0 || W <= 0) throw std::invalid_argument("generate_anchors: non-positive shape");
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                for (float s : scales_per_head[h]) {
                    for (float r : aspect_ratios) {
                        Anchor a;
                        a.cx = (float(x) + 0.5f) / float(W);
                        a.cy = (float(y) + 0.5f) / float(H);
                        a.w = s * std::sqrt(r);
                        a.h = s / std::sqrt(r);
                        // clip in corner form, back to center-size
                        Box b = a.to_box();
                        b.xmin = std::clamp(b.xmin, 0.0f, 1.0f);
                        b.xmax = std::clamp(b.xmax, 0.0f, 1.0f);
                        b.ymin = std::clamp(b.ymin, 0.0f, 1.0f);
                        b.ymax = std::clamp(b.ymax, 0.0f, 1.0f);
                        a.cx = (b.xmin + b.xmax) / 2;
                        a.cy = (b.ymin + b.ymax) / 2;
                        a.w = b.xmax - b.xmin;
                        a.h = b.ymax - b.ymin;
                        set.anchors.push_back(a);
                    }
                }
            }
        }
    }
    return set;
}

AnchorSet anchors_for_model(const ModelGraph& model) {
    const HeadConfig& hc = model.head_config();
    std::vector<std::array<int, 2>> shapes;
    for (int h = 0; h < 2; ++h) {
        auto s = model.head_feature_shape(h);
        shapes.push_back({s[1], s[2]});
    }
    return generate_anchors(shapes, {hc.scales_s4, hc.scales_s5}, hc.aspect_ratios);
}

Assignment match_anchors(const AnchorSet& anchors, const std::vector<GroundTruthBox>& gts,
                         float iou_threshold) {
    if (iou_threshold <= 0.0f || iou_threshold >= 1.0f)
        throw std::invalid_argument("match_anchors: iou_threshold must be in (0,1)");
    Assignment out;
    out.anchor_to_gt.assign(anchors.size(), -1);
    out.anchor_iou.assign(anchors.size(), 0.0f);
    if (gts.empty()) return out;

    std::vector<std::vector<float>> ious(anchors.size(), std::vector<float>(gts.size()));
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        Box ab = anchors.anchors[a].to_box();
        for (std::size_t g = 0; g < gts.size(); ++g) ious[a][g] = iou(ab, gts[g].box);
    }
    // threshold rule: anchor -> best gt when IoU >= threshold
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        int best = -1;
        float best_iou = 0.0f;
        for (std::size_t g = 0; g < gts.size(); ++g)
            if (ious[a][g] > best_iou) {
                best_iou = ious[a][g];
                best = int(g);
            }
        if (best >= 0 && best_iou >= iou_threshold) {
            out.anchor_to_gt[a] = best;
            out.anchor_iou[a] = best_iou;
        }
    }
    // each gt claims its best anchor unconditionally
    for (std::size_t g = 0; g < gts.size(); ++g) {
        int best_a = -1;
        float best_iou = -1.0f;
        for (std::size_t a = 0; a < anchors.size(); ++a)
            if (ious[a][g] > best_iou) {
                best_iou = ious[a][g];
                best_a = int(a);
            }
        if (best_a >= 0) {
            out.anchor_to_gt[std::size_t(best_a)] = int(g);
            out.anchor_iou[std::size_t(best_a)] = best_iou;
        }
    }
    for (int v : out.anchor_to_gt)
        if (v >= 0) out.num_positives++;
    return out;
}

std::array<float, 4> encode_box(const Box& gt, const Anchor& anchor) {
    if (anchor.w <= 0 || anchor.h <= 0) throw std::invalid_argument("encode_box: degenerate anchor");
    float gcx = (gt.xmin + gt.xmax) / 2, gcy = (gt.ymin + gt.ymax) / 2;
    float gw = gt.xmax - gt.xmin, gh = gt.ymax - gt.ymin;
    return {(gcx - anchor.cx) / anchor.w / kBoxVariances[0],
            (gcy - anchor.cy) / anchor.h / kBoxVariances[1],
            std::log(gw / anchor.w) / kBoxVariances[2],
            std::log(gh / anchor.h) / kBoxVariances[3]};
}

Box decode_box(const std::array<float, 4>& t, const Anchor& anchor) {
    float cx = t[0] * kBoxVariances[0] * anchor.w + anchor.cx;
    float cy = t[1] * kBoxVariances[1] * anchor.h + anchor.cy;
    float w = std::exp(t[2] * kBoxVariances[2]) * anchor.w;
    float h = std::exp(t[3] * kBoxVariances[3]) * anchor.h;
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

}  // namespace skipdet
