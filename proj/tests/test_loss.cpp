#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "skipdet/loss.hpp"
#include "skipdet/rng.hpp"

using namespace skipdet;

namespace {

Anchor anchor_at(float cx, float cy, float w, float h) { return Anchor{cx, cy, w, h}; }

AnchorSet single_anchor(float cx, float cy, float w, float h) {
    AnchorSet s;
    s.anchors.push_back(anchor_at(cx, cy, w, h));
    return s;
}

Box random_box(Rng& rng) {
    float x0 = float(rng.uniform(0.0, 0.7));
    float y0 = float(rng.uniform(0.0, 0.7));
    return {x0, y0, x0 + float(rng.uniform(0.05, 0.3)), y0 + float(rng.uniform(0.05, 0.3))};
}

}  // namespace

TEST_CASE("single-cell anchor grid") {
    auto set = generate_anchors({{1, 1}}, {{0.5f}}, {1.0f});
    REQUIRE(set.size() == 1);
    CHECK(set.anchors[0].cx == doctest::Approx(0.5f));
    CHECK(set.anchors[0].cy == doctest::Approx(0.5f));
    CHECK(set.anchors[0].w == doctest::Approx(0.5f));
    CHECK(set.anchors[0].h == doctest::Approx(0.5f));
}

TEST_CASE("2x2 map with 2 ratios gives 8 anchors") {
    auto set = generate_anchors({{2, 2}}, {{0.3f}}, {1.0f, 2.0f});
    CHECK(set.size() == 8);
}

TEST_CASE("anchor count matches brute-force enumeration for the default heads") {
    std::vector<std::array<int, 2>> shapes{{6, 8}, {3, 4}};
    std::vector<std::vector<float>> scales{{0.15f, 0.3f}, {0.45f, 0.7f}};
    std::vector<float> ratios{1.0f, 2.0f, 0.5f};
    auto set = generate_anchors(shapes, scales, ratios);
    std::size_t expect = 0;
    for (std::size_t h = 0; h < shapes.size(); ++h)
        for (int y = 0; y < shapes[h][0]; ++y)
            for (int x = 0; x < shapes[h][1]; ++x)
                for (std::size_t s = 0; s < scales[h].size(); ++s)
                    for (std::size_t r = 0; r < ratios.size(); ++r) ++expect;
    CHECK(set.size() == expect);
    for (const auto& a : set.anchors) {
        Box b = a.to_box();
        CHECK(b.xmin >= 0.0f);
        CHECK(b.ymin >= 0.0f);
        CHECK(b.xmax <= 1.0f);
        CHECK(b.ymax <= 1.0f);
    }
    CHECK_THROWS_AS(generate_anchors({{1, 1}}, {{}}, {1.0f}), std::invalid_argument);
}

TEST_CASE("matching: empty gts, self-match, brute-force oracle") {
    auto set = generate_anchors({{4, 4}}, {{0.25f}}, {1.0f});
    SUBCASE("empty gts") {
        auto as = match_anchors(set, {});
        CHECK(as.num_positives == 0);
        for (int v : as.anchor_to_gt) CHECK(v == -1);
    }
    SUBCASE("gt identical to an anchor") {
        Box b = set.anchors[5].to_box();
        auto as = match_anchors(set, {{1, b}});
        CHECK(as.anchor_to_gt[5] == 0);
        CHECK(as.anchor_iou[5] == doctest::Approx(1.0f));
    }
    SUBCASE("random case vs exhaustive argmax oracle") {
        Rng rng(17);
        AnchorSet anchors;
        for (int i = 0; i < 5; ++i) {
            Box b = random_box(rng);
            anchors.anchors.push_back(
                {(b.xmin + b.xmax) / 2, (b.ymin + b.ymax) / 2, b.xmax - b.xmin, b.ymax - b.ymin});
        }
        std::vector<GroundTruthBox> gts{{1, random_box(rng)}, {2, random_box(rng)}};
        auto as = match_anchors(anchors, gts, 0.5f);
        // oracle: exhaustive rules
        std::vector<int> expect(5, -1);
        for (int a = 0; a < 5; ++a) {
            int best = -1;
            float bi = 0.0f;
            for (int g = 0; g < 2; ++g) {
                float v = iou(anchors.anchors[std::size_t(a)].to_box(), gts[std::size_t(g)].box);
                if (v > bi) { bi = v; best = g; }
            }
            if (best >= 0 && bi >= 0.5f) expect[std::size_t(a)] = best;
        }
        for (int g = 0; g < 2; ++g) {
            int best_a = 0;
            float bi = -1.0f;
            for (int a = 0; a < 5; ++a) {
                float v = iou(anchors.anchors[std::size_t(a)].to_box(), gts[std::size_t(g)].box);
                if (v > bi) { bi = v; best_a = a; }
            }
            expect[std::size_t(best_a)] = g;
        }
        CHECK(as.anchor_to_gt == expect);
    }
}

TEST_CASE("encode identity and hand-computed shift") {
    Anchor a = anchor_at(0.5f, 0.5f, 0.2f, 0.2f);
    auto t = encode_box(a.to_box(), a);
    for (float v : t) CHECK(v == doctest::Approx(0.0f).epsilon(1e-6));

    Box shifted{0.5f, 0.4f, 0.7f, 0.6f};  // cx moved +0.1
    auto ts = encode_box(shifted, a);
    CHECK(ts[0] == doctest::Approx(0.1f / 0.2f / 0.1f));
}

TEST_CASE("encode/decode round-trip on 100 random pairs") {
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        Box gt = random_box(rng);
        Box ab = random_box(rng);
        Anchor a{(ab.xmin + ab.xmax) / 2, (ab.ymin + ab.ymax) / 2, ab.xmax - ab.xmin,
                 ab.ymax - ab.ymin};
        Box back = decode_box(encode_box(gt, a), a);
        CHECK(std::abs(back.xmin - gt.xmin) < 1e-6f);
        CHECK(std::abs(back.ymin - gt.ymin) < 1e-6f);
        CHECK(std::abs(back.xmax - gt.xmax) < 1e-6f);
        CHECK(std::abs(back.ymax - gt.ymax) < 1e-6f);
    }
    CHECK_THROWS_AS(encode_box(random_box(rng), anchor_at(0.5f, 0.5f, 0.0f, 0.2f)),
                    std::invalid_argument);
}

TEST_CASE("ssd_loss: perfect prediction gives ~0; known offset error") {
    auto anchors = single_anchor(0.5f, 0.5f, 0.2f, 0.2f);
    std::vector<GroundTruthBox> gts{{1, {0.4f, 0.4f, 0.6f, 0.6f}}};
    auto as = match_anchors(anchors, gts);
    REQUIRE(as.num_positives == 1);

    SUBCASE("perfect prediction") {
        Tensor cls({1, 1, 3});
        cls.data = {-20.0f, 20.0f, -20.0f};
        Tensor box({1, 1, 4});
        auto t = encode_box(gts[0].box, anchors.anchors[0]);
        std::copy(t.begin(), t.end(), box.data.begin());
        auto r = ssd_loss(cls, box, anchors, {as}, {gts});
        CHECK(r.l_loc == doctest::Approx(0.0f));
        CHECK(r.l_cls == doctest::Approx(0.0f).epsilon(1e-6));
    }
    SUBCASE("offset error 0.5 per coordinate -> smooth-l1 0.5") {
        Tensor cls({1, 1, 3});
        cls.data = {-20.0f, 20.0f, -20.0f};
        Tensor box({1, 1, 4});
        auto t = encode_box(gts[0].box, anchors.anchors[0]);
        for (int k = 0; k < 4; ++k) box.data[std::size_t(k)] = t[std::size_t(k)] + 0.5f;
        auto r = ssd_loss(cls, box, anchors, {as}, {gts});
        CHECK(r.l_loc == doctest::Approx(0.5f));
    }
}

TEST_CASE("ssd_loss small case equals straight-line scalar oracle") {
    Rng rng(31);
    AnchorSet anchors = generate_anchors({{2, 2}}, {{0.5f}}, {1.0f});
    std::vector<GroundTruthBox> gts{{1, anchors.anchors[0].to_box()}};
    auto as = match_anchors(anchors, gts);
    Tensor cls({1, 4, 3});
    Tensor box({1, 4, 4});
    for (auto& v : cls.data) v = float(rng.uniform(-1, 1));
    for (auto& v : box.data) v = float(rng.uniform(-1, 1));
    auto r = ssd_loss(cls, box, anchors, {as}, {gts});

    // independent scalar recomputation
    double norm = as.num_positives;
    double l_loc = 0, l_cls = 0;
    std::vector<std::pair<double, int>> negs;
    for (int a = 0; a < 4; ++a) {
        double e0 = std::exp(double(cls.data[a * 3])), e1 = std::exp(double(cls.data[a * 3 + 1])),
               e2 = std::exp(double(cls.data[a * 3 + 2]));
        double z = e0 + e1 + e2;
        if (as.anchor_to_gt[std::size_t(a)] >= 0) {
            l_cls -= std::log(e1 / z);
            auto t = encode_box(gts[0].box, anchors.anchors[std::size_t(a)]);
            for (int k = 0; k < 4; ++k) {
                double d = double(box.data[a * 4 + k]) - t[std::size_t(k)];
                l_loc += std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5;
            }
        } else {
            negs.push_back({-std::log(e0 / z), a});
        }
    }
    std::sort(negs.begin(), negs.end(), [](auto& x, auto& y) { return x.first > y.first; });
    for (int i = 0; i < std::min<int>(3, int(negs.size())); ++i) l_cls += negs[std::size_t(i)].first;
    CHECK(r.l_loc == doctest::Approx(l_loc / norm).epsilon(1e-4));
    CHECK(r.l_cls == doctest::Approx(l_cls / norm).epsilon(1e-4));
}

TEST_CASE("ee_loss hand values and weight structure") {
    SUBCASE("y=1, w1=2, P(1)=0.5 -> 2 ln 2") {
        Tensor logits({1, 2});
        logits.data = {0.0f, 0.0f};  // softmax = (0.5, 0.5)
        LossWeights w;
        w.w1 = 2.0f;
        CHECK(ee_loss(logits, {1}, w) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-5));
    }
    SUBCASE("perfect confident prediction -> 0") {
        Tensor logits({1, 2});
        logits.data = {-30.0f, 30.0f};
        CHECK(ee_loss(logits, {1}, LossWeights{}) == doctest::Approx(0.0f).epsilon(1e-6));
    }
    SUBCASE("w0=w1=1 equals unweighted bce") {
        Rng rng(5);
        Tensor logits({4, 2});
        for (auto& v : logits.data) v = float(rng.uniform(-2, 2));
        std::vector<int> y{0, 1, 1, 0};
        double ref = 0;
        for (int n = 0; n < 4; ++n) {
            double e0 = std::exp(double(logits.at(n, 0))), e1 = std::exp(double(logits.at(n, 1)));
            double p = (y[std::size_t(n)] ? e1 : e0) / (e0 + e1);
            ref -= std::log(p);
        }
        CHECK(ee_loss(logits, y, LossWeights{}) == doctest::Approx(ref / 4).epsilon(1e-5));
    }
    SUBCASE("all-zero labels make the loss independent of w1; scaling w1 raises loss on misclassified empties") {
        Rng rng(6);
        Tensor logits({3, 2});
        for (auto& v : logits.data) v = float(rng.uniform(-2, 2));
        LossWeights a, b;
        b.w1 = 7.0f;
        CHECK(ee_loss(logits, {0, 0, 0}, a) == ee_loss(logits, {0, 0, 0}, b));
        CHECK(ee_loss(logits, {1, 1, 1}, b) > ee_loss(logits, {1, 1, 1}, a));
    }
}

TEST_CASE("composite loss arithmetic") {
    LossWeights w;
    CHECK(composite_loss(0.5f, 0.3f, 0.2f, w) == doctest::Approx(1.0f));
    w.lambda = 0.0f;
    CHECK(composite_loss(0.5f, 0.3f, 99.0f, w) == doctest::Approx(0.8f));
    w.lambda = 2.0f;
    CHECK(composite_loss(0.0f, 0.0f, 0.25f, w) == doctest::Approx(0.5f));
}
