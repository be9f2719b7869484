#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "skipdet/metrics.hpp"

using namespace skipdet;

namespace {
Box unit_at(float x, float y) { return {x, y, x + 1.0f, y + 1.0f}; }
}

TEST_CASE("iou basics") {
    CHECK(iou(unit_at(0, 0), unit_at(0, 0)) == doctest::Approx(1.0f));
    CHECK(iou(unit_at(0, 0), unit_at(2, 2)) == doctest::Approx(0.0f));
    // unit squares offset by 0.5 in x: inter 0.5, union 1.5
    CHECK(iou(unit_at(0, 0), unit_at(0.5f, 0)) == doctest::Approx(1.0f / 3.0f));
}

TEST_CASE("average precision: perfect and degenerate cases") {
    std::vector<std::vector<Box>> gts{{unit_at(0, 0), unit_at(2, 0)}};
    SUBCASE("perfect detections -> ap 1") {
        std::vector<ScoredBox> dets{{0, 0.9f, unit_at(0, 0)}, {0, 0.8f, unit_at(2, 0)}};
        auto ap = average_precision(dets, gts);
        REQUIRE(ap.has_value());
        CHECK(*ap == doctest::Approx(1.0f));
    }
    SUBCASE("no detections -> ap 0") {
        auto ap = average_precision({}, gts);
        REQUIRE(ap.has_value());
        CHECK(*ap == doctest::Approx(0.0f));
    }
    SUBCASE("no ground truth -> nullopt") {
        CHECK_FALSE(average_precision({{0, 0.9f, unit_at(0, 0)}}, {{}}).has_value());
    }
}

TEST_CASE("average precision hand-computed three-detection case") {
    // 2 GT; detections in score order: TP, FP, TP.
    // PR points: (r=.5,p=1), (r=.5,p=.5), (r=1,p=2/3); envelope p at r=.5..1 is 2/3.
    // AP = 0.5*1 + 0*... + 0.5*(2/3) = 5/6
    std::vector<std::vector<Box>> gts{{unit_at(0, 0), unit_at(2, 0)}};
    std::vector<ScoredBox> dets{
        {0, 0.9f, unit_at(0, 0)},
        {0, 0.8f, unit_at(5, 5)},
        {0, 0.7f, unit_at(2, 0)},
    };
    auto ap = average_precision(dets, gts);
    REQUIRE(ap.has_value());
    CHECK(*ap == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("duplicate detections on one gt count a single true positive") {
    std::vector<std::vector<Box>> gts{{unit_at(0, 0)}};
    std::vector<ScoredBox> dets{{0, 0.9f, unit_at(0, 0)}, {0, 0.8f, unit_at(0.1f, 0)}};
    auto ap = average_precision(dets, gts);
    REQUIRE(ap.has_value());
    CHECK(*ap == doctest::Approx(1.0f));  // first matches; second is FP after recall 1
}

TEST_CASE("mean over classes skips absent classes") {
    std::vector<std::vector<GroundTruthBox>> gts{{{1, unit_at(0, 0)}}};  // class 2 absent
    std::vector<std::vector<Detection>> dets{{{1, 0.9f, unit_at(0, 0)}, {2, 0.9f, unit_at(3, 3)}}};
    auto r = mean_average_precision(dets, gts, 3);
    REQUIRE(r.per_class[1].has_value());
    CHECK_FALSE(r.per_class[2].has_value());
    CHECK(r.map == doctest::Approx(1.0f));
}

TEST_CASE("ee metrics against a hand confusion matrix") {
    // tau=0.6; p: .7 .5 .9 .2; y: 1 1 0 0
    // preds:      1  0  1  0  -> correct 1,0 -> acc = (1 + 0 + 0 + 1)/4
    std::vector<float> p{0.7f, 0.5f, 0.9f, 0.2f};
    std::vector<int> y{1, 1, 0, 0};
    auto m = ee_classification_metrics(p, y, 0.6f);
    CHECK(m.accuracy == doctest::Approx(0.5f));
    CHECK(m.skip_rate == doctest::Approx(0.5f));   // 2 of 4 predicted empty
    CHECK(m.fpr == doctest::Approx(0.5f));         // 1 of 2 non-empty predicted empty
    CHECK_THROWS_AS(ee_classification_metrics(p, {1}, 0.5f), std::invalid_argument);
}
