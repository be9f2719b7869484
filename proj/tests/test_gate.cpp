#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "skipdet/cost.hpp"
#include "skipdet/gate.hpp"

using namespace skipdet;
using namespace skipdet::gate;

namespace {

BackboneConfig small_backbone() {
    BackboneConfig bb;
    bb.in_h = 48;
    bb.in_w = 64;
    bb.alpha = 0.25f;
    return bb;
}

data::SceneSpec small_scene() {
    data::SceneSpec spec;
    spec.height = 48;
    spec.width = 64;
    spec.max_objects = 2;
    return spec;
}

ModelGraph small_model(std::uint64_t seed = 1) {
    return ModelGraph(small_backbone(), EEBranchConfig{}, HeadConfig{}, seed);
}

bool detections_equal(const std::vector<Detection>& a, const std::vector<Detection>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].class_id != b[i].class_id || a[i].score != b[i].score) return false;
        if (a[i].box.xmin != b[i].box.xmin || a[i].box.ymin != b[i].box.ymin ||
            a[i].box.xmax != b[i].box.xmax || a[i].box.ymax != b[i].box.ymax)
            return false;
    }
    return true;
}

// exhaustive 1e-3 grid oracle with largest-tau tie-break
float grid_oracle(const std::vector<float>& p, const std::vector<int>& y) {
    float best_tau = 0.5f;
    float best_acc = -1.0f;
    for (int i = 0; i <= 500; ++i) {
        float tau = 0.5f + float(i) * 1e-3f;
        int correct = 0;
        for (std::size_t k = 0; k < p.size(); ++k)
            if ((p[k] >= tau ? 1 : 0) == y[k]) ++correct;
        float acc = float(correct) / float(p.size());
        if (acc >= best_acc) {  // ties -> larger tau
            best_acc = acc;
            best_tau = tau;
        }
    }
    return best_tau;
}

float acc_at(const std::vector<float>& p, const std::vector<int>& y, float tau) {
    int c = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if ((p[i] >= tau ? 1 : 0) == y[i]) ++c;
    return float(c) / float(p.size());
}

}  // namespace

TEST_CASE("gated inference: skip and resume semantics") {
    auto model = small_model(21);
    auto ds = data::generate_dataset(small_scene(), 3, 77);
    AnchorSet anchors = anchors_for_model(model);
    Tensor input = image_to_input(ds.items[0].image);
    int attach = model.ee_config()->attach_layer;
    int total = model.backbone_config().total_layers();

    RawOutputs full = model.forward_full(input, false);
    auto full_dets = decode_detections(full, 0, anchors);
    float a = full.ee_logits->at(0, 0), b = full.ee_logits->at(0, 1);
    float p_ref = std::exp(b) / (std::exp(a) + std::exp(b));

    SUBCASE("tau = 1 never skips and matches the static pipeline bit-for-bit") {
        ForwardStats stats;
        GateDecision d = gated_inference(model, input, 1.0f, anchors, &stats);
        CHECK_FALSE(d.skipped);
        CHECK(d.p_empty == doctest::Approx(p_ref).epsilon(1e-6));
        CHECK(detections_equal(d.detections, full_dets));
        CHECK(stats.blocks_evaluated == total);
        CHECK(stats.full_pipeline_runs == 1);
    }
    SUBCASE("tau = 0.5 with a confident branch skips without running the suffix") {
        // drive the branch to certainty by poisoning its final bias
        for (const auto& p : model.params())
            if (p.name == "ee.fc2.b") {
                p.tensor->data[0] = -30.0f;
                p.tensor->data[1] = 30.0f;
            }
        ForwardStats stats;
        GateDecision d = gated_inference(model, input, 0.5f, anchors, &stats);
        CHECK(d.skipped);
        CHECK(d.detections.empty());
        CHECK(d.p_empty > 0.99f);
        CHECK(stats.blocks_evaluated == attach);  // suffix and heads untouched
        CHECK(stats.full_pipeline_runs == 0);
        CHECK(stats.branch_runs == 1);
    }
    SUBCASE("tau out of range") {
        CHECK_THROWS_AS(gated_inference(model, input, 0.3f, anchors), std::invalid_argument);
        CHECK_THROWS_AS(gated_inference(model, input, 1.2f, anchors), std::invalid_argument);
    }
    SUBCASE("model without a branch is rejected") {
        ModelGraph plain(small_backbone(), std::nullopt, HeadConfig{}, 21);
        CHECK_THROWS_AS(gated_inference(plain, input, 0.9f, anchors_for_model(plain)),
                        std::invalid_argument);
    }
}

TEST_CASE("threshold optimization equals the exhaustive-grid oracle") {
    SUBCASE("separable scores reach accuracy 1") {
        std::vector<float> p{0.95f, 0.92f, 0.97f, 0.05f, 0.08f, 0.02f};
        std::vector<int> y{1, 1, 1, 0, 0, 0};
        float tau = optimize_threshold(p, y);
        CHECK(acc_at(p, y, tau) == doctest::Approx(1.0f));
    }
    SUBCASE("10 hand-fixed scores") {
        std::vector<float> p{0.55f, 0.61f, 0.72f, 0.80f, 0.91f, 0.52f, 0.66f, 0.73f, 0.84f, 0.58f};
        std::vector<int> y{0, 1, 0, 1, 1, 0, 1, 1, 1, 0};
        float tau = optimize_threshold(p, y);
        float oracle = grid_oracle(p, y);
        CHECK(acc_at(p, y, tau) == acc_at(p, y, oracle));
        CHECK(tau == doctest::Approx(oracle));
    }
    SUBCASE("50 random seeded sets match the grid maximum exactly") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng(seed);
            std::vector<float> p;
            std::vector<int> y;
            int n = int(rng.uniform_int(10, 60));
            for (int i = 0; i < n; ++i) {
                int label = rng.bernoulli(0.4) ? 1 : 0;
                double base = label ? 0.7 : 0.4;
                p.push_back(float(std::clamp(base + rng.normal() * 0.15, 0.0, 1.0)));
                y.push_back(label);
            }
            if (std::count(y.begin(), y.end(), 1) == 0 ||
                std::count(y.begin(), y.end(), 0) == 0)
                continue;
            float tau = optimize_threshold(p, y);
            float oracle = grid_oracle(p, y);
            CHECK(acc_at(p, y, tau) == acc_at(p, y, oracle));
        }
    }
    SUBCASE("single-class validation rejected") {
        CHECK_THROWS_AS(optimize_threshold({0.4f, 0.6f}, {0, 0}), std::invalid_argument);
        CHECK_THROWS_AS(optimize_threshold({0.4f, 0.6f}, {1, 1}), std::invalid_argument);
    }
}

TEST_CASE("false-positive rate and skip set are monotone in tau") {
    Rng rng(12);
    std::vector<float> p;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
        y.push_back(rng.bernoulli(0.4) ? 1 : 0);
        p.push_back(float(rng.uniform(0.0, 1.0)));
    }
    float prev_skip = 1.1f, prev_fpr = 1.1f;
    for (float tau = 0.5f; tau <= 0.99f; tau += 0.01f) {
        EeMetrics m = ee_classification_metrics(p, y, tau);
        CHECK(m.skip_rate <= prev_skip);
        CHECK(m.fpr <= prev_fpr);
        prev_skip = m.skip_rate;
        prev_fpr = m.fpr;
    }
}

TEST_CASE("threshold sweep: one full evaluation per image, monotone columns") {
    auto model = small_model(33);
    auto ds = data::generate_dataset(small_scene(), 12, 91);
    auto report = cost::count_macs(model);

    unsigned long long macs = 0;
    kern::set_mac_counter(&macs);
    ScoreCache cache = score_dataset(model, ds);
    kern::set_mac_counter(nullptr);
    CHECK(macs == (unsigned long long)(report.mac_full) * ds.items.size());

    std::vector<std::vector<GroundTruthBox>> gts;
    for (const auto& it : ds.items)
        gts.push_back(normalize_boxes(it.boxes, it.image.w, it.image.h));

    std::vector<float> taus;
    for (int i = 0; i < 50; ++i) taus.push_back(0.5f + float(i) * 0.01f);
    macs = 0;
    kern::set_mac_counter(&macs);
    auto points = threshold_sweep(cache, gts, taus, double(report.mac_full),
                                  double(report.mac_ee), model.head_config().num_classes);
    kern::set_mac_counter(nullptr);
    CHECK(macs == 0);  // comparisons only, no further model work
    REQUIRE(points.size() == taus.size());

    for (std::size_t i = 1; i < points.size(); ++i) {
        CHECK(points[i].skip_rate <= points[i - 1].skip_rate);
        CHECK(points[i].mac_avg >= points[i - 1].mac_avg);
    }
    std::string csv = sweep_csv(points);
    CHECK(csv.rfind("tau,map,skip_rate,ee_accuracy,mac_avg\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == long(points.size()) + 1);

    SUBCASE("grid outside the allowed range is rejected") {
        CHECK_THROWS_AS(threshold_sweep(cache, gts, {0.995f}, 1.0, 0.5, 3),
                        std::invalid_argument);
    }
}

TEST_CASE("evaluate report") {
    auto model = small_model(44);
    auto ds = data::generate_dataset(small_scene(), 10, 17);

    SUBCASE("no gate: gated equals ungated") {
        EvalReport r = evaluate(model, ds, std::nullopt);
        CHECK(r.map == r.map_no_ee);
        CHECK(r.skip_rate == 0.0f);
        CHECK_FALSE(r.tau.has_value());
    }
    SUBCASE("inactive gate (tau = 1) keeps mAP at the ungated value") {
        EvalReport r = evaluate(model, ds, 1.0f);
        CHECK(r.map == r.map_no_ee);
        CHECK(r.skip_rate == 0.0f);
    }
    SUBCASE("json serialization parses and carries the fields") {
        EvalReport r = evaluate(model, ds, 0.9f);
        auto j = nlohmann::json::parse(gate::to_json(r));
        CHECK(j["map"].get<float>() == r.map);
        CHECK(j["skip_rate"].get<float>() == r.skip_rate);
        CHECK(j["interpolation"] == "all-point");
        CHECK(j["counts"].size() == r.counts.size());
    }
    SUBCASE("tau on a branchless model is rejected") {
        ModelGraph plain(small_backbone(), std::nullopt, HeadConfig{}, 44);
        CHECK_THROWS_AS(evaluate(plain, ds, 0.9f), std::invalid_argument);
    }
}
