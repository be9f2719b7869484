#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "skipdet/cost.hpp"
#include "skipdet/layers.hpp"
#include "skipdet/rng.hpp"

using namespace skipdet;

namespace {

ModelGraph desk_model(bool with_ee = true) {
    BackboneConfig bb;
    std::optional<EEBranchConfig> ee;
    if (with_ee) ee = EEBranchConfig{};
    return ModelGraph(bb, ee, HeadConfig{}, 99);
}

struct CounterScope {
    unsigned long long count = 0;
    CounterScope() { kern::set_mac_counter(&count); }
    ~CounterScope() { kern::set_mac_counter(nullptr); }
};

}  // namespace

TEST_CASE("instrumented multiply counter on unit conv cases") {
    Rng rng(3);
    SUBCASE("1x1 conv, one channel, one pixel -> 1 multiply") {
        Conv2dLayer<float> c(LayerSpec::conv(1, 1, 1, 1, false), &rng);
        Tensor x({1, 1, 1, 1});
        x.data = {2.0f};
        CounterScope ctr;
        c.forward(x, false);
        CHECK(ctr.count == 1);
    }
    SUBCASE("depthwise 3x3 over a 4x4x8 output -> 1152 multiplies") {
        Conv2dLayer<float> c(LayerSpec::depthwise(8, 3, 1, false), &rng);
        Tensor x = randn<float>({1, 8, 4, 4}, rng);
        CounterScope ctr;
        c.forward(x, false);
        CHECK(ctr.count == 4ull * 4 * 8 * 9);
    }
}

TEST_CASE("analytic counts equal an instrumented forward pass") {
    auto model = desk_model();
    auto report = cost::count_macs(model);
    Rng rng(7);
    Tensor x = randn<float>({1, 1, model.backbone_config().in_h, model.backbone_config().in_w}, rng);

    SUBCASE("full pipeline") {
        CounterScope ctr;
        model.forward_full(x, false);
        CHECK(ctr.count == (unsigned long long)report.mac_full);
    }
    SUBCASE("skip path: prefix to attach layer + branch") {
        CounterScope ctr;
        Tensor xl = model.forward_to_layer(x, report.attach_layer, false);
        model.ee_branch_forward(xl, false);
        CHECK(ctr.count == (unsigned long long)report.mac_ee);
    }
}

TEST_CASE("cost report invariants") {
    auto model = desk_model();
    auto r = cost::count_macs(model);
    CHECK(r.mac_ee > 0);
    CHECK(r.mac_ee < r.mac_full);
    CHECK(r.mac_full > r.mac_static);
    CHECK(r.params_total == model.param_count());
    CHECK(r.savings == doctest::Approx(1.0 - double(r.mac_ee) / double(r.mac_full)));

    // full minus static is exactly the branch's own analytic count
    long long branch = 0;
    for (const auto& li : r.per_layer)
        if (li.backbone_layer == -1) branch += li.macs;
    CHECK(r.mac_full - r.mac_static == branch);

    // prefix cost is monotone non-decreasing in depth
    long long prev = 0;
    for (int l = 0; l <= model.backbone_config().total_layers(); ++l) {
        long long prefix = 0;
        for (const auto& li : r.per_layer)
            if (li.backbone_layer >= 0 && li.backbone_layer <= l) prefix += li.macs;
        CHECK(prefix >= prev);
        prev = prefix;
    }

    // a model without the branch reports mac_static == mac_full
    auto r2 = cost::count_macs(desk_model(false));
    CHECK(r2.mac_full == r2.mac_static);
    CHECK(r2.attach_layer == -1);
    CHECK(r2.mac_full == r.mac_static);
}

TEST_CASE("skip-rate-weighted average cost") {
    double full = 539e6, ee = 230e6;
    // published stage-4 operating point: ~414M average within 1%
    CHECK(cost::average_macs(full, ee, 0.398) == doctest::Approx(414e6).epsilon(0.01));
    CHECK(cost::average_macs(full, ee, 0.0) == doctest::Approx(full));
    CHECK(cost::average_macs(full, ee, 1.0) == doctest::Approx(ee));
    // affine + monotone decreasing when the skip path is cheaper
    double a = cost::average_macs(full, ee, 0.2), b = cost::average_macs(full, ee, 0.4),
           c = cost::average_macs(full, ee, 0.6);
    CHECK(b - a == doctest::Approx(c - b).epsilon(1e-9));
    CHECK(b < a);
    CHECK_THROWS_AS(cost::average_macs(full, ee, 1.5), std::invalid_argument);
}

TEST_CASE("savings fraction") {
    CHECK(cost::savings(534e6, 230e6) == doctest::Approx(0.569).epsilon(1e-3));
    CHECK(cost::savings(534e6, 534e6) == doctest::Approx(0.0));
    CHECK(cost::savings(534e6, 708e6) < 0.0);  // shallow attach can cost more than full
    CHECK_THROWS_AS(cost::savings(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("latency model calibrated against the reference MCU rows") {
    cost::LatencyModel m{160e6, 4.96};
    auto e = cost::estimate_latency(534e6, m);
    CHECK(e.seconds * 1e3 == doctest::Approx(666.7).epsilon(0.01));
    CHECK(e.fps == doctest::Approx(1.0 / e.seconds));

    cost::LatencyModel half{160e6, 4.14};
    CHECK(cost::estimate_latency(193e6, half).seconds * 1e3 == doctest::Approx(285.3).epsilon(0.025));

    cost::LatencyModel fast{320e6, 4.96};
    CHECK(cost::estimate_latency(534e6, fast).seconds == doctest::Approx(e.seconds / 2.0));
    CHECK_THROWS_AS(cost::estimate_latency(-1.0, m), std::invalid_argument);
}

TEST_CASE("serialization") {
    auto r = cost::count_macs(desk_model());
    auto j = nlohmann::json::parse(cost::to_json(r));
    CHECK(j["mac_full"].get<long long>() == r.mac_full);
    CHECK(j["mac_ee"].get<long long>() == r.mac_ee);
    CHECK(j["per_layer"].size() == r.per_layer.size());

    std::string csv = cost::per_layer_csv(r);
    std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == r.per_layer.size() + 1);
}
