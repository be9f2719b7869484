#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "skipdet/checkpoint.hpp"
#include "skipdet/gate.hpp"

using namespace skipdet;
using namespace skipdet::ckpt;

namespace {

BackboneConfig small_backbone() {
    BackboneConfig bb;
    bb.in_h = 48;
    bb.in_w = 64;
    bb.alpha = 0.25f;
    return bb;
}

ModelGraph small_model(std::uint64_t seed = 1) {
    return ModelGraph(small_backbone(), EEBranchConfig{}, HeadConfig{}, seed);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("architecture JSON round-trips and rejects unknown keys") {
    BackboneConfig bb = small_backbone();
    EEBranchConfig ee;
    ee.attach_layer = 7;
    HeadConfig hc;
    hc.scales_s4 = {0.2f, 0.35f};
    std::string js = arch_to_json(bb, ee, hc);

    BackboneConfig bb2;
    std::optional<EEBranchConfig> ee2;
    HeadConfig hc2;
    arch_from_json(js, bb2, ee2, hc2);
    CHECK(bb2.in_h == 48);
    CHECK(bb2.alpha == doctest::Approx(0.25f));
    CHECK(bb2.stage_layers == bb.stage_layers);
    REQUIRE(ee2.has_value());
    CHECK(ee2->attach_layer == 7);
    CHECK(hc2.scales_s4 == hc.scales_s4);
    CHECK(arch_to_json(bb2, ee2, hc2) == js);  // stable re-serialization

    SUBCASE("branchless architecture") {
        std::string js_none = arch_to_json(bb, std::nullopt, hc);
        arch_from_json(js_none, bb2, ee2, hc2);
        CHECK_FALSE(ee2.has_value());
    }
    SUBCASE("unknown keys are configuration errors") {
        std::string bad = js;
        bad.insert(bad.find("\"backbone\""), "\"typo_field\":1,");
        CHECK_THROWS_AS(arch_from_json(bad, bb2, ee2, hc2), std::invalid_argument);
    }
}

TEST_CASE("snapshot stores every parameter and buffer") {
    ModelGraph m = small_model();
    Checkpoint c = snapshot(m, 5, 42);
    CHECK(c.epoch == 5);
    CHECK(c.seed == 42);

    long long param_elems = 0;
    for (const auto& p : m.params()) param_elems += (long long)(p.tensor->numel());
    long long buffer_elems = 0;
    for (const auto& b : m.buffers()) buffer_elems += (long long)(b.tensor->numel());
    CHECK(param_elems == m.param_count());
    CHECK(c.tensor_elements() == param_elems + buffer_elems);
    CHECK(c.tensors.size() == m.params().size() + m.buffers().size());
    for (const auto& [name, t] : c.tensors) CHECK(t.grad.empty());
}

TEST_CASE("restore reproduces the source model exactly") {
    ModelGraph a = small_model(1);
    Checkpoint c = snapshot(a, 0, 1);
    ModelGraph b = build_model(c);  // different init seed path, weights overwritten

    Rng rng(9);
    Tensor x = randn<float>({2, 1, 48, 64}, rng);
    RawOutputs ra = a.forward_full(x);
    RawOutputs rb = b.forward_full(x);
    CHECK(ra.cls.data == rb.cls.data);
    CHECK(ra.box.data == rb.box.data);
    REQUIRE(ra.ee_logits.has_value());
    CHECK(ra.ee_logits->data == rb.ee_logits->data);

    SUBCASE("architecture mismatch is rejected") {
        BackboneConfig wide = small_backbone();
        wide.alpha = 0.5f;
        ModelGraph other(wide, EEBranchConfig{}, HeadConfig{}, 1);
        CHECK_THROWS_AS(restore(c, other), std::invalid_argument);
    }
    SUBCASE("tampered tensor name is rejected") {
        Checkpoint bad = c;
        bad.tensors[3].first += "_x";
        ModelGraph other = small_model(2);
        CHECK_THROWS_AS(restore(bad, other), std::invalid_argument);
    }
}

TEST_CASE("container round-trips byte-identically") {
    std::string p1 = "/tmp/ckpt_a.bin", p2 = "/tmp/ckpt_b.bin";
    ModelGraph m = small_model(3);
    Checkpoint c = snapshot(m, 12, 77);
    // attach synthetic optimizer state parallel to the parameter list
    for (const auto& p : m.params()) c.opt_sq.push_back(std::vector<float>(p.tensor->numel(), 0.5f));
    save(c, p1);
    Checkpoint back = load(p1);
    save(back, p2);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(back.epoch == 12);
    CHECK(back.seed == 77);
    REQUIRE(back.tensors.size() == c.tensors.size());
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        CHECK(back.tensors[i].first == c.tensors[i].first);
        CHECK(back.tensors[i].second.data == c.tensors[i].second.data);
    }
    CHECK(back.opt_sq == c.opt_sq);

    SUBCASE("optimizer state restores into RmsPropState") {
        ModelGraph other = small_model(4);
        train::RmsPropState opt;
        restore(back, other, &opt);
        REQUIRE(opt.sq.size() == other.params().size());
        CHECK(opt.sq[0][0] == 0.5f);
    }
    SUBCASE("restore without stored optimizer state fails when requested") {
        Checkpoint plain = snapshot(m, 0, 0);
        ModelGraph other = small_model(4);
        train::RmsPropState opt;
        CHECK_THROWS_AS(restore(plain, other, &opt), std::invalid_argument);
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("malformed containers are rejected") {
    std::string p = "/tmp/ckpt_bad.bin";
    ModelGraph m = small_model(5);
    Checkpoint c = snapshot(m, 0, 0);
    save(c, p);

    SUBCASE("corrupt magic") {
        std::string bytes = slurp(p);
        bytes[0] = 'X';
        std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(load(p), std::runtime_error);
    }
    SUBCASE("truncated blob section") {
        std::string bytes = slurp(p);
        bytes.resize(bytes.size() - 64);
        std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(load(p), std::runtime_error);
    }
    SUBCASE("trailing bytes") {
        std::ofstream(p, std::ios::binary | std::ios::app) << "extra";
        CHECK_THROWS_AS(load(p), std::runtime_error);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load("/tmp/ckpt_missing.bin"), std::runtime_error); }
    std::remove(p.c_str());
}

TEST_CASE("training snapshot resumes bit-for-bit") {
    data::SceneSpec spec;
    spec.height = 48;
    spec.width = 64;
    spec.max_objects = 2;
    auto train_ds = data::generate_dataset(spec, 12, 21);
    auto val_ds = data::generate_dataset(spec, 6, 22);

    train::TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.seed = 9;
    LossWeights w;

    ModelGraph straight = small_model(6);
    auto full = train::train(straight, train_ds, val_ds, cfg, w);

    // interrupted at epoch 2, round-tripped through the container
    ModelGraph first = small_model(6);
    cfg.epochs = 2;
    auto half = train::train(first, train_ds, val_ds, cfg, w);
    std::string p = "/tmp/ckpt_resume.bin";
    save(snapshot(first, 2, cfg.seed, &half.opt), p);

    Checkpoint c = load(p);
    ModelGraph resumed = build_model(c);
    train::RmsPropState opt;
    restore(c, resumed, &opt);
    cfg.epochs = 4;
    train::train(resumed, train_ds, val_ds, cfg, w, {}, c.epoch, &opt);

    auto ps = straight.params();
    auto pr = resumed.params();
    REQUIRE(ps.size() == pr.size());
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i].tensor->data == pr[i].tensor->data);
    std::remove(p.c_str());
}
