#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "skipdet/gate.hpp"
#include "skipdet/trainer.hpp"

using namespace skipdet;
using namespace skipdet::train;

namespace {

// small configuration so training-loop tests stay fast
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

std::vector<float> snapshot(ModelGraph& m) {
    std::vector<float> out;
    for (const auto& p : m.params())
        out.insert(out.end(), p.tensor->data.begin(), p.tensor->data.end());
    return out;
}

}  // namespace

TEST_CASE("empty labels derive from box counts") {
    std::vector<std::vector<GroundTruthBox>> anns(10);
    anns[0].push_back({1, {0, 0, 1, 1}});
    anns[0].push_back({2, {2, 2, 3, 3}});
    for (int i : {2, 5, 7}) anns[std::size_t(i)].push_back({1, {0, 0, 1, 1}});
    auto y = derive_empty_labels(anns);
    CHECK(y[0] == 0);
    CHECK(y[1] == 1);
    int ones = 0;
    for (int v : y) ones += v;
    CHECK(ones == 6);
    CHECK(derive_empty_labels(anns) == y);  // idempotent
}

TEST_CASE("stepped learning-rate schedule") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == doctest::Approx(1e-4f));
    CHECK(lr_at(24, cfg) == doctest::Approx(1e-4f));
    CHECK(lr_at(25, cfg) == doctest::Approx(9.5e-5f));
    CHECK(lr_at(99, cfg) == doctest::Approx(1e-4f * 0.95f * 0.95f * 0.95f));
    float prev = lr_at(0, cfg);
    for (int e = 1; e < 120; ++e) {
        float cur = lr_at(e, cfg);
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK_THROWS_AS(lr_at(-1, cfg), std::invalid_argument);
}

TEST_CASE("augmentation geometry") {
    TrainConfig cfg;
    cfg.aug_prob = 1.0f;
    cfg.aug_crop = false;
    cfg.aug_brightness = false;

    SUBCASE("mirror is an involution and reflects boxes") {
        Image img(4, 10);
        for (int i = 0; i < 40; ++i) img.pix[std::size_t(i)] = std::uint8_t(i);
        std::vector<GroundTruthBox> boxes{{1, {1, 0, 3, 2}}};
        Image orig = img;
        auto orig_boxes = boxes;
        Rng r1(0), r2(0);
        augment(img, boxes, cfg, r1);
        CHECK(boxes[0].box.xmin == doctest::Approx(7.0f));
        CHECK(boxes[0].box.xmax == doctest::Approx(9.0f));
        augment(img, boxes, cfg, r2);
        CHECK(img.pix == orig.pix);
        CHECK(boxes[0].box.xmin == orig_boxes[0].box.xmin);
        CHECK(boxes[0].box.xmax == orig_boxes[0].box.xmax);
    }
    SUBCASE("crop of an empty frame stays empty") {
        cfg.aug_mirror = false;
        cfg.aug_crop = true;
        Image img(32, 32, 100);
        std::vector<GroundTruthBox> boxes;
        Rng rng(5);
        augment(img, boxes, cfg, rng);
        CHECK(boxes.empty());
        CHECK(img.h == 32);
        CHECK(img.w == 32);
    }
    SUBCASE("crop keeps at least one box and stays consistent") {
        cfg.aug_mirror = false;
        cfg.aug_crop = true;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Image img(48, 64, 50);
            std::vector<GroundTruthBox> boxes{{1, {20, 15, 35, 30}}};
            Rng rng(seed);
            augment(img, boxes, cfg, rng);
            CHECK(!boxes.empty());
            for (const auto& gt : boxes) {
                CHECK(gt.box.xmin >= -1e-3f);
                CHECK(gt.box.xmax <= float(img.w) + 1e-3f);
                CHECK(gt.box.ymax <= float(img.h) + 1e-3f);
            }
        }
    }
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lr_decay = 1.5f;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero-weight branch loss leaves shared gradients untouched") {
    auto model = small_model();
    auto ds = data::generate_dataset(small_scene(), 4, 3);
    AnchorSet anchors = anchors_for_model(model);
    const BackboneConfig& bb = model.backbone_config();

    Tensor input({int(ds.items.size()), 1, bb.in_h, bb.in_w});
    std::vector<std::vector<GroundTruthBox>> gts;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        for (int y = 0; y < bb.in_h; ++y)
            for (int x = 0; x < bb.in_w; ++x)
                input.at(int(i), 0, y, x) = float(ds.items[i].image.at(y, x)) / 255.0f;
        gts.push_back(gate::normalize_boxes(ds.items[i].boxes, bb.in_w, bb.in_h));
    }
    std::vector<Assignment> as;
    for (const auto& g : gts) as.push_back(match_anchors(anchors, g));

    auto run = [&](bool with_ee_grad) {
        model.zero_grad();
        RawOutputs raw = model.forward_full(input, true);
        Tensor cls_grad, box_grad;
        ssd_loss(raw.cls, raw.box, anchors, as, gts, &cls_grad, &box_grad);
        Tensor ee_grad;
        if (with_ee_grad) {
            ee_grad = Tensor(raw.ee_logits->shape);  // lambda = 0 -> all-zero gradient
        }
        model.backward(cls_grad, box_grad, ee_grad);
        std::vector<float> grads;
        for (const auto& p : model.params())
            if (!p.ee_branch) grads.insert(grads.end(), p.tensor->grad.begin(), p.tensor->grad.end());
        return grads;
    };
    CHECK(run(true) == run(false));
}

TEST_CASE("training is deterministic and reduces the loss") {
    auto spec = small_scene();
    auto train_set = data::generate_dataset(spec, 20, 101);
    auto val_set = data::generate_dataset(spec, 8, 202);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.initial_lr = 5e-4f;
    cfg.seed = 9;

    auto m1 = small_model(4);
    auto m2 = small_model(4);
    auto r1 = skipdet::train::train(m1, train_set, val_set, cfg, LossWeights{});
    auto r2 = skipdet::train::train(m2, train_set, val_set, cfg, LossWeights{});
    CHECK(snapshot(m1) == snapshot(m2));
    CHECK(r1.log.size() == 2);
    CHECK(r1.log[0].l_total == r2.log[0].l_total);

    SUBCASE("csv log shape") {
        std::string csv = log_csv(r1.log);
        CHECK(csv.rfind("epoch,lr,", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    }
    SUBCASE("resume matches the uninterrupted run") {
        auto m3 = small_model(4);
        TrainConfig one = cfg;
        one.epochs = 1;
        auto p1 = skipdet::train::train(m3, train_set, val_set, one, LossWeights{});
        auto p2 = skipdet::train::train(m3, train_set, val_set, cfg, LossWeights{}, {}, 1, &p1.opt);
        CHECK(snapshot(m3) == snapshot(m1));
    }
}

TEST_CASE("20-image overfit run cuts the loss to a quarter") {
    auto spec = small_scene();
    auto train_set = data::generate_dataset(spec, 20, 55);

    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 10;
    cfg.initial_lr = 1e-3f;
    cfg.aug_mirror = cfg.aug_crop = cfg.aug_brightness = false;  // pure memorization
    cfg.seed = 13;

    auto model = small_model(8);
    auto res = skipdet::train::train(model, train_set, train_set, cfg, LossWeights{});
    REQUIRE(res.log.size() == 50);
    float first = res.log.front().l_total;
    float last = res.log.back().l_total;
    CHECK(last < 0.25f * first);
}

TEST_CASE("failure modes") {
    auto spec = small_scene();
    auto ds = data::generate_dataset(spec, 4, 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    SUBCASE("empty validation split rejected") {
        data::Dataset empty;
        auto model = small_model();
        CHECK_THROWS_AS(skipdet::train::train(model, ds, empty, cfg, LossWeights{}), std::invalid_argument);
    }
    SUBCASE("non-finite loss aborts with context") {
        auto model = small_model();
        // poison a head bias: it feeds raw logits with no clamping in between
        for (const auto& p : model.params())
            if (p.name.find("cls.b") != std::string::npos)
                p.tensor->data[0] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(skipdet::train::train(model, ds, ds, cfg, LossWeights{}), std::runtime_error);
    }
}
