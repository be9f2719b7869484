#include "skipdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "skipdet/gate.hpp"
#include "skipdet/metrics.hpp"

namespace skipdet::train {

namespace {

void mirror(Image& image, std::vector<GroundTruthBox>& boxes) {
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w / 2; ++x)
            std::swap(image.at(y, x), image.at(y, image.w - 1 - x));
    for (auto& gt : boxes) {
        float xmin = float(image.w) - gt.box.xmax;
        float xmax = float(image.w) - gt.box.xmin;
        gt.box.xmin = xmin;
        gt.box.xmax = xmax;
    }
}

void random_crop(Image& image, std::vector<GroundTruthBox>& boxes, Rng& rng) {
    int h = image.h, w = image.w;
    for (int attempt = 0; attempt < 20; ++attempt) {
        float s = float(rng.uniform(0.6, 1.0));
        int ch = std::max(1, int(std::lround(double(h) * double(s))));
        int cw = std::max(1, int(std::lround(double(w) * double(s))));
        int y0 = int(rng.uniform_int(0, h - ch));
        int x0 = int(rng.uniform_int(0, w - cw));
        Box rect{float(x0), float(y0), float(x0 + cw), float(y0 + ch)};
        // keep at least one object center for non-empty frames
        bool keeps_center = boxes.empty();
        for (const auto& gt : boxes) {
            float cx = (gt.box.xmin + gt.box.xmax) / 2, cy = (gt.box.ymin + gt.box.ymax) / 2;
            if (cx >= rect.xmin && cx < rect.xmax && cy >= rect.ymin && cy < rect.ymax)
                keeps_center = true;
        }
        if (!keeps_center) continue;

        std::vector<GroundTruthBox> remapped;
        for (const auto& gt : boxes) {
            Box c{std::max(gt.box.xmin, rect.xmin), std::max(gt.box.ymin, rect.ymin),
                  std::min(gt.box.xmax, rect.xmax), std::min(gt.box.ymax, rect.ymax)};
            if (c.xmax <= c.xmin || c.ymax <= c.ymin) continue;
            if (c.area() < 0.25f * gt.box.area()) continue;
            remapped.push_back({gt.class_id, {c.xmin - float(x0), c.ymin - float(y0),
                                              c.xmax - float(x0), c.ymax - float(y0)}});
        }
        Image cropped(ch, cw);
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) cropped.at(y, x) = image.at(y0 + y, x0 + x);
        // scale back to the original raster (aspect preserved -> zero padding)
        auto lb = data::letterbox(cropped, h, w);
        image = std::move(lb.image);
        for (auto& gt : remapped) gt.box = lb.to_target(gt.box);
        boxes = std::move(remapped);
        return;
    }
}

void brightness(Image& image, Rng& rng) {
    int delta = int(rng.uniform_int(-40, 40));
    for (auto& p : image.pix) p = std::uint8_t(std::clamp(int(p) + delta, 0, 255));
}

struct Batch {
    Tensor input;
    std::vector<std::vector<GroundTruthBox>> boxes_norm;
    std::vector<int> y;
};

Batch build_batch(const data::Dataset& ds, const std::vector<int>& order, std::size_t begin,
                  std::size_t end, const BackboneConfig& bb, const TrainConfig& cfg, int epoch,
                  bool do_augment) {
    Batch b;
    int B = int(end - begin);
    b.input = Tensor({B, 1, bb.in_h, bb.in_w});
    for (std::size_t k = begin; k < end; ++k) {
        int idx = order[k];
        Image img = ds.items[std::size_t(idx)].image;
        std::vector<GroundTruthBox> boxes = ds.items[std::size_t(idx)].boxes;
        if (do_augment) {
            Rng rng = Rng(cfg.seed).fork("augment").fork(std::uint64_t(epoch)).fork(
                std::uint64_t(idx));
            augment(img, boxes, cfg, rng);
        }
        if (img.h != bb.in_h || img.w != bb.in_w) {
            auto lb = data::letterbox(img, bb.in_h, bb.in_w);
            for (auto& gt : boxes) gt.box = lb.to_target(gt.box);
            img = std::move(lb.image);
        }
        int n = int(k - begin);
        for (int y = 0; y < bb.in_h; ++y)
            for (int x = 0; x < bb.in_w; ++x)
                b.input.at(n, 0, y, x) = float(img.at(y, x)) / 255.0f;
        b.boxes_norm.push_back(gate::normalize_boxes(boxes, bb.in_w, bb.in_h));
        b.y.push_back(boxes.empty() ? 1 : 0);
    }
    return b;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs <= 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
    if (lr_decay <= 0.0f || lr_decay > 1.0f)
        throw std::invalid_argument("TrainConfig: lr_decay outside (0,1]");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (decay_every <= 0) throw std::invalid_argument("TrainConfig: decay_every must be positive");
    if (initial_lr <= 0.0f) throw std::invalid_argument("TrainConfig: initial_lr must be positive");
    if (aug_prob < 0.0f || aug_prob > 1.0f)
        throw std::invalid_argument("TrainConfig: aug_prob outside [0,1]");
}

std::vector<int> derive_empty_labels(
    const std::vector<std::vector<GroundTruthBox>>& boxes_per_image) {
    std::vector<int> y;
    y.reserve(boxes_per_image.size());
    for (const auto& boxes : boxes_per_image) y.push_back(boxes.empty() ? 1 : 0);
    return y;
}

float lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    return cfg.initial_lr * std::pow(cfg.lr_decay, float(epoch / cfg.decay_every));
}

void augment(Image& image, std::vector<GroundTruthBox>& boxes, const TrainConfig& cfg, Rng& rng) {
    if (cfg.aug_mirror && rng.bernoulli(double(cfg.aug_prob))) mirror(image, boxes);
    if (cfg.aug_crop && rng.bernoulli(double(cfg.aug_prob))) random_crop(image, boxes, rng);
    if (cfg.aug_brightness && rng.bernoulli(double(cfg.aug_prob))) brightness(image, rng);
}

std::string log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,lr,l_loc,l_cls,l_ee,l_total,val_map,val_ee_acc\n";
    for (const auto& e : log)
        os << e.epoch << ',' << e.lr << ',' << e.l_loc << ',' << e.l_cls << ',' << e.l_ee << ','
           << e.l_total << ',' << e.val_map << ',' << e.val_ee_acc << '\n';
    return os.str();
}

TrainResult train(ModelGraph& model, const data::Dataset& train_ds, const data::Dataset& val_ds,
                  const TrainConfig& cfg, const LossWeights& weights, const ExtraParams& extra,
                  int start_epoch, const RmsPropState* opt_in,
                  const std::function<void(int, const EpochLog&, const RmsPropState&)>& on_epoch) {
    cfg.validate();
    if (train_ds.items.empty()) throw std::invalid_argument("train: empty training set");
    if (val_ds.items.empty()) throw std::invalid_argument("train: empty validation split");

    LossWeights w = weights;
    if (!model.has_ee()) w.lambda = 0.0f;

    const BackboneConfig& bb = model.backbone_config();
    AnchorSet anchors = anchors_for_model(model);

    std::vector<NamedParam> params = model.params();
    for (const auto& p : extra) params.push_back(p);

    TrainResult result;
    result.opt.sq.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        result.opt.sq[i].assign(params[i].tensor->data.size(), 0.0f);
    if (opt_in) {
        if (opt_in->sq.size() != params.size())
            throw std::invalid_argument("train: optimizer state does not match parameter list");
        result.opt = *opt_in;
    }

    int n = int(train_ds.items.size());
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        float lr = lr_at(epoch, cfg);

        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
        Rng shuffle_rng = Rng(cfg.seed).fork("shuffle").fork(std::uint64_t(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[std::size_t(i)], order[std::size_t(shuffle_rng.uniform_int(0, i))]);

        double sum_loc = 0, sum_cls = 0, sum_ee = 0;
        int batches = 0;
        for (std::size_t begin = 0; begin < std::size_t(n); begin += std::size_t(cfg.batch_size)) {
            std::size_t end = std::min(std::size_t(n), begin + std::size_t(cfg.batch_size));
            Batch batch = build_batch(train_ds, order, begin, end, bb, cfg, epoch, true);

            RawOutputs raw = model.forward_full(batch.input, true);

            std::vector<Assignment> assignments;
            for (const auto& boxes : batch.boxes_norm)
                assignments.push_back(match_anchors(anchors, boxes));

            Tensor cls_grad, box_grad, ee_grad;
            SsdLossResult det =
                ssd_loss(raw.cls, raw.box, anchors, assignments, batch.boxes_norm, &cls_grad,
                         &box_grad);
            float l_ee = 0.0f;
            if (model.has_ee() && w.lambda > 0.0f) {
                l_ee = ee_loss(*raw.ee_logits, batch.y, w, &ee_grad);
                for (auto& g : ee_grad.data) g *= w.lambda;
            }
            float l_total = composite_loss(det.l_loc, det.l_cls, l_ee, w);
            if (!std::isfinite(l_total))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(batches));

            model.zero_grad();
            for (const auto& p : extra) p.tensor->zero_grad();
            model.backward(cls_grad, box_grad, ee_grad);

            for (std::size_t i = 0; i < params.size(); ++i) {
                Tensor& t = *params[i].tensor;
                if (t.grad.empty()) continue;
                float plr = lr * (params[i].ee_branch ? cfg.branch_lr_mult : 1.0f);
                std::vector<float>& sq = result.opt.sq[i];
                for (std::size_t j = 0; j < t.data.size(); ++j) {
                    float g = t.grad[j];
                    sq[j] = cfg.rms_smoothing * sq[j] + (1.0f - cfg.rms_smoothing) * g * g;
                    t.data[j] -= plr * g / (std::sqrt(sq[j]) + cfg.rms_eps);
                }
            }

            sum_loc += det.l_loc;
            sum_cls += det.l_cls;
            sum_ee += l_ee;
            ++batches;
        }

        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.l_loc = float(sum_loc / batches);
        log.l_cls = float(sum_cls / batches);
        log.l_ee = float(sum_ee / batches);
        log.l_total = log.l_loc + log.l_cls + log.l_ee;

        // validation: ungated mAP plus branch accuracy at the neutral 0.5 gate
        std::vector<std::vector<Detection>> dets;
        std::vector<std::vector<GroundTruthBox>> gts;
        std::vector<float> p_empty;
        std::vector<int> yv;
        std::vector<int> val_order(val_ds.items.size());
        for (std::size_t i = 0; i < val_ds.items.size(); ++i) val_order[i] = int(i);
        for (std::size_t i = 0; i < val_ds.items.size(); ++i) {
            Batch vb = build_batch(val_ds, val_order, i, i + 1, bb, cfg, epoch, false);
            RawOutputs raw = model.forward_full(vb.input, false);
            dets.push_back(gate::decode_detections(raw, 0, anchors));
            gts.push_back(vb.boxes_norm[0]);
            if (raw.ee_logits) {
                float a = raw.ee_logits->at(0, 0), b2 = raw.ee_logits->at(0, 1);
                float m = std::max(a, b2);
                p_empty.push_back(std::exp(b2 - m) / (std::exp(a - m) + std::exp(b2 - m)));
            }
            yv.push_back(vb.y[0]);
        }
        log.val_map = mean_average_precision(dets, gts, model.head_config().num_classes).map;
        if (!p_empty.empty())
            log.val_ee_acc = ee_classification_metrics(p_empty, yv, 0.5f).accuracy;

        result.log.push_back(log);
        if (on_epoch) on_epoch(epoch, log, result.opt);
    }
    return result;
}

}  // namespace skipdet::train
