#pragma once

#include <functional>
#include <string>
#include <vector>

#include "skipdet/datasynth.hpp"
#include "skipdet/loss.hpp"
#include "skipdet/model.hpp"

namespace skipdet::train {

struct TrainConfig {
    int epochs = 100;
    float initial_lr = 1e-4f;  // 1e-2 for quantization-aware fine-tuning
    int batch_size = 24;
    float lr_decay = 0.95f;
    int decay_every = 25;
    float branch_lr_mult = 1.0f;  // exit-branch parameter group
    bool aug_mirror = true;
    bool aug_crop = true;
    bool aug_brightness = true;
    float aug_prob = 0.5f;  // each augmentation applied independently
    float rms_smoothing = 0.99f;
    float rms_eps = 1e-8f;
    std::uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

// y_i = 1 iff image i has no ground-truth boxes
std::vector<int> derive_empty_labels(const std::vector<std::vector<GroundTruthBox>>& boxes_per_image);

// stepped decay: initial_lr * decay^floor(epoch / decay_every)
float lr_at(int epoch, const TrainConfig& cfg);

// in-place mirror / crop / brightness, boxes kept consistent (pixel coords)
void augment(Image& image, std::vector<GroundTruthBox>& boxes, const TrainConfig& cfg, Rng& rng);

struct EpochLog {
    int epoch = 0;
    float lr = 0, l_loc = 0, l_cls = 0, l_ee = 0, l_total = 0;
    float val_map = 0, val_ee_acc = 0;
};

std::string log_csv(const std::vector<EpochLog>& log);

// RMSprop without momentum; one second-moment accumulator per parameter.
// Exposed so checkpoints can serialize optimizer state.
struct RmsPropState {
    std::vector<std::vector<float>> sq;  // parallel to the trained param list
};

struct TrainResult {
    std::vector<EpochLog> log;
    RmsPropState opt;
};

// Extra parameter tensors trained alongside the model (e.g. activation clip
// values during quantization-aware training).
using ExtraParams = std::vector<NamedParam>;

// End-to-end loop: shuffled mini-batches, augmentation, composite loss,
// RMSprop with a separate branch learning rate, per-epoch validation.
// start_epoch/opt_in resume an interrupted run. Deterministic under seed;
// NaN loss aborts with the offending batch.
TrainResult train(ModelGraph& model, const data::Dataset& train_ds, const data::Dataset& val_ds,
                  const TrainConfig& cfg, const LossWeights& weights,
                  const ExtraParams& extra = {}, int start_epoch = 0,
                  const RmsPropState* opt_in = nullptr,
                  const std::function<void(int, const EpochLog&, const RmsPropState&)>& on_epoch =
                      nullptr);

}  // namespace skipdet::train
