#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skipdet/model.hpp"
#include "skipdet/trainer.hpp"

namespace skipdet::ckpt {

// Versioned binary checkpoint: 8-byte magic, little-endian u64 JSON header
// length, JSON header (architecture, epoch, seed, tensor manifest, optimizer
// manifest), then float32 blobs in manifest order. Loading then saving is
// byte-identical.
inline constexpr char kMagic[8] = {'S', 'K', 'D', 'C', 'K', 'P', '1', '\n'};

struct Checkpoint {
    int format_version = 1;
    BackboneConfig backbone;
    std::optional<EEBranchConfig> ee;
    HeadConfig heads;
    int epoch = 0;  // epochs completed when the snapshot was taken
    std::uint64_t seed = 0;

    // parameters then buffers, in model declaration order
    std::vector<std::pair<std::string, Tensor>> tensors;
    // RMSprop second moments, parallel to the trained parameter list; empty
    // when the snapshot carries no optimizer state
    std::vector<std::vector<float>> opt_sq;

    long long tensor_elements() const;  // total across `tensors` (optimizer excluded)
};

// architecture configs <-> JSON, strict: unknown keys rejected
std::string arch_to_json(const BackboneConfig& bb, const std::optional<EEBranchConfig>& ee,
                         const HeadConfig& hc);
void arch_from_json(const std::string& text, BackboneConfig& bb, std::optional<EEBranchConfig>& ee,
                    HeadConfig& hc);

Checkpoint snapshot(ModelGraph& model, int epoch, std::uint64_t seed,
                    const train::RmsPropState* opt = nullptr);

// Copies tensors (and optimizer state when present and requested) into an
// existing model; throws on any name or shape mismatch.
void restore(const Checkpoint& c, ModelGraph& model, train::RmsPropState* opt_out = nullptr);

// Constructs a model with the checkpoint's architecture and restores into it.
ModelGraph build_model(const Checkpoint& c);

void save(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

}  // namespace skipdet::ckpt
