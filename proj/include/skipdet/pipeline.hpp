#pragma once

#include <optional>
#include <string>

#include "skipdet/checkpoint.hpp"
#include "skipdet/quant.hpp"

namespace skipdet::pipeline {

// Shared command-line surface. `config` points at a JSON run configuration
// (strict schema: unknown keys rejected); flags override its scalar fields.
struct CliOptions {
    std::string config;  // config file path; empty = built-in defaults
    std::string out;     // output directory
    std::string from;    // input artifact (checkpoint or int8 container)
    std::optional<std::uint64_t> seed;
    std::string ee;  // train only: "none" drops the exit branch
    bool single_thread = false;
    bool force = false;
    bool resume = false;
};

// Dispatches one subcommand (gen-data, train, qat, eval, sweep, hpo, export,
// run-int8, report). Exit codes: 0 success, 1 usage/config error, 2 runtime
// failure, 3 acceptance-check failure.
int run_command(const std::string& command, const CliOptions& opts);

// Quantization-aware checkpoints carry the activation clip values alongside
// the model tensors ("qat.<site>.alpha" entries appended to the manifest) so
// an export can rebuild the training-time context.
ckpt::Checkpoint qat_snapshot(ModelGraph& model, quant::QatContext& ctx, int epoch,
                              std::uint64_t seed, const train::RmsPropState* opt = nullptr);
void qat_restore(const ckpt::Checkpoint& c, ModelGraph& model, quant::QatContext& ctx,
                 train::RmsPropState* opt_out = nullptr);

}  // namespace skipdet::pipeline
