#include <CLI11.hpp>

#include "skipdet/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Width-scalable SSD detector with a confidence-gated early exit: dataset "
                 "generation, training, quantization, evaluation, and reporting"};
    app.require_subcommand(1);

    skipdet::pipeline::CliOptions opts;
    std::string chosen;
    std::uint64_t seed_value = 0;

    const char* names[] = {"gen-data", "train",  "qat",      "eval",  "sweep",
                           "hpo",      "export", "run-int8", "report"};
    const char* descs[] = {"generate a synthetic shapes dataset",
                           "train the float detector",
                           "quantization-aware fine-tuning from a float checkpoint",
                           "evaluate a checkpoint (gated and ungated mAP)",
                           "threshold sweep and accuracy-optimal tau",
                           "hyperparameter study over the detector search space",
                           "export a QAT checkpoint as a full-integer container",
                           "gated int8 inference over a dataset",
                           "cost/latency report for an architecture"};
    for (std::size_t i = 0; i < std::size(names); ++i) {
        CLI::App* sub = app.add_subcommand(names[i], descs[i]);
        sub->add_option("--config", opts.config, "JSON run configuration");
        sub->add_option("--out", opts.out, "output directory");
        sub->add_option("--from", opts.from, "input checkpoint or container");
        sub->add_option("--seed", seed_value, "root RNG seed (overrides the config)");
        sub->add_flag("--single-thread", opts.single_thread, "force sequential execution");
        sub->add_flag("--force", opts.force, "overwrite existing outputs");
        sub->add_flag("--resume", opts.resume, "continue an interrupted run");
        if (std::string(names[i]) == "train")
            sub->add_option("--ee", opts.ee, "\"none\" trains the static baseline");
        sub->callback([&chosen, name = std::string(names[i])] { chosen = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors map to exit code 1
    }
    for (const CLI::App* sub : app.get_subcommands())
        if (sub->count("--seed") > 0) opts.seed = seed_value;

    return skipdet::pipeline::run_command(chosen, opts);
}
