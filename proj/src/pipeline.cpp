#include "skipdet/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "skipdet/cost.hpp"
#include "skipdet/gate.hpp"
#include "skipdet/tpe.hpp"

namespace skipdet::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Strict-schema run configuration
// ---------------------------------------------------------------------------

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw std::invalid_argument(where + ": unknown key \"" + key + "\"");
    }
}

struct RunConfig {
    int schema_version = 1;
    std::uint64_t seed = 0;
    std::string out;

    std::string dataset_dir, train_dir, val_dir;
    int n_images = 100;
    data::SceneSpec scene;

    BackboneConfig bb;
    std::optional<EEBranchConfig> ee = EEBranchConfig{};
    HeadConfig hc;

    train::TrainConfig tcfg;
    LossWeights weights;
    quant::QatConfig qcfg;

    std::optional<float> tau;
    float grid_start = 0.5f, grid_stop = 0.99f, grid_step = 0.01f;

    cost::LatencyModel lat;

    int hpo_trials = 100;
    int hpo_stage = 4;
    int hpo_epochs = 15;
    bool hpo_stub = false;
    std::optional<double> map_baseline;

    std::optional<double> report_skip_rate;
};

json scene_to_json(const data::SceneSpec& s) {
    return json{{"height", s.height},
                {"width", s.width},
                {"num_classes", s.num_classes},
                {"min_objects", s.min_objects},
                {"max_objects", s.max_objects},
                {"empty_fraction", s.empty_fraction},
                {"min_object_px", s.min_object_px},
                {"max_object_px", s.max_object_px},
                {"noise_stddev", s.noise_stddev}};
}

void scene_from_json(const json& j, data::SceneSpec& s) {
    reject_unknown_keys(j,
                        {"height", "width", "num_classes", "min_objects", "max_objects",
                         "empty_fraction", "min_object_px", "max_object_px", "noise_stddev"},
                        "dataset.scene");
    if (j.contains("height")) s.height = j.at("height").get<int>();
    if (j.contains("width")) s.width = j.at("width").get<int>();
    if (j.contains("num_classes")) s.num_classes = j.at("num_classes").get<int>();
    if (j.contains("min_objects")) s.min_objects = j.at("min_objects").get<int>();
    if (j.contains("max_objects")) s.max_objects = j.at("max_objects").get<int>();
    if (j.contains("empty_fraction")) s.empty_fraction = j.at("empty_fraction").get<float>();
    if (j.contains("min_object_px")) s.min_object_px = j.at("min_object_px").get<int>();
    if (j.contains("max_object_px")) s.max_object_px = j.at("max_object_px").get<int>();
    if (j.contains("noise_stddev")) s.noise_stddev = j.at("noise_stddev").get<float>();
}

json train_to_json(const train::TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"initial_lr", t.initial_lr},
                {"batch_size", t.batch_size},
                {"lr_decay", t.lr_decay},
                {"decay_every", t.decay_every},
                {"branch_lr_mult", t.branch_lr_mult},
                {"aug_mirror", t.aug_mirror},
                {"aug_crop", t.aug_crop},
                {"aug_brightness", t.aug_brightness},
                {"aug_prob", t.aug_prob},
                {"rms_smoothing", t.rms_smoothing},
                {"rms_eps", t.rms_eps}};
}

void train_from_json(const json& j, train::TrainConfig& t) {
    reject_unknown_keys(j,
                        {"epochs", "initial_lr", "batch_size", "lr_decay", "decay_every",
                         "branch_lr_mult", "aug_mirror", "aug_crop", "aug_brightness", "aug_prob",
                         "rms_smoothing", "rms_eps"},
                        "train");
    if (j.contains("epochs")) t.epochs = j.at("epochs").get<int>();
    if (j.contains("initial_lr")) t.initial_lr = j.at("initial_lr").get<float>();
    if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr_decay")) t.lr_decay = j.at("lr_decay").get<float>();
    if (j.contains("decay_every")) t.decay_every = j.at("decay_every").get<int>();
    if (j.contains("branch_lr_mult")) t.branch_lr_mult = j.at("branch_lr_mult").get<float>();
    if (j.contains("aug_mirror")) t.aug_mirror = j.at("aug_mirror").get<bool>();
    if (j.contains("aug_crop")) t.aug_crop = j.at("aug_crop").get<bool>();
    if (j.contains("aug_brightness")) t.aug_brightness = j.at("aug_brightness").get<bool>();
    if (j.contains("aug_prob")) t.aug_prob = j.at("aug_prob").get<float>();
    if (j.contains("rms_smoothing")) t.rms_smoothing = j.at("rms_smoothing").get<float>();
    if (j.contains("rms_eps")) t.rms_eps = j.at("rms_eps").get<float>();
}

json rc_to_json(const RunConfig& rc) {
    json j;
    j["schema_version"] = rc.schema_version;
    j["seed"] = rc.seed;
    j["out"] = rc.out;
    j["dataset"] = json{{"dir", rc.dataset_dir},
                        {"train_dir", rc.train_dir},
                        {"val_dir", rc.val_dir},
                        {"n_images", rc.n_images},
                        {"scene", scene_to_json(rc.scene)}};
    j["arch"] = json::parse(ckpt::arch_to_json(rc.bb, rc.ee, rc.hc));
    j["train"] = train_to_json(rc.tcfg);
    j["loss"] = json{{"lambda", rc.weights.lambda}, {"w0", rc.weights.w0}, {"w1", rc.weights.w1}};
    j["qat"] = json{{"bits", rc.qcfg.bits},
                    {"alpha_init", rc.qcfg.alpha_init},
                    {"alpha_l2", rc.qcfg.alpha_l2}};
    j["gate"] = json{{"tau", rc.tau ? json(*rc.tau) : json(nullptr)},
                     {"grid_start", rc.grid_start},
                     {"grid_stop", rc.grid_stop},
                     {"grid_step", rc.grid_step}};
    j["latency"] = json{{"clock_hz", rc.lat.clock_hz}, {"efficiency", rc.lat.efficiency}};
    j["hpo"] = json{{"trials", rc.hpo_trials},
                    {"stage", rc.hpo_stage},
                    {"epochs", rc.hpo_epochs},
                    {"stub", rc.hpo_stub},
                    {"map_baseline", rc.map_baseline ? json(*rc.map_baseline) : json(nullptr)}};
    j["report"] = json{
        {"skip_rate", rc.report_skip_rate ? json(*rc.report_skip_rate) : json(nullptr)}};
    return j;
}

void rc_from_json(const json& j, RunConfig& rc) {
    reject_unknown_keys(j,
                        {"schema_version", "seed", "out", "dataset", "arch", "train", "loss", "qat",
                         "gate", "latency", "hpo", "report"},
                        "config");
    if (j.contains("schema_version")) {
        rc.schema_version = j.at("schema_version").get<int>();
        if (rc.schema_version != 1)
            throw std::invalid_argument("config: unsupported schema_version");
    }
    if (j.contains("seed")) rc.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out")) rc.out = j.at("out").get<std::string>();
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown_keys(d, {"dir", "train_dir", "val_dir", "n_images", "scene"}, "dataset");
        if (d.contains("dir")) rc.dataset_dir = d.at("dir").get<std::string>();
        if (d.contains("train_dir")) rc.train_dir = d.at("train_dir").get<std::string>();
        if (d.contains("val_dir")) rc.val_dir = d.at("val_dir").get<std::string>();
        if (d.contains("n_images")) rc.n_images = d.at("n_images").get<int>();
        if (d.contains("scene")) scene_from_json(d.at("scene"), rc.scene);
    }
    if (j.contains("arch")) ckpt::arch_from_json(j.at("arch").dump(), rc.bb, rc.ee, rc.hc);
    if (j.contains("train")) train_from_json(j.at("train"), rc.tcfg);
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown_keys(l, {"lambda", "w0", "w1"}, "loss");
        if (l.contains("lambda")) rc.weights.lambda = l.at("lambda").get<float>();
        if (l.contains("w0")) rc.weights.w0 = l.at("w0").get<float>();
        if (l.contains("w1")) rc.weights.w1 = l.at("w1").get<float>();
    }
    if (j.contains("qat")) {
        const json& q = j.at("qat");
        reject_unknown_keys(q, {"bits", "alpha_init", "alpha_l2"}, "qat");
        if (q.contains("bits")) rc.qcfg.bits = q.at("bits").get<int>();
        if (q.contains("alpha_init")) rc.qcfg.alpha_init = q.at("alpha_init").get<float>();
        if (q.contains("alpha_l2")) rc.qcfg.alpha_l2 = q.at("alpha_l2").get<float>();
    }
    if (j.contains("gate")) {
        const json& g = j.at("gate");
        reject_unknown_keys(g, {"tau", "grid_start", "grid_stop", "grid_step"}, "gate");
        if (g.contains("tau") && !g.at("tau").is_null()) rc.tau = g.at("tau").get<float>();
        if (g.contains("grid_start")) rc.grid_start = g.at("grid_start").get<float>();
        if (g.contains("grid_stop")) rc.grid_stop = g.at("grid_stop").get<float>();
        if (g.contains("grid_step")) rc.grid_step = g.at("grid_step").get<float>();
    }
    if (j.contains("latency")) {
        const json& l = j.at("latency");
        reject_unknown_keys(l, {"clock_hz", "efficiency"}, "latency");
        if (l.contains("clock_hz")) rc.lat.clock_hz = l.at("clock_hz").get<double>();
        if (l.contains("efficiency")) rc.lat.efficiency = l.at("efficiency").get<double>();
    }
    if (j.contains("hpo")) {
        const json& h = j.at("hpo");
        reject_unknown_keys(h, {"trials", "stage", "epochs", "stub", "map_baseline"}, "hpo");
        if (h.contains("trials")) rc.hpo_trials = h.at("trials").get<int>();
        if (h.contains("stage")) rc.hpo_stage = h.at("stage").get<int>();
        if (h.contains("epochs")) rc.hpo_epochs = h.at("epochs").get<int>();
        if (h.contains("stub")) rc.hpo_stub = h.at("stub").get<bool>();
        if (h.contains("map_baseline") && !h.at("map_baseline").is_null())
            rc.map_baseline = h.at("map_baseline").get<double>();
    }
    if (j.contains("report")) {
        const json& r = j.at("report");
        reject_unknown_keys(r, {"skip_rate"}, "report");
        if (r.contains("skip_rate") && !r.at("skip_rate").is_null())
            rc.report_skip_rate = r.at("skip_rate").get<double>();
    }
}

RunConfig load_config(const std::string& command, const CliOptions& opts) {
    RunConfig rc;
    if (command == "qat") rc.tcfg = quant::qat_defaults();
    if (!opts.config.empty()) {
        std::ifstream f(opts.config);
        if (!f) throw std::invalid_argument("cannot open config " + opts.config);
        json j;
        try {
            j = json::parse(f);
        } catch (const json::parse_error& e) {
            throw std::invalid_argument(std::string("config parse error: ") + e.what());
        }
        rc_from_json(j, rc);
    }
    if (opts.seed) rc.seed = *opts.seed;
    if (!opts.out.empty()) rc.out = opts.out;
    if (!opts.ee.empty()) {
        if (opts.ee == "none")
            rc.ee = std::nullopt;
        else
            throw std::invalid_argument("--ee accepts only \"none\"");
    }
    rc.tcfg.seed = rc.seed;
    return rc;
}

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

void require_cfg(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

fs::path out_dir(const RunConfig& rc) {
    require_cfg(!rc.out.empty(), "an output directory is required (--out or config \"out\")");
    fs::create_directories(rc.out);
    return rc.out;
}

std::string fnv1a_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot hash missing input " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        for (std::streamsize i = 0; i < f.gcount(); ++i)
            h = (h ^ std::uint8_t(buf[i])) * 0x100000001b3ULL;
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::string hash_inputs(const std::vector<fs::path>& paths) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : paths) {
        std::string ph = fnv1a_file(p);
        for (char c : ph) h = (h ^ std::uint8_t(c)) * 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

// every artifact embeds the resolved config plus a hash of its inputs
void finish_artifact(json& j, const RunConfig& rc, const std::vector<fs::path>& inputs) {
    j["config"] = rc_to_json(rc);
    j["input_hash"] = inputs.empty() ? std::string("none") : hash_inputs(inputs);
}

data::Dataset load_required_dataset(const std::string& dir, const std::string& what) {
    require_cfg(!dir.empty(), "config: dataset." + what + " is required for this command");
    return data::load_dataset(dir);
}

std::optional<float> stored_tau_star(const fs::path& near) {
    fs::path p = near.parent_path() / "tau_star.json";
    std::ifstream f(p);
    if (!f) return std::nullopt;
    return json::parse(f).at("tau_star").get<float>();
}

float resolve_tau(const RunConfig& rc, const fs::path& from) {
    if (rc.tau) return *rc.tau;
    if (auto t = stored_tau_star(from)) return *t;
    throw std::invalid_argument(
        "no threshold: set gate.tau in the config or run `sweep` first (tau_star.json)");
}

std::vector<std::vector<GroundTruthBox>> normalized_gts(const data::Dataset& ds) {
    std::vector<std::vector<GroundTruthBox>> out;
    for (const auto& item : ds.items)
        out.push_back(gate::normalize_boxes(item.boxes, item.image.w, item.image.h));
    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& rc, const CliOptions& opts) {
    fs::path dir = out_dir(rc);
    bool empty_dir = fs::is_empty(dir);
    require_cfg(empty_dir || opts.force,
                "output directory " + dir.string() + " is not empty (use --force)");
    if (!empty_dir) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    try {
        data::Dataset ds = data::generate_dataset(rc.scene, rc.n_images, rc.seed);
        data::save_dataset(ds, dir);
        int n_empty = 0;
        for (const auto& item : ds.items) n_empty += item.boxes.empty() ? 1 : 0;
        json m{{"n_images", rc.n_images},
               {"n_empty", n_empty},
               {"empty_fraction", double(n_empty) / double(rc.n_images)},
               {"requested_empty_fraction", rc.scene.empty_fraction},
               {"seed", rc.seed}};
        finish_artifact(m, rc, {});
        write_text(dir / "gen_manifest.json", m.dump(1) + "\n");
    } catch (...) {
        fs::remove_all(dir);  // no partial datasets
        throw;
    }
    return 0;
}

int run_training(const RunConfig& rc, const CliOptions& opts, ModelGraph& model,
                 quant::QatContext* ctx, const fs::path& ckpt_path, const fs::path& log_path) {
    data::Dataset train_ds = load_required_dataset(rc.train_dir, "train_dir");
    data::Dataset val_ds = load_required_dataset(rc.val_dir, "val_dir");

    int start_epoch = 0;
    train::RmsPropState opt;
    const train::RmsPropState* opt_in = nullptr;
    if (opts.resume) {
        require_cfg(fs::exists(ckpt_path), "--resume: no checkpoint at " + ckpt_path.string());
        ckpt::Checkpoint c = ckpt::load(ckpt_path);
        if (ctx)
            qat_restore(c, model, *ctx, &opt);
        else
            ckpt::restore(c, model, &opt);
        start_epoch = c.epoch;
        opt_in = &opt;
    } else {
        require_cfg(!fs::exists(ckpt_path) || opts.force,
                    ckpt_path.string() + " exists (use --force or --resume)");
    }

    auto on_epoch = [&](int epoch, const train::EpochLog&, const train::RmsPropState& state) {
        ckpt::Checkpoint c = ctx ? qat_snapshot(model, *ctx, epoch + 1, rc.seed, &state)
                                 : ckpt::snapshot(model, epoch + 1, rc.seed, &state);
        ckpt::save(c, ckpt_path);
    };
    train::TrainResult result =
        train::train(model, train_ds, val_ds, rc.tcfg, rc.weights,
                     ctx ? ctx->extra_params() : train::ExtraParams{}, start_epoch, opt_in,
                     on_epoch);

    std::string csv = train::log_csv(result.log);
    if (opts.resume && fs::exists(log_path)) {
        std::string rows = csv.substr(csv.find('\n') + 1);  // drop the header when appending
        std::ofstream(log_path, std::ios::app) << rows;
    } else {
        write_text(log_path, csv);
    }
    json cfg = rc_to_json(rc);
    write_text(log_path.parent_path() / "config.json", cfg.dump(1) + "\n");
    return 0;
}

int cmd_train(const RunConfig& rc, const CliOptions& opts) {
    fs::path dir = out_dir(rc);
    ModelGraph model(rc.bb, rc.ee, rc.hc, Rng(rc.seed).fork("init").state());
    return run_training(rc, opts, model, nullptr, dir / "model.ckpt", dir / "train_log.csv");
}

int cmd_qat(const RunConfig& rc, const CliOptions& opts) {
    require_cfg(!opts.from.empty(), "qat requires --from <float checkpoint>");
    fs::path dir = out_dir(rc);
    ckpt::Checkpoint base = ckpt::load(opts.from);
    ModelGraph model(base.backbone, base.ee, base.heads, Rng(rc.seed).fork("init").state());
    quant::QatContext ctx(model, rc.qcfg);
    if (!opts.resume) ckpt::restore(base, model);  // start from the float weights
    return run_training(rc, opts, model, &ctx, dir / "model_qat.ckpt", dir / "qat_log.csv");
}

int cmd_eval(const RunConfig& rc, const CliOptions& opts) {
    require_cfg(!opts.from.empty(), "eval requires --from <checkpoint>");
    fs::path dir = out_dir(rc);
    ckpt::Checkpoint c = ckpt::load(opts.from);
    ModelGraph model = ckpt::build_model(c);
    std::string ds_dir = rc.val_dir.empty() ? rc.dataset_dir : rc.val_dir;
    data::Dataset ds = load_required_dataset(ds_dir, "val_dir (or dataset.dir)");

    std::optional<float> tau;
    if (model.has_ee()) tau = resolve_tau(rc, opts.from);
    gate::EvalReport report = gate::evaluate(model, ds, tau);
    json j = json::parse(gate::to_json(report));
    finish_artifact(j, rc, {opts.from, fs::path(ds_dir) / "manifest.json"});
    write_text(dir / "eval.json", j.dump(1) + "\n");
    return 0;
}

int cmd_sweep(const RunConfig& rc, const CliOptions& opts) {
    require_cfg(!opts.from.empty(), "sweep requires --from <checkpoint>");
    fs::path dir = out_dir(rc);
    ckpt::Checkpoint c = ckpt::load(opts.from);
    ModelGraph model = ckpt::build_model(c);
    require_cfg(model.has_ee(), "sweep requires a model with an exit branch");
    std::string ds_dir = rc.val_dir.empty() ? rc.dataset_dir : rc.val_dir;
    data::Dataset ds = load_required_dataset(ds_dir, "val_dir (or dataset.dir)");

    require_cfg(rc.grid_step > 0 && rc.grid_start <= rc.grid_stop, "gate: malformed sweep grid");
    std::vector<float> taus;
    for (int i = 0;; ++i) {
        double t = double(rc.grid_start) + double(i) * double(rc.grid_step);
        if (t > double(rc.grid_stop) + double(rc.grid_step) / 2) break;
        taus.push_back(float(t));
    }

    gate::ScoreCache cache = gate::score_dataset(model, ds);
    cost::CostReport cr = cost::count_macs(model);
    auto points = gate::threshold_sweep(cache, normalized_gts(ds), taus, double(cr.mac_full),
                                        double(cr.mac_ee), rc.hc.num_classes);
    write_text(dir / "sweep.csv", gate::sweep_csv(points));

    float tau_star = gate::optimize_threshold(cache.p_empty, cache.y);
    EeMetrics em = ee_classification_metrics(cache.p_empty, cache.y, tau_star);
    json star{{"tau_star", tau_star},
              {"ee_accuracy", em.accuracy},
              {"ee_fpr", em.fpr},
              {"skip_rate", em.skip_rate},
              {"savings", cr.savings}};
    if (rc.map_baseline)
        star["objective_J"] =
            hpo::objective_J(*rc.map_baseline, cr.savings, double(em.accuracy));
    finish_artifact(star, rc, {opts.from, fs::path(ds_dir) / "manifest.json"});
    write_text(dir / "tau_star.json", star.dump(1) + "\n");
    return 0;
}

double stub_objective(const hpo::Assignment& a) {
    // deterministic stand-in for the full train-and-evaluate pipeline: a
    // smooth bump over the search space, cheap enough for smoke tests
    double j = 1.0;
    j *= std::exp(-std::abs(std::log(a.at("branch_lr") / 1e-3)));
    j *= std::exp(-std::abs(std::log(a.at("lambda"))));
    j *= 1.0 / (1.0 + std::abs(a.at("w1") - 1.0));
    j *= 1.0 + 0.01 * a.at("attach_layer");
    j *= 1.0 + 0.001 * a.at("batch_size");
    return j;
}

int cmd_hpo(const RunConfig& rc, const CliOptions& opts) {
    fs::path dir = out_dir(rc);
    hpo::SearchSpace space = hpo::SearchSpace::detector_default(rc.bb, rc.hpo_stage);

    std::function<double(const hpo::Assignment&)> evaluator;
    data::Dataset train_ds, val_ds;
    if (rc.hpo_stub) {
        evaluator = stub_objective;
    } else {
        train_ds = load_required_dataset(rc.train_dir, "train_dir");
        val_ds = load_required_dataset(rc.val_dir, "val_dir");
        evaluator = [&](const hpo::Assignment& a) {
            EEBranchConfig ee = rc.ee.value_or(EEBranchConfig{});
            ee.attach_layer = int(a.at("attach_layer"));
            train::TrainConfig tc = rc.tcfg;
            tc.epochs = rc.hpo_epochs;
            tc.batch_size = int(a.at("batch_size"));
            tc.branch_lr_mult = float(a.at("branch_lr") / tc.initial_lr);
            LossWeights w = rc.weights;
            w.lambda = float(a.at("lambda"));
            w.w1 = float(a.at("w1"));

            ModelGraph model(rc.bb, ee, rc.hc, Rng(rc.seed).fork("init").state());
            train::train(model, train_ds, val_ds, tc, w);
            double map_baseline = double(gate::evaluate(model, val_ds, std::nullopt).map);
            gate::ScoreCache cache = gate::score_dataset(model, val_ds);
            float tau_star = gate::optimize_threshold(cache.p_empty, cache.y);
            double a_ee =
                double(ee_classification_metrics(cache.p_empty, cache.y, tau_star).accuracy);
            double s = cost::count_macs(model).savings;
            return hpo::objective_J(map_baseline, s, a_ee);
        };
    }

    hpo::StudyResult res =
        hpo::run_study(space, rc.hpo_trials, rc.seed, evaluator, (dir / "study.jsonl").string());

    // render the winning assignment as a ready-to-train configuration
    RunConfig best_rc = rc;
    if (!best_rc.ee) best_rc.ee = EEBranchConfig{};
    best_rc.ee->attach_layer = int(res.best.assignment.at("attach_layer"));
    best_rc.tcfg.batch_size = int(res.best.assignment.at("batch_size"));
    best_rc.tcfg.branch_lr_mult =
        float(res.best.assignment.at("branch_lr") / best_rc.tcfg.initial_lr);
    best_rc.weights.lambda = float(res.best.assignment.at("lambda"));
    best_rc.weights.w1 = float(res.best.assignment.at("w1"));
    json out = rc_to_json(best_rc);
    out["best_trial"] = json::parse(hpo::trial_to_json(res.best));
    write_text(dir / "best_config.json", out.dump(1) + "\n");
    return 0;
}

int cmd_export(const RunConfig& rc, const CliOptions& opts) {
    require_cfg(!opts.from.empty(), "export requires --from <qat checkpoint>");
    fs::path dir = out_dir(rc);
    ckpt::Checkpoint c = ckpt::load(opts.from);
    ModelGraph model(c.backbone, c.ee, c.heads, Rng(rc.seed).fork("init").state());
    quant::QatContext ctx(model, rc.qcfg);
    qat_restore(c, model, ctx);
    std::string ds_dir = rc.val_dir.empty() ? rc.dataset_dir : rc.val_dir;
    data::Dataset calib = load_required_dataset(ds_dir, "val_dir (or dataset.dir)");
    quant::QuantizedModel qm = quant::export_int8(model, ctx, calib);
    quant::save_int8(qm, (dir / "model.q8").string());
    json cfg = rc_to_json(rc);
    write_text(dir / "config.json", cfg.dump(1) + "\n");
    return 0;
}

int cmd_run_int8(const RunConfig& rc, const CliOptions& opts) {
    require_cfg(!opts.from.empty(), "run-int8 requires --from <int8 container>");
    fs::path dir = out_dir(rc);
    quant::QuantizedModel qm = quant::load_int8(opts.from);
    std::string ds_dir = rc.val_dir.empty() ? rc.dataset_dir : rc.val_dir;
    data::Dataset ds = load_required_dataset(ds_dir, "val_dir (or dataset.dir)");

    ModelGraph shape_model(qm.bb, qm.ee, qm.hc, 0);  // geometry only: anchors + MAC table
    AnchorSet anchors = anchors_for_model(shape_model);
    cost::CostReport cr = cost::count_macs(shape_model);

    std::optional<float> tau;
    if (qm.ee) tau = resolve_tau(rc, opts.from);

    std::vector<std::vector<Detection>> dets;
    std::vector<float> p_empty;
    std::vector<int> y;
    int skipped = 0;
    for (const auto& item : ds.items) {
        RawOutputs raw = quant::int8_forward(qm, item.image);
        bool skip = false;
        if (qm.ee) {
            float a = raw.ee_logits->at(0, 0), b = raw.ee_logits->at(0, 1);
            float m = std::max(a, b);
            float p = std::exp(b - m) / (std::exp(a - m) + std::exp(b - m));
            p_empty.push_back(p);
            y.push_back(item.boxes.empty() ? 1 : 0);
            skip = p >= *tau;
        }
        skipped += skip ? 1 : 0;
        dets.push_back(skip ? std::vector<Detection>{} : gate::decode_detections(raw, 0, anchors));
    }

    MapResult mr = mean_average_precision(dets, normalized_gts(ds), rc.hc.num_classes);
    double skip_rate = ds.items.empty() ? 0.0 : double(skipped) / double(ds.items.size());
    double mac_avg = cost::average_macs(double(cr.mac_full), double(cr.mac_ee), skip_rate);
    cost::LatencyEstimate lat_avg = cost::estimate_latency(mac_avg, rc.lat);
    cost::LatencyEstimate lat_full = cost::estimate_latency(double(cr.mac_full), rc.lat);

    json j{{"map", mr.map},
           {"tau", tau ? json(*tau) : json(nullptr)},
           {"skip_rate", skip_rate},
           {"mac_full", cr.mac_full},
           {"mac_ee", cr.mac_ee},
           {"mac_avg", mac_avg},
           {"savings", cr.savings},
           {"latency_avg_s", lat_avg.seconds},
           {"fps_avg", lat_avg.fps},
           {"latency_full_s", lat_full.seconds},
           {"fps_full", lat_full.fps}};
    if (qm.ee) {
        EeMetrics em = ee_classification_metrics(p_empty, y, *tau);
        j["ee_accuracy"] = em.accuracy;
        j["ee_fpr"] = em.fpr;
    }
    json ap = json::array();
    for (const auto& v : mr.per_class) ap.push_back(v ? json(*v) : json(nullptr));
    j["per_class_ap"] = ap;
    finish_artifact(j, rc, {opts.from, fs::path(ds_dir) / "manifest.json"});
    write_text(dir / "run_int8.json", j.dump(1) + "\n");
    return 0;
}

int cmd_report(const RunConfig& rc, const CliOptions& opts) {
    fs::path dir = out_dir(rc);
    BackboneConfig bb = rc.bb;
    std::optional<EEBranchConfig> ee = rc.ee;
    HeadConfig hc = rc.hc;
    std::vector<fs::path> inputs;
    if (!opts.from.empty()) {
        ckpt::Checkpoint c = ckpt::load(opts.from);
        bb = c.backbone;
        ee = c.ee;
        hc = c.heads;
        inputs.push_back(opts.from);
    }
    ModelGraph model(bb, ee, hc, 0);
    cost::CostReport cr = cost::count_macs(model);
    write_text(dir / "layers.csv", cost::per_layer_csv(cr));

    json j = json::parse(cost::to_json(cr));
    auto lat = [&](double macs) {
        cost::LatencyEstimate e = cost::estimate_latency(macs, rc.lat);
        return json{{"seconds", e.seconds}, {"fps", e.fps}};
    };
    json latency{{"static", lat(double(cr.mac_static))},
                 {"full", lat(double(cr.mac_full))},
                 {"ee", lat(double(cr.mac_ee))}};
    if (rc.report_skip_rate) {
        double mac_avg =
            cost::average_macs(double(cr.mac_full), double(cr.mac_ee), *rc.report_skip_rate);
        latency["average"] = lat(mac_avg);
        j["mac_avg"] = mac_avg;
        j["skip_rate"] = *rc.report_skip_rate;
    }
    j["latency"] = latency;
    finish_artifact(j, rc, inputs);
    write_text(dir / "report.json", j.dump(1) + "\n");
    return 0;
}

}  // namespace

ckpt::Checkpoint qat_snapshot(ModelGraph& model, quant::QatContext& ctx, int epoch,
                              std::uint64_t seed, const train::RmsPropState* opt) {
    ckpt::Checkpoint c = ckpt::snapshot(model, epoch, seed);
    auto extras = ctx.extra_params();
    for (const auto& p : extras) {
        Tensor t = *p.tensor;
        t.grad.clear();
        c.tensors.emplace_back("qat." + p.name, std::move(t));
    }
    if (opt) {
        if (opt->sq.size() != model.params().size() + extras.size())
            throw std::invalid_argument(
                "qat_snapshot: optimizer state does not match parameters + clip values");
        c.opt_sq = opt->sq;
    }
    return c;
}

void qat_restore(const ckpt::Checkpoint& c, ModelGraph& model, quant::QatContext& ctx,
                 train::RmsPropState* opt_out) {
    ckpt::Checkpoint base;
    base.format_version = c.format_version;
    base.backbone = c.backbone;
    base.ee = c.ee;
    base.heads = c.heads;
    base.epoch = c.epoch;
    base.seed = c.seed;
    std::map<std::string, const Tensor*> alphas;
    for (const auto& [name, t] : c.tensors) {
        if (name.rfind("qat.", 0) == 0)
            alphas[name] = &t;
        else
            base.tensors.emplace_back(name, t);
    }
    ckpt::restore(base, model);
    auto extras = ctx.extra_params();
    for (const auto& p : extras) {
        auto it = alphas.find("qat." + p.name);
        if (it == alphas.end())
            throw std::invalid_argument("qat_restore: checkpoint lacks clip value " + p.name);
        check_shape(it->second->shape, p.tensor->shape, "qat_restore " + p.name);
        p.tensor->data = it->second->data;
    }
    if (alphas.size() != extras.size())
        throw std::invalid_argument("qat_restore: clip-value count mismatch");
    if (opt_out) {
        if (c.opt_sq.size() != model.params().size() + extras.size())
            throw std::invalid_argument("qat_restore: optimizer state missing or mismatched");
        opt_out->sq = c.opt_sq;
    }
}

int run_command(const std::string& command, const CliOptions& opts) {
    try {
        RunConfig rc = load_config(command, opts);
        if (command == "gen-data") return cmd_gen_data(rc, opts);
        if (command == "train") return cmd_train(rc, opts);
        if (command == "qat") return cmd_qat(rc, opts);
        if (command == "eval") return cmd_eval(rc, opts);
        if (command == "sweep") return cmd_sweep(rc, opts);
        if (command == "hpo") return cmd_hpo(rc, opts);
        if (command == "export") return cmd_export(rc, opts);
        if (command == "run-int8") return cmd_run_int8(rc, opts);
        if (command == "report") return cmd_report(rc, opts);
        throw std::invalid_argument("unknown command " + command);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace skipdet::pipeline
