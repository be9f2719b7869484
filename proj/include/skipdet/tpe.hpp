#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skipdet/model.hpp"
#include "skipdet/rng.hpp"

namespace skipdet::hpo {

// ---------------------------------------------------------------------------
// Mixed search space: categorical, uniform, and log-uniform dimensions.
// Values are carried as doubles throughout (categoricals hold their numeric
// choice), keeping assignments trivially serializable.
// ---------------------------------------------------------------------------

struct ParamDomain {
    enum class Kind { Categorical, Uniform, LogUniform };
    Kind kind = Kind::Uniform;
    std::vector<double> choices;  // categorical
    double lo = 0.0, hi = 0.0;    // continuous bounds

    static ParamDomain categorical(std::vector<double> choices);
    static ParamDomain uniform(double lo, double hi);
    static ParamDomain log_uniform(double lo, double hi);  // bounds > 0

    void validate() const;  // throws std::invalid_argument
    bool contains(double v) const;
};

struct SearchSpace {
    std::vector<std::pair<std::string, ParamDomain>> params;  // ordered

    void validate() const;
    const ParamDomain& domain(const std::string& name) const;

    // detector tuning space: exit layer within a stage, branch learning rate,
    // batch size, branch loss weight, empty-class weight
    static SearchSpace detector_default(const BackboneConfig& bb, int stage = 4);
};

using Assignment = std::map<std::string, double>;

struct TrialRecord {
    int index = 0;
    Assignment assignment;
    double J = 0.0;  // objective, maximized; finite iff complete
    bool complete = false;
    std::string artifacts;
};

// composite objective: baseline detection quality x static saving x gate
// accuracy. map_baseline is mAP with the gate disabled.
double objective_J(double map_baseline, double S, double A_ee);

// ---------------------------------------------------------------------------
// Tree-structured Parzen Estimator
// ---------------------------------------------------------------------------

struct TpeConfig {
    double gamma = 0.25;   // top quantile forming the "good" set
    int n_startup = 10;    // uniform trials before the model kicks in
    int n_candidates = 24; // draws from the good model per suggestion
};

// l(x)/g(x) with per-dimension Parzen models multiplied across dimensions;
// Gaussian kernels (log-space for log-uniform dims) with bandwidth
// max(width/sqrt(n), 1e-3), add-one-smoothed frequencies for categoricals
double parzen_ratio(const std::vector<TrialRecord>& good, const std::vector<TrialRecord>& bad,
                    const SearchSpace& space, const Assignment& x);

// uniform sample over every dimension
Assignment sample_uniform(const SearchSpace& space, Rng& rng);

// Uniform until n_startup completed trials; afterwards split at quantile
// gamma, draw candidates from the good-set model, return the density-ratio
// maximizer. Failed trials are ignored entirely.
Assignment tpe_suggest(const std::vector<TrialRecord>& history, const SearchSpace& space, Rng& rng,
                       const TpeConfig& cfg = {});

// ---------------------------------------------------------------------------
// Study driver with append-only JSON-lines persistence
// ---------------------------------------------------------------------------

struct StudyResult {
    TrialRecord best;  // argmax J over completed trials, earliest on ties
    std::vector<TrialRecord> history;
};

std::string trial_to_json(const TrialRecord& t);
TrialRecord trial_from_json(const std::string& line);

// Runs (or resumes) a study: one suggestion + evaluation per trial, history
// appended to persist_path after every trial when a path is given. An
// evaluator exception or non-finite objective marks the trial failed and the
// study continues. Per-trial RNG derives from (seed, trial index), so a
// resumed study suggests exactly what the uninterrupted one would have.
StudyResult run_study(const SearchSpace& space, int n_trials, std::uint64_t seed,
                      const std::function<double(const Assignment&)>& evaluator,
                      const std::string& persist_path = "", const TpeConfig& cfg = {});

}  // namespace skipdet::hpo
