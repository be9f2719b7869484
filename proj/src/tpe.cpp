#include "skipdet/tpe.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace skipdet::hpo {

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

ParamDomain ParamDomain::categorical(std::vector<double> choices) {
    ParamDomain d;
    d.kind = Kind::Categorical;
    d.choices = std::move(choices);
    d.validate();
    return d;
}

ParamDomain ParamDomain::uniform(double lo, double hi) {
    ParamDomain d;
    d.kind = Kind::Uniform;
    d.lo = lo;
    d.hi = hi;
    d.validate();
    return d;
}

ParamDomain ParamDomain::log_uniform(double lo, double hi) {
    ParamDomain d;
    d.kind = Kind::LogUniform;
    d.lo = lo;
    d.hi = hi;
    d.validate();
    return d;
}

void ParamDomain::validate() const {
    switch (kind) {
        case Kind::Categorical:
            if (choices.empty()) throw std::invalid_argument("domain: empty categorical");
            break;
        case Kind::Uniform:
            if (!(lo < hi)) throw std::invalid_argument("domain: requires lo < hi");
            break;
        case Kind::LogUniform:
            if (!(lo < hi)) throw std::invalid_argument("domain: requires lo < hi");
            if (!(lo > 0)) throw std::invalid_argument("domain: log-uniform bounds must be > 0");
            break;
    }
}

bool ParamDomain::contains(double v) const {
    if (kind == Kind::Categorical)
        return std::find(choices.begin(), choices.end(), v) != choices.end();
    return v >= lo && v <= hi;
}

void SearchSpace::validate() const {
    if (params.empty()) throw std::invalid_argument("search space: no parameters");
    for (const auto& [name, dom] : params) {
        if (name.empty()) throw std::invalid_argument("search space: unnamed parameter");
        dom.validate();
    }
}

const ParamDomain& SearchSpace::domain(const std::string& name) const {
    for (const auto& [n, d] : params)
        if (n == name) return d;
    throw std::out_of_range("search space: unknown parameter " + name);
}

SearchSpace SearchSpace::detector_default(const BackboneConfig& bb, int stage) {
    std::vector<double> layers;
    for (int l : layers_of_stage(stage, bb)) layers.push_back(double(l));
    SearchSpace s;
    s.params = {{"attach_layer", ParamDomain::categorical(layers)},
                {"branch_lr", ParamDomain::log_uniform(1e-5, 1e-2)},
                {"batch_size", ParamDomain::categorical({8, 16, 24, 32})},
                {"lambda", ParamDomain::log_uniform(0.1, 10.0)},
                {"w1", ParamDomain::uniform(0.25, 4.0)}};
    return s;
}

double objective_J(double map_baseline, double S, double A_ee) {
    if (!(map_baseline >= 0.0 && map_baseline <= 1.0))
        throw std::invalid_argument("objective_J: map_baseline outside [0,1]");
    if (!(A_ee >= 0.0 && A_ee <= 1.0))
        throw std::invalid_argument("objective_J: A_ee outside [0,1]");
    return map_baseline * S * A_ee;  // S may be negative (early-stage pathology)
}

// ---------------------------------------------------------------------------
// Parzen machinery
// ---------------------------------------------------------------------------

namespace {

bool is_log(const ParamDomain& d) { return d.kind == ParamDomain::Kind::LogUniform; }

double to_model_space(const ParamDomain& d, double v) { return is_log(d) ? std::log(v) : v; }

double domain_width(const ParamDomain& d) {
    return is_log(d) ? std::log(d.hi) - std::log(d.lo) : d.hi - d.lo;
}

double bandwidth(const ParamDomain& d, std::size_t n) {
    return std::max(domain_width(d) / std::sqrt(double(std::max<std::size_t>(n, 1))), 1e-3);
}

double gauss(double x, double mu, double bw) {
    double z = (x - mu) / bw;
    return std::exp(-0.5 * z * z) / (bw * std::sqrt(2.0 * 3.14159265358979323846));
}

// mixture density of one dimension over a trial set
double parzen_density(const std::vector<TrialRecord>& set, const std::string& name,
                      const ParamDomain& d, double v) {
    if (d.kind == ParamDomain::Kind::Categorical) {
        // add-one smoothed frequency
        std::size_t idx = 0;
        for (; idx < d.choices.size(); ++idx)
            if (d.choices[idx] == v) break;
        if (idx == d.choices.size()) throw std::invalid_argument("parzen: value outside domain");
        double count = 1.0;  // prior
        for (const auto& t : set) count += (t.assignment.at(name) == v) ? 1.0 : 0.0;
        return count / (double(set.size()) + double(d.choices.size()));
    }
    double x = to_model_space(d, v);
    double bw = bandwidth(d, set.size());
    double acc = 0.0;
    for (const auto& t : set) acc += gauss(x, to_model_space(d, t.assignment.at(name)), bw);
    return acc / double(std::max<std::size_t>(set.size(), 1));
}

double sample_dim(const ParamDomain& d, Rng& rng) {
    switch (d.kind) {
        case ParamDomain::Kind::Categorical:
            return d.choices[std::size_t(rng.uniform_int(0, std::int64_t(d.choices.size()) - 1))];
        case ParamDomain::Kind::Uniform:
            return rng.uniform(d.lo, d.hi);
        case ParamDomain::Kind::LogUniform:
            return std::exp(rng.uniform(std::log(d.lo), std::log(d.hi)));
    }
    throw std::logic_error("sample_dim: unreachable");
}

// draw from the good-set model: kernel around a random good point for
// continuous dims, add-one-smoothed frequencies for categoricals
double sample_from_good(const std::vector<TrialRecord>& good, const std::string& name,
                        const ParamDomain& d, Rng& rng) {
    if (d.kind == ParamDomain::Kind::Categorical) {
        std::vector<double> w(d.choices.size(), 1.0);  // prior
        for (const auto& t : good)
            for (std::size_t i = 0; i < d.choices.size(); ++i)
                if (t.assignment.at(name) == d.choices[i]) w[i] += 1.0;
        double total = 0.0;
        for (double v : w) total += v;
        double u = rng.uniform(0.0, total);
        for (std::size_t i = 0; i < w.size(); ++i) {
            u -= w[i];
            if (u <= 0.0) return d.choices[i];
        }
        return d.choices.back();
    }
    const TrialRecord& anchor = good[std::size_t(rng.uniform_int(0, std::int64_t(good.size()) - 1))];
    double mu = to_model_space(d, anchor.assignment.at(name));
    double bw = bandwidth(d, good.size());
    double x = mu + rng.normal() * bw;
    double lo = to_model_space(d, d.lo), hi = to_model_space(d, d.hi);
    x = std::clamp(x, lo, hi);
    // exp(log(hi)) can land one ulp past hi; clamp in value space too
    return std::clamp(is_log(d) ? std::exp(x) : x, d.lo, d.hi);
}

}  // namespace

double parzen_ratio(const std::vector<TrialRecord>& good, const std::vector<TrialRecord>& bad,
                    const SearchSpace& space, const Assignment& x) {
    double ratio = 1.0;
    for (const auto& [name, dom] : space.params) {
        double v = x.at(name);
        double l = parzen_density(good, name, dom, v);
        double g = parzen_density(bad, name, dom, v);
        ratio *= l / std::max(g, 1e-300);
    }
    return ratio;
}

Assignment sample_uniform(const SearchSpace& space, Rng& rng) {
    Assignment a;
    for (const auto& [name, dom] : space.params) a[name] = sample_dim(dom, rng);
    return a;
}

Assignment tpe_suggest(const std::vector<TrialRecord>& history, const SearchSpace& space, Rng& rng,
                       const TpeConfig& cfg) {
    space.validate();
    std::vector<TrialRecord> completed;
    for (const auto& t : history)
        if (t.complete && std::isfinite(t.J)) completed.push_back(t);

    if (int(completed.size()) < cfg.n_startup) return sample_uniform(space, rng);

    std::stable_sort(completed.begin(), completed.end(),
                     [](const TrialRecord& a, const TrialRecord& b) { return a.J > b.J; });
    std::size_t n_good = std::size_t(std::ceil(cfg.gamma * double(completed.size())));
    n_good = std::clamp<std::size_t>(n_good, 1, completed.size());
    std::vector<TrialRecord> good(completed.begin(), completed.begin() + std::ptrdiff_t(n_good));
    std::vector<TrialRecord> bad(completed.begin() + std::ptrdiff_t(n_good), completed.end());
    if (bad.empty()) bad = good;  // degenerate split: ratio collapses to 1

    Assignment best;
    double best_ratio = -1.0;
    for (int c = 0; c < cfg.n_candidates; ++c) {
        Assignment cand;
        for (const auto& [name, dom] : space.params)
            cand[name] = sample_from_good(good, name, dom, rng);
        double r = parzen_ratio(good, bad, space, cand);
        if (r > best_ratio) {
            best_ratio = r;
            best = std::move(cand);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Persistence and study driver
// ---------------------------------------------------------------------------

std::string trial_to_json(const TrialRecord& t) {
    nlohmann::json j;
    j["index"] = t.index;
    j["assignment"] = t.assignment;
    j["J"] = t.complete ? nlohmann::json(t.J) : nlohmann::json(nullptr);
    j["status"] = t.complete ? "complete" : "failed";
    j["artifacts"] = t.artifacts;
    return j.dump();
}

TrialRecord trial_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    TrialRecord t;
    t.index = j.at("index").get<int>();
    t.assignment = j.at("assignment").get<Assignment>();
    t.complete = j.at("status").get<std::string>() == "complete";
    t.J = t.complete ? j.at("J").get<double>() : std::numeric_limits<double>::quiet_NaN();
    t.artifacts = j.value("artifacts", "");
    return t;
}

StudyResult run_study(const SearchSpace& space, int n_trials, std::uint64_t seed,
                      const std::function<double(const Assignment&)>& evaluator,
                      const std::string& persist_path, const TpeConfig& cfg) {
    if (n_trials <= 0) throw std::invalid_argument("run_study: n_trials must be positive");
    space.validate();

    std::vector<TrialRecord> history;
    if (!persist_path.empty()) {
        std::ifstream in(persist_path);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) history.push_back(trial_from_json(line));
    }

    for (int i = int(history.size()); i < n_trials; ++i) {
        Rng trial_rng = Rng(seed).fork("trial").fork(std::uint64_t(i));
        TrialRecord t;
        t.index = i;
        t.assignment = tpe_suggest(history, space, trial_rng, cfg);
        try {
            double J = evaluator(t.assignment);
            if (std::isfinite(J)) {
                t.J = J;
                t.complete = true;
            }
        } catch (const std::exception&) {
            t.complete = false;  // failed trial: recorded, excluded from the model
        }
        if (!t.complete) t.J = std::numeric_limits<double>::quiet_NaN();
        history.push_back(t);
        if (!persist_path.empty()) {
            std::ofstream out(persist_path, std::ios::app);
            if (!out) throw std::runtime_error("run_study: cannot append to " + persist_path);
            out << trial_to_json(history.back()) << '\n';
        }
    }

    StudyResult res;
    res.history = history;
    bool found = false;
    for (const auto& t : history)
        if (t.complete && (!found || t.J > res.best.J)) {  // earliest wins ties
            res.best = t;
            found = true;
        }
    if (!found) throw std::runtime_error("run_study: no completed trials");
    return res;
}

}  // namespace skipdet::hpo
