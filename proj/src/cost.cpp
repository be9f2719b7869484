#include "skipdet/cost.hpp"

#include <json.hpp>

#include <sstream>
#include <stdexcept>

namespace skipdet::cost {

CostReport count_macs(const ModelGraph& model) {
    CostReport r;
    r.per_layer = model.layer_table();
    if (model.has_ee()) r.attach_layer = model.ee_config()->attach_layer;
    for (const auto& li : r.per_layer) {
        r.mac_full += li.macs;
        r.ops_total += li.ops;
        r.params_total += li.params;
        if (li.backbone_layer != -1) r.mac_static += li.macs;
        // the skip path: stem + blocks up to the attach layer, plus the branch
        bool on_skip_path = li.backbone_layer == -1 ||
                            (li.backbone_layer >= 0 && li.backbone_layer <= r.attach_layer);
        if (model.has_ee() && on_skip_path) r.mac_ee += li.macs;
    }
    if (model.has_ee()) r.savings = savings(double(r.mac_full), double(r.mac_ee));
    return r;
}

double average_macs(double mac_full, double mac_ee, double skip_rate) {
    if (skip_rate < 0.0 || skip_rate > 1.0)
        throw std::invalid_argument("average_macs: skip_rate outside [0,1]");
    return skip_rate * mac_ee + (1.0 - skip_rate) * mac_full;
}

double savings(double mac_full, double mac_ee) {
    if (mac_full <= 0.0) throw std::invalid_argument("savings: mac_full must be positive");
    return 1.0 - mac_ee / mac_full;
}

LatencyEstimate estimate_latency(double macs, const LatencyModel& model) {
    if (macs <= 0.0) throw std::invalid_argument("estimate_latency: macs must be positive");
    if (model.clock_hz <= 0.0 || model.efficiency <= 0.0)
        throw std::invalid_argument("estimate_latency: clock and efficiency must be positive");
    LatencyEstimate e;
    e.seconds = macs / (model.efficiency * model.clock_hz);
    e.fps = 1.0 / e.seconds;
    return e;
}

std::string to_json(const CostReport& r) {
    nlohmann::json j;
    j["mac_full"] = r.mac_full;
    j["mac_ee"] = r.mac_ee;
    j["mac_static"] = r.mac_static;
    j["ops_total"] = r.ops_total;
    j["params_total"] = r.params_total;
    j["savings"] = r.savings;
    j["attach_layer"] = r.attach_layer;
    j["per_layer"] = nlohmann::json::array();
    for (const auto& li : r.per_layer)
        j["per_layer"].push_back({{"name", li.name},
                                  {"backbone_layer", li.backbone_layer},
                                  {"macs", li.macs},
                                  {"ops", li.ops},
                                  {"params", li.params}});
    return j.dump(2);
}

std::string per_layer_csv(const CostReport& r) {
    std::ostringstream os;
    os << "name,backbone_layer,macs,ops,params\n";
    for (const auto& li : r.per_layer)
        os << li.name << ',' << li.backbone_layer << ',' << li.macs << ',' << li.ops << ','
           << li.params << '\n';
    return os.str();
}

}  // namespace skipdet::cost
