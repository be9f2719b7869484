#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skipdet/model.hpp"

namespace skipdet::cost {

// Analytic per-layer accounting plus the aggregate figures the rest of the
// tooling reports: full-pipeline cost (incl. branch), early-exit path cost
// (backbone prefix up to the attach layer + branch), the no-branch static
// cost, and the static saving fraction S = 1 - mac_ee / mac_full.
struct CostReport {
    std::vector<LayerInfo> per_layer;
    long long mac_full = 0;    // whole pipeline including the exit branch
    long long mac_ee = 0;      // prefix through attach layer + branch (skip path)
    long long mac_static = 0;  // pipeline without the branch
    long long ops_total = 0;   // element-wise work not counted as MACs
    long long params_total = 0;
    double savings = 0.0;  // S; negative when the skip path costs more than full
    int attach_layer = -1;  // -1 when the model has no exit branch
};

struct LatencyModel {
    double clock_hz = 160e6;
    double efficiency = 1.0;  // sustained MACs per cycle, a per-model calibration constant
};

struct LatencyEstimate {
    double seconds = 0.0;
    double fps = 0.0;
};

CostReport count_macs(const ModelGraph& model);

// skip_rate-weighted mean per-frame cost
double average_macs(double mac_full, double mac_ee, double skip_rate);

// static saving fraction of exiting early; may be negative for shallow
// attach points whose branch outweighs the skipped suffix
double savings(double mac_full, double mac_ee);

LatencyEstimate estimate_latency(double macs, const LatencyModel& model);

std::string to_json(const CostReport& report);
std::string per_layer_csv(const CostReport& report);

}  // namespace skipdet::cost
