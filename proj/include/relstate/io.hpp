// Serialization: scenario JSON round-trip, range measurement log CSV, and
// the fixed-precision number formatting shared by every text artifact.
#pragma once

#include "relstate/scenario.hpp"

#include <string>

namespace relstate {

/// Formats with "%.12g" so reports are byte-identical across runs.
std::string g12(double value);

std::string scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const std::string& text);

void save_scenario(const Scenario& scenario, const std::string& path);
Scenario load_scenario(const std::string& path);

/// CSV with header "timestamp,i,u,j,v,d_measured,d_truth". True distances
/// come from the scenario ground truth; timestamps are synthetic at 10 Hz.
void write_measurement_log(const MeasurementGraph& graph, const Scenario& scenario,
                           const std::string& path);

/// Recovers per-pair additive bias from a measurement log written by
/// write_measurement_log (mean of measured minus true range per pair).
BiasTable calibrate_bias_from_log(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace relstate
