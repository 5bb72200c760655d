#include "relstate/io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace relstate {

using nlohmann::json;

std::string g12(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", value);
  return buf;
}

namespace {

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const json& j) {
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return Mat(0, 0);
  const int cols = static_cast<int>(j.at(0).size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j.at(r).size()) != cols)
      throw std::invalid_argument("ragged matrix in scenario JSON");
    for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

json vector_to_json(const Vec& v) {
  json out = json::array();
  for (int k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

Vec vector_from_json(const json& j) {
  Vec v(static_cast<int>(j.size()));
  for (int k = 0; k < v.size(); ++k) v[k] = j.at(k).get<double>();
  return v;
}

}  // namespace

std::string scenario_to_json(const Scenario& scenario) {
  json root;
  root["dimension"] = scenario.dimension;
  root["seed"] = scenario.seed;
  json agents = json::array();
  for (const AgentSpec& a : scenario.agents) {
    json agent;
    agent["id"] = a.id;
    agent["pose"]["rotation"] = matrix_to_json(a.pose.rotation);
    agent["pose"]["translation"] = vector_to_json(a.pose.translation);
    json sensors = json::array();
    for (const Vec& s : a.sensors.offsets) sensors.push_back(vector_to_json(s));
    agent["sensors"] = std::move(sensors);
    agent["proprio_mode"] = to_string(a.mode);
    agents.push_back(std::move(agent));
  }
  root["agents"] = std::move(agents);
  json edges = json::array();
  for (const TopologyEdge& e : scenario.edges) edges.push_back(json::array({e.i, e.j}));
  root["edges"] = std::move(edges);
  json anchors = json::array();
  for (const AnchorInfo& a : scenario.anchors) {
    json anchor;
    anchor["agent"] = a.agent;
    anchor["claimed"] = matrix_to_json(a.claimed);
    anchor["partners"] = a.partners;
    anchors.push_back(std::move(anchor));
  }
  root["anchors"] = std::move(anchors);
  return root.dump(2);
}

Scenario scenario_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scenario JSON parse error: ") + e.what());
  }
  Scenario scenario;
  try {
    scenario.dimension = root.at("dimension").get<int>();
    scenario.seed = root.at("seed").get<uint64_t>();
    for (const json& ja : root.at("agents")) {
      AgentSpec a;
      a.id = ja.at("id").get<int>();
      a.pose.rotation = matrix_from_json(ja.at("pose").at("rotation"));
      a.pose.translation = vector_from_json(ja.at("pose").at("translation"));
      for (const json& js : ja.at("sensors")) a.sensors.offsets.push_back(vector_from_json(js));
      a.mode = proprio_mode_from_string(ja.at("proprio_mode").get<std::string>());
      scenario.agents.push_back(std::move(a));
    }
    for (const json& je : root.at("edges"))
      scenario.edges.push_back({je.at(0).get<int>(), je.at(1).get<int>()});
    for (const json& jan : root.at("anchors")) {
      AnchorInfo info;
      info.agent = jan.at("agent").get<int>();
      info.claimed = matrix_from_json(jan.at("claimed"));
      info.partners = jan.at("partners").get<std::vector<int>>();
      scenario.anchors.push_back(std::move(info));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed scenario JSON: ") + e.what());
  }
  scenario.validate();
  return scenario;
}

void save_scenario(const Scenario& scenario, const std::string& path) {
  write_text_file(path, scenario_to_json(scenario) + "\n");
}

Scenario load_scenario(const std::string& path) {
  return scenario_from_json(read_text_file(path));
}

void write_measurement_log(const MeasurementGraph& graph, const Scenario& scenario,
                           const std::string& path) {
  const Realization truth = scenario.truth_realization();
  const SensorMap map = scenario.sensor_map();
  std::ostringstream os;
  os << "timestamp,i,u,j,v,d_measured,d_truth\n";
  for (size_t idx = 0; idx < graph.measurements.size(); ++idx) {
    const DistanceMeasurement& m = graph.measurements[idx];
    const double true_dist =
        (truth.col(map.col(m.agent_i, m.sensor_u)) - truth.col(map.col(m.agent_j, m.sensor_v)))
            .norm();
    os << g12(0.1 * static_cast<double>(idx)) << ',' << m.agent_i << ',' << m.sensor_u << ','
       << m.agent_j << ',' << m.sensor_v << ',' << g12(m.distance) << ',' << g12(true_dist)
       << '\n';
  }
  write_text_file(path, os.str());
}

BiasTable calibrate_bias_from_log(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::string line;
  if (!std::getline(is, line) || line.rfind("timestamp,", 0) != 0)
    throw std::invalid_argument("measurement log is missing its header row: " + path);
  std::map<SensorPairKey, std::pair<double, int>> sums;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    double ts = 0.0, measured = 0.0, truth = 0.0;
    int i = 0, u = 0, j = 0, v = 0;
    if (std::sscanf(line.c_str(), "%lf,%d,%d,%d,%d,%lf,%lf", &ts, &i, &u, &j, &v, &measured,
                    &truth) != 7) {
      std::ostringstream os;
      os << "measurement log line " << lineno << " is malformed";
      throw std::invalid_argument(os.str());
    }
    DistanceMeasurement m;
    m.agent_i = i;
    m.sensor_u = u;
    m.agent_j = j;
    m.sensor_v = v;
    auto& cell = sums[SensorPairKey::of(m)];
    cell.first += measured - truth;
    cell.second += 1;
  }
  BiasTable table;
  for (const auto& [key, cell] : sums) table[key] = cell.first / cell.second;
  return table;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace relstate
