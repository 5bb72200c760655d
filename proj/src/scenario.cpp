#include "relstate/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace relstate {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kAttitudeBound = 0.3;  // roll/pitch half-range, radians

std::vector<Vec> cube_positions(int side, double spacing) {
  if (side < 1) throw std::invalid_argument("cube side_count must be positive");
  std::vector<Vec> out;
  out.reserve(static_cast<size_t>(side) * side * side);
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        Vec t(3);
        t << spacing * x, spacing * y, spacing * z;
        out.push_back(t);
      }
  return out;
}

// Close-packed tetrahedral stack: every nearest-neighbor pair sits exactly
// one pitch apart, layer c holds a triangular array of (levels - c) rows.
std::vector<Vec> pyramid_positions(int levels, double spacing) {
  if (levels < 1) throw std::invalid_argument("pyramid levels must be positive");
  const double s3 = std::sqrt(3.0);
  Vec u(3), v(3), w(3);
  u << 1.0, 0.0, 0.0;
  v << 0.5, s3 / 2.0, 0.0;
  w << 0.5, s3 / 6.0, std::sqrt(2.0 / 3.0);
  std::vector<Vec> out;
  for (int c = 0; c < levels; ++c)
    for (int b = 0; b + c < levels; ++b)
      for (int a = 0; a + b + c < levels; ++a)
        out.push_back(spacing * (a * u + b * v + c * w));
  return out;
}

std::vector<Vec> hexagon_positions(int rings, double spacing) {
  if (rings < 0) throw std::invalid_argument("hexagon rings must be nonnegative");
  std::vector<Vec> out;
  for (int q = -rings; q <= rings; ++q) {
    const int lo = std::max(-rings, -q - rings);
    const int hi = std::min(rings, -q + rings);
    for (int r = lo; r <= hi; ++r) {
      Vec t(2);
      t << spacing * (q + 0.5 * r), spacing * (std::sqrt(3.0) / 2.0) * r;
      out.push_back(t);
    }
  }
  return out;
}

std::vector<Vec> random_box_positions(int count, const Vec& extents, int dim, Rng& rng) {
  if (count < 2) throw std::invalid_argument("random layout needs at least 2 agents");
  Vec e = extents;
  if (e.size() == 0) e = Vec::Constant(dim, 10.0);
  if (e.size() != dim) throw std::invalid_argument("extents size does not match dimension");
  std::vector<Vec> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Vec t(dim);
    for (int k = 0; k < dim; ++k) t[k] = rng.uniform(0.0, e[k]);
    out.push_back(t);
  }
  return out;
}

using AdjacencySets = std::vector<std::set<int>>;

void add_edge(AdjacencySets& adj, int i, int j) {
  adj[i].insert(j);
  adj[j].insert(i);
}

// Pairs within sqrt(3) * spacing (with a hair of slack so exact lattice
// distances are kept), then nearest-neighbor links until every agent has at
// least min_degree. Fill candidates are ordered by distance then index.
AdjacencySets lattice_adjacency(const std::vector<Vec>& pos, double spacing, int min_degree) {
  const int n = static_cast<int>(pos.size());
  const double radius = std::sqrt(3.0) * spacing * (1.0 + 1e-9);
  AdjacencySets adj(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((pos[i] - pos[j]).norm() <= radius) add_edge(adj, i, j);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(adj[i].size()) >= min_degree) continue;
    std::vector<std::pair<double, int>> ranked;
    for (int j = 0; j < n; ++j)
      if (j != i && adj[i].count(j) == 0) ranked.push_back({(pos[i] - pos[j]).norm(), j});
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [dist, j] : ranked) {
      if (static_cast<int>(adj[i].size()) >= min_degree) break;
      add_edge(adj, i, j);
    }
  }
  return adj;
}

AdjacencySets knn_adjacency(const std::vector<Vec>& pos, int k) {
  const int n = static_cast<int>(pos.size());
  AdjacencySets adj(n);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> ranked;
    for (int j = 0; j < n; ++j)
      if (j != i) ranked.push_back({(pos[i] - pos[j]).norm(), j});
    std::sort(ranked.begin(), ranked.end());
    const int take = std::min(k, n - 1);
    for (int m = 0; m < take; ++m) add_edge(adj, i, ranked[m].second);
  }
  return adj;
}

bool connected(const AdjacencySets& adj) {
  const int n = static_cast<int>(adj.size());
  if (n == 0) return true;
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int found = 1;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int j : adj[i])
      if (!seen[j]) {
        seen[j] = 1;
        ++found;
        stack.push_back(j);
      }
  }
  return found == n;
}

std::vector<TopologyEdge> edges_from_adjacency(const AdjacencySets& adj) {
  std::vector<TopologyEdge> edges;
  for (int i = 0; i < static_cast<int>(adj.size()); ++i)
    for (int j : adj[i])
      if (i < j) edges.push_back({i, j});
  return edges;
}

// Farthest-point sampling over true positions: start from the point
// farthest from the centroid, then repeatedly take the point maximizing the
// minimum distance to the picked set. Ties resolve to the lower index.
std::vector<int> farthest_point_ids(const std::vector<Vec>& pos, int count) {
  const int n = static_cast<int>(pos.size());
  if (count < 1 || count > n)
    throw std::invalid_argument("anchor count must be in [1, agent_count]");
  Vec centroid = Vec::Zero(pos[0].size());
  for (const Vec& p : pos) centroid += p;
  centroid /= n;
  std::vector<int> picked;
  std::vector<double> min_dist(n);
  for (int i = 0; i < n; ++i) min_dist[i] = (pos[i] - centroid).norm();
  while (static_cast<int>(picked.size()) < count) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      if (best < 0 || min_dist[i] > min_dist[best] + 1e-15) best = i;
    }
    picked.push_back(best);
    for (int i = 0; i < n; ++i)
      min_dist[i] = std::min(min_dist[i], (pos[i] - pos[best]).norm());
  }
  return picked;
}

}  // namespace

SensorPairKey SensorPairKey::of(const DistanceMeasurement& m) {
  if (std::tie(m.agent_i, m.sensor_u) <= std::tie(m.agent_j, m.sensor_v))
    return {m.agent_i, m.sensor_u, m.agent_j, m.sensor_v};
  return {m.agent_j, m.sensor_v, m.agent_i, m.sensor_u};
}

SensorMap Scenario::sensor_map() const { return SensorMap::build(layouts()); }

std::vector<SensorLayout> Scenario::layouts() const {
  std::vector<SensorLayout> out;
  out.reserve(agents.size());
  for (const AgentSpec& a : agents) out.push_back(a.sensors);
  return out;
}

bool Scenario::is_anchored(int agent) const { return anchor_for(agent) != nullptr; }

const AnchorInfo* Scenario::anchor_for(int agent) const {
  for (const AnchorInfo& a : anchors)
    if (a.agent == agent) return &a;
  return nullptr;
}

Realization Scenario::truth_realization() const {
  const SensorMap map = sensor_map();
  Realization X(dimension, map.total);
  for (int i = 0; i < agent_count(); ++i)
    for (int u = 0; u < agents[i].sensors.count(); ++u)
      X.col(map.col(i, u)) = transform_point(agents[i].pose, agents[i].sensors.offsets[u]);
  return X;
}

void Scenario::validate() const {
  if (dimension != 2 && dimension != 3)
    throw std::invalid_argument("scenario dimension must be 2 or 3");
  for (int i = 0; i < agent_count(); ++i) {
    const AgentSpec& a = agents[i];
    if (a.id != i) throw std::invalid_argument("agent ids must be 0..n-1 in order");
    if (a.pose.dim() != dimension) throw std::invalid_argument("agent pose dimension mismatch");
    a.pose.validate();
    if (a.sensors.count() == 0) throw std::invalid_argument("agent has no sensors");
    if (a.sensors.dim() != dimension)
      throw std::invalid_argument("sensor offset dimension mismatch");
    if (a.mode == ProprioMode::FourAxis && dimension == 2)
      throw std::invalid_argument("four-axis proprioception is undefined in 2D");
  }
  std::set<std::pair<int, int>> seen;
  for (const TopologyEdge& e : edges) {
    if (e.i < 0 || e.j >= agent_count() || e.i >= e.j)
      throw std::invalid_argument("topology edge endpoints must satisfy 0 <= i < j < n");
    if (!seen.insert({e.i, e.j}).second)
      throw std::invalid_argument("duplicate topology edge");
  }
  std::set<int> anchor_ids;
  for (const AnchorInfo& a : anchors) {
    if (a.agent < 0 || a.agent >= agent_count())
      throw std::invalid_argument("anchor references unknown agent");
    if (!anchor_ids.insert(a.agent).second)
      throw std::invalid_argument("agent anchored twice");
    if (a.claimed.rows() != dimension ||
        a.claimed.cols() != agents[a.agent].sensors.count())
      throw std::invalid_argument("anchor claimed coordinates have wrong shape");
    for (int p : a.partners)
      if (p < 0 || p >= agent_count() || anchor_ids.count(p))
        throw std::invalid_argument("anchor partner must be a non-anchor agent");
  }
}

std::string to_string(ShapeKind shape) {
  switch (shape) {
    case ShapeKind::Cube: return "cube";
    case ShapeKind::Pyramid: return "pyramid";
    case ShapeKind::Hexagon: return "hexagon";
    case ShapeKind::RandomBox: return "random-box";
  }
  throw std::invalid_argument("unknown shape");
}

ShapeKind shape_from_string(const std::string& name) {
  if (name == "cube") return ShapeKind::Cube;
  if (name == "pyramid") return ShapeKind::Pyramid;
  if (name == "hexagon") return ShapeKind::Hexagon;
  if (name == "random-box") return ShapeKind::RandomBox;
  throw std::invalid_argument("unknown shape name: " + name);
}

SensorLayout default_sensor_layout(ProprioMode mode, int dimension, double offset) {
  SensorLayout layout;
  if (dimension == 2) {
    Vec a(2), b(2);
    a << 0.0, offset;
    b << 0.0, -offset;
    layout.offsets = {a, b};
    return layout;
  }
  Vec a(3), b(3);
  a << 0.0, offset, 0.0;
  b << 0.0, -offset, 0.0;
  layout.offsets = {a, b};
  if (mode == ProprioMode::DistanceOnly) {
    // A third sensor off the pair axis; without attitude observations two
    // sensors leave the agent frame spinning freely about that axis.
    Vec c(3);
    c << offset, 0.0, 0.0;
    layout.offsets.push_back(c);
  }
  return layout;
}

Scenario generate_scenario(const GeneratorSpec& spec) {
  const int dim = spec.shape == ShapeKind::Hexagon ? 2 : 3;
  if (spec.spacing <= 0.0) throw std::invalid_argument("spacing must be positive");
  if (spec.sensor_offset <= 0.0) throw std::invalid_argument("sensor_offset must be positive");
  if (spec.mode == ProprioMode::FourAxis && dim == 2)
    throw std::invalid_argument("four-axis proprioception is undefined in 2D");

  Rng rng(spec.seed);
  std::vector<Vec> pos;
  switch (spec.shape) {
    case ShapeKind::Cube: pos = cube_positions(spec.side_count, spec.spacing); break;
    case ShapeKind::Pyramid: pos = pyramid_positions(spec.levels, spec.spacing); break;
    case ShapeKind::Hexagon: pos = hexagon_positions(spec.rings, spec.spacing); break;
    case ShapeKind::RandomBox:
      pos = random_box_positions(spec.count, spec.extents, dim, rng);
      break;
  }
  if (pos.size() < 2) throw GenerationError("scenario needs at least 2 agents");

  int degree = spec.neighbor_count;
  if (degree <= 0) {
    if (spec.shape == ShapeKind::Hexagon) degree = 5;
    else if (spec.shape == ShapeKind::RandomBox) degree = dim + 1;
    else degree = 9;
  }
  AdjacencySets adj = spec.shape == ShapeKind::RandomBox
                          ? knn_adjacency(pos, degree)
                          : lattice_adjacency(pos, spec.spacing, degree);
  if (!connected(adj))
    throw GenerationError("generated measurement topology is disconnected");

  Scenario scenario;
  scenario.dimension = dim;
  scenario.seed = spec.seed;
  scenario.edges = edges_from_adjacency(adj);
  const SensorLayout layout = default_sensor_layout(spec.mode, dim, spec.sensor_offset);
  for (int i = 0; i < static_cast<int>(pos.size()); ++i) {
    AgentSpec agent;
    agent.id = i;
    agent.mode = spec.mode;
    agent.sensors = layout;
    agent.pose.translation = pos[i];
    if (dim == 2) {
      agent.pose.rotation = rotation2(rng.uniform(0.0, kTwoPi));
    } else {
      const double yaw = rng.uniform(0.0, kTwoPi);
      const double roll = rng.uniform(-kAttitudeBound, kAttitudeBound);
      const double pitch = rng.uniform(-kAttitudeBound, kAttitudeBound);
      agent.pose.rotation = rotation_from_rpy(roll, pitch, yaw);
    }
    scenario.agents.push_back(std::move(agent));
  }
  scenario.validate();
  return scenario;
}

MeasurementGraph simulate_measurements(const Scenario& scenario, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be nonnegative");
  const Realization truth = scenario.truth_realization();
  const SensorMap map = scenario.sensor_map();
  MeasurementGraph graph;
  graph.sigma = sigma;

  auto add_pairs = [&](int i, int j) {
    const int lo = std::min(i, j), hi = std::max(i, j);
    for (int u = 0; u < map.count[lo]; ++u)
      for (int v = 0; v < map.count[hi]; ++v) {
        const double true_dist = (truth.col(map.col(lo, u)) - truth.col(map.col(hi, v))).norm();
        double measured = true_dist + (sigma > 0.0 ? rng.normal(sigma) : 0.0);
        measured = std::max(measured, 1e-9);
        const SurrogateMeasurement s = surrogate_with_floor(measured, sigma);
        graph.measurements.push_back({lo, u, hi, v, measured, s.q, s.sigma_q});
      }
  };

  for (const TopologyEdge& e : scenario.edges) add_pairs(e.i, e.j);
  for (const AnchorInfo& anchor : scenario.anchors)
    for (int partner : anchor.partners) add_pairs(anchor.agent, partner);
  return graph;
}

std::vector<ProprioReading> simulate_proprioception(const Scenario& scenario,
                                                    double angle_error_bound, Rng& rng) {
  if (angle_error_bound < 0.0) throw std::invalid_argument("angle error bound must be >= 0");
  std::vector<ProprioReading> readings;
  readings.reserve(scenario.agents.size());
  for (const AgentSpec& agent : scenario.agents) {
    ProprioReading r;
    r.mode = agent.mode;
    if (agent.mode == ProprioMode::DistanceOnly) {
      readings.push_back(r);
      continue;
    }
    const double b = angle_error_bound;
    if (scenario.dimension == 2) {
      const double angle = angle_from_rotation2(agent.pose.rotation) + rng.uniform(-b, b);
      r.rotation = rotation2(angle);
      readings.push_back(r);
      continue;
    }
    const RollPitchYaw rpy = rpy_from_rotation(agent.pose.rotation);
    r.roll = rpy.roll + rng.uniform(-b, b);
    r.pitch = rpy.pitch + rng.uniform(-b, b);
    if (agent.mode == ProprioMode::FourAxis) {
      r.rotation = rotation_from_rpy(r.roll, r.pitch, 0.0);
    } else {
      const double yaw = rpy.yaw + rng.uniform(-b, b);
      r.rotation = rotation_from_rpy(r.roll, r.pitch, yaw);
    }
    readings.push_back(r);
  }
  return readings;
}

Realization sample_initial_guess(const Scenario& scenario,
                                 const std::vector<ProprioReading>& proprio,
                                 double translation_radius, Rng& rng) {
  if (static_cast<int>(proprio.size()) != scenario.agent_count())
    throw std::invalid_argument("proprioception readings do not cover all agents");
  const int dim = scenario.dimension;
  const SensorMap map = scenario.sensor_map();
  Realization X(dim, map.total);
  for (int i = 0; i < scenario.agent_count(); ++i) {
    const AgentSpec& agent = scenario.agents[i];
    if (const AnchorInfo* anchor = scenario.anchor_for(i)) {
      for (int u = 0; u < agent.sensors.count(); ++u)
        X.col(map.col(i, u)) = anchor->claimed.col(u);
      continue;
    }
    const Vec t = agent.pose.translation + rng.in_ball(dim, translation_radius);
    Mat R;
    switch (proprio[i].mode) {
      case ProprioMode::DistanceOnly:
        R = rng.random_rotation(dim);
        break;
      case ProprioMode::FourAxis:
        R = rotation_from_rpy(proprio[i].roll, proprio[i].pitch, rng.uniform(0.0, kTwoPi));
        break;
      case ProprioMode::SixAxis:
        R = proprio[i].rotation;
        break;
    }
    for (int u = 0; u < agent.sensors.count(); ++u)
      X.col(map.col(i, u)) = R * agent.sensors.offsets[u] + t;
  }
  return X;
}

std::vector<std::string> designate_anchors(Scenario& scenario, std::vector<int> ids,
                                           int count, int partner_count,
                                           double anchor_noise, Rng& rng) {
  if (anchor_noise < 0.0) throw std::invalid_argument("anchor noise must be nonnegative");
  if (!scenario.anchors.empty())
    throw std::invalid_argument("scenario already has anchors");
  if (ids.empty()) {
    std::vector<Vec> pos;
    pos.reserve(scenario.agents.size());
    for (const AgentSpec& a : scenario.agents) pos.push_back(a.pose.translation);
    ids = farthest_point_ids(pos, count);
  }
  std::set<int> unique_ids(ids.begin(), ids.end());
  if (unique_ids.size() != ids.size()) throw std::invalid_argument("duplicate anchor id");
  for (int id : ids)
    if (id < 0 || id >= scenario.agent_count())
      throw std::invalid_argument("anchor id out of range");
  if (static_cast<int>(ids.size()) >= scenario.agent_count())
    throw std::invalid_argument("at least one agent must remain free");

  std::vector<int> free_agents;
  for (int i = 0; i < scenario.agent_count(); ++i)
    if (unique_ids.count(i) == 0) free_agents.push_back(i);

  std::vector<std::string> warnings;
  const int dim = scenario.dimension;
  const int partners = std::min<int>(partner_count, static_cast<int>(free_agents.size()));
  if (partners < partner_count) {
    std::ostringstream os;
    os << "anchor partner count clamped to " << partners << " free agents";
    warnings.push_back(os.str());
  }
  for (int id : ids) {
    const AgentSpec& agent = scenario.agents[id];
    AnchorInfo info;
    info.agent = id;
    info.claimed.resize(dim, agent.sensors.count());
    for (int u = 0; u < agent.sensors.count(); ++u) {
      Vec p = transform_point(agent.pose, agent.sensors.offsets[u]);
      for (int k = 0; k < dim; ++k) p[k] += anchor_noise > 0.0 ? rng.normal(anchor_noise) : 0.0;
      info.claimed.col(u) = p;
    }
    for (int pick : rng.sample_without_replacement(static_cast<int>(free_agents.size()), partners))
      info.partners.push_back(free_agents[pick]);
    std::sort(info.partners.begin(), info.partners.end());
    if (agent.sensors.count() < dim + 1) {
      std::ostringstream os;
      os << "anchor agent " << id << " has " << agent.sensors.count()
         << " sensors; " << dim + 1 << " are needed to fix the global frame alone";
      warnings.push_back(os.str());
    }
    scenario.anchors.push_back(std::move(info));
  }
  return warnings;
}

BiasTable calibrate_bias(const MeasurementGraph& graph, const Scenario& scenario) {
  const Realization truth = scenario.truth_realization();
  const SensorMap map = scenario.sensor_map();
  std::map<SensorPairKey, std::pair<double, int>> sums;
  for (const DistanceMeasurement& m : graph.measurements) {
    const double true_dist =
        (truth.col(map.col(m.agent_i, m.sensor_u)) - truth.col(map.col(m.agent_j, m.sensor_v)))
            .norm();
    auto& cell = sums[SensorPairKey::of(m)];
    cell.first += m.distance - true_dist;
    cell.second += 1;
  }
  BiasTable table;
  for (const auto& [key, cell] : sums) table[key] = cell.first / cell.second;
  return table;
}

BiasCorrectionResult apply_bias_correction(const MeasurementGraph& graph,
                                           const BiasTable& table) {
  BiasCorrectionResult result;
  result.corrected.sigma = graph.sigma;
  result.corrected.measurements.reserve(graph.measurements.size());
  for (int idx = 0; idx < static_cast<int>(graph.measurements.size()); ++idx) {
    DistanceMeasurement m = graph.measurements[idx];
    const auto it = table.find(SensorPairKey::of(m));
    if (it == table.end()) {
      ++result.missing_pair_count;
      result.missing_indices.push_back(idx);
    } else {
      m.distance = std::max(m.distance - it->second, 1e-9);
      const SurrogateMeasurement s = surrogate_with_floor(m.distance, graph.sigma);
      m.q = s.q;
      m.sigma_q = s.sigma_q;
    }
    result.corrected.measurements.push_back(m);
  }
  return result;
}

}  // namespace relstate
