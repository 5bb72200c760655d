#include <doctest.h>

#include "relstate/model.hpp"

#include <cmath>

using namespace relstate;

namespace {

Scenario two_agent_scenario(ProprioMode mode, const std::vector<Vec>& offsets, uint64_t seed) {
  Scenario s;
  s.dimension = static_cast<int>(offsets.at(0).size());
  Rng rng(seed);
  for (int i = 0; i < 2; ++i) {
    AgentSpec a;
    a.id = i;
    a.mode = mode;
    a.sensors.offsets = offsets;
    a.pose.rotation = rng.random_rotation(s.dimension);
    a.pose.translation = Vec::Constant(s.dimension, 4.0 * i) + rng.gaussian_vector(s.dimension, 0.5);
    s.agents.push_back(std::move(a));
  }
  s.edges.push_back({0, 1});
  s.validate();
  return s;
}

std::vector<Vec> pair_offsets_3d() {
  Vec a(3), b(3);
  a << 0, 0.35, 0;
  b << 0, -0.35, 0;
  return {a, b};
}

std::vector<Vec> generic_offsets(int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> out;
  for (int i = 0; i < count; ++i) out.push_back(rng.gaussian_vector(3, 0.3));
  return out;
}

int rows_of_kind(const RealizationProblem& p, int agent, RowKind kind) {
  int n = 0;
  for (const LinearRow& row : p.rows)
    if (row.agent == agent && row.kind == kind) ++n;
  return n;
}

int calib_of_agent(const RealizationProblem& p, int agent) {
  int n = 0;
  for (const CalibPair& c : p.calib)
    if (c.agent == agent) ++n;
  return n;
}

}  // namespace

TEST_CASE("objective and gradient vanish at noise-free truth") {
  Scenario s = two_agent_scenario(ProprioMode::FourAxis, pair_offsets_3d(), 21);
  Rng rng(210);
  const MeasurementGraph g = simulate_measurements(s, 0.0, rng);
  const auto readings = simulate_proprioception(s, 0.0, rng);
  const RealizationProblem p = build_problem(s, g, readings);
  const Realization truth = s.truth_realization();
  CHECK(p.objective(truth) < 1e-12);
  // Noise-free weights sit at the variance floor (1e12), so a one-ulp
  // square-versus-sqrt round-trip in a simulated range already shows up as
  // an O(1) gradient entry. Zero here means small against that scale.
  CHECK(p.gradient(truth).norm() < 1e-10 * 4.0e12);
  const ConstraintReport report = p.check_feasibility(truth);
  CHECK(report.max_violation < 1e-12);
  CHECK(report.count == 2 * (1 + 1));  // calib pair and vertical row per agent

  std::vector<Pose> poses;
  for (const AgentSpec& a : s.agents) poses.push_back(a.pose);
  CHECK(pose_objective(p, poses) < 1e-12);
}

TEST_CASE("analytic gradient matches central differences") {
  GeneratorSpec spec;
  spec.shape = ShapeKind::RandomBox;
  spec.count = 5;
  spec.seed = 22;
  const Scenario s = generate_scenario(spec);
  Rng rng(220);
  const MeasurementGraph g = simulate_measurements(s, 0.1, rng);
  const auto readings = simulate_proprioception(s, 0.02, rng);
  const RealizationProblem p = build_problem(s, g, readings);
  Realization X = s.truth_realization();
  for (int c = 0; c < X.cols(); ++c) X.col(c) += rng.gaussian_vector(3, 0.3);
  const Mat grad = p.gradient(X);
  const double h = 1e-6;
  double max_rel = 0.0;
  for (int c = 0; c < X.cols(); ++c)
    for (int k = 0; k < 3; ++k) {
      Realization Xp = X, Xm = X;
      Xp(k, c) += h;
      Xm(k, c) -= h;
      const double fd = (p.objective(Xp) - p.objective(Xm)) / (2.0 * h);
      const double scale = std::max({1.0, std::abs(fd), std::abs(grad(k, c))});
      max_rel = std::max(max_rel, std::abs(fd - grad(k, c)) / scale);
    }
  CHECK(max_rel < 1e-5);
}

TEST_CASE("four-axis constraints reduce to the anchor quad") {
  Scenario s = two_agent_scenario(ProprioMode::FourAxis, generic_offsets(6, 23), 23);
  Rng rng(230);
  const MeasurementGraph g = simulate_measurements(s, 0.0, rng);
  const auto readings = simulate_proprioception(s, 0.01, rng);
  const RealizationProblem p = build_problem(s, g, readings);
  for (int agent = 0; agent < 2; ++agent) {
    // Anchor set is the first four affinely independent offsets; pairs with
    // both endpoints outside it are dropped: C(6,2) - C(2,2) = 14.
    CHECK(calib_of_agent(p, agent) == 14);
    // Vertical separations of four anchors carry three degrees of freedom.
    CHECK(rows_of_kind(p, agent, RowKind::Vertical) == 3);
    // Heading rows pin the planar anchor geometry down to one shared yaw
    // plus translation and scale: 8 planar coordinates minus 4.
    CHECK(rows_of_kind(p, agent, RowKind::Heading) == 4);
  }
}

TEST_CASE("pair layouts keep one calibration link and one vertical row") {
  Scenario s = two_agent_scenario(ProprioMode::FourAxis, pair_offsets_3d(), 24);
  Rng rng(240);
  const MeasurementGraph g = simulate_measurements(s, 0.05, rng);
  const auto readings = simulate_proprioception(s, 0.02, rng);
  const RealizationProblem p = build_problem(s, g, readings);
  for (int agent = 0; agent < 2; ++agent) {
    CHECK(calib_of_agent(p, agent) == 1);
    CHECK(rows_of_kind(p, agent, RowKind::Vertical) == 1);
    CHECK(rows_of_kind(p, agent, RowKind::Heading) == 0);
  }
}

TEST_CASE("six-axis rows collapse to a spanning set") {
  Scenario pairs = two_agent_scenario(ProprioMode::SixAxis, pair_offsets_3d(), 25);
  Rng rng(250);
  const MeasurementGraph g1 = simulate_measurements(pairs, 0.0, rng);
  const auto r1 = simulate_proprioception(pairs, 0.01, rng);
  const RealizationProblem p1 = build_problem(pairs, g1, r1);
  CHECK(calib_of_agent(p1, 0) == 0);
  CHECK(rows_of_kind(p1, 0, RowKind::RigidBody) == 3);

  Scenario five = two_agent_scenario(ProprioMode::SixAxis, generic_offsets(5, 26), 26);
  const MeasurementGraph g2 = simulate_measurements(five, 0.0, rng);
  const auto r2 = simulate_proprioception(five, 0.01, rng);
  const RealizationProblem p2 = build_problem(five, g2, r2);
  // Five sensor positions relative to the first leave 4 * 3 coordinates.
  CHECK(rows_of_kind(p2, 0, RowKind::RigidBody) == 12);
}

TEST_CASE("distance-only agents demand coplanar sensors in 3D") {
  std::vector<Vec> triad = pair_offsets_3d();
  Vec c(3);
  c << 0.35, 0, 0;
  triad.push_back(c);
  Scenario s = two_agent_scenario(ProprioMode::DistanceOnly, triad, 27);
  Rng rng(270);
  const MeasurementGraph g = simulate_measurements(s, 0.0, rng);
  const RealizationProblem p = build_problem(s, g, {});
  CHECK(calib_of_agent(p, 0) == 3);
  CHECK(rows_of_kind(p, 0, RowKind::Vertical) + rows_of_kind(p, 0, RowKind::Heading) == 0);

  // Five coplanar sensors: anchor triple crossed with the rest, 9 pairs.
  std::vector<Vec> planar = triad;
  Vec d1(3), d2(3);
  d1 << -0.2, 0.1, 0;
  d2 << 0.15, 0.22, 0;
  planar.push_back(d1);
  planar.push_back(d2);
  Scenario s5 = two_agent_scenario(ProprioMode::DistanceOnly, planar, 28);
  const MeasurementGraph g5 = simulate_measurements(s5, 0.0, rng);
  CHECK(calib_of_agent(build_problem(s5, g5, {}), 0) == 9);

  std::vector<Vec> skew = triad;
  Vec e(3);
  e << 0.1, 0.1, 0.3;
  skew.push_back(e);
  Scenario bad = two_agent_scenario(ProprioMode::DistanceOnly, skew, 29);
  const MeasurementGraph gb = simulate_measurements(bad, 0.0, rng);
  CHECK_THROWS_AS(build_problem(bad, gb, {}), std::invalid_argument);
}

TEST_CASE("rows hold exactly on any realization rigid under the readings") {
  Scenario s = two_agent_scenario(ProprioMode::FourAxis, generic_offsets(6, 30), 30);
  Rng rng(300);
  const MeasurementGraph g = simulate_measurements(s, 0.05, rng);
  const auto readings = simulate_proprioception(s, 0.05, rng);  // deliberately noisy
  const RealizationProblem p = build_problem(s, g, readings);
  const SensorMap map = s.sensor_map();
  // Embed each agent with its observed roll and pitch, an arbitrary yaw,
  // and an arbitrary translation; every constraint must vanish.
  Realization X(3, map.total);
  for (int i = 0; i < 2; ++i) {
    const Mat R = rotation_from_rpy(readings[i].roll, readings[i].pitch, rng.uniform(0, 6.28));
    const Vec t = rng.gaussian_vector(3, 5.0);
    for (int u = 0; u < s.agents[i].sensors.count(); ++u)
      X.col(map.col(i, u)) = R * s.agents[i].sensors.offsets[u] + t;
  }
  CHECK(p.check_feasibility(X).max_violation < 1e-11);

  // The true realization violates them because the readings are noisy.
  CHECK(p.check_feasibility(s.truth_realization()).max_violation > 1e-4);
}

TEST_CASE("anchored agents contribute no constraints and no gradient") {
  GeneratorSpec spec;
  spec.side_count = 2;
  spec.seed = 31;
  Scenario s = generate_scenario(spec);
  Rng rng(310);
  (void)designate_anchors(s, {0}, 0, 3, 0.1, rng);
  const MeasurementGraph g = simulate_measurements(s, 0.05, rng);
  const auto readings = simulate_proprioception(s, 0.01, rng);
  const RealizationProblem p = build_problem(s, g, readings);
  CHECK(calib_of_agent(p, 0) == 0);
  CHECK(rows_of_kind(p, 0, RowKind::Vertical) == 0);
  CHECK(p.agent_frozen[0] == 1);
  CHECK(p.frozen[p.map.col(0, 0)] == 1);
  CHECK(p.frozen[p.map.col(1, 0)] == 0);
  Realization X = s.truth_realization();
  X.col(0) += Vec::Constant(3, 0.5);  // would move a frozen column
  const Mat grad = p.gradient(X);
  CHECK(grad.col(p.map.col(0, 0)).norm() == 0.0);
  CHECK(grad.col(p.map.col(0, 1)).norm() == 0.0);
}

TEST_CASE("every constraint references exactly one agent") {
  GeneratorSpec spec;
  spec.side_count = 2;
  spec.seed = 32;
  const Scenario s = generate_scenario(spec);
  Rng rng(320);
  const MeasurementGraph g = simulate_measurements(s, 0.05, rng);
  const auto readings = simulate_proprioception(s, 0.02, rng);
  const RealizationProblem p = build_problem(s, g, readings);
  for (const CalibPair& c : p.calib) {
    CHECK(p.map.agent_of(c.col_a) == c.agent);
    CHECK(p.map.agent_of(c.col_b) == c.agent);
  }
  for (const LinearRow& row : p.rows)
    for (const LinearEntry& e : row.entries) CHECK(p.map.agent_of(e.col) == row.agent);
}

TEST_CASE("malformed inputs are rejected") {
  Scenario s = two_agent_scenario(ProprioMode::FourAxis, pair_offsets_3d(), 33);
  Rng rng(330);
  MeasurementGraph g = simulate_measurements(s, 0.0, rng);
  const auto readings = simulate_proprioception(s, 0.0, rng);
  CHECK_THROWS_AS(build_problem(s, g, {}), std::invalid_argument);

  MeasurementGraph self = g;
  self.measurements[0].agent_j = self.measurements[0].agent_i;
  CHECK_THROWS_AS(build_problem(s, self, readings), std::invalid_argument);

  MeasurementGraph oob = g;
  oob.measurements[0].sensor_v = 9;
  CHECK_THROWS_AS(build_problem(s, oob, readings), std::invalid_argument);

  auto wrong_mode = readings;
  wrong_mode[1].mode = ProprioMode::SixAxis;
  CHECK_THROWS_AS(build_problem(s, g, wrong_mode), std::invalid_argument);
}
