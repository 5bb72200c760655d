#include "relstate/recover.hpp"

#include "doctest.h"

#include <cmath>

using namespace relstate;

namespace {

Vec v3(double x, double y, double z) {
  Vec v(3);
  v << x, y, z;
  return v;
}

Vec v2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

double angle_gap(double a, double b) { return std::abs(std::remainder(a - b, 2.0 * M_PI)); }

// Scenario with hand-chosen layouts, one topology edge per consecutive
// agent pair, and truth poses drawn from the rng.
Scenario handmade_scenario(int dimension, ProprioMode mode,
                           const std::vector<std::vector<Vec>>& layouts, Rng& rng) {
  Scenario s;
  s.dimension = dimension;
  s.seed = 7;
  for (int i = 0; i < static_cast<int>(layouts.size()); ++i) {
    AgentSpec agent;
    agent.id = i;
    agent.mode = mode;
    agent.pose = Pose(rng.random_rotation(dimension),
                      rng.gaussian_vector(dimension, 4.0) + Vec::Constant(dimension, 3.0 * i));
    for (const Vec& nu : layouts[i]) agent.sensors.offsets.push_back(nu);
    s.agents.push_back(agent);
  }
  for (int i = 0; i + 1 < s.agent_count(); ++i) s.edges.push_back({i, i + 1});
  s.validate();
  return s;
}

std::vector<ProprioReading> exact_readings(const Scenario& scenario) {
  std::vector<ProprioReading> readings;
  for (const AgentSpec& agent : scenario.agents) {
    ProprioReading r;
    r.mode = agent.mode;
    if (agent.mode == ProprioMode::FourAxis) {
      const RollPitchYaw rpy = rpy_from_rotation(agent.pose.rotation);
      r.roll = rpy.roll;
      r.pitch = rpy.pitch;
    } else if (agent.mode == ProprioMode::SixAxis) {
      r.rotation = agent.pose.rotation;
    }
    readings.push_back(r);
  }
  return readings;
}

std::vector<Pose> truth_poses(const Scenario& scenario) {
  std::vector<Pose> poses;
  for (const AgentSpec& agent : scenario.agents) poses.push_back(agent.pose);
  return poses;
}

double pose_gap(const Pose& a, const Pose& b) {
  return (a.rotation - b.rotation).norm() + (a.translation - b.translation).norm();
}

}  // namespace

TEST_CASE("yaw from a single derotated baseline") {
  // Body baseline along +y seen along -x in the world: a quarter turn.
  CHECK(recover_yaw(v3(-0.7, 0, 0), v3(0, 0, 0), v3(0, 0.7, 0), v3(0, 0, 0), 0.0, 0.0) ==
        doctest::Approx(M_PI / 2).epsilon(1e-12));
  // World baseline equals the body baseline: no yaw.
  CHECK(std::abs(recover_yaw(v3(0, 0.7, 0), v3(0, 0, 0), v3(0, 0.7, 0), v3(0, 0, 0), 0.0, 0.0)) <
        1e-12);

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double roll = rng.uniform(-0.4, 0.4);
    const double pitch = rng.uniform(-0.4, 0.4);
    const double yaw = rng.uniform(-M_PI, M_PI);
    const Pose pose(rotation_from_rpy(roll, pitch, yaw), rng.gaussian_vector(3, 2.0));
    const Vec nu_u = rng.gaussian_vector(3, 0.5);
    const Vec nu_v = rng.gaussian_vector(3, 0.5);
    const Mat tilt = rotation_from_rpy(roll, pitch, 0.0);
    const Vec m = tilt * (nu_u - nu_v);
    if (m.head(2).squaredNorm() <= 1e-6) continue;
    const double recovered = recover_yaw(transform_point(pose, nu_u), transform_point(pose, nu_v),
                                         nu_u, nu_v, roll, pitch);
    CHECK(angle_gap(recovered, yaw) < 1e-9);
  }

  // A baseline that derotates to the vertical axis leaves yaw free.
  CHECK_THROWS_AS(recover_yaw(v3(0, 0, 1), v3(0, 0, 0), v3(0, 0, 1), v3(0, 0, 0), 0.0, 0.0),
                  RecoveryError);
  CHECK_THROWS_AS(
      recover_yaw(v3(0, 0, -1), v3(0, 0, 0), v3(1, 0, 0), v3(0, 0, 0), 0.0, M_PI / 2),
      RecoveryError);
  CHECK_THROWS_AS(recover_yaw(v2(1, 0), v2(0, 0), v2(1, 0), v2(0, 0), 0.0, 0.0),
                  std::invalid_argument);
}

TEST_CASE("closed-form registration") {
  std::vector<Vec> square = {v3(0, 0, 0), v3(1, 0, 0), v3(0, 1, 0), v3(0, 0, 1)};

  Pose same = horn_registration(square, square);
  CHECK((same.rotation - Mat::Identity(3, 3)).norm() < 1e-12);
  CHECK(same.translation.norm() < 1e-12);

  std::vector<Vec> shifted;
  for (const Vec& p : square) shifted.push_back(p + v3(1, 2, 3));
  Pose shift = horn_registration(square, shifted);
  CHECK((shift.rotation - Mat::Identity(3, 3)).norm() < 1e-12);
  CHECK((shift.translation - v3(1, 2, 3)).norm() < 1e-12);

  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Pose pose(rng.random_rotation(3), rng.gaussian_vector(3, 5.0));
    std::vector<Vec> world;
    for (const Vec& p : square) world.push_back(transform_point(pose, p));
    const Pose recovered = horn_registration(square, world);
    CHECK(pose_gap(recovered, pose) < 1e-9);
  }

  // Mirrored targets cannot be reached by a rotation; the answer must stay
  // proper anyway.
  std::vector<Vec> mirrored;
  for (const Vec& p : square) mirrored.push_back(v3(-p.x(), p.y(), p.z()));
  const Pose proper = horn_registration(square, mirrored);
  CHECK(proper.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));

  // Two-dimensional case: two distinct points fix the transform.
  for (int trial = 0; trial < 50; ++trial) {
    const Pose pose(rng.random_rotation(2), rng.gaussian_vector(2, 5.0));
    std::vector<Vec> body = {v2(0.3, 0), v2(-0.4, 0.2)};
    std::vector<Vec> world = {transform_point(pose, body[0]), transform_point(pose, body[1])};
    CHECK(pose_gap(horn_registration(body, world), pose) < 1e-9);
  }

  std::vector<Vec> line = {v3(0, 0, 0), v3(1, 1, 1), v3(2, 2, 2), v3(3, 3, 3)};
  CHECK_THROWS_AS(horn_registration(line, line), RecoveryError);
  std::vector<Vec> pair3 = {v3(0, 0, 0), v3(1, 0, 0)};
  CHECK_THROWS_AS(horn_registration(pair3, pair3), RecoveryError);
  std::vector<Vec> same2 = {v2(0.5, 0.5), v2(0.5, 0.5)};
  CHECK_THROWS_AS(horn_registration(same2, same2), RecoveryError);
  // A collinear body layout is degenerate even against spread-out targets;
  // collinear targets with a spread-out body still have a unique fit.
  CHECK_THROWS_AS(horn_registration(line, square), RecoveryError);
  CHECK_NOTHROW(horn_registration(square, line));
  CHECK_THROWS_AS(horn_registration({}, {}), std::invalid_argument);
  std::vector<Vec> fewer = {v3(0, 0, 0), v3(1, 0, 0), v3(0, 1, 0)};
  CHECK_THROWS_AS(horn_registration(square, fewer), std::invalid_argument);
}

TEST_CASE("state recovery round trip per proprioception mode") {
  Rng rng(21);
  const std::vector<Vec> tilt_pair = {v3(0, 0.35, 0), v3(0, -0.35, 0)};
  const std::vector<Vec> triad = {v3(0, 0.35, 0), v3(0, -0.35, 0), v3(0.35, 0, 0)};

  for (int trial = 0; trial < 30; ++trial) {
    // Mixed modes in one problem: two tilt-pair agents, one full-attitude
    // agent, one ranging-only agent.
    Scenario s = handmade_scenario(3, ProprioMode::FourAxis,
                                   {tilt_pair, tilt_pair, triad, triad}, rng);
    s.agents[2].mode = ProprioMode::SixAxis;
    s.agents[3].mode = ProprioMode::DistanceOnly;
    const auto readings = exact_readings(s);
    Rng mrng(100 + trial);
    const MeasurementGraph graph = simulate_measurements(s, 0.0, mrng);
    const RealizationProblem problem = build_problem(s, graph, readings);
    const Realization truth = s.truth_realization();

    const PoseEstimateSet est = recover_states(problem, truth, readings);
    CHECK(est.methods[0] == RecoveryMethod::YawFormula);
    CHECK(est.methods[1] == RecoveryMethod::YawFormula);
    CHECK(est.methods[2] == RecoveryMethod::ProprioRotation);
    CHECK(est.methods[3] == RecoveryMethod::Registration);
    const auto truths = truth_poses(s);
    for (int i = 0; i < s.agent_count(); ++i) {
      CAPTURE(i);
      CHECK(pose_gap(est.poses[i], truths[i]) < 1e-9);
      est.poses[i].validate();
    }

    // Rebuilding sensor coordinates from the recovered poses reproduces
    // the input realization.
    const Realization rebuilt = realization_from_poses(est.poses, s.layouts());
    CHECK((rebuilt - truth).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("recovery in two dimensions") {
  Rng rng(31);
  const std::vector<Vec> duo = {v2(0, 0.35), v2(0, -0.35)};
  Scenario s = handmade_scenario(2, ProprioMode::DistanceOnly, {duo, duo, duo}, rng);
  s.agents[1].mode = ProprioMode::SixAxis;
  const auto readings = exact_readings(s);
  Rng mrng(32);
  const MeasurementGraph graph = simulate_measurements(s, 0.0, mrng);
  const RealizationProblem problem = build_problem(s, graph, readings);
  const Realization truth = s.truth_realization();
  const PoseEstimateSet est = recover_states(problem, truth, readings);
  CHECK(est.methods[0] == RecoveryMethod::Registration);
  CHECK(est.methods[1] == RecoveryMethod::ProprioRotation);
  CHECK(est.methods[2] == RecoveryMethod::Registration);
  const auto truths = truth_poses(s);
  for (int i = 0; i < s.agent_count(); ++i) CHECK(pose_gap(est.poses[i], truths[i]) < 1e-9);
  const Realization rebuilt = realization_from_poses(est.poses, s.layouts());
  CHECK((rebuilt - truth).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("underdetermined agents are tagged, not failed") {
  Rng rng(41);
  // Ranging-only with two sensors: infinitely many rotations explain the
  // coordinates. Tilt-pair with a vertical baseline: yaw drops out.
  const std::vector<Vec> duo = {v3(0.3, 0, 0), v3(-0.3, 0, 0)};
  const std::vector<Vec> vertical = {v3(0, 0, 0.35), v3(0, 0, -0.35)};
  Scenario s = handmade_scenario(3, ProprioMode::DistanceOnly, {duo, duo, vertical}, rng);
  s.agents[2].mode = ProprioMode::FourAxis;
  // Zero roll and pitch keep the baseline vertical after derotation.
  s.agents[2].pose.rotation = rotation_from_rpy(0.0, 0.0, rng.uniform(0.0, 2.0 * M_PI));
  const auto readings = exact_readings(s);
  Rng mrng(42);
  const MeasurementGraph graph = simulate_measurements(s, 0.0, mrng);
  const RealizationProblem problem = build_problem(s, graph, readings);
  const PoseEstimateSet est = recover_states(problem, s.truth_realization(), readings);
  CHECK(est.methods[0] == RecoveryMethod::Underdetermined);
  CHECK(est.methods[1] == RecoveryMethod::Underdetermined);
  CHECK(est.methods[2] == RecoveryMethod::Underdetermined);
  // Best-effort poses are still proper rigid transforms.
  for (const Pose& pose : est.poses) pose.validate();
}

TEST_CASE("generated lattice round trip with the solver's problem") {
  GeneratorSpec spec;
  spec.shape = ShapeKind::Cube;
  spec.side_count = 3;
  spec.mode = ProprioMode::FourAxis;
  spec.seed = 77;
  Scenario s = generate_scenario(spec);
  Rng rng(78);
  const MeasurementGraph graph = simulate_measurements(s, 0.0, rng);
  const auto readings = simulate_proprioception(s, 0.0, rng);
  const RealizationProblem problem = build_problem(s, graph, readings);
  const Realization truth = s.truth_realization();
  const PoseEstimateSet est = recover_states(problem, truth, readings);
  const auto truths = truth_poses(s);
  for (int i = 0; i < s.agent_count(); ++i) {
    CHECK(est.methods[i] == RecoveryMethod::YawFormula);
    CHECK(pose_gap(est.poses[i], truths[i]) < 1e-9);
  }
  CHECK(rmse_body(est, truths, s.edges) < 1e-9);
  CHECK(rmse_common_frame(problem, truth, truth) == 0.0);
}

TEST_CASE("relative translation error metric") {
  // Two agents one meter apart; the second estimate is off by e.
  std::vector<Pose> truth = {Pose::identity(3), Pose(Mat::Identity(3, 3), v3(1, 0, 0))};
  PoseEstimateSet est;
  est.poses = truth;
  est.methods = {RecoveryMethod::YawFormula, RecoveryMethod::YawFormula};
  std::vector<TopologyEdge> edges = {{0, 1}};
  CHECK(rmse_body(est, truth, edges) == 0.0);

  const Vec e = v3(0.3, -0.4, 0.12);
  est.poses[1].translation += e;
  CHECK(rmse_body(est, truth, edges) == doctest::Approx(e.norm()).epsilon(1e-12));

  // Gauge invariance: moving every estimate by one global rigid transform
  // leaves the metric unchanged.
  Rng rng(55);
  std::vector<Pose> wild_truth, wild_est;
  for (int i = 0; i < 6; ++i) {
    wild_truth.push_back(Pose(rng.random_rotation(3), rng.gaussian_vector(3, 3.0)));
    wild_est.push_back(Pose(rng.random_rotation(3), rng.gaussian_vector(3, 3.0)));
  }
  std::vector<TopologyEdge> wild_edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}};
  PoseEstimateSet wild;
  wild.poses = wild_est;
  wild.methods.assign(6, RecoveryMethod::Registration);
  const double before = rmse_body(wild, wild_truth, wild_edges);
  const Mat g_rot = rng.random_rotation(3);
  const Vec g_t = rng.gaussian_vector(3, 10.0);
  PoseEstimateSet moved = wild;
  for (Pose& pose : moved.poses) {
    pose.translation = g_rot * pose.translation + g_t;
    pose.rotation = g_rot * pose.rotation;
  }
  CHECK(rmse_body(moved, wild_truth, wild_edges) == doctest::Approx(before).epsilon(1e-9));

  CHECK_THROWS_AS(rmse_body(wild, wild_truth, {}), std::invalid_argument);
  CHECK_THROWS_AS(rmse_body(wild, wild_truth, {{0, 9}}), std::invalid_argument);
}

TEST_CASE("drift ratio") {
  std::vector<Pose> truth = {Pose::identity(3), Pose(Mat::Identity(3, 3), v3(2, 0, 0))};
  PoseEstimateSet est;
  est.poses = truth;
  est.methods = {RecoveryMethod::YawFormula, RecoveryMethod::YawFormula};
  CHECK(eta_metric(est, truth, {0, 1}) == 0.0);

  est.poses[1].translation += v3(0.1, 0, 0);
  CHECK(eta_metric(est, truth, {0, 1}) == doctest::Approx(0.05).epsilon(1e-12));

  std::vector<Pose> stacked = {Pose::identity(3), Pose::identity(3)};
  PoseEstimateSet est2;
  est2.poses = stacked;
  est2.methods = est.methods;
  CHECK_THROWS_AS(eta_metric(est2, stacked, {0, 1}), std::invalid_argument);
}

TEST_CASE("world-frame realization error skips pinned columns") {
  GeneratorSpec spec;
  spec.shape = ShapeKind::Cube;
  spec.side_count = 2;
  spec.mode = ProprioMode::FourAxis;
  spec.seed = 91;
  Scenario s = generate_scenario(spec);
  Rng rng(92);
  designate_anchors(s, {0}, 1, 3, 0.0, rng);
  const MeasurementGraph graph = simulate_measurements(s, 0.0, rng);
  const auto readings = simulate_proprioception(s, 0.0, rng);
  const RealizationProblem problem = build_problem(s, graph, readings);
  const Realization truth = s.truth_realization();
  CHECK(rmse_common_frame(problem, truth, truth) == 0.0);

  Realization off = truth;
  const int free_col = problem.map.first[1];
  off.col(free_col) += v3(0.3, 0, 0.4);
  const int free_total = problem.total() - problem.map.count[0];
  CHECK(rmse_common_frame(problem, off, truth) ==
        doctest::Approx(0.5 / std::sqrt(static_cast<double>(free_total))).epsilon(1e-12));

  // Perturbing a pinned anchor column changes nothing.
  Realization off_anchor = truth;
  off_anchor.col(0) += v3(9, 9, 9);
  CHECK(rmse_common_frame(problem, off_anchor, truth) == 0.0);

  Realization narrow = truth.leftCols(problem.total() - 1);
  CHECK_THROWS_AS(rmse_common_frame(problem, narrow, truth), std::invalid_argument);
}

TEST_CASE("recovery method names") {
  CHECK(std::string(to_string(RecoveryMethod::YawFormula)) == "yaw-formula");
  CHECK(std::string(to_string(RecoveryMethod::Registration)) == "registration");
  CHECK(std::string(to_string(RecoveryMethod::ProprioRotation)) == "proprio-rotation");
  CHECK(std::string(to_string(RecoveryMethod::Underdetermined)) == "underdetermined");
}
