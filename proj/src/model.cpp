#include "relstate/model.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>

namespace relstate {

namespace {

constexpr double kAffineTol = 1e-6;    // anchor-set independence test
constexpr double kRowRankTol = 1e-10;  // relative QR threshold for row pruning
constexpr double kPlanarTol = 1e-12;   // derotated baseline xy mass cutoff

// Greedy affinely independent subset in index order: sensor 0, then every
// sensor whose offset leaves the affine span of the picks so far.
std::vector<int> affine_anchor_set(const std::vector<Vec>& offsets) {
  std::vector<int> picks{0};
  const int d = static_cast<int>(offsets[0].size());
  Mat basis(d, 0);
  for (int u = 1; u < static_cast<int>(offsets.size()) && basis.cols() < d; ++u) {
    Vec r = offsets[u] - offsets[picks[0]];
    r -= basis * (basis.transpose() * r);
    if (r.norm() > kAffineTol) {
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = r.normalized();
      picks.push_back(u);
    }
  }
  return picks;
}

struct RowAccumulator {
  std::map<std::pair<int, int>, double> coeffs;  // (column, coordinate)
  void add(int col, int coord, double c) { coeffs[{col, coord}] += c; }
  LinearRow finish(int agent, RowKind kind, double rhs) const {
    LinearRow row;
    row.agent = agent;
    row.kind = kind;
    row.rhs = rhs;
    for (const auto& [key, c] : coeffs)
      if (std::abs(c) > 1e-15) row.entries.push_back({key.first, key.second, c});
    return row;
  }
};

void add_calib_pairs(RealizationProblem& problem, int agent, const std::vector<int>& anchor_set) {
  const SensorLayout& layout = problem.layouts[agent];
  const int count = layout.count();
  std::vector<char> in_set(count, 0);
  for (int a : anchor_set) in_set[a] = 1;
  for (int u = 0; u < count; ++u) {
    if (!in_set[u]) continue;
    for (int v = u + 1; v < count; ++v) {
      CalibPair pair;
      pair.agent = agent;
      pair.col_a = problem.map.col(agent, u);
      pair.col_b = problem.map.col(agent, v);
      pair.target = (layout.offsets[u] - layout.offsets[v]).squaredNorm();
      problem.calib.push_back(pair);
    }
  }
}

void add_vertical_rows(RealizationProblem& problem, int agent, const std::vector<int>& among,
                       const Mat& derotation) {
  const SensorLayout& layout = problem.layouts[agent];
  for (size_t a = 0; a < among.size(); ++a)
    for (size_t b = a + 1; b < among.size(); ++b) {
      const int u = among[a], v = among[b];
      RowAccumulator acc;
      acc.add(problem.map.col(agent, u), 2, 1.0);
      acc.add(problem.map.col(agent, v), 2, -1.0);
      const double rhs = derotation.row(2).dot(layout.offsets[u] - layout.offsets[v]);
      problem.rows.push_back(acc.finish(agent, RowKind::Vertical, rhs));
    }
}

// Yaw-consistency rows for a sensor triple: with derotated baselines
// (a, b, .) per pair, a common heading makes (a dy - b dx) / (a^2 + b^2)
// and (a dx + b dy) / (a^2 + b^2) equal across pairs. Cross-multiplying
// removes the denominators and leaves two rows linear in the positions.
void add_heading_rows(RealizationProblem& problem, int agent, const std::vector<int>& among,
                      const Mat& derotation) {
  const SensorLayout& layout = problem.layouts[agent];
  auto planar = [&](int u, int v) {
    const Vec delta = derotation * (layout.offsets[u] - layout.offsets[v]);
    return std::pair<double, double>{delta[0], delta[1]};
  };
  for (size_t ia = 0; ia < among.size(); ++ia)
    for (size_t ib = ia + 1; ib < among.size(); ++ib)
      for (size_t ic = ib + 1; ic < among.size(); ++ic) {
        const int u = among[ia], v = among[ib], w = among[ic];
        const auto [auv, buv] = planar(u, v);
        const auto [avw, bvw] = planar(v, w);
        const double nuv = auv * auv + buv * buv;
        const double nvw = avw * avw + bvw * bvw;
        if (nuv < kPlanarTol || nvw < kPlanarTol) continue;
        const int cu = problem.map.col(agent, u);
        const int cv = problem.map.col(agent, v);
        const int cw = problem.map.col(agent, w);
        RowAccumulator sine;  // (a dy - b dx) balance
        sine.add(cu, 1, auv * nvw);
        sine.add(cv, 1, -auv * nvw);
        sine.add(cu, 0, -buv * nvw);
        sine.add(cv, 0, buv * nvw);
        sine.add(cv, 1, -avw * nuv);
        sine.add(cw, 1, avw * nuv);
        sine.add(cv, 0, bvw * nuv);
        sine.add(cw, 0, -bvw * nuv);
        problem.rows.push_back(sine.finish(agent, RowKind::Heading, 0.0));
        RowAccumulator cosine;  // (a dx + b dy) balance
        cosine.add(cu, 0, auv * nvw);
        cosine.add(cv, 0, -auv * nvw);
        cosine.add(cu, 1, buv * nvw);
        cosine.add(cv, 1, -buv * nvw);
        cosine.add(cv, 0, -avw * nuv);
        cosine.add(cw, 0, avw * nuv);
        cosine.add(cv, 1, -bvw * nuv);
        cosine.add(cw, 1, bvw * nuv);
        problem.rows.push_back(cosine.finish(agent, RowKind::Heading, 0.0));
      }
}

void add_rigid_body_rows(RealizationProblem& problem, int agent, const std::vector<int>& lead,
                         const Mat& rotation) {
  const SensorLayout& layout = problem.layouts[agent];
  const int count = layout.count();
  const int d = problem.dimension;
  std::vector<char> in_set(count, 0);
  for (int a : lead) in_set[a] = 1;
  for (int u = 0; u < count; ++u) {
    if (!in_set[u]) continue;
    for (int v = u + 1; v < count; ++v) {
      const Vec rhs = rotation * (layout.offsets[u] - layout.offsets[v]);
      for (int k = 0; k < d; ++k) {
        RowAccumulator acc;
        acc.add(problem.map.col(agent, u), k, 1.0);
        acc.add(problem.map.col(agent, v), k, -1.0);
        problem.rows.push_back(acc.finish(agent, RowKind::RigidBody, rhs[k]));
      }
    }
  }
}

std::vector<int> all_indices(int count) {
  std::vector<int> out(count);
  for (int i = 0; i < count; ++i) out[i] = i;
  return out;
}

void add_agent_constraints(RealizationProblem& problem, int agent,
                           const ProprioReading* reading) {
  const SensorLayout& layout = problem.layouts[agent];
  const int count = layout.count();
  if (count < 2) return;
  const std::vector<int> independent = affine_anchor_set(layout.offsets);

  switch (problem.modes[agent]) {
    case ProprioMode::DistanceOnly: {
      if (problem.dimension == 3 && static_cast<int>(independent.size()) > 3)
        throw std::invalid_argument(
            "distance-only agents in 3D need coplanar sensors; agent " +
            std::to_string(agent) + " spans all of space");
      add_calib_pairs(problem, agent, count >= 4 ? independent : all_indices(count));
      return;
    }
    case ProprioMode::FourAxis: {
      if (reading == nullptr)
        throw std::invalid_argument("four-axis agent lacks a proprioception reading");
      const std::vector<int> lead = count >= 5 ? independent : all_indices(count);
      add_calib_pairs(problem, agent, lead);
      const Mat derotation = rotation_from_rpy(reading->roll, reading->pitch, 0.0);
      add_vertical_rows(problem, agent, lead, derotation);
      add_heading_rows(problem, agent, lead, derotation);
      return;
    }
    case ProprioMode::SixAxis: {
      if (reading == nullptr)
        throw std::invalid_argument("six-axis agent lacks a proprioception reading");
      std::vector<int> lead = all_indices(count);
      if (count >= 5) lead.resize(4);
      add_rigid_body_rows(problem, agent, lead, reading->rotation);
      return;
    }
  }
}

}  // namespace

double LinearRow::evaluate(const Realization& X) const {
  double lhs = 0.0;
  for (const LinearEntry& e : entries) lhs += e.coeff * X(e.coord, e.col);
  return lhs - rhs;
}

double RealizationProblem::objective(const Realization& X) const {
  double value = 0.0;
  for (const EdgeTerm& e : edges) {
    const double r = (X.col(e.col_a) - X.col(e.col_b)).squaredNorm() - e.q;
    value += e.weight * r * r;
  }
  return value;
}

Mat RealizationProblem::gradient(const Realization& X) const {
  Mat g = Mat::Zero(dimension, total());
  for (const EdgeTerm& e : edges) {
    const Vec diff = X.col(e.col_a) - X.col(e.col_b);
    const double r = diff.squaredNorm() - e.q;
    g.col(e.col_a) += 4.0 * e.weight * r * diff;
    g.col(e.col_b) -= 4.0 * e.weight * r * diff;
  }
  for (int c = 0; c < total(); ++c)
    if (frozen[c]) g.col(c).setZero();
  return g;
}

ConstraintReport RealizationProblem::check_feasibility(const Realization& X) const {
  ConstraintReport report;
  double sum = 0.0;
  for (const CalibPair& pair : calib) {
    const double r = (X.col(pair.col_a) - X.col(pair.col_b)).squaredNorm() - pair.target;
    report.calib_residuals.push_back(r);
    report.max_violation = std::max(report.max_violation, std::abs(r));
    sum += std::abs(r);
  }
  for (const LinearRow& row : rows) {
    const double r = row.evaluate(X);
    report.row_residuals.push_back(r);
    report.max_violation = std::max(report.max_violation, std::abs(r));
    sum += std::abs(r);
  }
  report.count = static_cast<int>(calib.size() + rows.size());
  report.mean_violation = report.count == 0 ? 0.0 : sum / report.count;
  return report;
}

RealizationProblem build_problem(const Scenario& scenario, const MeasurementGraph& graph,
                                 const std::vector<ProprioReading>& proprio) {
  scenario.validate();
  bool needs_proprio = false;
  for (const AgentSpec& a : scenario.agents)
    if (a.mode != ProprioMode::DistanceOnly) needs_proprio = true;
  if (needs_proprio && static_cast<int>(proprio.size()) != scenario.agent_count())
    throw std::invalid_argument("proprioception readings do not cover all agents");
  if (!proprio.empty() && static_cast<int>(proprio.size()) != scenario.agent_count())
    throw std::invalid_argument("proprioception readings do not cover all agents");

  RealizationProblem problem;
  problem.dimension = scenario.dimension;
  problem.layouts = scenario.layouts();
  problem.map = SensorMap::build(problem.layouts);
  problem.modes.reserve(scenario.agents.size());
  for (const AgentSpec& a : scenario.agents) problem.modes.push_back(a.mode);

  problem.agent_frozen.assign(scenario.agent_count(), 0);
  problem.frozen.assign(problem.total(), 0);
  problem.fixed = Mat::Zero(problem.dimension, problem.total());
  for (const AnchorInfo& anchor : scenario.anchors) {
    problem.agent_frozen[anchor.agent] = 1;
    for (int u = 0; u < problem.layouts[anchor.agent].count(); ++u) {
      const int col = problem.map.col(anchor.agent, u);
      problem.frozen[col] = 1;
      problem.fixed.col(col) = anchor.claimed.col(u);
    }
  }

  problem.edges.reserve(graph.measurements.size());
  for (const DistanceMeasurement& m : graph.measurements) {
    if (m.agent_i == m.agent_j)
      throw std::invalid_argument("range measurement within a single agent");
    if (m.agent_i < 0 || m.agent_j < 0 || m.agent_i >= scenario.agent_count() ||
        m.agent_j >= scenario.agent_count())
      throw std::invalid_argument("range measurement references unknown agent");
    if (m.sensor_u < 0 || m.sensor_u >= problem.layouts[m.agent_i].count() ||
        m.sensor_v < 0 || m.sensor_v >= problem.layouts[m.agent_j].count())
      throw std::invalid_argument("range measurement references unknown sensor");
    EdgeTerm term;
    term.col_a = problem.map.col(m.agent_i, m.sensor_u);
    term.col_b = problem.map.col(m.agent_j, m.sensor_v);
    term.agent_a = m.agent_i;
    term.agent_b = m.agent_j;
    term.q = m.q;
    term.weight = m.weight();
    problem.edges.push_back(term);
  }

  for (int i = 0; i < scenario.agent_count(); ++i) {
    if (problem.agent_frozen[i]) continue;  // frozen columns carry no constraints
    const ProprioReading* reading = proprio.empty() ? nullptr : &proprio[i];
    if (reading != nullptr && reading->mode != problem.modes[i])
      throw std::invalid_argument("proprioception mode does not match the agent");
    add_agent_constraints(problem, i, reading);
  }
  reduce_constraints(problem);
  return problem;
}

void reduce_constraints(RealizationProblem& problem) {
  std::vector<LinearRow> kept;
  kept.reserve(problem.rows.size());
  for (int agent = 0; agent < problem.agent_count(); ++agent) {
    std::vector<int> indices;
    for (int r = 0; r < static_cast<int>(problem.rows.size()); ++r)
      if (problem.rows[r].agent == agent) indices.push_back(r);
    if (indices.empty()) continue;
    const int sensors = problem.layouts[agent].count();
    const int vars = sensors * problem.dimension;
    const int base = problem.map.first[agent];
    Mat rows_mat(static_cast<int>(indices.size()), vars);
    rows_mat.setZero();
    for (int k = 0; k < static_cast<int>(indices.size()); ++k)
      for (const LinearEntry& e : problem.rows[indices[k]].entries)
        rows_mat(k, (e.col - base) * problem.dimension + e.coord) = e.coeff;
    Eigen::ColPivHouseholderQR<Mat> qr(rows_mat.transpose());
    qr.setThreshold(kRowRankTol);
    const int rank = static_cast<int>(qr.rank());
    std::vector<int> chosen(qr.colsPermutation().indices().data(),
                            qr.colsPermutation().indices().data() + rank);
    std::sort(chosen.begin(), chosen.end());
    for (int c : chosen) kept.push_back(problem.rows[indices[c]]);
  }
  problem.rows = std::move(kept);
}

Realization realization_from_poses(const std::vector<Pose>& poses,
                                   const std::vector<SensorLayout>& layouts) {
  if (poses.size() != layouts.size())
    throw std::invalid_argument("pose count does not match layout count");
  const SensorMap map = SensorMap::build(layouts);
  if (map.total == 0) return Realization(0, 0);
  const int d = poses[0].dim();
  Realization X(d, map.total);
  for (size_t i = 0; i < poses.size(); ++i)
    for (int u = 0; u < layouts[i].count(); ++u)
      X.col(map.col(static_cast<int>(i), u)) = transform_point(poses[i], layouts[i].offsets[u]);
  return X;
}

double pose_objective(const RealizationProblem& problem, const std::vector<Pose>& poses) {
  return problem.objective(realization_from_poses(poses, problem.layouts));
}

}  // namespace relstate
