// Weighted squared-range realization problem over sensor positions: the
// shared objective both solvers attack, plus the per-agent rigidity
// constraints implied by each proprioception mode and their reduction to an
// independent subset.
#pragma once

#include "relstate/scenario.hpp"

namespace relstate {

/// One weighted residual w * (||x_a - x_b||^2 - q)^2 between two global
/// sensor columns.
struct EdgeTerm {
  int col_a = 0;
  int col_b = 0;
  int agent_a = 0;
  int agent_b = 0;
  double q = 0.0;
  double weight = 1.0;
};

/// Intra-agent rigid link: ||x_a - x_b||^2 must equal the squared
/// body-frame sensor distance.
struct CalibPair {
  int agent = 0;
  int col_a = 0;
  int col_b = 0;
  double target = 0.0;
};

enum class RowKind {
  Vertical,   // observed roll/pitch pins vertical sensor separations
  Heading,    // yaw consistency across a sensor triple
  RigidBody,  // fully observed rotation pins whole sensor separations
};

struct LinearEntry {
  int col = 0;    // global sensor column
  int coord = 0;  // coordinate within the column
  double coeff = 0.0;
};

/// Sparse linear equality sum(coeff * X(coord, col)) = rhs over the columns
/// of a single agent.
struct LinearRow {
  int agent = 0;
  RowKind kind = RowKind::Vertical;
  std::vector<LinearEntry> entries;
  double rhs = 0.0;

  double evaluate(const Realization& X) const;
};

struct ConstraintReport {
  int count = 0;
  double max_violation = 0.0;
  double mean_violation = 0.0;
  std::vector<double> calib_residuals;
  std::vector<double> row_residuals;
};

struct RealizationProblem {
  int dimension = 3;
  SensorMap map;
  std::vector<ProprioMode> modes;      // per agent
  std::vector<SensorLayout> layouts;   // per agent
  std::vector<char> agent_frozen;      // per agent, anchored agents
  std::vector<char> frozen;            // per global column
  Mat fixed;                           // d x total, valid where frozen
  std::vector<EdgeTerm> edges;
  std::vector<CalibPair> calib;        // grouped by agent, ascending
  std::vector<LinearRow> rows;         // grouped by agent, ascending

  int total() const { return map.total; }
  int agent_count() const { return static_cast<int>(modes.size()); }

  double objective(const Realization& X) const;

  /// Objective gradient with respect to the realization; frozen columns are
  /// zeroed since they are not decision variables.
  Mat gradient(const Realization& X) const;

  ConstraintReport check_feasibility(const Realization& X) const;
};

/// Assembles the realization problem: one edge term per range measurement
/// (weight 1 / sigma_q^2) and per-agent constraints for every non-anchored
/// agent. Reduction runs automatically. Agents whose mode consumes attitude
/// observations need a matching proprio entry.
RealizationProblem build_problem(const Scenario& scenario, const MeasurementGraph& graph,
                                 const std::vector<ProprioReading>& proprio);

/// Prunes each agent's linear rows to a maximal independent subset via a
/// rank-revealing QR at relative threshold 1e-10 (pivot order decides which
/// of two dependent rows survives). Idempotent; build_problem already calls
/// it.
void reduce_constraints(RealizationProblem& problem);

/// Places sensors rigidly from the given poses (one per agent).
Realization realization_from_poses(const std::vector<Pose>& poses,
                                   const std::vector<SensorLayout>& layouts);

/// The original pose-space objective, evaluated by embedding the poses and
/// scoring the realization objective. Serves as the ground-truth oracle the
/// lifted solvers are compared against.
double pose_objective(const RealizationProblem& problem, const std::vector<Pose>& poses);

}  // namespace relstate
