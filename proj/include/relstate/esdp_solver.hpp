// Anchored edge-based semidefinite relaxation of the realization problem.
// The Gram matrix of sensor positions is never formed whole; instead each
// measurement edge and each intra-agent calibration pair carries its own
// small positive-semidefinite block, which keeps the per-agent subproblems
// low dimensional. Blocks are optimized by an interior-point pass (log
// barrier with a geometric mu schedule); inside a stage the equalities are
// eliminated, linear rows through a null-space parameterization of the
// positions and calibration targets by substituting the off-diagonal Gram
// entry, so each stage is damped Newton on a smooth convex function. Blocks
// are swept in parallel color classes exactly like the low-rank solver.
//
// Anchors matter here: without any fixed sensor the relaxation admits the
// all-zero realization with a deflated Gram diagonal, so construction
// refuses unanchored problems outright and extraction watches for the
// collapse anyway.
#pragma once

#include "relstate/model.hpp"
#include "relstate/partition.hpp"

#include <optional>
#include <string>
#include <vector>

namespace relstate {

/// A sensor counts as tight when its position error stays below kTightError
/// meters and near-tight below kNearTightError.
inline constexpr double kTightError = 1e-3;
inline constexpr double kNearTightError = 5e-2;

struct EsdpOptions {
  double epsilon = 5e-3;    // relative position change per cycle to stop at
  int max_cycles = 200;
  double mu0 = 1.0;         // first barrier weight (weights are normalized)
  double mu_factor = 0.2;   // geometric decrease per stage
  double mu_min = 1e-8;     // final barrier weight
  double newton_tol = 1e-9; // Newton decrement target per stage, relative
  int max_newton = 400;     // Newton iterations per stage before flagging
  int workers = 1;
  // Nonzero: ignore the coloring and run blocks one at a time in a freshly
  // shuffled order every sweep, with the stated seed. This is the reference
  // mode used to cross-check parallel sweeps against plain cyclic descent.
  uint64_t shuffle_seed = 0;
};

/// One off-diagonal Gram variable X_ab ~ x_a . x_b for a measurement edge
/// between two non-anchored agents. The lower-indexed non-frozen endpoint
/// owns the variable: only that agent's block updates it, the other side
/// reads it live.
struct EsdpCrossVar {
  int col_a = 0;
  int col_b = 0;
  int owner_agent = 0;
};

/// Intra-agent Gram variable for a calibration pair, together with the
/// equality target ||nu_a - nu_b||^2 its diagonal combination must hit.
struct EsdpIntraVar {
  int agent = 0;
  int col_a = 0;
  int col_b = 0;
  double target = 0.0;
};

/// Residual w * (X_aa - 2 X_ab + X_bb - q)^2 for an edge between two free
/// agents; `cross` indexes the shared off-diagonal variable.
struct EsdpEdgeTerm {
  int cross = 0;
  int col_a = 0;
  int col_b = 0;
  double q = 0.0;
  double weight = 1.0;
};

/// Residual w * (X_uu - 2 a.x_u + ||a||^2 - q)^2 for an edge whose other
/// endpoint is an anchored sensor at known coordinates a. The off-diagonal
/// entry against an anchor is not a variable; it is substituted exactly.
struct EsdpAnchorTerm {
  int col = 0;
  Vec anchor;
  double q = 0.0;
  double weight = 1.0;
};

struct EsdpModel {
  const RealizationProblem* problem = nullptr;
  std::vector<EsdpCrossVar> cross;
  std::vector<EsdpIntraVar> intra;
  std::vector<EsdpEdgeTerm> edge_terms;
  std::vector<EsdpAnchorTerm> anchor_terms;
  double constant_term = 0.0;  // residual mass of anchor-to-anchor edges
  double mean_weight = 1.0;    // raw edge weights are divided by this
  int anchor_sensor_count = 0;
  std::vector<std::string> warnings;
};

/// Decision variables: positions plus the retained Gram entries. Diagonal
/// entries of frozen columns are stored too (as the exact squared norm) so
/// evaluation code never branches.
struct EsdpState {
  Realization p;  // d x total, frozen columns pinned to their coordinates
  Vec diag;       // X_cc per global column
  Vec intra;      // per EsdpModel::intra entry
  Vec cross;      // per EsdpModel::cross entry
};

struct EsdpTracePoint {
  int cycle = 0;
  double objective = 0.0;      // reported scale (see esdp_objective)
  double max_violation = 0.0;  // worst constraint breach, 0 when feasible
  double move = 0.0;           // relative position change over the cycle
  double wall_seconds = 0.0;   // cumulative
};

/// Size of one agent's subproblem, mostly for sanity checks and reporting.
struct EsdpBlockStructure {
  int agent = 0;
  int variable_count = 0;  // positions + diagonal + intra + owned cross
  int slack_rows = 0;      // one diagonal surplus bound per own sensor
  int minor_rows = 0;      // one pair bound per incident free-free edge pair
  int cone_blocks = 0;     // one small PSD block per calibration pair
  int equality_rows = 0;   // calibration targets + linear proprio rows
};

struct EsdpSolution {
  EsdpState state;
  std::vector<EsdpTracePoint> trace;
  int cycles = 0;
  bool converged = false;
  double objective = 0.0;
  double parallel_seconds = 0.0;
  double serial_seconds = 0.0;
  int colors = 0;
  // Times a neighbor's diagonal surplus had to be floored while forming a
  // pair bound; grows as the relaxation tightens and is informational.
  long slack_floor_count = 0;
  // Barrier stages whose Newton loop hit max_newton; the block keeps its
  // last strictly feasible iterate when that happens.
  long stage_failures = 0;
  // Set when the extracted positions collapsed toward zero while the
  // objective stayed small, i.e. the anchor information failed to pin the
  // solution and the (1,2) block is uninformative.
  bool trivial_extraction = false;
};

struct TightnessReport {
  double tight_rate = 0.0;
  double near_tight_rate = 0.0;
  std::vector<double> errors;  // per free sensor column, meters
};

/// Builds the relaxation: classifies every measurement edge (free-free,
/// anchored, constant), deduplicates cross variables per sensor pair,
/// copies the calibration pairs, and normalizes weights to unit mean.
/// Throws std::invalid_argument when the problem has no anchored agent,
/// since extraction would then be meaningless; appends a warning when
/// fewer than dimension + 1 anchor sensors exist.
EsdpModel build_esdp_model(const RealizationProblem& problem);

/// Strictly feasible start: positions from p0 (or zero), diagonal lifted by
/// s0 above the squared norm, off-diagonals at their consistent dot
/// products. Calibration equalities and linear rows are generally violated
/// here; solve_esdp opens with a normalization pass that projects the state
/// onto them before the first sweep.
EsdpState init_esdp_state(const EsdpModel& model,
                          const std::optional<Realization>& p0 = std::nullopt,
                          double s0 = 1.0);

/// Full objective on the reported scale (raw weights, constant included).
double esdp_objective(const EsdpModel& model, const EsdpState& state);

/// Sum of the residual terms that touch the given agent, reported scale.
/// Summing over agents double-counts free-free edges, by design; the value
/// matches what the agent's block subproblem minimizes plus the terms'
/// fixed remainder.
double esdp_block_objective(const EsdpModel& model, const EsdpState& state, int agent);

EsdpBlockStructure esdp_block_structure(const EsdpModel& model, int agent);

/// Worst violation over everything the relaxation enforces: negative
/// diagonal surplus, broken pair bounds, indefinite calibration blocks,
/// calibration and linear equality residuals.
double esdp_max_violation(const EsdpModel& model, const EsdpState& state);

/// True when the free positions collapsed to (near) zero while the Gram
/// diagonal still explains the measurements, the failure mode anchors are
/// there to prevent.
bool trivial_realization(const EsdpModel& model, const EsdpState& state);

EsdpSolution solve_esdp(const EsdpModel& model, const EsdpState& init,
                        const EsdpOptions& options = {});

/// The relaxation's position block, straight copy of solution.state.p.
Realization extract_realization(const EsdpSolution& solution);

/// Per-sensor position errors of the free columns against the reference,
/// with the fraction below kTightError and kNearTightError.
TightnessReport tightness_report(const RealizationProblem& problem, const Realization& estimate,
                                 const Realization& truth);

}  // namespace relstate
