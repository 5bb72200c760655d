// Low-rank factorized block coordinate descent on the realization problem.
// The squared-range objective is written over a pair of rank-r factors
// (U, V) whose column products reproduce squared distances; rigidity shows
// up as weighted penalties for the calibration links plus hard linear rows
// on the top d coordinates, and a coupling penalty pulls the factors back
// together. Per-agent factor blocks admit a closed-form equality-
// constrained update or an extrapolated projected-gradient step.
#pragma once

#include "relstate/model.hpp"
#include "relstate/partition.hpp"
#include "relstate/rng.hpp"

namespace relstate {

enum class BmUpdate { Exact, ProxLinear };

struct BmOptions {
  int rank = 0;  // lifted rows; 0 means the problem dimension
  BmUpdate update = BmUpdate::Exact;
  double epsilon = 5e-4;  // relative realization movement per cycle
  int max_cycles = 500;
  double delta = 0.99;  // extrapolation damping for prox-linear steps
  int workers = 1;
  double lambda = -1.0;  // calibration penalty; negative picks the mean range weight
  double gamma = -1.0;   // factor coupling penalty; negative picks the mean range weight
  // Records the full objective after every single block update and forces
  // serial execution so the sequence is meaningful.
  bool audit_objective = false;
};

struct BmTracePoint {
  int cycle = 0;
  double objective = 0.0;
  double balance = 0.0;  // ||U - V||_F
  double move = 0.0;     // relative change of the realization over the cycle
};

struct BmState {
  Mat U;  // rank x total sensors
  Mat V;
};

struct BmSolution {
  BmState state;
  Realization p;  // dimension x total sensors, top rows of the left factor
  std::vector<BmTracePoint> trace;
  std::vector<double> audit_objectives;  // filled under audit_objective
  int cycles = 0;
  bool converged = false;
  double objective = 0.0;
  double parallel_seconds = 0.0;
  double serial_seconds = 0.0;
  int fallback_count = 0;  // block solves that needed the min-norm path
  int colors = 0;
};

/// Pads a realization with extra rows to the requested rank. Extra rows are
/// zero or uniform jitter in [-jitter, jitter] (rng required when jitter is
/// positive). Frozen columns always come out as the claimed coordinates
/// with exact zero padding.
Mat lift_init(const RealizationProblem& problem, const Realization& p, int rank,
              double jitter = 0.0, Rng* rng = nullptr);

double bm_mean_edge_weight(const RealizationProblem& problem);

/// Full factorized objective at the given penalties.
double bm_objective(const RealizationProblem& problem, const Mat& U, const Mat& V,
                    double lambda, double gamma);

/// Norm of the objective gradient over all free factor blocks, each
/// projected onto the null space of its agent's linear rows. Zero at any
/// constrained stationary point.
double bm_projected_gradient_norm(const RealizationProblem& problem, const BmState& state,
                                  const BmOptions& options);

BmSolution solve_bm(const RealizationProblem& problem, const BmState& init,
                    const BmOptions& options);

/// Rank-d polish of an existing realization: lifts it with no padding and
/// runs the factorized descent at the problem dimension.
BmSolution refine_realization(const RealizationProblem& problem, const Realization& p,
                              BmOptions options);

}  // namespace relstate
