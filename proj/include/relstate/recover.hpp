// Pose recovery from solved sensor realizations, the closed-form rigid
// registration it relies on, and the relative accuracy metrics reported by
// the benchmark harness. Everything here is a pure function.
#pragma once

#include "relstate/model.hpp"

namespace relstate {

/// Thrown when a recovery step is geometrically impossible, for example a
/// vertical sensor baseline or a collinear registration input.
struct RecoveryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RecoveryMethod {
  YawFormula,       // tilt-derotated planar baseline gave the yaw
  Registration,     // closed-form point registration gave the full pose
  ProprioRotation,  // rotation read directly from full attitude sensing
  Underdetermined,  // not enough geometry; pose is a best-effort fill
};

const char* to_string(RecoveryMethod method);

struct PoseEstimateSet {
  std::vector<Pose> poses;
  std::vector<RecoveryMethod> methods;
};

/// Yaw of a rigid body from one sensor pair's world coordinates, given the
/// observed roll and pitch. Three-dimensional only. Throws RecoveryError
/// when the derotated baseline has no horizontal component (yaw drops out
/// of the equations).
double recover_yaw(const Vec& p_u, const Vec& p_v, const Vec& nu_u, const Vec& nu_v,
                   double roll, double pitch);

/// Closed-form least-squares rigid registration mapping body points onto
/// world points (the correlation-matrix / SVD construction). The returned
/// rotation is always proper, also for reflective inputs. Needs three
/// non-collinear points in 3D or two distinct points in 2D; degenerate
/// inputs throw RecoveryError.
Pose horn_registration(const std::vector<Vec>& body_points,
                       const std::vector<Vec>& world_points);

/// Per-agent pose recovery from a realization. Tilt-pair agents with two or
/// more sensors use the yaw formula and average the per-sensor translation;
/// full-attitude agents take the observed rotation; ranging-only agents
/// with enough spread register their layout; everything else is tagged
/// Underdetermined with a best-effort pose.
PoseEstimateSet recover_states(const RealizationProblem& problem, const Realization& p,
                               const std::vector<ProprioReading>& proprio);

/// Root-mean-square error of relative translations expressed in the body
/// frame of each endpoint: both orientations of every edge contribute one
/// term. Invariant under a global rigid transform of the estimates.
double rmse_body(const PoseEstimateSet& estimates, const std::vector<Pose>& truth,
                 const std::vector<TopologyEdge>& edges);

/// Root-mean-square distance between estimated and true positions of the
/// free sensor columns, in the shared world frame.
double rmse_common_frame(const RealizationProblem& problem, const Realization& estimate,
                         const Realization& truth);

/// Body-frame RMSE of one agent pair divided by the pair's true distance; a
/// scale-free drift indicator. Throws on coincident true positions.
double eta_metric(const PoseEstimateSet& estimates, const std::vector<Pose>& truth,
                  const TopologyEdge& pair);

}  // namespace relstate
