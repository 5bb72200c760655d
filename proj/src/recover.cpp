#include "relstate/recover.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace relstate {

namespace {

constexpr double kBaselineTol = 1e-9;  // squared horizontal baseline floor
constexpr double kSpreadTol = 1e-9;    // singular value floor for registration

// Mean of p_u - R nu_u over the agent's sensors; exact when the realization
// is rigid, a noise average otherwise.
Vec mean_translation(const Realization& p, int base, const SensorLayout& layout, const Mat& R) {
  Vec t = Vec::Zero(R.rows());
  if (layout.count() == 0) return t;
  for (int u = 0; u < layout.count(); ++u) t += p.col(base + u) - R * layout.offsets[u];
  return t / layout.count();
}

}  // namespace

const char* to_string(RecoveryMethod method) {
  switch (method) {
    case RecoveryMethod::YawFormula: return "yaw-formula";
    case RecoveryMethod::Registration: return "registration";
    case RecoveryMethod::ProprioRotation: return "proprio-rotation";
    case RecoveryMethod::Underdetermined: return "underdetermined";
  }
  throw std::invalid_argument("unknown recovery method");
}

double recover_yaw(const Vec& p_u, const Vec& p_v, const Vec& nu_u, const Vec& nu_v,
                   double roll, double pitch) {
  if (p_u.size() != 3 || p_v.size() != 3 || nu_u.size() != 3 || nu_v.size() != 3)
    throw std::invalid_argument("yaw recovery is defined for 3-dimensional states");
  const Mat tilt = rotation_from_rpy(roll, pitch, 0.0);
  const Vec m = tilt * (nu_u - nu_v);
  const double n = m.x() * m.x() + m.y() * m.y();
  if (n <= kBaselineTol)
    throw RecoveryError("sensor baseline is vertical after derotation; yaw is unobservable");
  const double dx = p_u.x() - p_v.x();
  const double dy = p_u.y() - p_v.y();
  const double sin_psi = (m.x() * dy - m.y() * dx) / n;
  const double cos_psi = (m.x() * dx + m.y() * dy) / n;
  return std::atan2(sin_psi, cos_psi);
}

Pose horn_registration(const std::vector<Vec>& body_points,
                       const std::vector<Vec>& world_points) {
  if (body_points.empty() || body_points.size() != world_points.size())
    throw std::invalid_argument("registration needs two point sets of equal nonzero size");
  const int d = static_cast<int>(body_points[0].size());
  if (d != 2 && d != 3) throw std::invalid_argument("registration supports 2 or 3 dimensions");
  const int n = static_cast<int>(body_points.size());
  for (int k = 0; k < n; ++k)
    if (body_points[k].size() != d || world_points[k].size() != d)
      throw std::invalid_argument("registration points have mixed dimensions");
  if (n < (d == 2 ? 2 : 3)) throw RecoveryError("too few points to pin down a rigid transform");

  Mat body(d, n), world(d, n);
  for (int k = 0; k < n; ++k) {
    body.col(k) = body_points[k];
    world.col(k) = world_points[k];
  }
  const Vec body_mean = body.rowwise().mean();
  const Vec world_mean = world.rowwise().mean();
  body.colwise() -= body_mean;
  world.colwise() -= world_mean;

  // The body spread must span a plane (3D) or a direction (2D), otherwise
  // the rotation is not unique.
  Eigen::JacobiSVD<Mat> spread(body);
  if (spread.singularValues()(d == 2 ? 0 : 1) <= kSpreadTol)
    throw RecoveryError("registration points are degenerate (collinear or coincident)");

  const Mat correlation = world * body.transpose();
  Eigen::JacobiSVD<Mat> svd(correlation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec reflect = Vec::Ones(d);
  reflect(d - 1) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat R = svd.matrixU() * reflect.asDiagonal() * svd.matrixV().transpose();
  return Pose(R, world_mean - R * body_mean);
}

PoseEstimateSet recover_states(const RealizationProblem& problem, const Realization& p,
                               const std::vector<ProprioReading>& proprio) {
  const int d = problem.dimension;
  if (p.rows() != d || p.cols() != problem.total())
    throw std::invalid_argument("realization shape does not match the problem");
  bool needs_proprio = false;
  for (ProprioMode mode : problem.modes)
    if (mode != ProprioMode::DistanceOnly) needs_proprio = true;
  if (needs_proprio && static_cast<int>(proprio.size()) != problem.agent_count())
    throw std::invalid_argument("attitude observations required for every agent");

  PoseEstimateSet out;
  out.poses.resize(problem.agent_count());
  out.methods.resize(problem.agent_count(), RecoveryMethod::Underdetermined);

  for (int i = 0; i < problem.agent_count(); ++i) {
    const SensorLayout& layout = problem.layouts[i];
    const int base = problem.map.first[i];
    const int sensors = layout.count();
    Mat R = Mat::Identity(d, d);
    RecoveryMethod method = RecoveryMethod::Underdetermined;

    switch (problem.modes[i]) {
      case ProprioMode::FourAxis: {
        const ProprioReading& reading = proprio[i];
        if (reading.mode != ProprioMode::FourAxis)
          throw std::invalid_argument("attitude observation mode mismatch");
        const Mat tilt = rotation_from_rpy(reading.roll, reading.pitch, 0.0);
        double sin_sum = 0.0, cos_sum = 0.0;
        bool observable = false;
        for (int u = 0; u < sensors; ++u) {
          for (int v = u + 1; v < sensors; ++v) {
            const Vec m = tilt * (layout.offsets[u] - layout.offsets[v]);
            const double n = m.x() * m.x() + m.y() * m.y();
            if (n <= kBaselineTol) continue;
            const double dx = p(0, base + u) - p(0, base + v);
            const double dy = p(1, base + u) - p(1, base + v);
            // Unnormalized sine and cosine estimates; summing weighs each
            // pair by its squared horizontal baseline.
            sin_sum += m.x() * dy - m.y() * dx;
            cos_sum += m.x() * dx + m.y() * dy;
            observable = true;
          }
        }
        if (observable) {
          R = rotation_from_rpy(reading.roll, reading.pitch, std::atan2(sin_sum, cos_sum));
          method = RecoveryMethod::YawFormula;
        } else {
          R = tilt;
        }
        break;
      }
      case ProprioMode::SixAxis: {
        const ProprioReading& reading = proprio[i];
        if (reading.mode != ProprioMode::SixAxis)
          throw std::invalid_argument("attitude observation mode mismatch");
        if (reading.rotation.rows() != d || reading.rotation.cols() != d)
          throw std::invalid_argument("attitude observation dimension mismatch");
        R = reading.rotation;
        method = RecoveryMethod::ProprioRotation;
        break;
      }
      case ProprioMode::DistanceOnly: {
        if (sensors >= (d == 2 ? 2 : 3)) {
          std::vector<Vec> world;
          world.reserve(sensors);
          for (int u = 0; u < sensors; ++u) world.push_back(p.col(base + u));
          try {
            out.poses[i] = horn_registration(layout.offsets, world);
            out.methods[i] = RecoveryMethod::Registration;
            continue;
          } catch (const RecoveryError&) {
            // fall through to the best-effort fill
          }
        }
        break;
      }
    }
    out.poses[i] = Pose(R, mean_translation(p, base, layout, R));
    out.methods[i] = method;
  }
  return out;
}

double rmse_body(const PoseEstimateSet& estimates, const std::vector<Pose>& truth,
                 const std::vector<TopologyEdge>& edges) {
  if (estimates.poses.size() != truth.size())
    throw std::invalid_argument("estimate and truth counts differ");
  if (edges.empty()) throw std::invalid_argument("relative metrics need at least one pair");
  double sum = 0.0;
  for (const TopologyEdge& edge : edges) {
    for (const auto& [i, j] : {std::pair(edge.i, edge.j), std::pair(edge.j, edge.i)}) {
      if (i < 0 || j < 0 || i >= static_cast<int>(truth.size()) ||
          j >= static_cast<int>(truth.size()))
        throw std::invalid_argument("pair references an unknown agent");
      const Vec est = estimates.poses[i].rotation.transpose() *
                      (estimates.poses[j].translation - estimates.poses[i].translation);
      const Vec tru = truth[i].rotation.transpose() *
                      (truth[j].translation - truth[i].translation);
      sum += (est - tru).squaredNorm();
    }
  }
  return std::sqrt(sum / (2.0 * static_cast<double>(edges.size())));
}

double rmse_common_frame(const RealizationProblem& problem, const Realization& estimate,
                         const Realization& truth) {
  if (estimate.rows() != problem.dimension || estimate.cols() != problem.total() ||
      truth.rows() != problem.dimension || truth.cols() != problem.total())
    throw std::invalid_argument("realization shape does not match the problem");
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < problem.total(); ++c) {
    if (problem.frozen[c]) continue;
    sum += (estimate.col(c) - truth.col(c)).squaredNorm();
    ++count;
  }
  return count == 0 ? 0.0 : std::sqrt(sum / count);
}

double eta_metric(const PoseEstimateSet& estimates, const std::vector<Pose>& truth,
                  const TopologyEdge& pair) {
  if (pair.i < 0 || pair.j < 0 || pair.i >= static_cast<int>(truth.size()) ||
      pair.j >= static_cast<int>(truth.size()))
    throw std::invalid_argument("pair references an unknown agent");
  const double distance = (truth[pair.i].translation - truth[pair.j].translation).norm();
  if (distance <= 1e-12)
    throw std::invalid_argument("pair distance is zero; the drift ratio is undefined");
  return rmse_body(estimates, truth, {pair}) / distance;
}

}  // namespace relstate
