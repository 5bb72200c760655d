#include "relstate/core.hpp"

#include <cmath>
#include <string>

namespace relstate {

const char* to_string(ProprioMode mode) {
  switch (mode) {
    case ProprioMode::DistanceOnly: return "distance_only";
    case ProprioMode::FourAxis: return "four_axis";
    case ProprioMode::SixAxis: return "six_axis";
  }
  return "unknown";
}

ProprioMode proprio_mode_from_string(const std::string& name) {
  if (name == "distance_only") return ProprioMode::DistanceOnly;
  if (name == "four_axis") return ProprioMode::FourAxis;
  if (name == "six_axis") return ProprioMode::SixAxis;
  throw std::invalid_argument("unknown proprioception mode: " + name);
}

Pose Pose::identity(int dim) {
  return Pose(Mat::Identity(dim, dim), Vec::Zero(dim));
}

void Pose::validate(double tol) const {
  const int d = dim();
  if (rotation.rows() != d || rotation.cols() != d) {
    throw std::invalid_argument("pose rotation/translation dimension mismatch");
  }
  const double ortho = (rotation.transpose() * rotation - Mat::Identity(d, d)).norm();
  if (ortho > tol) {
    throw std::invalid_argument("pose rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > tol) {
    throw std::invalid_argument("pose rotation is not proper (det != +1)");
  }
}

SensorMap SensorMap::build(const std::vector<SensorLayout>& layouts) {
  SensorMap map;
  map.first.reserve(layouts.size());
  map.count.reserve(layouts.size());
  int running = 0;
  for (const auto& layout : layouts) {
    map.first.push_back(running);
    map.count.push_back(layout.count());
    running += layout.count();
  }
  map.total = running;
  return map;
}

int SensorMap::agent_of(int column) const {
  for (int i = static_cast<int>(first.size()) - 1; i >= 0; --i) {
    if (column >= first[i]) return i;
  }
  throw std::out_of_range("sensor column out of range");
}

Vec transform_point(const Pose& pose, const Vec& body_point) {
  if (body_point.size() != pose.translation.size()) {
    throw std::invalid_argument("transform_point: dimension mismatch");
  }
  return pose.rotation * body_point + pose.translation;
}

SurrogateMeasurement quadratic_surrogate(double d_tilde, double sigma) {
  if (sigma <= 0.0) {
    throw std::invalid_argument("quadratic_surrogate: sigma must be positive");
  }
  SurrogateMeasurement s;
  s.q = d_tilde * d_tilde - sigma * sigma;
  const double a = 2.0 * sigma * d_tilde;
  s.sigma_q = std::sqrt(a * a + 2.0 * sigma * sigma * sigma * sigma);
  return s;
}

SurrogateMeasurement surrogate_with_floor(double d_tilde, double sigma) {
  if (sigma < 0.0) {
    throw std::invalid_argument("surrogate_with_floor: sigma must be nonnegative");
  }
  SurrogateMeasurement s;
  s.q = d_tilde * d_tilde - sigma * sigma;
  const double a = 2.0 * sigma * d_tilde;
  s.sigma_q = std::max(std::sqrt(a * a + 2.0 * sigma * sigma * sigma * sigma), kSigmaQFloor);
  return s;
}

Mat rotation_from_rpy(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Mat Rx(3, 3), Ry(3, 3), Rz(3, 3);
  Rx << 1, 0, 0,
        0, cr, -sr,
        0, sr, cr;
  Ry << cp, 0, sp,
        0, 1, 0,
        -sp, 0, cp;
  Rz << cy, -sy, 0,
        sy, cy, 0,
        0, 0, 1;
  return Rz * Ry * Rx;
}

Mat rotation2(double angle) {
  Mat R(2, 2);
  const double c = std::cos(angle), s = std::sin(angle);
  R << c, -s,
       s, c;
  return R;
}

RollPitchYaw rpy_from_rotation(const Mat& R) {
  if (R.rows() != 3 || R.cols() != 3) {
    throw std::invalid_argument("rpy_from_rotation expects a 3x3 matrix");
  }
  RollPitchYaw a;
  a.pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  a.roll = std::atan2(R(2, 1), R(2, 2));
  a.yaw = std::atan2(R(1, 0), R(0, 0));
  return a;
}

double angle_from_rotation2(const Mat& R) {
  if (R.rows() != 2 || R.cols() != 2) {
    throw std::invalid_argument("angle_from_rotation2 expects a 2x2 matrix");
  }
  return std::atan2(R(1, 0), R(0, 0));
}

}  // namespace relstate
