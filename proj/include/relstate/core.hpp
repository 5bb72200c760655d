// Core geometric and measurement types shared by every other module.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace relstate {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// A realization stacks one coordinate column per sensor, agent-major then
// sensor-minor, so block slicing and serialization have one fixed order.
using Realization = Eigen::MatrixXd;

// Proprioception available on an agent: ranging only, a tilt pair from an
// IMU (roll and pitch observable, yaw not), or a full attitude estimate.
enum class ProprioMode { DistanceOnly, FourAxis, SixAxis };

const char* to_string(ProprioMode mode);
ProprioMode proprio_mode_from_string(const std::string& name);

struct Pose {
  Mat rotation;     // d x d, orthonormal with determinant +1
  Vec translation;  // length d, meters

  Pose() = default;
  Pose(Mat R, Vec t) : rotation(std::move(R)), translation(std::move(t)) {}

  static Pose identity(int dim);
  int dim() const { return static_cast<int>(translation.size()); }

  // Throws std::invalid_argument when the rotation block is not a proper
  // rotation within tol.
  void validate(double tol = 1e-9) const;
};

// Body-frame sensor coordinates of one agent. Sensor indices are contiguous
// from zero; the rest of the code identifies a sensor as (agent, index).
struct SensorLayout {
  std::vector<Vec> offsets;

  int count() const { return static_cast<int>(offsets.size()); }
  int dim() const { return offsets.empty() ? 0 : static_cast<int>(offsets[0].size()); }
};

// One ranging measurement between sensor u of agent i and sensor v of agent
// j, stored together with its quadratic surrogate.
struct DistanceMeasurement {
  int agent_i = 0;
  int sensor_u = 0;
  int agent_j = 0;
  int sensor_v = 0;
  double distance = 0.0;  // raw range, meters
  double q = 0.0;         // surrogate target, meters^2
  double sigma_q = 0.0;   // surrogate standard deviation, meters^2

  double weight() const { return 1.0 / (sigma_q * sigma_q); }
};

struct ProprioReading {
  ProprioMode mode = ProprioMode::DistanceOnly;
  double roll = 0.0;   // radians, FourAxis
  double pitch = 0.0;  // radians, FourAxis
  Mat rotation;        // d x d, SixAxis only
};

// Maps (agent, sensor) pairs to realization columns.
struct SensorMap {
  std::vector<int> first;  // column of each agent's sensor 0
  std::vector<int> count;
  int total = 0;

  static SensorMap build(const std::vector<SensorLayout>& layouts);
  int agents() const { return static_cast<int>(first.size()); }
  int col(int agent, int sensor) const { return first[agent] + sensor; }
  int agent_of(int column) const;
};

struct SurrogateMeasurement {
  double q = 0.0;
  double sigma_q = 0.0;
};

// Smallest surrogate deviation accepted when forming weights; keeps the
// noiseless case finite.
inline constexpr double kSigmaQFloor = 1e-6;  // meters^2

// Rotates a body-frame point into the world frame and translates it.
Vec transform_point(const Pose& pose, const Vec& body_point);

// Turns a raw range into its quadratic surrogate: q = d^2 - sigma^2 with
// standard deviation sqrt((2 sigma d)^2 + 2 sigma^4). Requires sigma > 0.
SurrogateMeasurement quadratic_surrogate(double d_tilde, double sigma);

// Same surrogate with sigma >= 0 accepted and sigma_q floored, used by the
// simulator so noiseless scenarios keep finite weights.
SurrogateMeasurement surrogate_with_floor(double d_tilde, double sigma);

// Intrinsic z-y-x composition: R = Rz(yaw) * Ry(pitch) * Rx(roll). With this
// convention the third row of Ry(pitch) * Rx(roll) is the gravity-projection
// row used by the tilt-pair constraints, verbatim.
Mat rotation_from_rpy(double roll, double pitch, double yaw);

// Planar rotation by angle, for 2-dimensional scenarios.
Mat rotation2(double angle);

struct RollPitchYaw {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

// Inverse of rotation_from_rpy away from the pitch singularity.
RollPitchYaw rpy_from_rotation(const Mat& R);

double angle_from_rotation2(const Mat& R);

}  // namespace relstate
