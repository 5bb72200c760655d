// Synthetic scenario generation: agent placement on lattice or random
// layouts, inter-agent measurement topology, range measurement simulation,
// proprioception simulation, anchor designation, and range bias calibration.
#pragma once

#include "relstate/core.hpp"
#include "relstate/rng.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace relstate {

/// Thrown when a requested scenario cannot be realized (for example a
/// random layout whose measurement graph came out disconnected).
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AgentSpec {
  int id = 0;
  Pose pose;             // ground-truth pose in the global frame
  SensorLayout sensors;  // body-frame sensor offsets
  ProprioMode mode = ProprioMode::FourAxis;
};

/// Undirected topology edge between agents, stored with i < j.
struct TopologyEdge {
  int i = 0;
  int j = 0;
};

struct AnchorInfo {
  int agent = 0;
  Mat claimed;                // d x sensor_count claimed global sensor coords
  std::vector<int> partners;  // agents the anchor ranges against
};

struct Scenario {
  int dimension = 3;
  std::vector<AgentSpec> agents;
  std::vector<TopologyEdge> edges;
  std::vector<AnchorInfo> anchors;
  uint64_t seed = 0;

  int agent_count() const { return static_cast<int>(agents.size()); }
  SensorMap sensor_map() const;
  std::vector<SensorLayout> layouts() const;
  bool is_anchored(int agent) const;
  const AnchorInfo* anchor_for(int agent) const;

  /// True sensor positions, d x total_sensors, columns ordered by SensorMap.
  Realization truth_realization() const;

  void validate() const;  // throws std::invalid_argument on malformed data
};

enum class ShapeKind { Cube, Pyramid, Hexagon, RandomBox };

std::string to_string(ShapeKind shape);
ShapeKind shape_from_string(const std::string& name);

struct GeneratorSpec {
  ShapeKind shape = ShapeKind::Cube;
  int side_count = 3;   // Cube: agents per axis
  int levels = 4;       // Pyramid: stacked triangular layers
  int rings = 2;        // Hexagon: rings around the center agent
  int count = 10;       // RandomBox: number of agents
  Vec extents;          // RandomBox box size per axis; empty means 10m cube
  double spacing = 3.0; // lattice pitch in meters
  // Minimum topology degree for lattice shapes and the k of the k-nearest
  // union graph for RandomBox. Zero selects the shape default.
  int neighbor_count = 0;
  ProprioMode mode = ProprioMode::FourAxis;
  double sensor_offset = 0.35;
  uint64_t seed = 1;
};

/// Builds agents, ground-truth poses, sensor layouts, and the measurement
/// topology. Lattice shapes connect every pair within sqrt(3) * spacing and
/// then add nearest-neighbor links until each agent reaches the minimum
/// degree. RandomBox uses the union k-nearest graph and fails if the result
/// is disconnected.
Scenario generate_scenario(const GeneratorSpec& spec);

/// Default sensor layout for the given mode and dimension.
SensorLayout default_sensor_layout(ProprioMode mode, int dimension, double offset);

struct MeasurementGraph {
  std::vector<DistanceMeasurement> measurements;
  double sigma = 0.0;  // range noise standard deviation used at simulation
};

/// Simulates one range measurement per sensor pair across every topology
/// edge, plus the anchor-to-partner pairs. Gaussian range noise with the
/// given sigma; sigma = 0 produces exact distances whose surrogate variance
/// is clamped to the documented floor.
MeasurementGraph simulate_measurements(const Scenario& scenario, double sigma, Rng& rng);

/// Per-agent attitude observations. Bound is the half-width in radians of
/// the uniform error applied to each observed angle.
std::vector<ProprioReading> simulate_proprioception(const Scenario& scenario,
                                                    double angle_error_bound, Rng& rng);

/// Random initial realization: each agent's translation is perturbed
/// uniformly in a ball of the given radius, its rotation is resampled
/// consistently with what proprioception observes (random yaw under
/// FourAxis, fully random under DistanceOnly), and sensor columns are
/// placed rigidly from that pose so intra-agent geometry holds exactly.
Realization sample_initial_guess(const Scenario& scenario,
                                 const std::vector<ProprioReading>& proprio,
                                 double translation_radius, Rng& rng);

/// Marks the given agents as anchors (empty ids: pick `count` agents by
/// farthest-point sampling over true positions). Claimed coordinates are
/// the true sensor positions with independent Gaussian noise per coordinate.
/// Partners are drawn without replacement from the non-anchor agents.
/// Returns human-readable warnings (for example an anchor with too few
/// sensors to pin down the global frame).
std::vector<std::string> designate_anchors(Scenario& scenario, std::vector<int> ids,
                                           int count, int partner_count,
                                           double anchor_noise, Rng& rng);

/// Unordered sensor pair identified by agent and sensor indices, normalized
/// so the lexicographically smaller (agent, sensor) endpoint comes first.
struct SensorPairKey {
  int agent_a = 0;
  int sensor_a = 0;
  int agent_b = 0;
  int sensor_b = 0;
  static SensorPairKey of(const DistanceMeasurement& m);
  friend bool operator<(const SensorPairKey& x, const SensorPairKey& y) {
    return std::tie(x.agent_a, x.sensor_a, x.agent_b, x.sensor_b) <
           std::tie(y.agent_a, y.sensor_a, y.agent_b, y.sensor_b);
  }
};

/// Additive range bias per unordered sensor pair.
using BiasTable = std::map<SensorPairKey, double>;

/// Mean measured-minus-true range per sensor pair seen in the log.
BiasTable calibrate_bias(const MeasurementGraph& graph, const Scenario& scenario);

struct BiasCorrectionResult {
  MeasurementGraph corrected;
  int missing_pair_count = 0;        // measurements with no table entry
  std::vector<int> missing_indices;  // their indices in the input graph
};

/// Subtracts the tabulated bias from each raw range and rebuilds the
/// quadratic surrogate with the graph's noise level. Pairs absent from the
/// table pass through unchanged and are reported.
BiasCorrectionResult apply_bias_correction(const MeasurementGraph& graph,
                                           const BiasTable& table);

}  // namespace relstate
