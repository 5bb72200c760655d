#include "relstate/esdp_solver.hpp"

#include "relstate/schedule.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <unordered_map>

namespace relstate {

namespace {

// Neighbor diagonal surplus is floored here when a pair bound divides by it.
// The same constant bounds how far a block's own pair bounds can slip between
// its exit and its next entry, so it is load-bearing, not cosmetic.
constexpr double kNeighborSlackFloor = 1e-9;

// Minimum diagonal surplus restored at block entry; see repair_entry.
constexpr double kEntrySlack = 1e-9;

constexpr double kArmijo = 0.1;
constexpr double kMinStep = 1e-12;

// Iteration allowance for the direct warm-start attempt at the final
// barrier weight. A visit that is genuinely warm finishes well inside
// this; one that is not gets rolled back and handed to the full schedule.
constexpr int kWarmBudget = 40;

// Relative residual a Newton solve must reach before its direction is
// trusted; beyond this the system gets Marquardt damping instead.
constexpr double kSolveResidual = 1e-6;

// State consistency thresholds for solve entry; see normalize_state.
constexpr double kConsistentRow = 1e-7;
constexpr double kConsistentEig = 1e-8;

// A calibrated pair needs lateral freedom around its pinned coordinates for
// the Gram block to have any strict interior; see pair_h0 in compile.
constexpr double kLateralFloor = 1e-9;

// Relative lateral gap restored by the entry nudge. The dressing built in
// normalize_state is positive definite only when every calibrated pair sits
// strictly inside its separation target, so a state handed in at or past a
// target is pulled inward just far enough to reopen this gap. The scale is
// chosen so the position change stays far below any reported accuracy.
constexpr double kLateralNudge = 1e-7;

// Thresholds for the collapsed-extraction detector.
constexpr double kTrivialPosTol = 1e-6;
constexpr double kTrivialObjPerTerm = 10.0;

double smallest_eigenvalue2(double a, double b, double c) {
  // Symmetric [[a, b], [b, c]].
  const double mid = 0.5 * (a + c);
  const double off = 0.5 * (a - c);
  return mid - std::sqrt(off * off + b * b);
}

// Smallest positive root of c0 + c1 t + c2 t^2 given c0 > 0, or +infinity
// when the quadratic stays positive for all t > 0. Used to find where a
// barrier margin crosses zero along a step.
double first_crossing(double c0, double c1, double c2) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  if (c2 == 0.0) return c1 < 0.0 ? -c0 / c1 : kInf;
  const double disc = c1 * c1 - 4.0 * c2 * c0;
  if (disc < 0.0) return kInf;
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (c1 + (c1 >= 0.0 ? sq : -sq));
  double best = kInf;
  if (q != 0.0) {
    const double r1 = q / c2;
    const double r2 = c0 / q;
    if (r1 > 0.0) best = std::min(best, r1);
    if (r2 > 0.0) best = std::min(best, r2);
  } else if (c2 < 0.0) {
    best = std::sqrt(-c0 / c2);
  }
  return best;
}

// One weighted squared residual, linear in the block variables. `entries`
// is fixed at construction; `base` carries the live neighbor contribution
// and is refreshed every time the block is solved.
struct CompiledTerm {
  std::vector<std::pair<int, double>> entries;
  double weight = 1.0;
  double base = 0.0;
  int model_edge = -1;  // index into EsdpModel::edge_terms, -1 for anchors
};

// Barrier row X_cc >= ||p_c||^2 for one of the block's own sensors.
struct SlackRow {
  int diag_slot = 0;
  int p_base = 0;
};

// Barrier row X_cc >= ||p_c||^2 + (X_cross - p_c . nb_p)^2 / nb_slack for
// one incident measurement pair; the neighbor side enters through nb_*.
struct MinorRow {
  int diag_slot = 0;
  int p_base = 0;
  int cross_slot = -1;    // -1 when the other agent owns the variable
  int model_cross = 0;
  int nb_col = 0;
  Vec nb_p;                  // refreshed
  double nb_slack = 1.0;     // refreshed, floored
  double cross_value = 0.0;  // refreshed when not owned
};

// Positive-semidefinite 2x2 block for one calibration pair.
struct ConeBlock {
  int da = 0, db = 0, ab = 0;  // diagonal and off-diagonal slots
  int pa = 0, pb = 0;          // first position slot of each sensor
};

// Each block is solved in reduced coordinates z = (xi, diagonals, owned
// cross entries): positions are p = p_part + N xi with N spanning the null
// space of the agent's linear rows, and each calibration pair's off-diagonal
// Gram entry is substituted from its equality, ab = (da + db - target) / 2.
// That removes every equality constraint from the subproblem, so the stage
// solver is a plain damped Newton method on a strictly convex barrier
// function. Derivatives are evaluated in the natural variables x = A z + b
// and pulled back through the constant map A.
struct BlockWork {
  int agent = 0;
  int first_col = 0;
  int sensor_count = 0;
  int nx = 0;  // natural variables: positions, diagonals, intra, cross
  int nz = 0;  // reduced variables: xi, diagonals, cross
  int nf = 0;  // position degrees of freedom

  std::vector<CompiledTerm> terms;
  std::vector<SlackRow> slacks;
  std::vector<MinorRow> minors;
  std::vector<ConeBlock> cones;
  std::vector<int> intra_indices;  // model intra entries on this agent
  std::vector<int> owned_cross;    // model cross entries owned by this agent
  std::vector<double> pair_h0;     // lateral slack of each pair at xi = 0

  Mat N;      // orthonormal null-space basis of the agent's linear rows
  Vec p_part; // minimum-norm solution of those rows
  Mat A;      // x = A z + b
  Vec b;

  // Scratch reused between sweeps; a block never runs concurrently with
  // itself, so this is safe under the color schedule.
  Mat h_obj, Hx, Hz, W;
  Vec x, gx, gz, z, dz, dx, trial_z, trial_x;
};

class EsdpEngine {
 public:
  EsdpEngine(const EsdpModel& model, const EsdpOptions& options)
      : model_(model), problem_(*model.problem), options_(options),
        blocks_(problem_.agent_count()) {
    const int d = problem_.dimension;
    std::vector<std::vector<int>> agent_intra(problem_.agent_count());
    for (int t = 0; t < static_cast<int>(model_.intra.size()); ++t)
      agent_intra[model_.intra[t].agent].push_back(t);
    std::vector<std::vector<int>> agent_owned(problem_.agent_count());
    for (int c = 0; c < static_cast<int>(model_.cross.size()); ++c)
      agent_owned[model_.cross[c].owner_agent].push_back(c);
    std::vector<std::vector<const LinearRow*>> agent_rows(problem_.agent_count());
    for (const LinearRow& row : problem_.rows)
      if (!problem_.agent_frozen[row.agent]) agent_rows[row.agent].push_back(&row);

    for (int i = 0; i < problem_.agent_count(); ++i) {
      if (problem_.agent_frozen[i]) continue;
      BlockWork& blk = blocks_[i];
      blk.agent = i;
      blk.first_col = problem_.map.first[i];
      blk.sensor_count = problem_.map.count[i];
      blk.intra_indices = agent_intra[i];
      blk.owned_cross = agent_owned[i];
      const int count = blk.sensor_count;
      const int pdim = count * d;
      const int intra_n = static_cast<int>(blk.intra_indices.size());
      const int cross_n = static_cast<int>(blk.owned_cross.size());
      blk.nx = pdim + count + intra_n + cross_n;

      std::unordered_map<int, int> cross_slot;
      for (int k = 0; k < cross_n; ++k)
        cross_slot[blk.owned_cross[k]] = count * (d + 1) + intra_n + k;
      std::unordered_map<int, int> intra_slot;
      for (int k = 0; k < intra_n; ++k) intra_slot[blk.intra_indices[k]] = count * (d + 1) + k;

      auto p_slot = [&](int col) { return (col - blk.first_col) * d; };
      auto diag_slot = [&](int col) { return count * d + (col - blk.first_col); };
      auto on_agent = [&](int col) { return problem_.map.agent_of(col) == i; };

      for (int t = 0; t < static_cast<int>(model_.edge_terms.size()); ++t) {
        const EsdpEdgeTerm& edge = model_.edge_terms[t];
        const bool a_here = on_agent(edge.col_a);
        const bool b_here = on_agent(edge.col_b);
        const EsdpCrossVar& cv = model_.cross[edge.cross];
        const bool owned = cv.owner_agent == i;
        if (!a_here && !b_here) continue;
        CompiledTerm term;
        term.weight = edge.weight;
        term.model_edge = t;
        term.entries.push_back({diag_slot(a_here ? edge.col_a : edge.col_b), 1.0});
        if (owned) term.entries.push_back({cross_slot.at(edge.cross), -2.0});
        blk.terms.push_back(std::move(term));
      }
      for (const EsdpAnchorTerm& anchor : model_.anchor_terms) {
        if (!on_agent(anchor.col)) continue;
        CompiledTerm term;
        term.weight = anchor.weight;
        term.entries.push_back({diag_slot(anchor.col), 1.0});
        for (int k = 0; k < d; ++k)
          term.entries.push_back({p_slot(anchor.col) + k, -2.0 * anchor.anchor[k]});
        term.base = anchor.anchor.squaredNorm() - anchor.q;
        blk.terms.push_back(std::move(term));
      }
      for (int s = 0; s < count; ++s)
        blk.slacks.push_back({diag_slot(blk.first_col + s), p_slot(blk.first_col + s)});
      for (int c = 0; c < static_cast<int>(model_.cross.size()); ++c) {
        const EsdpCrossVar& cv = model_.cross[c];
        const int own_col = on_agent(cv.col_a) ? cv.col_a : (on_agent(cv.col_b) ? cv.col_b : -1);
        if (own_col < 0) continue;
        MinorRow row;
        row.diag_slot = diag_slot(own_col);
        row.p_base = p_slot(own_col);
        row.cross_slot = cv.owner_agent == i ? cross_slot.at(c) : -1;
        row.model_cross = c;
        row.nb_col = own_col == cv.col_a ? cv.col_b : cv.col_a;
        blk.minors.push_back(std::move(row));
      }
      for (int t : blk.intra_indices) {
        const EsdpIntraVar& pair = model_.intra[t];
        ConeBlock cone;
        cone.da = diag_slot(pair.col_a);
        cone.db = diag_slot(pair.col_b);
        cone.ab = intra_slot.at(t);
        cone.pa = p_slot(pair.col_a);
        cone.pb = p_slot(pair.col_b);
        blk.cones.push_back(cone);
      }

      // Null-space parameterization of the agent's linear position rows.
      const int row_n = static_cast<int>(agent_rows[i].size());
      if (row_n == 0) {
        blk.N = Mat::Identity(pdim, pdim);
        blk.p_part = Vec::Zero(pdim);
      } else {
        Mat C = Mat::Zero(row_n, pdim);
        Vec e(row_n);
        for (int r = 0; r < row_n; ++r) {
          for (const LinearEntry& entry : agent_rows[i][r]->entries)
            C(r, p_slot(entry.col) + entry.coord) += entry.coeff;
          e[r] = agent_rows[i][r]->rhs;
        }
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(C);
        blk.p_part = cod.solve(e);
        Eigen::FullPivLU<Mat> lu(C);
        const Mat kernel = lu.kernel();
        if (kernel.cols() == 1 && kernel.isZero(0.0)) {
          blk.N.resize(pdim, 0);
        } else {
          Eigen::HouseholderQR<Mat> qr(kernel);
          blk.N = qr.householderQ() * Mat::Identity(pdim, kernel.cols());
        }
      }
      blk.nf = static_cast<int>(blk.N.cols());
      blk.nz = blk.nf + count + cross_n;

      // Every calibration pair needs strictly positive lateral slack at
      // xi = 0, or its Gram cone has no interior anywhere on the manifold
      // (the pinned coordinates already use up the calibrated distance).
      for (int t : blk.intra_indices) {
        const EsdpIntraVar& pair = model_.intra[t];
        if (pair.target <= 0.0)
          throw std::invalid_argument(
              "calibrated sensor pair on agent " + std::to_string(i) +
              " has zero length; coincident sensors cannot carry a Gram block");
        const Vec delta = blk.p_part.segment(p_slot(pair.col_a), d) -
                          blk.p_part.segment(p_slot(pair.col_b), d);
        const double h0 = pair.target - delta.squaredNorm();
        if (h0 <= std::max(kLateralFloor, 1e-6 * pair.target))
          throw std::invalid_argument(
              "calibrated sensor pair on agent " + std::to_string(i) +
              " is fully pinned by its linear rows; the pair's Gram block has no "
              "strict interior, leave it lateral freedom or drop a row");
        blk.pair_h0.push_back(h0);
      }

      // x = A z + b: positions through the null space, off-diagonal Gram
      // entries through their calibration equalities.
      blk.A = Mat::Zero(blk.nx, blk.nz);
      blk.b = Vec::Zero(blk.nx);
      blk.A.topLeftCorner(pdim, blk.nf) = blk.N;
      blk.b.head(pdim) = blk.p_part;
      for (int s = 0; s < count; ++s) blk.A(pdim + s, blk.nf + s) = 1.0;
      for (int k = 0; k < intra_n; ++k) {
        const EsdpIntraVar& pair = model_.intra[blk.intra_indices[k]];
        const int slot = count * (d + 1) + k;
        blk.A(slot, blk.nf + (pair.col_a - blk.first_col)) = 0.5;
        blk.A(slot, blk.nf + (pair.col_b - blk.first_col)) = 0.5;
        blk.b[slot] = -0.5 * pair.target;
      }
      for (int k = 0; k < cross_n; ++k)
        blk.A(count * (d + 1) + intra_n + k, blk.nf + count + k) = 1.0;

      blk.h_obj.resize(blk.nx, blk.nx);
      blk.Hx.resize(blk.nx, blk.nx);
      blk.Hz.resize(blk.nz, blk.nz);
      blk.W.resize(blk.nx, blk.nz);
      blk.x.resize(blk.nx);
      blk.gx.resize(blk.nx);
      blk.gz.resize(blk.nz);
      blk.z.resize(blk.nz);
      blk.dz.resize(blk.nz);
      blk.trial_z.resize(blk.nz);
      blk.trial_x.resize(blk.nx);
      blk.dx.resize(blk.nx);
    }
  }

  // Entry repair. Between two visits only the bound data of an off-diagonal
  // entry can move (the endpoint sensors reposition and their surpluses
  // change), so an entry that ends up outside its refreshed bound is pulled
  // back just inside it rather than reset: the optimized offset is the
  // expensive part of every stage's climb and survives the repair. Entries
  // still inside their bound are left untouched, which makes the sweep's
  // fixed point a fixed point of the repair as well. A uniform diagonal lift
  // then restores a minimal surplus; uniformity keeps every calibration cone
  // feasible (adding L to both diagonals of a pair grows its determinant by
  // L times the pair's nonnegative lateral slack). The lift skips the stored
  // intra-agent entries, which are rebuilt from their equalities before
  // anything reads them.
  void repair_entry(const BlockWork& blk, EsdpState& state) const {
    const int d = problem_.dimension;
    const int count = blk.sensor_count;
    for (const MinorRow& row : blk.minors) {
      const int our_col = blk.first_col + (row.diag_slot - count * d);
      const auto p_u = state.p.col(our_col);
      const auto p_v = state.p.col(row.nb_col);
      const double dot = p_u.dot(p_v);
      const double s_u =
          std::max(state.diag[our_col] - p_u.squaredNorm(), kEntrySlack);
      const double s_v = std::max(state.diag[row.nb_col] - p_v.squaredNorm(),
                                  kNeighborSlackFloor);
      const double y = state.cross[row.model_cross] - dot;
      if (y * y < s_u * s_v) continue;
      if (row.cross_slot >= 0) {
        const double cap = 0.995 * std::sqrt(s_u * s_v);
        state.cross[row.model_cross] = dot + (y >= 0.0 ? cap : -cap);
      } else {
        // The neighbor owns this value and will rebuild it on its own next
        // visit; losing the offset is acceptable for a handed-in state,
        // which is the only way an unowned entry can be out of bounds.
        state.cross[row.model_cross] = dot;
      }
    }
    double lift = 0.0;
    for (int s = 0; s < count; ++s) {
      const int col = blk.first_col + s;
      lift = std::max(lift, kEntrySlack - (state.diag[col] - state.p.col(col).squaredNorm()));
    }
    if (lift > 0.0)
      for (int s = 0; s < count; ++s) state.diag[blk.first_col + s] += lift;
  }

  void solve_block(int agent, EsdpState& state) {
    BlockWork& blk = blocks_[agent];
    repair_entry(blk, state);
    refresh(blk, state);
    gather(blk, state);
    x_from_z(blk, blk.z, blk.x);

    // A sweep revisits each block hundreds of times from nearly converged
    // points, so the warm iterate is usually a few Newton steps from the
    // final-mu conditional optimum. Try that stage directly first under a
    // short budget; the full schedule, restarted from the top, exists to
    // globalize cold or badly perturbed entries and runs only when the
    // direct stage gives up. The direct attempt is rolled back before the
    // schedule runs: a far-from-converged entry makes that stage dive at
    // its nearly active bounds, and the schedule recovers slowly from
    // points parked that deep inside the barrier walls.
    const Vec entry_z = blk.z;
    const double entry_value = stage_value(blk, blk.x, options_.mu_min);
    if (!newton_stage(blk, options_.mu_min, kWarmBudget)) {
      blk.z = entry_z;
      double mu = options_.mu0;
      while (true) {
        if (!newton_stage(blk, mu, options_.max_newton))
          stage_failures_.fetch_add(1, std::memory_order_relaxed);
        if (mu <= options_.mu_min * (1.0 + 1e-12)) break;
        mu = std::max(mu * options_.mu_factor, options_.mu_min);
      }
      // The schedule's intermediate stages chase their own central points,
      // so the point it hands back can sit above the entry value of the
      // final-mu objective even though every individual step descended.
      // Keeping the better of entry and exit makes each visit monotone in
      // that one merit function, which is what the sweep-level objective
      // trace inherits.
      x_from_z(blk, blk.z, blk.x);
      if (!strictly_feasible(blk, blk.x) ||
          stage_value(blk, blk.x, options_.mu_min) > entry_value)
        blk.z = entry_z;
    }
    x_from_z(blk, blk.z, blk.x);
    scatter(blk, state);
  }

  // Brings an arbitrary entry state onto the equality manifold and strictly
  // inside every cone, preserving it untouched when it is already there
  // (a warm restart from a previous solution). Positions move only when a
  // calibration pair has no lateral slack left, and then only by a shrink
  // of the agent's sensor spread toward its pinned base point.
  void normalize_state(EsdpState& state) const {
    if (consistent(state)) return;
    const int d = problem_.dimension;
    for (const BlockWork& blk : blocks_) {
      if (blk.sensor_count == 0) continue;  // frozen agents have no block
      const int pdim = blk.sensor_count * d;
      Vec p(pdim);
      for (int s = 0; s < blk.sensor_count; ++s)
        p.segment(s * d, d) = state.p.col(blk.first_col + s);
      Vec xi = blk.N.transpose() * (p - blk.p_part);

      if (!blk.cones.empty()) {
        // Scaling xi toward zero pulls every pair back toward its base
        // separation, where the lateral gap is pair_h0 > 0. Along that ray
        // each gap is a concave quadratic in the scale, so the largest
        // scale keeping every gap at or above its floor is the smallest
        // first_crossing over pairs. Taking exactly that scale makes the
        // nudge minimal: a state already clear of the floors keeps its
        // positions bit for bit.
        const Vec lateral = blk.N * xi;
        double kappa = 1.0;
        for (int k = 0; k < static_cast<int>(blk.cones.size()); ++k) {
          const EsdpIntraVar& pair = model_.intra[blk.intra_indices[k]];
          const int a = (pair.col_a - blk.first_col) * d;
          const int b = (pair.col_b - blk.first_col) * d;
          const Vec base_sep =
              blk.p_part.segment(a, d) - blk.p_part.segment(b, d);
          const Vec move = lateral.segment(a, d) - lateral.segment(b, d);
          const double floor =
              std::min(0.5 * blk.pair_h0[k],
                       std::max(kLateralFloor, kLateralNudge * pair.target));
          kappa = std::min(
              kappa, first_crossing(blk.pair_h0[k] - floor,
                                    -2.0 * base_sep.dot(move),
                                    -move.squaredNorm()));
        }
        if (kappa < 1.0) xi *= kappa;
      }

      p = blk.p_part + blk.N * xi;
      for (int s = 0; s < blk.sensor_count; ++s)
        state.p.col(blk.first_col + s) = p.segment(s * d, d);

      double lift = 1.0;
      if (!blk.cones.empty()) {
        double h_max = 0.0;
        for (int k = 0; k < static_cast<int>(blk.cones.size()); ++k) {
          const EsdpIntraVar& pair = model_.intra[blk.intra_indices[k]];
          const double h =
              pair.target -
              (state.p.col(pair.col_a) - state.p.col(pair.col_b)).squaredNorm();
          h_max = std::max(h_max, h);
        }
        // Half the widest gap keeps every pair's Gram block positive
        // definite under the substituted coordinates, and shrinks with the
        // gaps so a near-tight state is dressed with near-zero slack.
        lift = std::max(0.5 * h_max, kEntrySlack);
      }
      for (int s = 0; s < blk.sensor_count; ++s) {
        const int col = blk.first_col + s;
        state.diag[col] = state.p.col(col).squaredNorm() + lift;
      }
    }
    for (size_t t = 0; t < model_.intra.size(); ++t) {
      const EsdpIntraVar& pair = model_.intra[t];
      state.intra[t] =
          0.5 * (state.diag[pair.col_a] + state.diag[pair.col_b] - pair.target);
    }
    for (size_t c = 0; c < model_.cross.size(); ++c)
      state.cross[c] = state.p.col(model_.cross[c].col_a).dot(state.p.col(model_.cross[c].col_b));
  }

  long slack_floor_count() const { return slack_floors_.load(); }
  long stage_failures() const { return stage_failures_.load(); }

 private:
  bool consistent(const EsdpState& state) const {
    for (const LinearRow& row : problem_.rows) {
      if (problem_.agent_frozen[row.agent]) continue;
      if (std::abs(row.evaluate(state.p)) > kConsistentRow) return false;
    }
    for (int c = 0; c < problem_.total(); ++c) {
      if (problem_.frozen[c]) continue;
      if (state.diag[c] - state.p.col(c).squaredNorm() <= 0.0) return false;
    }
    for (size_t t = 0; t < model_.intra.size(); ++t) {
      const EsdpIntraVar& pair = model_.intra[t];
      const double calib =
          state.diag[pair.col_a] - 2.0 * state.intra[t] + state.diag[pair.col_b] - pair.target;
      if (std::abs(calib) > kConsistentRow) return false;
      const double sa = state.diag[pair.col_a] - state.p.col(pair.col_a).squaredNorm();
      const double sb = state.diag[pair.col_b] - state.p.col(pair.col_b).squaredNorm();
      const double off = state.intra[t] - state.p.col(pair.col_a).dot(state.p.col(pair.col_b));
      if (sa * sb - off * off <= 0.0) return false;
    }
    for (size_t c = 0; c < model_.cross.size(); ++c) {
      const EsdpCrossVar& cv = model_.cross[c];
      const double sa = state.diag[cv.col_a] - state.p.col(cv.col_a).squaredNorm();
      const double sb = state.diag[cv.col_b] - state.p.col(cv.col_b).squaredNorm();
      const double off = state.cross[c] - state.p.col(cv.col_a).dot(state.p.col(cv.col_b));
      if (smallest_eigenvalue2(sa, off, sb) < -kConsistentEig) return false;
    }
    return true;
  }

  void refresh(BlockWork& blk, const EsdpState& state) {
    for (CompiledTerm& term : blk.terms) {
      if (term.model_edge < 0) continue;  // anchor bases are static
      const EsdpEdgeTerm& edge = model_.edge_terms[term.model_edge];
      const EsdpCrossVar& cv = model_.cross[edge.cross];
      const bool a_here = problem_.map.agent_of(edge.col_a) == blk.agent;
      const int other = a_here ? edge.col_b : edge.col_a;
      term.base = state.diag[other] - edge.q;
      if (cv.owner_agent != blk.agent) term.base -= 2.0 * state.cross[edge.cross];
    }
    for (MinorRow& row : blk.minors) {
      row.nb_p = state.p.col(row.nb_col);
      const double slack = state.diag[row.nb_col] - row.nb_p.squaredNorm();
      // A positive surplus is used as is, however small: the pair bound it
      // induces is exactly the one the neighbor's own solve maintained, so
      // substituting a larger value would let this block push the shared
      // entry past what the true cone admits and hand the neighbor an
      // infeasible start. Only a nonpositive surplus (possible in handed-in
      // states) is floored to keep the bound well defined.
      if (slack > 0.0) {
        row.nb_slack = slack;
      } else {
        slack_floors_.fetch_add(1, std::memory_order_relaxed);
        row.nb_slack = kNeighborSlackFloor;
      }
      if (row.cross_slot < 0) row.cross_value = state.cross[row.model_cross];
    }
    // The residual Hessian is constant over a block solve.
    blk.h_obj.setZero();
    for (const CompiledTerm& term : blk.terms)
      for (const auto& [i, ci] : term.entries)
        for (const auto& [j, cj] : term.entries) blk.h_obj(i, j) += 2.0 * term.weight * ci * cj;
  }

  void gather(BlockWork& blk, const EsdpState& state) const {
    const int d = problem_.dimension;
    const int count = blk.sensor_count;
    Vec p(count * d);
    for (int s = 0; s < count; ++s) p.segment(s * d, d) = state.p.col(blk.first_col + s);
    blk.z.head(blk.nf) = blk.N.transpose() * (p - blk.p_part);
    for (int s = 0; s < count; ++s) blk.z[blk.nf + s] = state.diag[blk.first_col + s];
    for (int k = 0; k < static_cast<int>(blk.owned_cross.size()); ++k)
      blk.z[blk.nf + count + k] = state.cross[blk.owned_cross[k]];
  }

  void x_from_z(const BlockWork& blk, const Vec& z, Vec& x) const {
    x = blk.b;
    x.noalias() += blk.A * z;
  }

  void scatter(const BlockWork& blk, EsdpState& state) const {
    const int d = problem_.dimension;
    const int count = blk.sensor_count;
    for (int s = 0; s < count; ++s) {
      state.p.col(blk.first_col + s) = blk.x.segment(s * d, d);
      state.diag[blk.first_col + s] = blk.x[count * d + s];
    }
    int slot = count * (d + 1);
    for (int t : blk.intra_indices) state.intra[t] = blk.x[slot++];
    for (int c : blk.owned_cross) state.cross[c] = blk.x[slot++];
  }

  double minor_value(const Vec& x, const MinorRow& row) const {
    const int d = problem_.dimension;
    const auto p = x.segment(row.p_base, d);
    const double cross = row.cross_slot >= 0 ? x[row.cross_slot] : row.cross_value;
    const double y = cross - p.dot(row.nb_p);
    return x[row.diag_slot] - p.squaredNorm() - y * y / row.nb_slack;
  }

  void cone_entries(const Vec& x, const ConeBlock& cone, double* s00, double* s01,
                    double* s11) const {
    const int d = problem_.dimension;
    const auto pa = x.segment(cone.pa, d);
    const auto pb = x.segment(cone.pb, d);
    *s00 = x[cone.da] - pa.squaredNorm();
    *s01 = x[cone.ab] - pa.dot(pb);
    *s11 = x[cone.db] - pb.squaredNorm();
  }

  bool strictly_feasible(const BlockWork& blk, const Vec& x) const {
    const int d = problem_.dimension;
    for (const SlackRow& row : blk.slacks)
      if (x[row.diag_slot] - x.segment(row.p_base, d).squaredNorm() <= 0.0) return false;
    for (const MinorRow& row : blk.minors)
      if (minor_value(x, row) <= 0.0) return false;
    for (const ConeBlock& cone : blk.cones) {
      double s00, s01, s11;
      cone_entries(x, cone, &s00, &s01, &s11);
      if (s00 <= 0.0 || s00 * s11 - s01 * s01 <= 0.0) return false;
    }
    return true;
  }

  // Objective plus barrier value at a strictly feasible x.
  double stage_value(const BlockWork& blk, const Vec& x, double mu) const {
    double f = 0.0;
    for (const CompiledTerm& term : blk.terms) {
      double r = term.base;
      for (const auto& [slot, coeff] : term.entries) r += coeff * x[slot];
      f += term.weight * r * r;
    }
    const int d = problem_.dimension;
    for (const SlackRow& row : blk.slacks)
      f -= mu * std::log(x[row.diag_slot] - x.segment(row.p_base, d).squaredNorm());
    for (const MinorRow& row : blk.minors) f -= mu * std::log(minor_value(x, row));
    for (const ConeBlock& cone : blk.cones) {
      double s00, s01, s11;
      cone_entries(x, cone, &s00, &s01, &s11);
    f -= mu * std::log(s00 * s11 - s01 * s01);
    }
    return f;
  }

  // Gradient and Hessian of the barrier-augmented block objective in the
  // natural variables. Assumes x strictly feasible.
  void eval(BlockWork& blk, const Vec& x, double mu) const {
    const int d = problem_.dimension;
    blk.gx.setZero();
    blk.Hx = blk.h_obj;

    for (const CompiledTerm& term : blk.terms) {
      double r = term.base;
      for (const auto& [slot, coeff] : term.entries) r += coeff * x[slot];
      for (const auto& [slot, coeff] : term.entries)
        blk.gx[slot] += 2.0 * term.weight * r * coeff;
    }

    for (const SlackRow& row : blk.slacks) {
      const auto p = x.segment(row.p_base, d);
      const double s = x[row.diag_slot] - p.squaredNorm();
      const double gs = mu / s;
      blk.gx[row.diag_slot] -= gs;
      blk.gx.segment(row.p_base, d) += 2.0 * gs * p;
      const double g2 = gs / s;
      blk.Hx(row.diag_slot, row.diag_slot) += g2;
      for (int k = 0; k < d; ++k) {
        blk.Hx(row.diag_slot, row.p_base + k) -= 2.0 * g2 * p[k];
        blk.Hx(row.p_base + k, row.diag_slot) -= 2.0 * g2 * p[k];
        blk.Hx(row.p_base + k, row.p_base + k) += 2.0 * gs;
        for (int l = 0; l < d; ++l)
          blk.Hx(row.p_base + k, row.p_base + l) += 4.0 * g2 * p[k] * p[l];
      }
    }

    for (const MinorRow& row : blk.minors) {
      const auto p = x.segment(row.p_base, d);
      const double cross = row.cross_slot >= 0 ? x[row.cross_slot] : row.cross_value;
      const double y = cross - p.dot(row.nb_p);
      const double g = x[row.diag_slot] - p.squaredNorm() - y * y / row.nb_slack;
      const double gg = mu / g;
      const double yfac = 2.0 * y / row.nb_slack;
      blk.gx[row.diag_slot] -= gg;
      blk.gx.segment(row.p_base, d) += gg * (2.0 * p - yfac * row.nb_p);
      if (row.cross_slot >= 0) blk.gx[row.cross_slot] += gg * yfac;
      const double g2 = gg / g;
      const int nv = d + 2;
      std::array<double, 5> dg{}, dy{};
      std::array<int, 5> slots{};
      slots[0] = row.diag_slot;
      dg[0] = 1.0;
      dy[0] = 0.0;
      for (int k = 0; k < d; ++k) {
        slots[1 + k] = row.p_base + k;
        dy[1 + k] = -row.nb_p[k];
        dg[1 + k] = -2.0 * p[k] - yfac * dy[1 + k];
      }
      slots[nv - 1] = row.cross_slot >= 0 ? row.cross_slot : -1;
      dy[nv - 1] = 1.0;
      dg[nv - 1] = -yfac;
      const int used = row.cross_slot >= 0 ? nv : nv - 1;
      for (int a = 0; a < used; ++a)
        for (int b = 0; b < used; ++b)
          blk.Hx(slots[a], slots[b]) +=
              g2 * dg[a] * dg[b] + gg * (2.0 / row.nb_slack) * dy[a] * dy[b];
      for (int k = 0; k < d; ++k) blk.Hx(row.p_base + k, row.p_base + k) += 2.0 * gg;
    }

    for (const ConeBlock& cone : blk.cones) {
      double s00, s01, s11;
      cone_entries(x, cone, &s00, &s01, &s11);
      const double det = s00 * s11 - s01 * s01;
      const double alpha = s11 / det, beta = -s01 / det, gamma = s00 / det;
      const auto pa = x.segment(cone.pa, d);
      const auto pb = x.segment(cone.pb, d);
      // Involved variables and the 2x2 derivative of the cone block each.
      const int nv = 3 + 2 * d;
      std::array<int, 9> slots{};
      std::array<Eigen::Matrix2d, 9> dm;
      slots[0] = cone.da;
      dm[0] << 1, 0, 0, 0;
      slots[1] = cone.ab;
      dm[1] << 0, 1, 1, 0;
      slots[2] = cone.db;
      dm[2] << 0, 0, 0, 1;
      for (int k = 0; k < d; ++k) {
        slots[3 + k] = cone.pa + k;
        dm[3 + k] << -2.0 * pa[k], -pb[k], -pb[k], 0.0;
        slots[3 + d + k] = cone.pb + k;
        dm[3 + d + k] << 0.0, -pa[k], -pa[k], -2.0 * pb[k];
      }
      Eigen::Matrix2d sinv;
      sinv << alpha, beta, beta, gamma;
      std::array<Eigen::Matrix2d, 9> sm;
      for (int a = 0; a < nv; ++a) {
        sm[a] = sinv * dm[a];
        blk.gx[slots[a]] -= mu * sm[a].trace();
      }
      for (int a = 0; a < nv; ++a)
        for (int b = 0; b < nv; ++b)
          blk.Hx(slots[a], slots[b]) += mu * (sm[a] * sm[b]).trace();
      for (int k = 0; k < d; ++k) {
        blk.Hx(cone.pa + k, cone.pa + k) += 2.0 * mu * alpha;
        blk.Hx(cone.pb + k, cone.pb + k) += 2.0 * mu * gamma;
        blk.Hx(cone.pa + k, cone.pb + k) += 2.0 * mu * beta;
        blk.Hx(cone.pb + k, cone.pa + k) += 2.0 * mu * beta;
      }
    }
  }

  // Largest step from x0 along dx that keeps every diagonal surplus and
  // pair bound strictly positive; both margins are exact quadratics in the
  // step length. Calibration cone determinants are quartic and are left to
  // the halving loop, which rarely has to act on them.
  double wall_bound(const BlockWork& blk, const Vec& x0, const Vec& dx) const {
    const int d = problem_.dimension;
    double bound = std::numeric_limits<double>::infinity();
    for (const SlackRow& row : blk.slacks) {
      const auto p0 = x0.segment(row.p_base, d);
      const auto dp = dx.segment(row.p_base, d);
      bound = std::min(bound, first_crossing(x0[row.diag_slot] - p0.squaredNorm(),
                                             dx[row.diag_slot] - 2.0 * p0.dot(dp),
                                             -dp.squaredNorm()));
    }
    for (const MinorRow& row : blk.minors) {
      const auto p0 = x0.segment(row.p_base, d);
      const auto dp = dx.segment(row.p_base, d);
      const double s0 = x0[row.diag_slot] - p0.squaredNorm();
      const double s1 = dx[row.diag_slot] - 2.0 * p0.dot(dp);
      const double s2 = -dp.squaredNorm();
      const double y0 =
          (row.cross_slot >= 0 ? x0[row.cross_slot] : row.cross_value) - p0.dot(row.nb_p);
      const double y1 = (row.cross_slot >= 0 ? dx[row.cross_slot] : 0.0) - dp.dot(row.nb_p);
      bound = std::min(bound, first_crossing(s0 * row.nb_slack - y0 * y0,
                                             s1 * row.nb_slack - 2.0 * y0 * y1,
                                             s2 * row.nb_slack - y1 * y1));
    }
    return bound;
  }

  // One barrier stage: damped Newton in the reduced coordinates at fixed mu.
  // Every iterate is strictly feasible; the stage stops on the Newton
  // decrement. Returns false when the iteration budget ran out or no usable
  // step existed while meaningful progress remained.
  bool newton_stage(BlockWork& blk, double mu, int budget) const {
    static const bool dbg = std::getenv("ESDP_TRACE") != nullptr;
    for (int iter = 0; iter < budget; ++iter) {
      x_from_z(blk, blk.z, blk.x);
      eval(blk, blk.x, mu);
      const double f = stage_value(blk, blk.x, mu);
      blk.gz.noalias() = blk.A.transpose() * blk.gx;
      blk.W.noalias() = blk.Hx * blk.A;
      blk.Hz.noalias() = blk.A.transpose() * blk.W;

      const double tol = options_.newton_tol * (1.0 + std::abs(f));

      // The Hessian mixes barrier curvature (mu / g^2 near an active row)
      // with residual curvature, a spread that can exceed what a plain
      // factorization resolves once mu is small. Jacobi equilibration plus
      // one round of iterative refinement keeps the solve honest, and
      // progressive Marquardt damping is the fallback when the residual
      // check still fails.
      const Vec scale =
          blk.Hz.diagonal().cwiseAbs().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
      const Mat Hs = scale.asDiagonal() * blk.Hz * scale.asDiagonal();
      const Vec gs = scale.asDiagonal() * blk.gz;
      const double gs_norm = gs.norm();
      double decrement = 0.0;
      double damping = 0.0;
      bool usable = false;
      for (int attempt = 0; attempt < 8; ++attempt) {
        Mat Hd = Hs;
        if (damping > 0.0) Hd.diagonal().array() += damping;
        Eigen::LDLT<Mat> ldlt(Hd);
        if (ldlt.info() == Eigen::Success) {
          Vec ds = ldlt.solve(-gs);
          ds += ldlt.solve(-gs - Hd * ds);
          const double residual = (Hd * ds + gs).norm();
          blk.dz = scale.asDiagonal() * ds;
          decrement = -blk.gz.dot(blk.dz);
          if (blk.dz.allFinite() && decrement > 0.0 &&
              residual <= kSolveResidual * (gs_norm + 1e-300)) {
            usable = true;
            break;
          }
        }
        damping = damping == 0.0 ? 1e-12 : damping * 100.0;
      }
      if (!usable) {
        if (dbg)
          std::fprintf(stderr,
                       "[unusable] agent %d mu %.1e iter %d f %.6e gnorm %.3e "
                       "damp %.1e dec %.3e\n",
                       blk.agent, mu, iter, f, gs_norm, damping, decrement);
        return false;
      }
      if (0.5 * decrement <= tol) return true;

      // Step to just inside the nearest wall rather than probing by halving:
      // a halved step that lands microscopically short of a bound produces a
      // barrier value dominated by that one log term and the search dies on
      // it. The quadratic data term dominates far from the walls, so the
      // full Newton step is the right first trial; backtracking below only
      // engages when barrier curvature actually bites.
      blk.dx.noalias() = blk.A * blk.dz;
      double t = std::min(1.0, 0.995 * wall_bound(blk, blk.x, blk.dx));
      while (t >= kMinStep) {
        blk.trial_z = blk.z + t * blk.dz;
        x_from_z(blk, blk.trial_z, blk.trial_x);
        if (strictly_feasible(blk, blk.trial_x)) break;
        t *= 0.5;
      }
      // Sufficient decrease carries an explicit rounding allowance: stage
      // values of size F only resolve differences above machine epsilon
      // times F, and a short step against a wall must not fail on noise.
      const double allow = 1e-14 * (1.0 + std::abs(f));
      bool accepted = false;
      while (t >= kMinStep) {
        blk.trial_z = blk.z + t * blk.dz;
        x_from_z(blk, blk.trial_z, blk.trial_x);
        if (stage_value(blk, blk.trial_x, mu) <= f - kArmijo * t * decrement + allow) {
          blk.z = blk.trial_z;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) {
        if (dbg)
          std::fprintf(stderr,
                       "[linesearch] agent %d mu %.1e iter %d f %.6e dec %.3e "
                       "wall %.3e\n",
                       blk.agent, mu, iter, f, decrement,
                       wall_bound(blk, blk.x, blk.dx));
        return false;
      }
      static const int vagent =
          std::getenv("ESDP_VERBOSE") ? std::atoi(std::getenv("ESDP_VERBOSE")) : -1;
      if (dbg && (iter % 50 == 49 || blk.agent == vagent))
        std::fprintf(stderr,
                     "[crawl] agent %d mu %.1e iter %d f %.6e dec %.3e step %.3e "
                     "wall %.3e damp %.1e\n",
                     blk.agent, mu, iter, f, decrement, t,
                     wall_bound(blk, blk.x, blk.dx), damping);
    }
    if (dbg) {
      x_from_z(blk, blk.z, blk.x);
      eval(blk, blk.x, mu);
      blk.gz.noalias() = blk.A.transpose() * blk.gx;
      double smin = std::numeric_limits<double>::infinity();
      for (const SlackRow& row : blk.slacks)
        smin = std::min(smin, blk.x[row.diag_slot] -
                                  blk.x.segment(row.p_base, problem_.dimension)
                                      .squaredNorm());
      double gmin = std::numeric_limits<double>::infinity();
      for (const MinorRow& row : blk.minors)
        gmin = std::min(gmin, minor_value(blk.x, row));
      std::fprintf(stderr,
                   "[budget] agent %d mu %.1e f %.6e gz %.3e smin %.3e gmin %.3e\n",
                   blk.agent, mu, stage_value(blk, blk.x, mu), blk.gz.norm(),
                   smin, gmin);
    }
    return false;
  }

  const EsdpModel& model_;
  const RealizationProblem& problem_;
  EsdpOptions options_;
  std::vector<BlockWork> blocks_;
  mutable std::atomic<long> slack_floors_{0};
  mutable std::atomic<long> stage_failures_{0};
};

void pin_frozen(const RealizationProblem& problem, EsdpState& state) {
  for (int c = 0; c < problem.total(); ++c) {
    if (!problem.frozen[c]) continue;
    state.p.col(c) = problem.fixed.col(c);
    state.diag[c] = problem.fixed.col(c).squaredNorm();
  }
}

void validate_state(const EsdpModel& model, const EsdpState& state) {
  const RealizationProblem& problem = *model.problem;
  if (state.p.rows() != problem.dimension || state.p.cols() != problem.total())
    throw std::invalid_argument("state position block has the wrong shape");
  if (state.diag.size() != problem.total() ||
      state.intra.size() != static_cast<Eigen::Index>(model.intra.size()) ||
      state.cross.size() != static_cast<Eigen::Index>(model.cross.size()))
    throw std::invalid_argument("state Gram blocks do not match the model");
}

}  // namespace

EsdpModel build_esdp_model(const RealizationProblem& problem) {
  bool any_anchor = false;
  for (char frozen : problem.agent_frozen) any_anchor = any_anchor || frozen;
  if (!any_anchor)
    throw std::invalid_argument(
        "relaxation needs at least one anchored agent: without fixed sensors the "
        "position block can collapse to zero while the Gram diagonal still explains "
        "every range, so nothing informative could be extracted");

  EsdpModel model;
  model.problem = &problem;
  for (int c = 0; c < problem.total(); ++c)
    if (problem.frozen[c]) ++model.anchor_sensor_count;
  if (model.anchor_sensor_count < problem.dimension + 1)
    model.warnings.push_back(
        "fewer than dimension + 1 anchor sensors: anchored localization is not unique "
        "and the relaxation will likely stay loose");

  if (!problem.edges.empty()) {
    double sum = 0.0;
    for (const EdgeTerm& edge : problem.edges) sum += edge.weight;
    model.mean_weight = sum / static_cast<double>(problem.edges.size());
  }

  std::unordered_map<long long, int> cross_index;
  for (const EdgeTerm& edge : problem.edges) {
    const int lo = std::min(edge.col_a, edge.col_b);
    const int hi = std::max(edge.col_a, edge.col_b);
    const bool frozen_lo = problem.frozen[lo];
    const bool frozen_hi = problem.frozen[hi];
    const double w = edge.weight / model.mean_weight;
    if (frozen_lo && frozen_hi) {
      const double r =
          (problem.fixed.col(lo) - problem.fixed.col(hi)).squaredNorm() - edge.q;
      model.constant_term += edge.weight * r * r;
      continue;
    }
    if (frozen_lo || frozen_hi) {
      const int free_col = frozen_lo ? hi : lo;
      const int anchor_col = frozen_lo ? lo : hi;
      model.anchor_terms.push_back({free_col, problem.fixed.col(anchor_col), edge.q, w});
      continue;
    }
    const long long key = static_cast<long long>(lo) * problem.total() + hi;
    auto found = cross_index.find(key);
    int idx;
    if (found == cross_index.end()) {
      idx = static_cast<int>(model.cross.size());
      cross_index.emplace(key, idx);
      model.cross.push_back({lo, hi, problem.map.agent_of(lo)});
    } else {
      idx = found->second;
    }
    model.edge_terms.push_back({idx, lo, hi, edge.q, w});
  }

  for (const CalibPair& pair : problem.calib) {
    if (problem.agent_frozen[pair.agent]) continue;
    model.intra.push_back({pair.agent, pair.col_a, pair.col_b, pair.target});
  }
  return model;
}

EsdpState init_esdp_state(const EsdpModel& model, const std::optional<Realization>& p0,
                          double s0) {
  const RealizationProblem& problem = *model.problem;
  if (s0 <= 0.0) throw std::invalid_argument("diagonal lift must be positive");
  EsdpState state;
  if (p0) {
    if (p0->rows() != problem.dimension || p0->cols() != problem.total())
      throw std::invalid_argument("initial realization has the wrong shape");
    state.p = *p0;
  } else {
    state.p = Realization::Zero(problem.dimension, problem.total());
  }
  state.diag.resize(problem.total());
  for (int c = 0; c < problem.total(); ++c) state.diag[c] = state.p.col(c).squaredNorm() + s0;
  pin_frozen(problem, state);
  state.intra.resize(model.intra.size());
  for (size_t t = 0; t < model.intra.size(); ++t)
    state.intra[t] = state.p.col(model.intra[t].col_a).dot(state.p.col(model.intra[t].col_b));
  state.cross.resize(model.cross.size());
  for (size_t c = 0; c < model.cross.size(); ++c)
    state.cross[c] = state.p.col(model.cross[c].col_a).dot(state.p.col(model.cross[c].col_b));
  return state;
}

double esdp_objective(const EsdpModel& model, const EsdpState& state) {
  double total = 0.0;
  for (const EsdpEdgeTerm& term : model.edge_terms) {
    const double r =
        state.diag[term.col_a] + state.diag[term.col_b] - 2.0 * state.cross[term.cross] - term.q;
    total += term.weight * r * r;
  }
  for (const EsdpAnchorTerm& term : model.anchor_terms) {
    const double r = state.diag[term.col] - 2.0 * term.anchor.dot(state.p.col(term.col)) +
                     term.anchor.squaredNorm() - term.q;
    total += term.weight * r * r;
  }
  return model.mean_weight * total + model.constant_term;
}

double esdp_block_objective(const EsdpModel& model, const EsdpState& state, int agent) {
  const RealizationProblem& problem = *model.problem;
  double total = 0.0;
  for (const EsdpEdgeTerm& term : model.edge_terms) {
    if (problem.map.agent_of(term.col_a) != agent && problem.map.agent_of(term.col_b) != agent)
      continue;
    const double r =
        state.diag[term.col_a] + state.diag[term.col_b] - 2.0 * state.cross[term.cross] - term.q;
    total += term.weight * r * r;
  }
  for (const EsdpAnchorTerm& term : model.anchor_terms) {
    if (problem.map.agent_of(term.col) != agent) continue;
    const double r = state.diag[term.col] - 2.0 * term.anchor.dot(state.p.col(term.col)) +
                     term.anchor.squaredNorm() - term.q;
    total += term.weight * r * r;
  }
  return model.mean_weight * total;
}

EsdpBlockStructure esdp_block_structure(const EsdpModel& model, int agent) {
  const RealizationProblem& problem = *model.problem;
  EsdpBlockStructure out;
  out.agent = agent;
  if (agent < 0 || agent >= problem.agent_count())
    throw std::invalid_argument("no such agent");
  if (problem.agent_frozen[agent]) return out;
  const int d = problem.dimension;
  const int count = problem.map.count[agent];
  int intra = 0;
  for (const EsdpIntraVar& pair : model.intra) intra += pair.agent == agent ? 1 : 0;
  int owned = 0, minors = 0;
  for (const EsdpCrossVar& cv : model.cross) {
    owned += cv.owner_agent == agent ? 1 : 0;
    minors += problem.map.agent_of(cv.col_a) == agent ? 1 : 0;
    minors += problem.map.agent_of(cv.col_b) == agent ? 1 : 0;
  }
  int rows = 0;
  for (const LinearRow& row : problem.rows) rows += row.agent == agent ? 1 : 0;
  out.variable_count = count * (d + 1) + intra + owned;
  out.slack_rows = count;
  out.minor_rows = minors;
  out.cone_blocks = intra;
  out.equality_rows = intra + rows;
  return out;
}

double esdp_max_violation(const EsdpModel& model, const EsdpState& state) {
  const RealizationProblem& problem = *model.problem;
  double worst = 0.0;
  for (int c = 0; c < problem.total(); ++c) {
    if (problem.frozen[c]) continue;
    worst = std::max(worst, state.p.col(c).squaredNorm() - state.diag[c]);
  }
  for (size_t c = 0; c < model.cross.size(); ++c) {
    const EsdpCrossVar& cv = model.cross[c];
    const double sa = state.diag[cv.col_a] - state.p.col(cv.col_a).squaredNorm();
    const double sb = state.diag[cv.col_b] - state.p.col(cv.col_b).squaredNorm();
    const double off = state.cross[c] - state.p.col(cv.col_a).dot(state.p.col(cv.col_b));
    worst = std::max(worst, -smallest_eigenvalue2(sa, off, sb));
  }
  for (size_t t = 0; t < model.intra.size(); ++t) {
    const EsdpIntraVar& pair = model.intra[t];
    const double sa = state.diag[pair.col_a] - state.p.col(pair.col_a).squaredNorm();
    const double sb = state.diag[pair.col_b] - state.p.col(pair.col_b).squaredNorm();
    const double off = state.intra[t] - state.p.col(pair.col_a).dot(state.p.col(pair.col_b));
    worst = std::max(worst, -smallest_eigenvalue2(sa, off, sb));
    const double calib =
        state.diag[pair.col_a] - 2.0 * state.intra[t] + state.diag[pair.col_b] - pair.target;
    worst = std::max(worst, std::abs(calib));
  }
  for (const LinearRow& row : problem.rows) {
    if (problem.agent_frozen[row.agent]) continue;  // anchored coordinates are data
    worst = std::max(worst, std::abs(row.evaluate(state.p)));
  }
  return worst;
}

bool trivial_realization(const EsdpModel& model, const EsdpState& state) {
  const RealizationProblem& problem = *model.problem;
  double mean_q = 0.0;
  int terms = 0;
  for (const EsdpEdgeTerm& term : model.edge_terms) {
    mean_q += std::abs(term.q);
    ++terms;
  }
  for (const EsdpAnchorTerm& term : model.anchor_terms) {
    mean_q += std::abs(term.q);
    ++terms;
  }
  if (terms == 0) return false;
  const double scale = std::max(1.0, std::sqrt(mean_q / terms));
  bool any_free = false;
  for (int c = 0; c < problem.total(); ++c) {
    if (problem.frozen[c]) continue;
    any_free = true;
    if (state.p.col(c).norm() > kTrivialPosTol * scale) return false;
  }
  if (!any_free) return false;
  return esdp_objective(model, state) <= kTrivialObjPerTerm * terms;
}

EsdpSolution solve_esdp(const EsdpModel& model, const EsdpState& init,
                        const EsdpOptions& options) {
  const RealizationProblem& problem = *model.problem;
  if (options.epsilon <= 0.0 || options.max_cycles < 1)
    throw std::invalid_argument("invalid termination settings");
  if (options.mu0 <= 0.0 || options.mu_min <= 0.0 || options.mu_min > options.mu0 ||
      options.mu_factor <= 0.0 || options.mu_factor >= 1.0)
    throw std::invalid_argument("invalid barrier schedule");
  if (options.newton_tol <= 0.0 || options.max_newton < 1 || options.workers < 1)
    throw std::invalid_argument("invalid inner solver settings");
  validate_state(model, init);

  EsdpEngine engine(model, options);
  EsdpSolution solution;
  solution.state = init;
  pin_frozen(problem, solution.state);
  engine.normalize_state(solution.state);

  const BlockPartition partition = make_partition(problem, PartitionScheme::PerAgent);
  std::vector<int> free_agents;
  for (const Block& block : partition.blocks)
    if (!block.frozen) free_agents.push_back(block.agent);

  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  if (options.shuffle_seed != 0) {
    // Reference mode: plain cyclic descent in a freshly shuffled order.
    Rng rng(options.shuffle_seed);
    double spent = 0.0;
    for (int cycle = 1; cycle <= options.max_cycles; ++cycle) {
      const Realization before = solution.state.p;
      const std::vector<int> order = rng.permutation(static_cast<int>(free_agents.size()));
      for (int k : order) {
        const auto t0 = std::chrono::steady_clock::now();
        engine.solve_block(free_agents[k], solution.state);
        spent += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      const double move =
          (solution.state.p - before).norm() / std::max(before.norm(), 1e-12);
      solution.trace.push_back({cycle, esdp_objective(model, solution.state),
                                esdp_max_violation(model, solution.state), move, elapsed()});
      solution.cycles = cycle;
      if (move <= options.epsilon) {
        solution.converged = true;
        break;
      }
    }
    solution.parallel_seconds = spent;
    solution.serial_seconds = spent;
  } else {
    const DependencyGraph graph = build_dependency_graph(problem, partition);
    const Coloring coloring = greedy_coloring(graph);
    SweepExecutor executor(partition, coloring, options.workers);
    solution.colors = coloring.color_count();
    auto update = [&](const Block& block) { engine.solve_block(block.agent, solution.state); };
    for (int cycle = 1; cycle <= options.max_cycles; ++cycle) {
      const Realization before = solution.state.p;
      executor.run_sweep(update);
      const double move =
          (solution.state.p - before).norm() / std::max(before.norm(), 1e-12);
      solution.trace.push_back({cycle, esdp_objective(model, solution.state),
                                esdp_max_violation(model, solution.state), move, elapsed()});
      solution.cycles = cycle;
      if (move <= options.epsilon) {
        solution.converged = true;
        break;
      }
    }
    solution.parallel_seconds = executor.parallel_seconds();
    solution.serial_seconds = executor.serial_seconds();
  }

  solution.objective = esdp_objective(model, solution.state);
  solution.slack_floor_count = engine.slack_floor_count();
  solution.stage_failures = engine.stage_failures();
  solution.trivial_extraction = trivial_realization(model, solution.state);
  return solution;
}

Realization extract_realization(const EsdpSolution& solution) { return solution.state.p; }

TightnessReport tightness_report(const RealizationProblem& problem, const Realization& estimate,
                                 const Realization& truth) {
  if (estimate.rows() != problem.dimension || estimate.cols() != problem.total() ||
      truth.rows() != problem.dimension || truth.cols() != problem.total())
    throw std::invalid_argument("realization shape mismatch");
  TightnessReport report;
  int tight = 0, near_tight = 0;
  for (int c = 0; c < problem.total(); ++c) {
    if (problem.frozen[c]) continue;
    const double err = (estimate.col(c) - truth.col(c)).norm();
    report.errors.push_back(err);
    tight += err < kTightError ? 1 : 0;
    near_tight += err < kNearTightError ? 1 : 0;
  }
  if (report.errors.empty()) {
    report.tight_rate = 1.0;
    report.near_tight_rate = 1.0;
    return report;
  }
  const double n = static_cast<double>(report.errors.size());
  report.tight_rate = tight / n;
  report.near_tight_rate = near_tight / n;
  return report;
}

}  // namespace relstate
