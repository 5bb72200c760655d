#include "relstate/bm_solver.hpp"

#include "relstate/schedule.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

#include <atomic>
#include <cmath>

namespace relstate {

namespace {

struct AgentTerms {
  std::vector<std::pair<int, int>> edges;  // (edge index, 0: col_a ours, 1: col_b ours)
  std::vector<int> calib;
  Mat C;  // linear rows over the stacked factor block, rows x (rank * sensors)
  Vec c_rhs;
  Eigen::LLT<Mat> cct;  // C C^T factorization for null-space projections
  int row_count = 0;
};

struct ProxMemory {
  Vec previous;      // block variables one sweep ago
  double lipschitz = 0.0;
  bool primed = false;
};

// Per-agent views of the shared problem plus the block update rules.
class BmEngine {
 public:
  BmEngine(const RealizationProblem& problem, int rank, double lambda, double gamma)
      : problem_(problem), rank_(rank), lambda_(lambda), gamma_(gamma),
        terms_(problem.agent_count()) {
    for (int k = 0; k < static_cast<int>(problem.edges.size()); ++k) {
      const EdgeTerm& e = problem.edges[k];
      if (!problem.agent_frozen[e.agent_a]) terms_[e.agent_a].edges.push_back({k, 0});
      if (!problem.agent_frozen[e.agent_b]) terms_[e.agent_b].edges.push_back({k, 1});
    }
    for (int k = 0; k < static_cast<int>(problem.calib.size()); ++k)
      terms_[problem.calib[k].agent].calib.push_back(k);

    std::vector<std::vector<int>> agent_rows(problem.agent_count());
    for (int k = 0; k < static_cast<int>(problem.rows.size()); ++k)
      agent_rows[problem.rows[k].agent].push_back(k);
    for (int i = 0; i < problem.agent_count(); ++i) {
      AgentTerms& t = terms_[i];
      t.row_count = static_cast<int>(agent_rows[i].size());
      if (t.row_count == 0) continue;
      const int vars = rank_ * problem.layouts[i].count();
      const int base = problem.map.first[i];
      t.C.setZero(t.row_count, vars);
      t.c_rhs.resize(t.row_count);
      for (int r = 0; r < t.row_count; ++r) {
        const LinearRow& row = problem.rows[agent_rows[i][r]];
        for (const LinearEntry& e : row.entries)
          t.C(r, (e.col - base) * rank_ + e.coord) = e.coeff;
        t.c_rhs[r] = row.rhs;
      }
      t.cct.compute(t.C * t.C.transpose());
    }
  }

  // Quadratic data of the objective restricted to one factor block at the
  // current state: f(x) = 0.5 x^T H x - g^T x + const.
  void assemble(const BmState& state, const Block& block, Mat& H, Vec& g) const {
    const bool left = block.factor == BlockFactor::Left;
    const Mat& own = left ? state.U : state.V;
    const Mat& other = left ? state.V : state.U;
    const int agent = block.agent;
    const int base = problem_.map.first[agent];
    const int sensors = problem_.layouts[agent].count();
    const int n = rank_ * sensors;
    H.setZero(n, n);
    g.setZero(n);
    for (const auto& [k, side] : terms_[agent].edges) {
      const EdgeTerm& e = problem_.edges[k];
      const Vec v = other.col(e.col_a) - other.col(e.col_b);
      int own_col;
      double sign, b;
      if (side == 0) {
        own_col = e.col_a;
        sign = 1.0;
        b = e.q + v.dot(own.col(e.col_b));
      } else {
        own_col = e.col_b;
        sign = -1.0;
        b = e.q - v.dot(own.col(e.col_a));
      }
      const int s = (own_col - base) * rank_;
      H.block(s, s, rank_, rank_) += 2.0 * e.weight * v * v.transpose();
      g.segment(s, rank_) += 2.0 * e.weight * sign * b * v;
    }
    for (int k : terms_[agent].calib) {
      const CalibPair& pair = problem_.calib[k];
      const Vec v = other.col(pair.col_a) - other.col(pair.col_b);
      const int sa = (pair.col_a - base) * rank_;
      const int sb = (pair.col_b - base) * rank_;
      const Mat vvt = 2.0 * lambda_ * v * v.transpose();
      H.block(sa, sa, rank_, rank_) += vvt;
      H.block(sb, sb, rank_, rank_) += vvt;
      H.block(sa, sb, rank_, rank_) -= vvt;
      H.block(sb, sa, rank_, rank_) -= vvt;
      const Vec gv = 2.0 * lambda_ * pair.target * v;
      g.segment(sa, rank_) += gv;
      g.segment(sb, rank_) -= gv;
    }
    H.diagonal().array() += 2.0 * gamma_;
    for (int u = 0; u < sensors; ++u)
      g.segment(u * rank_, rank_) += 2.0 * gamma_ * other.col(base + u);
  }

  Vec block_variables(const BmState& state, const Block& block) const {
    const Mat& own = block.factor == BlockFactor::Left ? state.U : state.V;
    const int base = problem_.map.first[block.agent];
    const int sensors = problem_.layouts[block.agent].count();
    Vec x(rank_ * sensors);
    for (int u = 0; u < sensors; ++u) x.segment(u * rank_, rank_) = own.col(base + u);
    return x;
  }

  void store_block(BmState& state, const Block& block, const Vec& x) const {
    Mat& own = block.factor == BlockFactor::Left ? state.U : state.V;
    const int base = problem_.map.first[block.agent];
    const int sensors = problem_.layouts[block.agent].count();
    for (int u = 0; u < sensors; ++u) own.col(base + u) = x.segment(u * rank_, rank_);
  }

  void exact_update(BmState& state, const Block& block, std::atomic<int>& fallbacks) const {
    Mat H;
    Vec g;
    assemble(state, block, H, g);
    const AgentTerms& t = terms_[block.agent];
    const int n = static_cast<int>(g.size());
    const int m = t.row_count;
    // The stationarity rows are divided by the largest curvature entry so
    // they live on the same scale as the O(1) constraint rows; otherwise
    // huge range weights push the pivot threshold above the constraint
    // pivots. The multiplier estimate absorbs the scaling, x does not.
    const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
    Mat K(n + m, n + m);
    K.setZero();
    K.topLeftCorner(n, n) = H / scale;
    Vec rhs(n + m);
    rhs.head(n) = g / scale;
    if (m > 0) {
      K.topRightCorner(n, m) = t.C.transpose();
      K.bottomLeftCorner(m, n) = t.C;
      rhs.tail(m) = t.c_rhs;
    }
    Eigen::FullPivLU<Mat> lu(K);
    Vec x;
    if (lu.isInvertible()) {
      x = lu.solve(rhs).head(n);
    } else {
      // Singular stationarity system (for example a zero coupling weight
      // with an unobserved direction): take the minimum-norm solution.
      Eigen::CompleteOrthogonalDecomposition<Mat> cod(K);
      x = cod.solve(rhs).head(n);
      ++fallbacks;
    }
    store_block(state, block, x);
  }

  void prox_update(BmState& state, const Block& block, ProxMemory& memory, double delta) const {
    Mat H;
    Vec g;
    assemble(state, block, H, g);
    Eigen::SelfAdjointEigenSolver<Mat> eig(H, Eigen::EigenvaluesOnly);
    const double lipschitz = eig.eigenvalues().maxCoeff();
    const Vec x = block_variables(state, block);
    Vec xhat = x;
    if (memory.primed) {
      const double w = std::min(1.0, delta * std::sqrt(memory.lipschitz / lipschitz));
      xhat += w * (x - memory.previous);
    }
    Vec grad = H * xhat - g;
    project_rows(block.agent, grad);
    store_block(state, block, Vec(xhat - grad / lipschitz));
    memory.previous = x;
    memory.lipschitz = lipschitz;
    memory.primed = true;
  }

  // Removes the component along the agent's constraint rows so steps stay
  // inside the feasible affine set.
  void project_rows(int agent, Vec& grad) const {
    const AgentTerms& t = terms_[agent];
    if (t.row_count == 0) return;
    grad -= t.C.transpose() * t.cct.solve(t.C * grad);
  }

 private:
  const RealizationProblem& problem_;
  int rank_;
  double lambda_;
  double gamma_;
  std::vector<AgentTerms> terms_;
};

void enforce_frozen(const RealizationProblem& problem, int rank, Mat& F) {
  for (int c = 0; c < problem.total(); ++c) {
    if (!problem.frozen[c]) continue;
    F.col(c).setZero();
    F.col(c).head(problem.dimension) = problem.fixed.col(c);
  }
  (void)rank;
}

double resolve_weight(double requested, const RealizationProblem& problem) {
  return requested >= 0.0 ? requested : bm_mean_edge_weight(problem);
}

}  // namespace

Mat lift_init(const RealizationProblem& problem, const Realization& p, int rank, double jitter,
              Rng* rng) {
  if (p.rows() != problem.dimension || p.cols() != problem.total())
    throw std::invalid_argument("realization shape does not match the problem");
  if (rank < problem.dimension)
    throw std::invalid_argument("lift rank must be at least the problem dimension");
  if (jitter > 0.0 && rng == nullptr)
    throw std::invalid_argument("jitter needs a random generator");
  Mat U = Mat::Zero(rank, problem.total());
  U.topRows(problem.dimension) = p;
  if (jitter > 0.0)
    for (int c = 0; c < U.cols(); ++c)
      for (int r = problem.dimension; r < rank; ++r) U(r, c) = rng->uniform(-jitter, jitter);
  enforce_frozen(problem, rank, U);
  return U;
}

double bm_mean_edge_weight(const RealizationProblem& problem) {
  if (problem.edges.empty()) throw std::invalid_argument("problem has no range terms");
  double sum = 0.0;
  for (const EdgeTerm& e : problem.edges) sum += e.weight;
  return sum / static_cast<double>(problem.edges.size());
}

double bm_objective(const RealizationProblem& problem, const Mat& U, const Mat& V,
                    double lambda, double gamma) {
  double value = 0.0;
  for (const EdgeTerm& e : problem.edges) {
    const double r = (U.col(e.col_a) - U.col(e.col_b)).dot(V.col(e.col_a) - V.col(e.col_b)) - e.q;
    value += e.weight * r * r;
  }
  for (const CalibPair& pair : problem.calib) {
    const double r =
        (U.col(pair.col_a) - U.col(pair.col_b)).dot(V.col(pair.col_a) - V.col(pair.col_b)) -
        pair.target;
    value += lambda * r * r;
  }
  value += gamma * (U - V).squaredNorm();
  return value;
}

double bm_projected_gradient_norm(const RealizationProblem& problem, const BmState& state,
                                  const BmOptions& options) {
  const int rank = static_cast<int>(state.U.rows());
  const BmEngine engine(problem, rank, resolve_weight(options.lambda, problem),
                        resolve_weight(options.gamma, problem));
  const BlockPartition partition = make_partition(problem, PartitionScheme::FactorPairs);
  double total = 0.0;
  Mat H;
  Vec g;
  for (const Block& block : partition.blocks) {
    if (block.frozen) continue;
    engine.assemble(state, block, H, g);
    Vec grad = H * engine.block_variables(state, block) - g;
    engine.project_rows(block.agent, grad);
    total += grad.squaredNorm();
  }
  return std::sqrt(total);
}

BmSolution solve_bm(const RealizationProblem& problem, const BmState& init,
                    const BmOptions& options) {
  const int d = problem.dimension;
  const int rank = static_cast<int>(init.U.rows());
  if (rank < d || init.U.cols() != problem.total() || init.V.rows() != rank ||
      init.V.cols() != problem.total())
    throw std::invalid_argument("factor shapes do not match the problem");
  if (options.epsilon <= 0.0 || options.max_cycles < 1)
    throw std::invalid_argument("invalid termination settings");

  const double lambda = resolve_weight(options.lambda, problem);
  const double gamma = resolve_weight(options.gamma, problem);
  const BmEngine engine(problem, rank, lambda, gamma);

  const BlockPartition partition = make_partition(problem, PartitionScheme::FactorPairs);
  const DependencyGraph graph = build_dependency_graph(problem, partition);
  const Coloring coloring = greedy_coloring(graph);
  const int workers = options.audit_objective ? 1 : options.workers;
  SweepExecutor executor(partition, coloring, workers);

  BmSolution solution;
  solution.state = init;
  enforce_frozen(problem, rank, solution.state.U);
  enforce_frozen(problem, rank, solution.state.V);
  solution.colors = coloring.color_count();

  std::atomic<int> fallbacks{0};
  std::vector<ProxMemory> memory(partition.block_count());
  if (options.audit_objective)
    solution.audit_objectives.push_back(
        bm_objective(problem, solution.state.U, solution.state.V, lambda, gamma));

  auto update = [&](const Block& block) {
    if (options.update == BmUpdate::Exact) {
      engine.exact_update(solution.state, block, fallbacks);
    } else {
      engine.prox_update(solution.state, block, memory[block.id], options.delta);
    }
    if (options.audit_objective)
      solution.audit_objectives.push_back(
          bm_objective(problem, solution.state.U, solution.state.V, lambda, gamma));
  };

  for (int cycle = 1; cycle <= options.max_cycles; ++cycle) {
    const Realization before = solution.state.U.topRows(d);
    executor.run_sweep(update);
    const Realization after = solution.state.U.topRows(d);
    const double move = (after - before).norm() / std::max(before.norm(), 1e-12);
    BmTracePoint point;
    point.cycle = cycle;
    point.objective = bm_objective(problem, solution.state.U, solution.state.V, lambda, gamma);
    point.balance = (solution.state.U - solution.state.V).norm();
    point.move = move;
    solution.trace.push_back(point);
    solution.cycles = cycle;
    if (move <= options.epsilon) {
      solution.converged = true;
      break;
    }
  }

  solution.p = solution.state.U.topRows(d);
  solution.objective = solution.trace.empty()
                           ? bm_objective(problem, solution.state.U, solution.state.V, lambda, gamma)
                           : solution.trace.back().objective;
  solution.parallel_seconds = executor.parallel_seconds();
  solution.serial_seconds = executor.serial_seconds();
  solution.fallback_count = fallbacks.load();
  return solution;
}

BmSolution refine_realization(const RealizationProblem& problem, const Realization& p,
                              BmOptions options) {
  options.rank = problem.dimension;
  BmState state;
  state.U = lift_init(problem, p, problem.dimension);
  state.V = state.U;
  return solve_bm(problem, state, options);
}

}  // namespace relstate
