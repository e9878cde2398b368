#include "hjbi/ergodic.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <limits>
#include <sstream>

#include "hjbi/error.hpp"

namespace hjbi {

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Rows of the linear operator selected by `policy`:  (L v)(i) = sum_k w_k (v_i - v_nb).
void append_policy_rows(const DiscreteOperator& op, const std::vector<std::uint32_t>& policy,
                        std::vector<Triplet>& triplets, double diagonal_shift) {
  const std::size_t K = op.offset_count();
  for (std::size_t i = 0; i < op.node_count(); ++i) {
    const double* w = op.weights(i, policy[i]);
    const std::uint32_t* nb = op.neighbors(i);
    double diag = diagonal_shift;
    for (std::size_t k = 0; k < K; ++k) {
      if (w[k] == 0.0) continue;
      diag += w[k];
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(nb[k]), -w[k]);
    }
    triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), diag);
  }
}

double sup(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// r = delta (level + z) + H_h(z); returns |r|_inf.
double discounted_residual(const DiscreteOperator& op, double delta, double level, const VectorXd& z, VectorXd& r,
                           std::vector<std::uint32_t>* policy = nullptr) {
  apply_hamiltonian(op, z, r, policy);
  r.array() += delta * (level + z.array());
  return sup(r);
}

void renormalize(double& level, VectorXd& z) {
  const double s = z(0);
  level += s;
  z.array() -= s;
}

// Achievable residual given the magnitude of the iterate: difference quotients of
// z carry absolute error eps |z| scaled by the stencil weights.
double roundoff_floor(const DiscreteOperator& op, double delta, double level, const VectorXd& z) {
  return 64.0 * kEps * (op.max_budget() * std::max(1.0, sup(z)) + delta * std::abs(level) + op.max_abs_cost() + 1.0);
}

void push_tail(std::vector<double>& tail, double value) {
  tail.push_back(value);
  if (tail.size() > 20) tail.erase(tail.begin());
}

}  // namespace

GridFunction DiscountedSolve::w() const {
  return GridFunction(deviation.grid, (deviation.values.array() + level).matrix());
}

double DiscountedSolve::scaled_sup() const { return delta * (deviation.values.array() + level).abs().maxCoeff(); }

std::vector<double> default_delta_schedule() { return {1e-1, 3e-2, 1e-2, 3e-3, 1e-3}; }

DiscountedSolve solve_discounted(const DiscreteOperator& op, double delta, const DiscountedOptions& options,
                                 const std::optional<DiscountedGuess>& guess) {
  if (!(delta > 0.0)) throw ConfigError("solve_discounted: delta must be positive");
  if (!(options.tol > 0.0)) throw ConfigError("solve_discounted: tolerance must be positive");
  const auto N = static_cast<Eigen::Index>(op.node_count());
  double level = 0.0;
  VectorXd z = VectorXd::Zero(N);
  if (guess) {
    level = guess->level;
    if (guess->deviation.size() == N) z = guess->deviation;
  }
  renormalize(level, z);

  DiscountedSolve out;
  out.delta = delta;
  VectorXd r;
  std::vector<std::uint32_t> policy;
  double res = discounted_residual(op, delta, level, z, r, &policy);
  long iterations = 0;
  const double tau = cfl_timestep(op, delta, 0.9 / delta);

  const auto marching_step = [&] {
    z -= tau * r;
    renormalize(level, z);
    res = discounted_residual(op, delta, level, z, r, &policy);
    ++iterations;
    push_tail(out.residual_tail, res);
  };

  const auto converged = [&] { return res <= std::max(options.tol, roundoff_floor(op, delta, level, z)); };

  if (options.method == DiscountedMethod::Marching) {
    while (!converged()) {
      if (iterations >= options.max_iterations) break;
      marching_step();
    }
  } else {
    Eigen::SparseLU<SparseMatrix> lu;
    VectorXd r_trial;
    std::vector<std::uint32_t> policy_trial;
    while (!converged() && iterations < options.max_iterations) {
      std::vector<Triplet> triplets;
      append_policy_rows(op, policy, triplets, delta);
      SparseMatrix A(N, N);
      A.setFromTriplets(triplets.begin(), triplets.end());
      lu.compute(A);
      if (lu.info() != Eigen::Success) throw NonConvergenceError("solve_discounted: policy matrix factorization failed");
      const VectorXd dw = lu.solve(-r);
      ++iterations;
      bool accepted = false;
      for (double theta = 1.0; theta >= 1.0 / 16.0; theta *= 0.5) {
        double level_trial = level + theta * dw(0);
        VectorXd z_trial = z + theta * (dw.array() - dw(0)).matrix();
        renormalize(level_trial, z_trial);
        const double res_trial = discounted_residual(op, delta, level_trial, z_trial, r_trial, &policy_trial);
        if (res_trial < res) {
          level = level_trial;
          z = std::move(z_trial);
          r = r_trial;
          policy = policy_trial;
          res = res_trial;
          accepted = true;
          break;
        }
      }
      push_tail(out.residual_tail, res);
      if (!accepted) {
        // The semismooth step did not reduce the residual: contract with explicit sweeps.
        for (int k = 0; k < 50 && !converged() && iterations < options.max_iterations; ++k) marching_step();
      }
    }
  }
  if (!converged()) {
    std::ostringstream os;
    os << "solve_discounted: no convergence after " << iterations << " iterations (delta=" << delta
       << ", residual=" << res << "); residual tail:";
    for (double v : out.residual_tail) os << " " << v;
    throw NonConvergenceError(os.str());
  }
  out.level = level;
  out.deviation = GridFunction(op.grid(), z);
  out.iterations = iterations;
  out.residual = res;
  return out;
}

ErgodicResult ergodic_vanishing_discount(const DiscreteOperator& op, const VanishingDiscountOptions& options) {
  if (options.schedule.empty()) throw ConfigError("ergodic_vanishing_discount: empty delta schedule");
  for (std::size_t k = 1; k < options.schedule.size(); ++k)
    if (!(options.schedule[k] < options.schedule[k - 1]))
      throw ConfigError("ergodic_vanishing_discount: delta schedule must be strictly decreasing");
  if (options.reference_node >= op.node_count()) throw ConfigError("ergodic_vanishing_discount: bad reference node");
  ErgodicResult result;
  result.method = ErgodicMethod::VanishingDiscount;
  std::optional<DiscountedGuess> guess;
  double previous_delta = 0.0;
  std::vector<double> estimates;
  const auto ref = static_cast<Eigen::Index>(options.reference_node);
  for (double delta : options.schedule) {
    if (guess) guess->level *= previous_delta / delta;
    DiscountedSolve solve = solve_discounted(op, delta, options.discounted, guess);
    guess = DiscountedGuess{solve.level, solve.deviation.values};
    previous_delta = delta;
    const double scaled = delta * (solve.level + solve.deviation.values(ref));
    result.deltas.push_back(delta);
    result.scaled_values.push_back(scaled);
    result.node_spread.push_back(delta * (solve.deviation.values.maxCoeff() - solve.deviation.values.minCoeff()));
    result.iterations += solve.iterations;
    estimates.push_back(-scaled);
    result.solves.push_back(std::move(solve));
  }
  result.U = estimates.back();
  result.agreement_gap = estimates.size() > 1 ? std::abs(estimates.back() - estimates[estimates.size() - 2]) : 0.0;
  result.corrector = result.solves.back().deviation;
  VectorXd h;
  apply_hamiltonian(op, result.corrector.values, h);
  result.residual = sup((h.array() - result.U).matrix());
  return result;
}

ErgodicResult ergodic_long_time(const DiscreteOperator& op, double T, const LongTimeOptions& options) {
  ParabolicOptions popt;
  popt.dt_max = options.dt_max;
  const double dt = cfl_timestep(op, 0.0, options.dt_max);
  popt.store_every = options.store_every > 0 ? options.store_every
                                             : std::max(1, static_cast<int>(std::ceil(T / dt / 400.0)));
  const ParabolicTrajectory traj = solve_parabolic(op, T, GridFunction::zero(op.grid()), popt);
  const SlopeEstimate slope = long_time_slope(traj, options.window);
  if (slope.spread > options.spread_threshold) {
    std::ostringstream os;
    os << "ergodic_long_time: slope spread " << slope.spread << " exceeds threshold " << options.spread_threshold
       << " at T=" << T << "; increase T";
    throw InconclusiveError(os.str());
  }
  ErgodicResult result;
  result.method = ErgodicMethod::LongTime;
  result.U = -slope.mean;
  result.horizon = T;
  result.window = options.window;
  result.slope_spread = slope.spread;
  result.agreement_gap = slope.spread;
  result.iterations = traj.steps;
  VectorXd v = traj.final_layer().values;
  v.array() -= v(0);
  result.corrector = GridFunction(op.grid(), v);
  VectorXd h;
  apply_hamiltonian(op, v, h);
  result.residual = sup((h.array() - result.U).matrix());
  return result;
}

ErgodicResult ergodic_direct(const DiscreteOperator& op, const DirectErgodicOptions& options,
                             const VectorXd* warm_start) {
  const auto N = static_cast<Eigen::Index>(op.node_count());
  VectorXd v = VectorXd::Zero(N);
  if (warm_start && warm_start->size() == N) {
    v = *warm_start;
    v.array() -= v(0);
  }
  VectorXd h;
  std::vector<std::uint32_t> policy;
  apply_hamiltonian(op, v, h, &policy);
  double U = h.mean();
  double res = sup((h.array() - U).matrix());
  const auto tolerance = [&] {
    const double floor = 64.0 * kEps * (op.max_budget() * std::max(1.0, sup(v)) + op.max_abs_cost() + 1.0);
    return std::max(options.tol * (1.0 + op.max_abs_cost()), floor);
  };
  int iterations = 0;
  Eigen::SparseLU<SparseMatrix> lu;
  VectorXd h_trial;
  std::vector<std::uint32_t> policy_trial;
  while (res > tolerance()) {
    if (iterations >= options.max_iterations) {
      std::ostringstream os;
      os << "ergodic_direct: no convergence after " << iterations << " iterations (residual " << res << ")";
      throw NonConvergenceError(os.str());
    }
    ++iterations;
    // Unknowns [U, v_1, ..., v_{N-1}]; column 0 of L is replaced by the -1 column of U.
    std::vector<Triplet> rows;
    append_policy_rows(op, policy, rows, 0.0);
    std::vector<Triplet> triplets;
    triplets.reserve(rows.size() + static_cast<std::size_t>(N));
    for (const auto& t : rows)
      if (t.col() != 0) triplets.push_back(t);
    for (Eigen::Index i = 0; i < N; ++i) triplets.emplace_back(static_cast<int>(i), 0, -1.0);
    SparseMatrix J(N, N);
    J.setFromTriplets(triplets.begin(), triplets.end());
    lu.compute(J);
    if (lu.info() != Eigen::Success)
      throw NonConvergenceError("ergodic_direct: singular policy system (is the operator uniformly elliptic?)");
    const VectorXd R = (h.array() - U).matrix();
    const VectorXd dx = lu.solve(-R);
    double theta = 1.0;
    bool accepted = false;
    VectorXd v_trial;
    double U_trial = U;
    for (; theta >= 1.0 / 1024.0; theta *= 0.5) {
      v_trial = v;
      v_trial.tail(N - 1) += theta * dx.tail(N - 1);
      U_trial = U + theta * dx(0);
      apply_hamiltonian(op, v_trial, h_trial, &policy_trial);
      const double res_trial = sup((h_trial.array() - U_trial).matrix());
      if (res_trial < res) {
        res = res_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Take the shortest step anyway; the iteration cap bounds cycling.
      res = sup((h_trial.array() - U_trial).matrix());
    }
    v = std::move(v_trial);
    U = U_trial;
    h = h_trial;
    policy = policy_trial;
  }
  ErgodicResult result;
  result.method = ErgodicMethod::Direct;
  result.U = U;
  result.corrector = GridFunction(op.grid(), v);
  result.residual = res;
  result.iterations = iterations;
  return result;
}

CorrectorRegularityReport corrector_regularity_check(const std::vector<DiscountedSolve>& solves, double max_abs_cost,
                                                     double max_ratio) {
  if (solves.size() < 2) throw ConfigError("corrector_regularity_check: needs at least two discounted solves");
  CorrectorRegularityReport report;
  for (const auto& s : solves) {
    report.deltas.push_back(s.delta);
    report.seminorms.push_back(seminorm_hoelder(s.deviation, 1.0).value);
  }
  const auto [lo, hi] = std::minmax_element(report.seminorms.begin(), report.seminorms.end());
  if (*hi > 0.0) {
    report.ratio = *lo > 0.0 ? *hi / *lo : std::numeric_limits<double>::infinity();
    report.relative_variation = (*hi - *lo) / *hi;
  }
  report.K_emp = *hi / (1.0 + max_abs_cost);
  report.passed = report.ratio <= max_ratio;
  return report;
}

}  // namespace hjbi
