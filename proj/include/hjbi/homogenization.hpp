#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hjbi/ergodic.hpp"

namespace hjbi {

/// Singular-perturbation operator in slow x (dimension n) and fast y (dimension m):
///
///   min_beta max_alpha { -tr(M X) - tr(N Y)/eps - 2 tr(E Z)/sqrt(eps) + F.q/eps + G.p + L }
///
/// with M = Xi Xi^T, N = Sigma Sigma^T, E = Sigma Xi^T. Coefficients are expressions over
/// x1..xn, y1..ym and the controls; the initial datum h depends on x only.
struct TwoScaleOperator {
  std::string name;
  Eigen::Index n = 1;
  Eigen::Index m = 1;
  Eigen::Index p_dim = 1;
  CoefficientField Xi;     // n x p_dim
  CoefficientField Sigma;  // m x p_dim
  CoefficientField F;      // m
  CoefficientField G;      // n
  CoefficientField L;      // scalar
  Expression h;            // initial datum
  ControlSet A;
  ControlSet B;
  double nu = 0.0;  // declared ellipticity of M and N; 0 only demands strict positivity

  void validate() const;

  EvalPoint point(const VectorXd& x, const VectorXd& y, std::size_t ia, std::size_t ib) const {
    return EvalPoint{{x.data(), static_cast<std::size_t>(x.size())},
                     {y.data(), static_cast<std::size_t>(y.size())},
                     {A.points[ia].data(), static_cast<std::size_t>(A.points[ia].size())},
                     {B.points[ib].data(), static_cast<std::size_t>(B.points[ib].size())}};
  }
  MatrixXd M(const VectorXd& x, const VectorXd& y, std::size_t ia, std::size_t ib) const;
  MatrixXd N(const VectorXd& x, const VectorXd& y, std::size_t ia, std::size_t ib) const;
  MatrixXd E(const VectorXd& x, const VectorXd& y, std::size_t ia, std::size_t ib) const;

  /// Canonical text of every field; the basis of cache fingerprints.
  std::string canonical_text() const;
};

/// Sampled constants of the two-scale coefficients.
struct TwoScaleConstants {
  double C = 0.0;        // sup of |M|, |N|, |E|, |F|, |G|, |L| (Frobenius)
  double C_Sigma = 0.0;  // Lipschitz constants in x
  double C_F = 0.0;
  double C_M = 0.0;
  double C_G = 0.0;
  Modulus omega_L;       // linear, from the sampled Lipschitz constant of L in x
  double min_eig_M = 0.0;
  double min_eig_N = 0.0;
  double max_abs_E = 0.0;
};

/// Samples `points` per slow axis and `points` per fast axis; Lipschitz quotients use
/// neighboring samples along each slow axis, scaled by `safety`.
TwoScaleConstants estimate_two_scale_constants(const TwoScaleOperator& ts, int points = 16, double safety = 1.05);

/// Throws PreconditionError when the sampled M or N falls below nu (or is singular).
void check_ellipticity(const TwoScaleOperator& ts, const TwoScaleConstants& constants);

/// Cell problem at a frozen slow state: an operator in y with
/// sigma = Sigma(xbar, .), f = F(xbar, .), l = -tr(M(xbar, .) Xbar) + pbar . G(xbar, .) + L(xbar, .).
struct CellProblem {
  VectorXd x_bar;
  VectorXd p_bar;
  MatrixXd X_bar;
  HJBIOperator cell;  // state variables x1..xm stand for y1..ym
  Modulus omega;      // [C_M |Xbar| + C_G |pbar|] r + omega_L(r)
};

CellProblem build_cell_operator(const TwoScaleOperator& ts, const VectorXd& x_bar, const VectorXd& p_bar,
                                const MatrixXd& X_bar, const std::optional<TwoScaleConstants>& constants = std::nullopt);

struct CacheRecord {
  double value = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Memo of effective Hamiltonian values. Keys quantize the gradient/Hessian-like
/// components to `step` (0: exact keys). Concurrent lookups share a read lock; the
/// first insertion of a key wins. An attached file receives one JSON line per new
/// record under an exclusive flock and is reloaded by later runs.
class EffectiveHamiltonianCache {
 public:
  explicit EffectiveHamiltonianCache(double step = 1e-3);

  double step() const { return step_; }
  std::string key(std::string_view fingerprint, std::span<const double> exact, std::span<const double> quantized) const;

  std::optional<CacheRecord> find(const std::string& key) const;
  CacheRecord insert(const std::string& key, const CacheRecord& record);

  /// Loads existing records from `path` and appends new ones to it.
  void attach(const std::filesystem::path& path);

  std::size_t size() const;
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  double step_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, CacheRecord> map_;
  std::optional<std::filesystem::path> file_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

struct CellSolveOptions {
  int y_points = 32;  // fast grid points per axis
  DirectErgodicOptions ergodic;
};

/// Hbar(xbar, pbar, Xbar): the ergodic constant of the cell problem (U with H_cell(v) = U).
/// Cell-solve failures are rethrown with the frozen triple in the message.
double effective_hamiltonian(const TwoScaleOperator& ts, const VectorXd& x_bar, const VectorXd& p_bar,
                             const MatrixXd& X_bar, EffectiveHamiltonianCache* cache = nullptr,
                             const CellSolveOptions& options = {});

struct StructureSample {
  VectorXd x;
  VectorXd p;
  MatrixXd X;
};
using StructurePair = std::pair<StructureSample, StructureSample>;

/// Random pairs; every third pair shares x (pure p/X variation).
std::vector<StructurePair> structure_samples(Eigen::Index n, std::size_t count, std::uint64_t seed,
                                             double p_radius = 2.0, double X_radius = 2.0);

struct StructureReport {
  TwoScaleConstants constants;
  double K_bar = 0.0;  // smallest constant making every sample pass
  bool passed = false;  // K_bar finite
  std::size_t worst_index = 0;
  double worst_lhs = 0.0;
  double worst_rhs = 0.0;  // right-hand side without the K_bar term
  std::vector<double> lhs;
  std::vector<double> required_K;
};

/// Checks |Hbar1 - Hbar2| <= C|X1-X2| + C|p1-p2| + omega_bar(|x1-x2|) + K_bar |x1-x2| (1 + |p|v + |X|v),
/// omega_bar(r) = omega_L(C_Sigma r) + omega_L(r). Needs >= 10 pairs; guarded by the ellipticity check.
StructureReport effective_structure_check(const TwoScaleOperator& ts, const std::vector<StructurePair>& pairs,
                                          EffectiveHamiltonianCache* cache = nullptr,
                                          const CellSolveOptions& options = {});

struct EffectiveSolveOptions {
  int y_points = 32;
  ParabolicOptions parabolic;
  DirectErgodicOptions ergodic;
};

struct EffectiveTrajectory {
  ParabolicTrajectory trajectory;
  std::size_t cell_solves = 0;
  std::size_t cache_hits = 0;
  double max_cell_residual = 0.0;
};

/// Explicit scheme for u_t + Hbar(x, Du, D^2u) = 0, u(0) = h. At every slow node the
/// cell cost uses the upwinded slow stencil of u instead of (Du, D^2u), which keeps
/// the scheme monotone; the step is 0.9 / (max slow stencil budget of M, G).
EffectiveTrajectory solve_effective(const TwoScaleOperator& ts, const Grid& grid_x, double T,
                                    EffectiveHamiltonianCache& cache, const EffectiveSolveOptions& options = {});

struct TwoScaleOptions {
  ParabolicOptions parabolic;
  double dt_floor = 1e-6;            // below this the run is declared infeasible
  bool allow_cross_diffusion = false;  // E != 0 handled by the sign-split stencil
};

struct TwoScaleResult {
  double epsilon = 1.0;
  Grid grid;             // product grid, slow axes first
  HJBIOperator product;  // the rescaled operator on the product torus
  ParabolicTrajectory trajectory;
};

/// The product-space operator with sigma = [Xi; Sigma/sqrt(eps)], f = [G; F/eps], l = L.
HJBIOperator two_scale_product_operator(const TwoScaleOperator& ts, double epsilon);

/// CFL step of the product scheme at this epsilon (no solve).
double two_scale_timestep(const TwoScaleOperator& ts, double epsilon, const Grid& grid_xy, double dt_max = 1e-2);

/// Direct monotone solve on the (x, y) grid with u(0, x, y) = h(x).
TwoScaleResult solve_two_scale(const TwoScaleOperator& ts, double epsilon, const Grid& grid_xy, double T,
                               const TwoScaleOptions& options = {});

struct ConvergenceRow {
  double epsilon = 0.0;
  double error = 0.0;  // sup over output times and all (x, y) nodes of |u_eps - u|
  std::vector<int> grid;
  double dt = 0.0;
  long steps = 0;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  std::optional<bool> strictly_decreasing;  // set when there are at least two rows
  void write_csv(const std::filesystem::path& path) const;
};

struct ConvergenceOptions {
  std::vector<double> output_times;  // default: 10 equally spaced times in (0, T]
  TwoScaleOptions two_scale;
  EffectiveSolveOptions effective;
};

/// `grids` holds one product grid shared by every epsilon or one grid per epsilon.
ConvergenceTable convergence_study(const TwoScaleOperator& ts, const std::vector<double>& eps_list,
                                   const std::vector<Grid>& grids, double T, EffectiveHamiltonianCache& cache,
                                   const ConvergenceOptions& options = {});

}  // namespace hjbi
