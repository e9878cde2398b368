#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hjbi/parabolic.hpp"

namespace hjbi {

enum class DiscountedMethod {
  Marching,      // w <- w - tau (delta w + H_h(w)), tau from the CFL budget with discount delta
  PolicyNewton,  // policy linearization with residual line search; marching fallback
};

struct DiscountedOptions {
  double tol = 1e-10;                // sup-norm of delta w + H_h(w)
  long max_iterations = 1'000'000;
  DiscountedMethod method = DiscountedMethod::PolicyNewton;
};

/// Solution of  delta w + H_h(w) = 0.
///
/// w is kept as level + deviation (w = level + deviation, deviation(0) = 0) so that
/// the O(1/delta) constant part does not pollute difference quotients.
struct DiscountedSolve {
  double delta = 0.0;
  double level = 0.0;
  GridFunction deviation;  // normalized corrector w - w(0)
  long iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_tail;

  GridFunction w() const;
  /// delta * |w|_inf.
  double scaled_sup() const;
};

/// Warm start for solve_discounted.
struct DiscountedGuess {
  double level = 0.0;
  VectorXd deviation;
};

/// Throws NonConvergenceError (with the residual history tail) past the iteration cap.
DiscountedSolve solve_discounted(const DiscreteOperator& op, double delta, const DiscountedOptions& options = {},
                                 const std::optional<DiscountedGuess>& guess = std::nullopt);

enum class ErgodicMethod { VanishingDiscount, LongTime, Direct };

/// Ergodic constant U with  H(x, Dv, D^2 v) = U,  corrector v normalized by v(node 0) = 0.
/// Sign convention: U = -lim delta w_delta = -lim u(t)/t.
struct ErgodicResult {
  double U = 0.0;
  GridFunction corrector;
  ErgodicMethod method = ErgodicMethod::VanishingDiscount;
  double residual = 0.0;        // sup |H_h(corrector) - U|
  double agreement_gap = 0.0;   // |U_k - U_{k-1}| over the schedule, or slope spread for long-time
  double cross_gap = 0.0;       // |U - U_other| when a second estimator ran
  // vanishing discount
  std::vector<double> deltas;
  std::vector<double> scaled_values;   // delta_k w_k(ref); U_k = -scaled_values[k]
  std::vector<double> node_spread;     // delta_k (max w_k - min w_k)
  std::vector<DiscountedSolve> solves;
  // long time
  double horizon = 0.0;
  double window = 0.0;
  double slope_spread = 0.0;
  long iterations = 0;
};

std::vector<double> default_delta_schedule();

struct VanishingDiscountOptions {
  std::vector<double> schedule = default_delta_schedule();
  DiscountedOptions discounted;
  std::size_t reference_node = 0;
};

ErgodicResult ergodic_vanishing_discount(const DiscreteOperator& op, const VanishingDiscountOptions& options = {});

struct LongTimeOptions {
  double window = 0.25;
  double spread_threshold = 1e-3;
  int store_every = 0;   // 0: choose so that about 400 layers are stored
  double dt_max = 1e-2;
};

/// Throws InconclusiveError when the slope spread exceeds the threshold.
ErgodicResult ergodic_long_time(const DiscreteOperator& op, double T, const LongTimeOptions& options = {});

struct DirectErgodicOptions {
  double tol = 1e-11;   // relative to 1 + max |l|
  int max_iterations = 200;
};

/// Policy-Newton solve of  H_h(v) = U,  v(0) = 0  (uniformly elliptic operators).
ErgodicResult ergodic_direct(const DiscreteOperator& op, const DirectErgodicOptions& options = {},
                             const VectorXd* warm_start = nullptr);

struct CorrectorRegularityReport {
  std::vector<double> deltas;
  std::vector<double> seminorms;  // discrete Lipschitz seminorm of w_delta - w_delta(0)
  double ratio = 1.0;             // max / min over the schedule
  double relative_variation = 0.0;  // (max - min) / max
  double K_emp = 0.0;             // max seminorm / (1 + max |l|)
  bool passed = true;
};

/// Requires at least two solves; passes when ratio <= max_ratio.
CorrectorRegularityReport corrector_regularity_check(const std::vector<DiscountedSolve>& solves, double max_abs_cost,
                                                     double max_ratio = 1.25);

}  // namespace hjbi
