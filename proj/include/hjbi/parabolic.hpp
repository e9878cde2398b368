#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hjbi/discretization.hpp"

namespace hjbi {

struct ParabolicOptions {
  int store_every = 1;               // keep every k-th step (plus t = 0, T and output_times); 0: about 50 layers
  std::vector<double> output_times;  // stepping lands exactly on these
  double dt_max = 1e-2;              // cap on the CFL step
  double dt = 0.0;                   // explicit step override; must not exceed the CFL step
};

/// Explicit-Euler solution of  u_t + H(x, Du, D^2u) = 0,  u(0) = initial.
struct ParabolicTrajectory {
  std::vector<double> times;
  std::vector<GridFunction> layers;
  GridFunction initial;
  double dt = 0.0;
  long steps = 0;
  std::string operator_name;
  double max_abs_cost = 0.0;

  const GridFunction& final_layer() const { return layers.back(); }
  double final_time() const { return times.back(); }
};

/// out = H_h(u) at every node.
using HamiltonianSweep = std::function<void(const VectorXd& u, VectorXd& out)>;

/// Explicit Euler with a fixed step for any nodewise Hamiltonian; lands exactly on
/// the output times and on T.
ParabolicTrajectory march_explicit(const Grid& grid, double T, const GridFunction& initial, double dt,
                                   const ParabolicOptions& options, const HamiltonianSweep& sweep);

/// u^{k+1} = u^k - dt H_h(u^k); the last step is truncated to land on T.
/// Throws DivergenceError when a non-finite value appears.
ParabolicTrajectory solve_parabolic(const DiscreteOperator& op, double T, const GridFunction& initial,
                                    const ParabolicOptions& options = {});
ParabolicTrajectory solve_parabolic(const HJBIOperator& op, const Grid& grid, double T, const GridFunction& initial,
                                    const ParabolicOptions& options = {});

struct TimeLipschitzReport {
  bool passed = true;
  double worst_ratio = 0.0;  // max |u(t2)-u(t1)|_inf / (C (t2-t1))
  double witness_t0 = 0.0;
  double witness_t1 = 0.0;
};

/// Checks |u(t+h) - u(t)|_inf <= C h (1 + slack) over consecutive stored layers.
TimeLipschitzReport time_lipschitz_check(const ParabolicTrajectory& traj, double C, double slack = 1e-9);

/// Time-Lipschitz constant of the scheme started from `initial`: |H_h(initial)|_inf.
/// For the zero datum this is max |min-max l| <= max |l|.
double time_lipschitz_constant(const DiscreteOperator& op, const GridFunction& initial);

struct SlopeEstimate {
  VectorXd slopes;     // least-squares slope of t -> u(t, x) per node
  double mean = 0.0;
  double spread = 0.0;  // max - min slope
  std::size_t layers_used = 0;
};

/// Slope over the trailing `window` fraction of the time span. Throws ConfigError
/// when fewer than three stored layers fall in the window.
SlopeEstimate long_time_slope(const ParabolicTrajectory& traj, double window);

/// Writes one file per layer (`layer_<k>.csv` or `.bin`) and `manifest.json`
/// with the operator hash, grid, dt and times.
void export_trajectory(const ParabolicTrajectory& traj, const std::filesystem::path& dir,
                       const std::string& operator_hash, bool binary = false);

}  // namespace hjbi
