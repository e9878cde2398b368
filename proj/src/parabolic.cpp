#include "hjbi/parabolic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "hjbi/error.hpp"

namespace hjbi {

ParabolicTrajectory march_explicit(const Grid& grid, double T, const GridFunction& initial, double dt,
                                   const ParabolicOptions& options, const HamiltonianSweep& sweep) {
  if (!(T > 0.0)) throw ConfigError("solve_parabolic: horizon T must be positive");
  if (!(dt > 0.0)) throw ConfigError("solve_parabolic: time step must be positive");
  if (!(initial.grid == grid)) throw ConfigError("solve_parabolic: initial datum lives on a different grid");
  if (options.store_every < 0) throw ConfigError("solve_parabolic: store_every must be >= 0");
  const long store_every =
      options.store_every > 0 ? options.store_every : std::max(1L, static_cast<long>(std::ceil(T / dt / 50.0)));

  std::vector<double> targets;
  for (double t : options.output_times)
    if (t > 0.0 && t < T) targets.push_back(t);
  targets.push_back(T);
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  ParabolicTrajectory traj;
  traj.initial = initial;
  traj.dt = dt;
  traj.times.push_back(0.0);
  traj.layers.push_back(initial);

  VectorXd u = initial.values;
  VectorXd h;
  double t = 0.0;
  std::size_t next = 0;
  long step = 0;
  while (next < targets.size()) {
    const double target = targets[next];
    double tau = dt;
    bool landed = false;
    if (t + dt >= target - 1e-12 * dt) {
      tau = target - t;
      landed = true;
    }
    sweep(u, h);
    u -= tau * h;
    ++step;
    if (!u.allFinite()) throw DivergenceError("solve_parabolic: non-finite value at step " + std::to_string(step), step);
    t = landed ? target : t + tau;
    if (landed) ++next;
    if (landed || step % store_every == 0) {
      traj.times.push_back(t);
      traj.layers.emplace_back(grid, u);
    }
  }
  traj.steps = step;
  return traj;
}

ParabolicTrajectory solve_parabolic(const DiscreteOperator& op, double T, const GridFunction& initial,
                                    const ParabolicOptions& options) {
  const double cfl = cfl_timestep(op, 0.0, options.dt_max);
  double dt = cfl;
  if (options.dt > 0.0) {
    if (options.dt > cfl * (1.0 + 1e-12))
      throw ConfigError("solve_parabolic: requested dt exceeds the CFL step " + std::to_string(cfl));
    dt = options.dt;
  }
  ParabolicTrajectory traj = march_explicit(op.grid(), T, initial, dt, options,
                                            [&](const VectorXd& u, VectorXd& h) { apply_hamiltonian(op, u, h); });
  traj.max_abs_cost = op.max_abs_cost();
  return traj;
}

ParabolicTrajectory solve_parabolic(const HJBIOperator& op, const Grid& grid, double T, const GridFunction& initial,
                                    const ParabolicOptions& options) {
  ParabolicTrajectory traj = solve_parabolic(DiscreteOperator(op, grid), T, initial, options);
  traj.operator_name = op.name;
  return traj;
}

TimeLipschitzReport time_lipschitz_check(const ParabolicTrajectory& traj, double C, double slack) {
  TimeLipschitzReport report;
  for (std::size_t k = 1; k < traj.layers.size(); ++k) {
    const double h = traj.times[k] - traj.times[k - 1];
    const double change = (traj.layers[k].values - traj.layers[k - 1].values).cwiseAbs().maxCoeff();
    double ratio = 0.0;
    if (change > 0.0) ratio = C > 0.0 ? change / (C * h) : std::numeric_limits<double>::infinity();
    if (ratio > report.worst_ratio) {
      report.worst_ratio = ratio;
      report.witness_t0 = traj.times[k - 1];
      report.witness_t1 = traj.times[k];
    }
    if (change > C * h * (1.0 + slack) + 1e-14) report.passed = false;
  }
  return report;
}

double time_lipschitz_constant(const DiscreteOperator& op, const GridFunction& initial) {
  VectorXd h;
  apply_hamiltonian(op, initial.values, h);
  return h.cwiseAbs().maxCoeff();
}

SlopeEstimate long_time_slope(const ParabolicTrajectory& traj, double window) {
  if (!(window > 0.0 && window <= 1.0)) throw ConfigError("long_time_slope: window must lie in (0,1]");
  const double T = traj.final_time();
  const double start = T * (1.0 - window);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < traj.times.size(); ++k)
    if (traj.times[k] >= start - 1e-12 * T) idx.push_back(k);
  if (idx.size() < 3) throw ConfigError("long_time_slope: fewer than 3 stored layers in the window");
  double tbar = 0.0;
  for (std::size_t k : idx) tbar += traj.times[k];
  tbar /= static_cast<double>(idx.size());
  double stt = 0.0;
  for (std::size_t k : idx) stt += (traj.times[k] - tbar) * (traj.times[k] - tbar);
  const Eigen::Index nodes = traj.layers.front().values.size();
  VectorXd ubar = VectorXd::Zero(nodes);
  for (std::size_t k : idx) ubar += traj.layers[k].values;
  ubar /= static_cast<double>(idx.size());
  VectorXd sty = VectorXd::Zero(nodes);
  for (std::size_t k : idx) sty += (traj.times[k] - tbar) * (traj.layers[k].values - ubar);
  SlopeEstimate est;
  est.slopes = sty / stt;
  est.mean = est.slopes.mean();
  est.spread = est.slopes.maxCoeff() - est.slopes.minCoeff();
  est.layers_used = idx.size();
  return est;
}

void export_trajectory(const ParabolicTrajectory& traj, const std::filesystem::path& dir,
                       const std::string& operator_hash, bool binary) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["operator"] = traj.operator_name;
  manifest["operator_hash"] = operator_hash;
  manifest["grid"] = traj.layers.front().grid.sizes();
  manifest["dt"] = traj.dt;
  manifest["steps"] = traj.steps;
  manifest["times"] = traj.times;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t k = 0; k < traj.layers.size(); ++k) {
    const std::string name = "layer_" + std::to_string(k) + (binary ? ".bin" : ".csv");
    if (binary) write_binary(traj.layers[k], dir / name);
    else write_csv(traj.layers[k], dir / name);
    files.push_back(name);
  }
  manifest["files"] = files;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace hjbi
