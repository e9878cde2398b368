#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hjbi/grid.hpp"
#include "hjbi/operator_model.hpp"

namespace hjbi {

/// Worst-case coefficient sums entering the explicit time-step restriction.
struct StencilBudget {
  double diffusion_sum = 0.0;  // sum_i 2 a_ii / h_i^2 + sum_{i != j} |a_ij| / (h_i h_j)
  double drift_sum = 0.0;      // sum_i |f_i| / h_i
  double total() const { return diffusion_sum + drift_sum; }
};

/// Neighbor offsets of the monotone stencil: +-e_i first, then for each i < j the
/// diagonal neighbors (+i+j), (-i-j), (+i-j), (-i+j).
std::vector<std::vector<int>> stencil_offsets(Eigen::Index n);

/// Nonnegative weights of the monotone stencil for one coefficient pair (a, f), in
/// stencil_offsets order. Returns false (and the offending axis) when
/// a_ii/h_i^2 < sum_{j!=i} |a_ij|/(h_i h_j).
bool stencil_weights(const MatrixXd& a, const VectorXd& f, const Grid& grid, double* w, Eigen::Index* bad_axis = nullptr);

/// An HJBI operator tabulated on a grid as nonnegative stencil weights.
///
/// For each node and control pair (alpha, beta) the discrete linear operator reads
///   L u(x) = sum_k w_k (u(x) - u(x + o_k)) + l(x, alpha, beta),   w_k >= 0,
/// where second derivatives use centered differences, cross derivatives the
/// sign-split diagonal stencil and the drift is upwinded. The Hamiltonian is the
/// min over beta of the max over alpha of L u(x). Pair index = beta * |A| + alpha.
class DiscreteOperator {
 public:
  /// Throws AdmissibilityError when a_ii/h_i^2 - sum_{j!=i} |a_ij|/(h_i h_j) < 0 anywhere.
  DiscreteOperator(const HJBIOperator& op, const Grid& grid);

  /// Raw tables; weights has node_count * pairs * offsets entries, costs node_count * pairs.
  DiscreteOperator(const Grid& grid, std::size_t alpha_count, std::size_t beta_count, std::vector<double> weights,
                   std::vector<double> costs, std::vector<StencilBudget> budgets);

  const Grid& grid() const { return grid_; }
  std::size_t node_count() const { return grid_.node_count(); }
  std::size_t alpha_count() const { return alpha_count_; }
  std::size_t beta_count() const { return beta_count_; }
  std::size_t pair_count() const { return alpha_count_ * beta_count_; }
  std::size_t offset_count() const { return offsets_; }

  const double* weights(std::size_t node, std::size_t pair) const {
    return weights_->data() + (node * pair_count() + pair) * offsets_;
  }
  double cost(std::size_t node, std::size_t pair) const { return costs_[node * pair_count() + pair]; }
  const std::vector<double>& costs() const { return costs_; }
  const std::uint32_t* neighbors(std::size_t node) const { return neighbors_->data() + node * offsets_; }
  const StencilBudget& budget(std::size_t node, std::size_t pair) const {
    return (*budgets_)[node * pair_count() + pair];
  }

  double max_abs_cost() const;
  /// max over nodes and pairs of the budget total.
  double max_budget() const;

  /// Same stencil with different running costs (node_count * pairs entries); shares the weight tables.
  DiscreteOperator with_costs(std::vector<double> costs) const;

 private:
  void build_neighbors();

  Grid grid_;
  std::size_t alpha_count_ = 0;
  std::size_t beta_count_ = 0;
  std::size_t offsets_ = 0;
  std::shared_ptr<const std::vector<double>> weights_;
  std::vector<double> costs_;
  std::shared_ptr<const std::vector<StencilBudget>> budgets_;
  std::shared_ptr<const std::vector<std::uint32_t>> neighbors_;
};

/// Value and optimal control pair of the discrete min-max at a node.
struct NodeHamiltonian {
  double value = 0.0;
  std::uint32_t pair = 0;
};

NodeHamiltonian discrete_hamiltonian_detail(const DiscreteOperator& op, const VectorXd& u, std::size_t node);
double discrete_hamiltonian(const DiscreteOperator& op, const VectorXd& u, std::size_t node);
/// Convenience form that tabulates the operator first.
double discrete_hamiltonian(const HJBIOperator& op, const GridFunction& u, std::size_t node);

/// out(i) = H_h(u)(i) for every node; optionally records the optimal pair per node.
void apply_hamiltonian(const DiscreteOperator& op, const VectorXd& u, VectorXd& out,
                       std::vector<std::uint32_t>* policy = nullptr);

/// Budget of the continuous coefficients at one (x, alpha, beta).
StencilBudget stencil_budget(const MatrixXd& a, const VectorXd& f, const Grid& grid);

/// dt = safety / (max budget + discount), safety 0.9; `dt_max` when the denominator vanishes.
double cfl_timestep(const DiscreteOperator& op, double discount = 0.0, double dt_max = 1.0);
double cfl_timestep(const HJBIOperator& op, const Grid& grid, double discount = 0.0, double dt_max = 1.0);

struct HoelderOptions {
  std::size_t exhaustive_limit = 2048;  // nodes; above this the estimator samples pairs
  int radius = 4;                       // local box radius (nodes) of the sampled estimator
  std::size_t random_pairs = 50000;
  std::uint64_t seed = 12345;
};

struct HoelderEstimate {
  double value = 0.0;
  bool exhaustive = true;  // false: lower bound from local + random pairs
};

/// max over node pairs of |u(x) - u(y)| / d(x,y)^gamma with the torus metric.
HoelderEstimate seminorm_hoelder(const GridFunction& u, double gamma, const HoelderOptions& options = {});

}  // namespace hjbi
