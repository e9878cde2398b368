#include "hjbi/discretization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "hjbi/error.hpp"

namespace hjbi {

std::vector<std::vector<int>> stencil_offsets(Eigen::Index n) {
  const auto dims = static_cast<std::size_t>(n);
  std::vector<std::vector<int>> offsets;
  for (std::size_t i = 0; i < dims; ++i) {
    std::vector<int> plus(dims, 0), minus(dims, 0);
    plus[i] = 1;
    minus[i] = -1;
    offsets.push_back(plus);
    offsets.push_back(minus);
  }
  for (std::size_t i = 0; i < dims; ++i) {
    for (std::size_t j = i + 1; j < dims; ++j) {
      for (const auto& [si, sj] : {std::pair{1, 1}, std::pair{-1, -1}, std::pair{1, -1}, std::pair{-1, 1}}) {
        std::vector<int> o(dims, 0);
        o[i] = si;
        o[j] = sj;
        offsets.push_back(o);
      }
    }
  }
  return offsets;
}

StencilBudget stencil_budget(const MatrixXd& a, const VectorXd& f, const Grid& grid) {
  StencilBudget b;
  const Eigen::Index n = grid.dimension();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double hi = grid.spacing(i);
    b.diffusion_sum += 2.0 * a(i, i) / (hi * hi);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) b.diffusion_sum += std::abs(a(i, j)) / (hi * grid.spacing(j));
    b.drift_sum += std::abs(f(i)) / hi;
  }
  return b;
}

bool stencil_weights(const MatrixXd& a, const VectorXd& f, const Grid& grid, double* w, Eigen::Index* bad_axis) {
  const Eigen::Index n = grid.dimension();
  const auto count = static_cast<std::size_t>(2 * n + 2 * n * (n - 1));
  std::fill(w, w + count, 0.0);
  std::size_t cross = static_cast<std::size_t>(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double hi = grid.spacing(i);
    double axis = a(i, i) / (hi * hi);
    double off = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) off += std::abs(a(i, j)) / (hi * grid.spacing(j));
    axis -= off;
    if (axis < -1e-12 * (a(i, i) / (hi * hi) + 1.0)) {
      if (bad_axis) *bad_axis = i;
      return false;
    }
    axis = std::max(axis, 0.0);
    w[2 * i] = axis + negative_part(f(i)) / hi;
    w[2 * i + 1] = axis + positive_part(f(i)) / hi;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = std::abs(a(i, j)) / (grid.spacing(i) * grid.spacing(j));
      if (a(i, j) > 0) {
        w[cross] = c;
        w[cross + 1] = c;
      } else {
        w[cross + 2] = c;
        w[cross + 3] = c;
      }
      cross += 4;
    }
  }
  return true;
}

DiscreteOperator::DiscreteOperator(const HJBIOperator& op, const Grid& grid)
    : grid_(grid), alpha_count_(op.A.size()), beta_count_(op.B.size()) {
  op.validate();
  if (grid.dimension() != op.n)
    throw ConfigError("discretization: grid dimension " + std::to_string(grid.dimension()) +
                      " does not match operator dimension " + std::to_string(op.n));
  const Eigen::Index n = op.n;
  if (n > 4) throw ConfigError("discretization: dimensions above 4 are not supported");
  offsets_ = static_cast<std::size_t>(2 * n + 2 * n * (n - 1));
  const std::size_t nodes = grid.node_count();
  const std::size_t pairs = pair_count();
  auto weights = std::make_shared<std::vector<double>>(nodes * pairs * offsets_, 0.0);
  auto budgets = std::make_shared<std::vector<StencilBudget>>(nodes * pairs);
  costs_.assign(nodes * pairs, 0.0);

  for (std::size_t node = 0; node < nodes; ++node) {
    const VectorXd x = grid.coordinates(node);
    for (std::size_t ib = 0; ib < beta_count_; ++ib) {
      for (std::size_t ia = 0; ia < alpha_count_; ++ia) {
        const std::size_t pair = ib * alpha_count_ + ia;
        const EvalPoint pt = op.point(x, ia, ib);
        const MatrixXd s = op.sigma.evaluate(pt);
        const MatrixXd a = s * s.transpose();
        const VectorXd f = op.drift.evaluate_vector(pt);
        costs_[node * pairs + pair] = op.cost.evaluate_scalar(pt);
        (*budgets)[node * pairs + pair] = stencil_budget(a, f, grid);
        double* w = weights->data() + (node * pairs + pair) * offsets_;
        Eigen::Index bad_axis = -1;
        if (!stencil_weights(a, f, grid, w, &bad_axis)) {
          std::ostringstream os;
          os << "discretization: diagonal dominance violated at x=(";
          for (Eigen::Index d = 0; d < n; ++d) os << (d ? ", " : "") << x(d);
          os << "), alpha#" << ia << ", beta#" << ib << ", axis " << bad_axis + 1;
          throw AdmissibilityError(os.str());
        }
      }
    }
  }
  weights_ = std::move(weights);
  budgets_ = std::move(budgets);
  build_neighbors();
}

DiscreteOperator::DiscreteOperator(const Grid& grid, std::size_t alpha_count, std::size_t beta_count,
                                   std::vector<double> weights, std::vector<double> costs,
                                   std::vector<StencilBudget> budgets)
    : grid_(grid), alpha_count_(alpha_count), beta_count_(beta_count), costs_(std::move(costs)) {
  const Eigen::Index n = grid.dimension();
  offsets_ = static_cast<std::size_t>(2 * n + 2 * n * (n - 1));
  const std::size_t entries = grid.node_count() * pair_count();
  if (weights.size() != entries * offsets_ || costs_.size() != entries || budgets.size() != entries)
    throw ConfigError("discretization: raw stencil tables have inconsistent sizes");
  weights_ = std::make_shared<const std::vector<double>>(std::move(weights));
  budgets_ = std::make_shared<const std::vector<StencilBudget>>(std::move(budgets));
  build_neighbors();
}

void DiscreteOperator::build_neighbors() {
  const auto offsets = stencil_offsets(grid_.dimension());
  auto table = std::make_shared<std::vector<std::uint32_t>>(grid_.node_count() * offsets_);
  for (std::size_t node = 0; node < grid_.node_count(); ++node)
    for (std::size_t k = 0; k < offsets_; ++k)
      (*table)[node * offsets_ + k] = static_cast<std::uint32_t>(grid_.shifted(node, offsets[k]));
  neighbors_ = std::move(table);
}

double DiscreteOperator::max_abs_cost() const {
  double m = 0.0;
  for (double c : costs_) m = std::max(m, std::abs(c));
  return m;
}

double DiscreteOperator::max_budget() const {
  double m = 0.0;
  for (const auto& b : *budgets_) m = std::max(m, b.total());
  return m;
}

DiscreteOperator DiscreteOperator::with_costs(std::vector<double> costs) const {
  if (costs.size() != costs_.size()) throw ConfigError("discretization: cost table size mismatch");
  DiscreteOperator out = *this;
  out.costs_ = std::move(costs);
  return out;
}

NodeHamiltonian discrete_hamiltonian_detail(const DiscreteOperator& op, const VectorXd& u, std::size_t node) {
  const std::size_t K = op.offset_count();
  const std::uint32_t* nb = op.neighbors(node);
  double diff[32];
  const double u0 = u(static_cast<Eigen::Index>(node));
  for (std::size_t k = 0; k < K; ++k) diff[k] = u0 - u(nb[k]);
  NodeHamiltonian best{std::numeric_limits<double>::infinity(), 0};
  const std::size_t na = op.alpha_count();
  for (std::size_t ib = 0; ib < op.beta_count(); ++ib) {
    double inner = -std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t ia = 0; ia < na; ++ia) {
      const std::size_t pair = ib * na + ia;
      const double* w = op.weights(node, pair);
      double v = op.cost(node, pair);
      for (std::size_t k = 0; k < K; ++k) v += w[k] * diff[k];
      if (v > inner) {
        inner = v;
        arg = static_cast<std::uint32_t>(pair);
      }
    }
    if (inner < best.value) best = {inner, arg};
  }
  return best;
}

double discrete_hamiltonian(const DiscreteOperator& op, const VectorXd& u, std::size_t node) {
  return discrete_hamiltonian_detail(op, u, node).value;
}

double discrete_hamiltonian(const HJBIOperator& op, const GridFunction& u, std::size_t node) {
  const DiscreteOperator dop(op, u.grid);
  return discrete_hamiltonian(dop, u.values, node);
}

void apply_hamiltonian(const DiscreteOperator& op, const VectorXd& u, VectorXd& out,
                       std::vector<std::uint32_t>* policy) {
  const auto nodes = static_cast<std::ptrdiff_t>(op.node_count());
  out.resize(nodes);
  if (policy) policy->resize(static_cast<std::size_t>(nodes));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < nodes; ++i) {
    const NodeHamiltonian h = discrete_hamiltonian_detail(op, u, static_cast<std::size_t>(i));
    out(i) = h.value;
    if (policy) (*policy)[static_cast<std::size_t>(i)] = h.pair;
  }
}

double cfl_timestep(const DiscreteOperator& op, double discount, double dt_max) {
  constexpr double safety = 0.9;
  const double denom = op.max_budget() + discount;
  if (denom <= 0.0) return dt_max;
  return std::min(dt_max, safety / denom);
}

double cfl_timestep(const HJBIOperator& op, const Grid& grid, double discount, double dt_max) {
  return cfl_timestep(DiscreteOperator(op, grid), discount, dt_max);
}

HoelderEstimate seminorm_hoelder(const GridFunction& u, double gamma, const HoelderOptions& options) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("seminorm_hoelder: gamma must lie in (0,1]");
  const Grid& grid = u.grid;
  const std::size_t count = grid.node_count();
  std::vector<VectorXd> coords(count);
  for (std::size_t i = 0; i < count; ++i) coords[i] = grid.coordinates(i);
  HoelderEstimate est;
  const auto visit = [&](std::size_t i, std::size_t j) {
    if (i == j) return;
    const double r = torus_distance(coords[i], coords[j]);
    const double q = std::abs(u.values(static_cast<Eigen::Index>(i)) - u.values(static_cast<Eigen::Index>(j))) /
                     (gamma == 1.0 ? r : std::pow(r, gamma));
    est.value = std::max(est.value, q);
  };
  if (count <= options.exhaustive_limit) {
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = i + 1; j < count; ++j) visit(i, j);
    return est;
  }
  est.exhaustive = false;
  const auto n = static_cast<std::size_t>(grid.dimension());
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<int> offset(n, -options.radius);
    while (true) {
      visit(i, grid.shifted(i, offset));
      std::size_t d = 0;
      while (d < n && ++offset[d] > options.radius) offset[d++] = -options.radius;
      if (d == n) break;
    }
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  for (std::size_t k = 0; k < options.random_pairs; ++k) visit(pick(rng), pick(rng));
  return est;
}

}  // namespace hjbi
