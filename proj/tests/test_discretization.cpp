#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "hjbi/discretization.hpp"
#include "hjbi/error.hpp"
#include "support.hpp"

using namespace hjbi;
using namespace hjbi::testing;

namespace {

constexpr double kPi = std::numbers::pi;

HJBIOperator cross_operator() {
  // a = sigma sigma^T = [[1.09, 0.6], [0.6, 1.09]] + x-dependence; dominant on the unit grid.
  return make_operator(2, 2, {"1 + 0.1*sin(2*pi*x2)", "0.3", "0.3", "1"}, {"a1*cos(2*pi*x1)", "0.5*b1"},
                       "sin(2*pi*x1)*cos(2*pi*x2) + 0.2*a1*b1", controls({{-1}, {1}}), controls({{-1}, {1}}));
}

}  // namespace

TEST(Grid, IndexingAndValidation) {
  Grid g({4, 8});
  EXPECT_EQ(g.node_count(), 32u);
  EXPECT_EQ(g.flat_index({1, 3}), 11u);
  EXPECT_EQ(g.flat_index({-1, 8}), 24u);
  EXPECT_EQ(g.multi_index(11), (std::vector<int>{1, 3}));
  EXPECT_DOUBLE_EQ(g.coordinates(11)(1), 3.0 / 8.0);
  EXPECT_THROW(Grid({3}), ConfigError);
}

TEST(Grid, CsvAndBinaryRoundTrip) {
  Grid g({8, 4});
  auto u = GridFunction::sample(g, [](const VectorXd& x) { return std::sin(2 * kPi * x(0)) + x(1) / 3.0; });
  const auto dir = std::filesystem::temp_directory_path() / "hjbi_grid_io";
  std::filesystem::create_directories(dir);
  write_csv(u, dir / "u.csv");
  write_binary(u, dir / "u.bin");
  const auto c = read_csv(dir / "u.csv");
  const auto b = read_binary(dir / "u.bin");
  EXPECT_TRUE(c.grid == g);
  EXPECT_TRUE(b.grid == g);
  EXPECT_EQ(c.values, u.values);
  EXPECT_EQ(b.values, u.values);
  std::filesystem::remove_all(dir);
}

TEST(DiscreteHamiltonian, ConstantFunctionGivesMinMaxCost) {
  auto op = make_operator(1, 1, {"1"}, {"a1"}, "a1*b1 + cos(2*pi*x1)", controls({{-1}, {1}}), controls({{-1}, {1}}));
  Grid g({16});
  DiscreteOperator d(op, g);
  VectorXd u = VectorXd::Constant(16, 3.0);
  for (std::size_t i = 0; i < 16; ++i) {
    const VectorXd x = g.coordinates(i);
    EXPECT_NEAR(discrete_hamiltonian(d, u, i), evaluate_hamiltonian(op, x, VectorXd::Zero(1), MatrixXd::Zero(1, 1)),
                1e-15);
  }
}

TEST(DiscreteHamiltonian, ThreePointLaplacian) {
  auto op = make_operator(1, 1, {"1"}, {"0"}, "0");
  Grid g({16});
  const double h = 1.0 / 16;
  VectorXd u = VectorXd::Zero(16);
  u(5) = 1.0;
  DiscreteOperator d(op, g);
  for (std::size_t i = 0; i < 16; ++i) {
    const double expected = -(u((i + 1) % 16) - 2 * u(i) + u((i + 15) % 16)) / (h * h);
    EXPECT_NEAR(discrete_hamiltonian(d, u, i), expected, 1e-9);
  }
}

TEST(DiscreteHamiltonian, UpwindPicksBackwardQuotient) {
  auto op = make_operator(1, 1, {"0"}, {"1"}, "0");
  Grid g({32});
  auto u = GridFunction::sample(g, [](const VectorXd& x) { return x(0); });
  for (std::size_t i = 1; i < 32; ++i) EXPECT_NEAR(discrete_hamiltonian(op, u, i), 1.0, 1e-12);
  auto left = make_operator(1, 1, {"0"}, {"-1"}, "0");
  for (std::size_t i = 0; i < 31; ++i) EXPECT_NEAR(discrete_hamiltonian(left, u, i), -1.0, 1e-12);
}

TEST(DiscreteHamiltonian, RejectsNonDominantDiffusion) {
  auto op = make_operator(2, 2, {"1", "0.9", "0", "0.3"}, {"0", "0"}, "0");  // a = [[1.81, 0.27], [0.27, 0.09]]
  EXPECT_THROW(DiscreteOperator(op, Grid({16, 16})), AdmissibilityError);
}

TEST(DiscreteHamiltonian, MonotoneUnderNeighborPerturbation) {
  auto op = cross_operator();
  Grid g({12, 12});
  DiscreteOperator d(op, g);
  const double dt = cfl_timestep(d);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  VectorXd u = VectorXd::NullaryExpr(static_cast<Eigen::Index>(g.node_count()), [&] { return u01(rng); });
  for (std::size_t node = 0; node < g.node_count(); node += 7) {
    const double base = u(node) - dt * discrete_hamiltonian(d, u, node);
    const std::uint32_t* nb = d.neighbors(node);
    for (std::size_t k = 0; k < d.offset_count(); ++k) {
      VectorXd v = u;
      v(nb[k]) += 0.1;
      EXPECT_GE(v(node) - dt * discrete_hamiltonian(d, v, node), base - 1e-12);
    }
    VectorXd v = u;
    v(node) += 0.1;
    EXPECT_GE(v(node) - dt * discrete_hamiltonian(d, v, node), base - 1e-12);
  }
}

TEST(DiscreteHamiltonian, ConsistencyFirstOrder) {
  auto op = cross_operator();
  const auto phi = [](const VectorXd& x) { return std::sin(2 * kPi * x(0)) * std::cos(2 * kPi * x(1)) + std::cos(2 * kPi * x(0)); };
  VectorXd xq(2);
  xq << 0.375, 0.125;
  VectorXd p(2);
  MatrixXd X(2, 2);
  const double s0 = std::sin(2 * kPi * xq(0)), c0 = std::cos(2 * kPi * xq(0));
  const double s1 = std::sin(2 * kPi * xq(1)), c1 = std::cos(2 * kPi * xq(1));
  const double w = 2 * kPi;
  p << w * c0 * c1 - w * s0, -w * s0 * s1;
  X << -w * w * s0 * c1 - w * w * c0, -w * w * c0 * s1, -w * w * c0 * s1, -w * w * s0 * c1;
  const double exact = evaluate_hamiltonian(op, xq, p, X);
  std::vector<double> errors;
  for (int N : {16, 32, 64}) {
    Grid g({N, N});
    auto u = GridFunction::sample(g, phi);
    const std::size_t node = g.flat_index({static_cast<int>(std::lround(0.375 * N)), static_cast<int>(std::lround(0.125 * N))});
    errors.push_back(std::abs(discrete_hamiltonian(op, u, node) - exact));
  }
  const double order = std::log2(errors[1] / errors[2]);
  EXPECT_GE(order, 0.9) << errors[0] << " " << errors[1] << " " << errors[2];
  EXPECT_LT(errors[2], errors[1]);
}

TEST(DiscreteHamiltonian, TranslationEquivariance) {
  auto op = cross_operator();
  const int N = 16;
  Grid g({N, N});
  const auto shift_rule = [&](VariableFamily f, int i) -> std::optional<Expression> {
    if (f == VariableFamily::State && i == 0)
      return Expression::variable(VariableFamily::State, 0) + Expression::constant(1.0 / N);
    return std::nullopt;
  };
  HJBIOperator shifted = op;
  auto remap = [&](const CoefficientField& c) {
    std::vector<Expression> e;
    for (const auto& x : c.entries()) e.push_back(x.substitute(shift_rule));
    return CoefficientField(c.kind(), c.rows(), c.cols(), e, c.periodic());
  };
  shifted.sigma = remap(op.sigma);
  shifted.drift = remap(op.drift);
  shifted.cost = remap(op.cost);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  VectorXd u = VectorXd::NullaryExpr(N * N, [&] { return u01(rng); });
  VectorXd us(N * N);  // us(i) = u(i + e_1)
  for (std::size_t i = 0; i < g.node_count(); ++i) us(i) = u(g.shifted(i, {1, 0}));
  VectorXd h, hs;
  apply_hamiltonian(DiscreteOperator(op, g), u, h);
  apply_hamiltonian(DiscreteOperator(shifted, g), us, hs);
  for (std::size_t i = 0; i < g.node_count(); ++i) EXPECT_NEAR(hs(i), h(g.shifted(i, {1, 0})), 1e-9);
}

TEST(Cfl, HeatTransportAndMixed) {
  const double h = 1.0 / 64;
  EXPECT_NEAR(cfl_timestep(make_operator(1, 1, {"1"}, {"0"}, "0"), Grid({64})), 0.9 * h * h / 2, 1e-16);
  EXPECT_NEAR(cfl_timestep(make_operator(1, 1, {"0"}, {"1"}, "0"), Grid({64})), 0.9 * h, 1e-15);
  // a = 1, f = 2, 32 nodes: 2/h^2 + 2/h = 2048 + 64.
  EXPECT_NEAR(cfl_timestep(make_operator(1, 1, {"1"}, {"2"}, "0"), Grid({32})), 0.9 / 2112.0, 1e-16);
  EXPECT_EQ(cfl_timestep(make_operator(1, 1, {"0"}, {"0"}, "1"), Grid({8}), 0.0, 0.125), 0.125);
  EXPECT_NEAR(cfl_timestep(make_operator(1, 1, {"0"}, {"0"}, "1"), Grid({8}), 0.5, 10.0), 1.8, 1e-15);
}

TEST(Seminorm, ConstantSawtoothAndSine) {
  Grid g16({16});
  EXPECT_EQ(seminorm_hoelder(GridFunction(g16, VectorXd::Constant(16, 2.0)), 1.0).value, 0.0);
  auto saw = GridFunction::sample(g16, [](const VectorXd& x) { return x(0); });
  double oracle = 0.0;  // exhaustive pairs with the torus distance
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      if (i == j) continue;
      const double d = std::min(std::abs(i - j), 16 - std::abs(i - j)) / 16.0;
      oracle = std::max(oracle, std::abs(saw.values(i) - saw.values(j)) / d);
    }
  EXPECT_NEAR(seminorm_hoelder(saw, 1.0).value, oracle, 1e-12);
  EXPECT_NEAR(oracle, 15.0, 1e-12);  // the wrap jump 15/16 over distance 1/16
  auto sine = GridFunction::sample(Grid({64}), [](const VectorXd& x) { return std::sin(2 * kPi * x(0)); });
  EXPECT_NEAR(seminorm_hoelder(sine, 1.0).value, 2 * kPi, 0.05 * 2 * kPi);
}

TEST(Seminorm, SampledEstimatorIsLowerBound) {
  Grid g({64, 64});
  auto u = GridFunction::sample(g, [](const VectorXd& x) { return std::sin(2 * kPi * x(0)) * std::cos(2 * kPi * x(1)); });
  const auto est = seminorm_hoelder(u, 1.0);
  EXPECT_FALSE(est.exhaustive);
  EXPECT_LE(est.value, 2 * kPi * std::sqrt(2.0) + 1e-9);
  EXPECT_GE(est.value, 0.9 * 2 * kPi);
}
