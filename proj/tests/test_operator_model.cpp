#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "hjbi/error.hpp"
#include "support.hpp"

using namespace hjbi;
using namespace hjbi::testing;

TEST(Diffusion, IdentityAndRankOne) {
  auto id = make_operator(2, 2, {"1", "0", "0", "1"}, {"0", "0"}, "0");
  EXPECT_TRUE(diffusion(id, VectorXd::Zero(2), 0, 0).isApprox(MatrixXd::Identity(2, 2)));
  auto col = make_operator(2, 1, {"1", "0"}, {"0", "0"}, "0");
  MatrixXd expected(2, 2);
  expected << 1, 0, 0, 0;
  EXPECT_EQ(diffusion(col, VectorXd::Zero(2), 0, 0), expected);
}

TEST(Diffusion, MatchesBruteForceProduct) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    double s[4];
    std::vector<std::string> text;
    for (double& v : s) {
      v = u(rng);
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      text.emplace_back(buf);
    }
    auto op = make_operator(2, 2, text, {"0", "0"}, "0");
    const MatrixXd a = diffusion(op, VectorXd::Zero(2), 0, 0);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double sum = 0.0;
        for (int k = 0; k < 2; ++k) sum += s[2 * i + k] * s[2 * j + k];
        EXPECT_NEAR(a(i, j), sum, 1e-15);
      }
    EXPECT_LE((a - a.transpose()).norm(), 1e-12);
    EXPECT_GE(min_eigenvalue(a), -1e-12);
  }
}

TEST(Hamiltonian, ConstantCostAndAbsoluteValue) {
  auto c = make_operator(1, 1, {"0"}, {"0"}, "0.7");
  EXPECT_DOUBLE_EQ(evaluate_hamiltonian(c, VectorXd::Constant(1, 0.3), VectorXd::Constant(1, 5.0),
                                        MatrixXd::Constant(1, 1, 2.0)),
                   0.7);
  auto absp = make_operator(1, 1, {"0"}, {"a1"}, "0", controls({{-1}, {1}}));
  EXPECT_DOUBLE_EQ(evaluate_hamiltonian(absp, VectorXd::Zero(1), VectorXd::Constant(1, 3.0), MatrixXd::Zero(1, 1)), 3.0);
  EXPECT_DOUBLE_EQ(evaluate_hamiltonian(absp, VectorXd::Zero(1), VectorXd::Constant(1, -3.0), MatrixXd::Zero(1, 1)), 3.0);
}

TEST(Hamiltonian, MatchingPenniesTable) {
  // g(alpha, beta) = alpha beta over {-1,1}^2: enumeration gives min_b max_a = 1, max_a min_b = -1.
  auto op = make_operator(1, 1, {"0"}, {"0"}, "a1*b1", controls({{-1}, {1}}), controls({{-1}, {1}}));
  const VectorXd x = VectorXd::Zero(1), p = VectorXd::Zero(1);
  const MatrixXd X = MatrixXd::Zero(1, 1);
  const auto detail = evaluate_hamiltonian_detail(op, x, p, X);
  EXPECT_DOUBLE_EQ(detail.value, 1.0);
  EXPECT_EQ(detail.beta, 0u);  // tie between both betas: first index
  EXPECT_EQ(detail.alpha, 0u);
  EXPECT_DOUBLE_EQ(evaluate_maxmin(op, x, p, X), -1.0);
}

TEST(Hamiltonian, EmptyControlSetRejected) {
  auto op = make_operator(1, 1, {"0"}, {"0"}, "1");
  op.A.points.clear();
  EXPECT_THROW(op.validate(), ConfigError);
}

TEST(Hamiltonian, PropertiesOnSamples) {
  auto op = make_operator(2, 2, {"1 + 0.3*sin(2*pi*x1)", "0.2*a1", "0", "0.8"}, {"a1", "b1*cos(2*pi*x2)"},
                          "sin(2*pi*(x1+x2)) + a1*b1", controls({{-1}, {0.5}, {1}}), controls({{-1}, {1}}));
  std::mt19937 rng(3);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    VectorXd x(2), p(2);
    x << u(rng), u(rng);
    p << g(rng), g(rng);
    MatrixXd R = MatrixXd::NullaryExpr(2, 2, [&] { return g(rng); });
    MatrixXd X = R + R.transpose();
    MatrixXd S = MatrixXd::NullaryExpr(2, 2, [&] { return g(rng); });
    MatrixXd psd = S * S.transpose();
    EXPECT_LE(evaluate_hamiltonian(op, x, p, X + psd), evaluate_hamiltonian(op, x, p, X) + 1e-12);
    EXPECT_GE(evaluate_hamiltonian(op, x, p, X), evaluate_maxmin(op, x, p, X) - 1e-12);
    EXPECT_NEAR(evaluate_hamiltonian(op.with_cost_shift(0.37), x, p, X), evaluate_hamiltonian(op, x, p, X) + 0.37,
                1e-12);
  }
}

TEST(CoefficientDistance, IdentityShiftAndSine) {
  auto op = viscous_isaacs();
  const auto zero = coefficient_distance(op, op, SampleSpec::uniform(1, 64));
  EXPECT_EQ(zero.d_sigma, 0.0);
  EXPECT_EQ(zero.d_f, 0.0);
  EXPECT_EQ(zero.d_ell, 0.0);
  const auto shift = coefficient_distance(op, op.with_cost_shift(0.25), SampleSpec::uniform(1, 64));
  EXPECT_NEAR(shift.d_ell, 0.25, 1e-15);
  EXPECT_EQ(shift.d_f, 0.0);
  auto perturbed = make_operator(1, 1, {"1"}, {"a1 + 0.1*sin(2*pi*x1)"}, "cos(2*pi*x1)", op.A, op.B);
  const auto d = coefficient_distance(op, perturbed, SampleSpec::uniform(1, 256));
  EXPECT_NEAR(d.d_f, 0.1, 1e-6);
}

TEST(CoefficientDistance, TriangleInequalityAndMismatch) {
  auto a = viscous_isaacs();
  auto b = make_operator(1, 1, {"1.05"}, {"a1 + 0.05*cos(2*pi*x1)"}, "cos(2*pi*x1) + 0.1", a.A, a.B);
  auto c = make_operator(1, 1, {"0.95 + 0.02*sin(2*pi*x1)"}, {"a1"}, "cos(2*pi*x1)*1.1", a.A, a.B);
  const auto s = SampleSpec::uniform(1, 128);
  const auto ab = coefficient_distance(a, b, s), bc = coefficient_distance(b, c, s), ac = coefficient_distance(a, c, s);
  EXPECT_LE(ac.d_sigma, ab.d_sigma + bc.d_sigma + 1e-15);
  EXPECT_LE(ac.d_f, ab.d_f + bc.d_f + 1e-15);
  EXPECT_LE(ac.d_ell, ab.d_ell + bc.d_ell + 1e-15);
  auto other = cosine_example();
  EXPECT_THROW(coefficient_distance(a, other, s), ConfigError);
}

TEST(Coercivity, StructuralOneDimensional) {
  auto op = make_operator(1, 1, {"0"}, {"a1"}, "cos(2*pi*x1)", controls({{-1}, {1}}));
  op.coercive_subset = std::vector<std::size_t>{0, 1};
  EXPECT_TRUE(check_coercivity_structural(op, 1.0, SampleSpec::uniform(1, 32)).passed);
  EXPECT_FALSE(check_coercivity_structural(op, 1.5, SampleSpec::uniform(1, 32)).passed);
  op.coercive_subset.reset();
  EXPECT_THROW(check_coercivity_structural(op, 1.0, SampleSpec::uniform(1, 32)), ConfigError);
}

TEST(Coercivity, StructuralTwoDimensional) {
  auto op = make_operator(2, 1, {"0", "0"}, {"a1", "a2"}, "0", controls({{1, 0}, {-1, 0}, {0, 1}, {0, -1}}));
  op.coercive_subset = std::vector<std::size_t>{0, 1, 2, 3};
  // The diamond |f1| + |f2| <= 1 contains the ball of radius 1/sqrt(2).
  EXPECT_TRUE(check_coercivity_structural(op, 0.7, SampleSpec::uniform(2, 8)).passed);
  EXPECT_FALSE(check_coercivity_structural(op, 0.72, SampleSpec::uniform(2, 8)).passed);
}

TEST(Coercivity, SampledViscous) {
  auto op = make_operator(1, 1, {"0.5"}, {"a1"}, "cos(2*pi*x1)", controls({{-1}, {1}}));
  CoercivitySampling sampling;
  sampling.sample = SampleSpec::uniform(1, 32);
  sampling.C = 1.0;
  EXPECT_TRUE(check_coercivity_sampled(op, 1.0, sampling).passed);
  sampling.C = 0.5;
  EXPECT_FALSE(check_coercivity_sampled(op, 1.0, sampling).passed);
}

TEST(Certificate, ConstantCoefficientsPass) {
  auto op = make_operator(1, 1, {"0.8"}, {"0.3"}, "-0.6");
  RegularityCertificate cert;
  cert.C = 0.8;
  cert.nu = 0.64;
  EXPECT_TRUE(verify_certificate(op, cert, SampleSpec::uniform(1, 32)).passed());
}

TEST(Certificate, CosineModulusAndEllipticity) {
  auto op = make_operator(1, 1, {"0"}, {"0"}, "cos(2*pi*x1)");
  RegularityCertificate cert;
  cert.C = 1.0;
  cert.omega = Modulus::linear(2 * std::numbers::pi);
  EXPECT_TRUE(verify_certificate(op, cert, SampleSpec::uniform(1, 128)).passed());
  cert.omega = Modulus::linear(1.0);
  const auto report = verify_certificate(op, cert, SampleSpec::uniform(1, 128));
  EXPECT_FALSE(report.passed());
  bool witnessed = false;
  for (const auto& c : report.checks)
    if (!c.passed) witnessed = !c.witness.empty();
  EXPECT_TRUE(witnessed);

  auto id = make_operator(2, 2, {"1", "0", "0", "1"}, {"0", "0"}, "0");
  RegularityCertificate e;
  e.C = std::sqrt(2.0);  // Frobenius norm of the identity
  e.nu = 1.0;
  EXPECT_TRUE(verify_certificate(id, e, SampleSpec::uniform(2, 4)).passed());
  e.nu = 1.0001;
  EXPECT_FALSE(verify_certificate(id, e, SampleSpec::uniform(2, 4)).passed());
}

TEST(Certificate, EstimatedCertificateVerifies) {
  auto op = viscous_isaacs();
  const auto cert = estimate_certificate(op, SampleSpec::uniform(1, 64));
  EXPECT_TRUE(verify_certificate(op, cert, SampleSpec::uniform(1, 64)).passed());
  EXPECT_GT(cert.nu, 0.0);
}

TEST(Modulus, Kinds) {
  EXPECT_DOUBLE_EQ(Modulus::linear(2.0)(0.5), 1.0);
  EXPECT_DOUBLE_EQ(Modulus::hoelder(2.0, 0.5)(0.25), 1.0);
  const auto tab = Modulus::tabulated({0.1, 0.2}, {1.0, 1.5});
  EXPECT_DOUBLE_EQ(tab(0.05), 0.5);
  EXPECT_DOUBLE_EQ(tab(0.3), 2.0);
  const auto mx = Modulus::pointwise_max(Modulus::linear(1.0), Modulus::hoelder(1.0, 0.5));
  EXPECT_DOUBLE_EQ(mx(0.25), 0.5);
  EXPECT_DOUBLE_EQ(mx(4.0), 4.0);
  EXPECT_THROW(Modulus::tabulated({0.1, 0.2}, {1.0, 0.5}).validate(), ConfigError);
}

TEST(Periodicity, DetectsNonPeriodicField) {
  EXPECT_LT(periodicity_defect(viscous_isaacs(), SampleSpec::uniform(1, 16)), 1e-12);
  auto bad = make_operator(1, 1, {"0"}, {"0"}, "x1");
  EXPECT_NEAR(periodicity_defect(bad, SampleSpec::uniform(1, 16)), 1.0, 1e-12);
}
