#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hjbi/dense.hpp"
#include "hjbi/expression.hpp"

namespace hjbi {

/// Finite sample of a compact control space.
struct ControlSet {
  std::vector<VectorXd> points;
  std::string label;

  std::size_t size() const { return points.size(); }
  Eigen::Index dimension() const { return points.empty() ? 0 : points.front().size(); }
  /// Throws ConfigError when empty or ragged.
  void validate() const;
  bool operator==(const ControlSet& other) const;
};

enum class FieldKind { Matrix, Vector, Scalar };

/// Closed-form coefficient: a matrix, vector or scalar of expressions over
/// (x, alpha, beta). Entries are stored row-major.
class CoefficientField {
 public:
  CoefficientField() = default;
  CoefficientField(FieldKind kind, Eigen::Index rows, Eigen::Index cols, std::vector<Expression> entries,
                   bool periodic = true);

  static CoefficientField matrix(Eigen::Index rows, Eigen::Index cols, std::vector<Expression> entries,
                                 bool periodic = true);
  static CoefficientField vector(std::vector<Expression> entries, bool periodic = true);
  static CoefficientField scalar(Expression entry, bool periodic = true);

  FieldKind kind() const { return kind_; }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  bool periodic() const { return periodic_; }
  const std::vector<Expression>& entries() const { return entries_; }
  const Expression& entry(Eigen::Index r, Eigen::Index c = 0) const { return entries_[r * cols_ + c]; }

  MatrixXd evaluate(const EvalPoint& point) const;
  double evaluate_scalar(const EvalPoint& point) const;
  VectorXd evaluate_vector(const EvalPoint& point) const;

  int max_index(VariableFamily family) const;

 private:
  FieldKind kind_ = FieldKind::Scalar;
  Eigen::Index rows_ = 1;
  Eigen::Index cols_ = 1;
  std::vector<Expression> entries_{Expression()};
  bool periodic_ = true;
};

/// min over beta of max over alpha of { -tr(a X) + f.p + l } with a = sigma sigma^T.
struct HJBIOperator {
  std::string name;
  Eigen::Index n = 1;       // state dimension
  Eigen::Index p_dim = 1;   // noise dimension
  CoefficientField sigma;   // n x p_dim
  CoefficientField drift;   // n
  CoefficientField cost;    // scalar
  ControlSet A;             // maximizing player
  ControlSet B;             // minimizing player
  /// Indices into A of a subset on which sigma vanishes (used by the structural coercivity test).
  std::optional<std::vector<std::size_t>> coercive_subset;

  /// Throws ConfigError on inconsistent dimensions or unbound variables.
  void validate() const;

  EvalPoint point(const VectorXd& x, std::size_t ia, std::size_t ib) const {
    return EvalPoint{{x.data(), static_cast<std::size_t>(x.size())},
                     {},
                     {A.points[ia].data(), static_cast<std::size_t>(A.points[ia].size())},
                     {B.points[ib].data(), static_cast<std::size_t>(B.points[ib].size())}};
  }

  MatrixXd sigma_at(const VectorXd& x, std::size_t ia, std::size_t ib) const { return sigma.evaluate(point(x, ia, ib)); }
  VectorXd drift_at(const VectorXd& x, std::size_t ia, std::size_t ib) const {
    return drift.evaluate_vector(point(x, ia, ib));
  }
  double cost_at(const VectorXd& x, std::size_t ia, std::size_t ib) const {
    return cost.evaluate_scalar(point(x, ia, ib));
  }

  /// Same operator with the running cost shifted by a constant.
  HJBIOperator with_cost_shift(double c) const;
};

/// Modulus of continuity: omega(0) = 0, nondecreasing.
class Modulus {
 public:
  enum class Kind { Linear, Hoelder, Tabulated, PointwiseMax };

  static Modulus linear(double lipschitz);
  static Modulus hoelder(double constant, double exponent);
  /// Piecewise-linear through (0,0) and the given nodes; extended with the last slope.
  static Modulus tabulated(std::vector<double> r, std::vector<double> value);
  static Modulus pointwise_max(const Modulus& a, const Modulus& b);

  Modulus() = default;  // linear(0)

  double operator()(double r) const;
  Kind kind() const { return kind_; }
  std::string describe() const;
  void validate() const;

 private:
  Kind kind_ = Kind::Linear;
  double constant_ = 0.0;
  double exponent_ = 1.0;
  std::vector<double> r_;
  std::vector<double> values_;
  std::vector<Modulus> parts_;
};

/// Regularity constants of an operator and its solutions.
struct RegularityCertificate {
  double C = 0.0;        // sup bound on |sigma|, |f|, |l|
  double C_sigma = 0.0;  // Lipschitz constant of sigma
  double C_f = 0.0;      // Lipschitz constant of f
  Modulus omega;         // modulus of l
  double nu = 0.0;       // ellipticity lower bound, 0 if degenerate
  std::optional<double> gamma;  // Hoelder exponent of the solutions
  std::optional<double> C_H;    // Hoelder seminorm bound of the solutions

  void validate() const;
  /// Component-wise maximum; the pair inherits the weaker ellipticity.
  static RegularityCertificate shared(const RegularityCertificate& a, const RegularityCertificate& b);
};

/// Uniform sample of the unit torus: `sizes[i]` points along axis i.
struct SampleSpec {
  std::vector<int> sizes;

  static SampleSpec uniform(Eigen::Index n, int points_per_axis) {
    return SampleSpec{std::vector<int>(static_cast<std::size_t>(n), points_per_axis)};
  }
  std::size_t count() const;
  VectorXd point(std::size_t flat) const;
};

struct CoefficientDistance {
  double d_sigma = 0.0;
  double d_f = 0.0;
  double d_ell = 0.0;
  SampleSpec sample;
};

struct HamiltonianValue {
  double value = 0.0;
  std::size_t alpha = 0;  // maximizer at the minimizing beta
  std::size_t beta = 0;   // minimizer
};

/// a = sigma sigma^T (n x n).
MatrixXd diffusion(const HJBIOperator& op, const VectorXd& x, std::size_t alpha, std::size_t beta);

HamiltonianValue evaluate_hamiltonian_detail(const HJBIOperator& op, const VectorXd& x, const VectorXd& p,
                                             const MatrixXd& X);
double evaluate_hamiltonian(const HJBIOperator& op, const VectorXd& x, const VectorXd& p, const MatrixXd& X);
/// max over alpha of min over beta (lower than the min-max for a finite game).
double evaluate_maxmin(const HJBIOperator& op, const VectorXd& x, const VectorXd& p, const MatrixXd& X);

/// Sampled sup-distances between the coefficients of two operators with identical control sets.
CoefficientDistance coefficient_distance(const HJBIOperator& op1, const HJBIOperator& op2, const SampleSpec& sample);

struct CoercivityReport {
  bool passed = false;
  double worst_margin = 0.0;
  std::string witness;
};

struct CoercivitySampling {
  SampleSpec sample;
  double C = 0.0;                     // the constant in  H >= nu|p| - C
  double p_radius = 10.0;
  int p_samples = 41;                 // per axis
  std::vector<MatrixXd> hessians;     // defaults to {0}
};

/// Checks  H(x,p,X) >= nu|p| - C  on samples of (x,p,X).
CoercivityReport check_coercivity_sampled(const HJBIOperator& op, double nu, const CoercivitySampling& sampling);

/// Checks sigma = 0 on the declared subset A' and B(0,nu) in conv{f(x,alpha,beta) : alpha in A'}.
/// Dimensions 1 and 2 only; throws ConfigError without a declared subset.
CoercivityReport check_coercivity_structural(const HJBIOperator& op, double nu, const SampleSpec& sample,
                                             int directions = 720);

struct CertificateCheck {
  std::string name;
  bool passed = true;
  double worst = 0.0;  // worst observed quantity
  double bound = 0.0;  // allowed value
  std::string witness;
};

struct CertificateReport {
  std::vector<CertificateCheck> checks;
  bool passed() const;
};

/// Samples the certificate's claims: sup bounds, Lipschitz quotients (1% slack),
/// the modulus of l, and ellipticity of a.
CertificateReport verify_certificate(const HJBIOperator& op, const RegularityCertificate& cert,
                                     const SampleSpec& sample);

/// Sampled certificate (sup bounds, Lipschitz quotients, linear modulus, ellipticity)
/// with a multiplicative safety margin; used when a config omits one.
RegularityCertificate estimate_certificate(const HJBIOperator& op, const SampleSpec& sample, double safety = 1.05);

/// Spot-checks periodicity of every field flagged periodic. Returns the worst |g(x+e_i)-g(x)|.
double periodicity_defect(const HJBIOperator& op, const SampleSpec& sample);

}  // namespace hjbi
