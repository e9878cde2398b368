#include "hjbi/operator_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "hjbi/error.hpp"

namespace hjbi {

namespace {

std::string format_point(const VectorXd& x) {
  std::ostringstream os;
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
  os << ")";
  return os.str();
}

// Coefficients of one operator evaluated on every (sample, alpha, beta).
struct SampledCoefficients {
  std::size_t pairs = 0;
  std::vector<VectorXd> x;
  std::vector<MatrixXd> sigma;  // [sample * pairs + pair]
  std::vector<VectorXd> f;
  std::vector<double> ell;

  SampledCoefficients(const HJBIOperator& op, const SampleSpec& sample) {
    pairs = op.A.size() * op.B.size();
    const std::size_t count = sample.count();
    x.reserve(count);
    sigma.reserve(count * pairs);
    f.reserve(count * pairs);
    ell.reserve(count * pairs);
    for (std::size_t s = 0; s < count; ++s) {
      x.push_back(sample.point(s));
      for (std::size_t ib = 0; ib < op.B.size(); ++ib) {
        for (std::size_t ia = 0; ia < op.A.size(); ++ia) {
          const EvalPoint pt = op.point(x.back(), ia, ib);
          sigma.push_back(op.sigma.evaluate(pt));
          f.push_back(op.drift.evaluate_vector(pt));
          ell.push_back(op.cost.evaluate_scalar(pt));
        }
      }
    }
  }

  std::size_t at(std::size_t s, std::size_t pair) const { return s * pairs + pair; }
};

// Sample pairs to visit for difference quotients: all pairs for small samples,
// otherwise pairs within a box of radius 4 nodes.
template <typename Visit>
void for_each_sample_pair(const SampleSpec& sample, Visit&& visit) {
  const std::size_t count = sample.count();
  if (count <= 2048) {
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = i + 1; j < count; ++j) visit(i, j);
    return;
  }
  const std::size_t n = sample.sizes.size();
  std::vector<int> index(n);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t rem = i;
    for (std::size_t d = n; d-- > 0;) {
      index[d] = static_cast<int>(rem % static_cast<std::size_t>(sample.sizes[d]));
      rem /= static_cast<std::size_t>(sample.sizes[d]);
    }
    const int radius = 4;
    std::vector<int> offset(n, -radius);
    while (true) {
      std::size_t flat = 0;
      for (std::size_t d = 0; d < n; ++d) {
        const int s = sample.sizes[d];
        flat = flat * static_cast<std::size_t>(s) + static_cast<std::size_t>(((index[d] + offset[d]) % s + s) % s);
      }
      if (flat > i) visit(i, flat);
      std::size_t d = 0;
      while (d < n && ++offset[d] > radius) offset[d++] = -radius;
      if (d == n) break;
    }
  }
}

}  // namespace

void ControlSet::validate() const {
  if (points.empty()) throw ConfigError("control set '" + label + "' is empty");
  for (const auto& p : points) {
    if (p.size() != points.front().size())
      throw ConfigError("control set '" + label + "' has points of different dimensions");
  }
}

bool ControlSet::operator==(const ControlSet& other) const {
  if (points.size() != other.points.size()) return false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != other.points[i].size() || points[i] != other.points[i]) return false;
  }
  return true;
}

CoefficientField::CoefficientField(FieldKind kind, Eigen::Index rows, Eigen::Index cols,
                                   std::vector<Expression> entries, bool periodic)
    : kind_(kind), rows_(rows), cols_(cols), entries_(std::move(entries)), periodic_(periodic) {
  if (static_cast<Eigen::Index>(entries_.size()) != rows_ * cols_) {
    throw ConfigError("coefficient field: expected " + std::to_string(rows_ * cols_) + " entries, got " +
                      std::to_string(entries_.size()));
  }
}

CoefficientField CoefficientField::matrix(Eigen::Index rows, Eigen::Index cols, std::vector<Expression> entries,
                                          bool periodic) {
  return CoefficientField(FieldKind::Matrix, rows, cols, std::move(entries), periodic);
}

CoefficientField CoefficientField::vector(std::vector<Expression> entries, bool periodic) {
  const auto rows = static_cast<Eigen::Index>(entries.size());
  return CoefficientField(FieldKind::Vector, rows, 1, std::move(entries), periodic);
}

CoefficientField CoefficientField::scalar(Expression entry, bool periodic) {
  return CoefficientField(FieldKind::Scalar, 1, 1, {std::move(entry)}, periodic);
}

MatrixXd CoefficientField::evaluate(const EvalPoint& point) const {
  MatrixXd out(rows_, cols_);
  for (Eigen::Index r = 0; r < rows_; ++r)
    for (Eigen::Index c = 0; c < cols_; ++c) out(r, c) = entries_[r * cols_ + c].evaluate(point);
  return out;
}

double CoefficientField::evaluate_scalar(const EvalPoint& point) const { return entries_.front().evaluate(point); }

VectorXd CoefficientField::evaluate_vector(const EvalPoint& point) const {
  VectorXd out(rows_ * cols_);
  for (std::size_t i = 0; i < entries_.size(); ++i) out(static_cast<Eigen::Index>(i)) = entries_[i].evaluate(point);
  return out;
}

int CoefficientField::max_index(VariableFamily family) const {
  int result = -1;
  for (const auto& e : entries_) result = std::max(result, e.max_index(family));
  return result;
}

void HJBIOperator::validate() const {
  const std::string who = "operator '" + name + "': ";
  if (n < 1) throw ConfigError(who + "state dimension must be positive");
  if (p_dim < 1) throw ConfigError(who + "noise dimension must be positive");
  A.validate();
  B.validate();
  if (sigma.rows() != n || sigma.cols() != p_dim)
    throw ConfigError(who + "sigma must be " + std::to_string(n) + "x" + std::to_string(p_dim) + ", got " +
                      std::to_string(sigma.rows()) + "x" + std::to_string(sigma.cols()));
  if (drift.rows() * drift.cols() != n)
    throw ConfigError(who + "drift must have " + std::to_string(n) + " components");
  if (cost.rows() * cost.cols() != 1) throw ConfigError(who + "cost must be scalar");
  const auto check = [&](const CoefficientField& field, const char* field_name) {
    if (field.max_index(VariableFamily::State) >= n)
      throw ConfigError(who + field_name + " references a state component beyond x" + std::to_string(n));
    if (field.max_index(VariableFamily::Fast) >= 0)
      throw ConfigError(who + field_name + " references fast variables (y) outside a two-scale operator");
    if (field.max_index(VariableFamily::Alpha) >= A.dimension())
      throw ConfigError(who + field_name + " references alpha components beyond the control dimension");
    if (field.max_index(VariableFamily::Beta) >= B.dimension())
      throw ConfigError(who + field_name + " references beta components beyond the control dimension");
  };
  check(sigma, "sigma");
  check(drift, "drift");
  check(cost, "cost");
  if (coercive_subset) {
    for (std::size_t i : *coercive_subset)
      if (i >= A.size()) throw ConfigError(who + "coercive subset index out of range");
  }
}

HJBIOperator HJBIOperator::with_cost_shift(double c) const {
  HJBIOperator out = *this;
  out.cost = CoefficientField::scalar(cost.entry(0) + Expression::constant(c), cost.periodic());
  return out;
}

Modulus Modulus::linear(double lipschitz) {
  Modulus m;
  m.kind_ = Kind::Linear;
  m.constant_ = lipschitz;
  return m;
}

Modulus Modulus::hoelder(double constant, double exponent) {
  Modulus m = linear(0.0);
  m.kind_ = Kind::Hoelder;
  m.constant_ = constant;
  m.exponent_ = exponent;
  return m;
}

Modulus Modulus::tabulated(std::vector<double> r, std::vector<double> value) {
  Modulus m = linear(0.0);
  m.kind_ = Kind::Tabulated;
  m.r_ = std::move(r);
  m.values_ = std::move(value);
  m.validate();
  return m;
}

Modulus Modulus::pointwise_max(const Modulus& a, const Modulus& b) {
  Modulus m = linear(0.0);
  m.kind_ = Kind::PointwiseMax;
  m.parts_ = {a, b};
  return m;
}

double Modulus::operator()(double r) const {
  if (r <= 0.0) return 0.0;
  switch (kind_) {
    case Kind::Linear:
      return constant_ * r;
    case Kind::Hoelder:
      return constant_ * std::pow(r, exponent_);
    case Kind::Tabulated: {
      double r0 = 0.0;
      double v0 = 0.0;
      for (std::size_t i = 0; i < r_.size(); ++i) {
        if (r <= r_[i]) return v0 + (values_[i] - v0) * (r - r0) / (r_[i] - r0);
        r0 = r_[i];
        v0 = values_[i];
      }
      const double slope = r_.size() >= 2 ? (values_.back() - values_[values_.size() - 2]) /
                                                 (r_.back() - r_[r_.size() - 2])
                                           : values_.back() / r_.back();
      return v0 + slope * (r - r0);
    }
    case Kind::PointwiseMax:
      return std::max(parts_[0](r), parts_[1](r));
  }
  return 0.0;
}

std::string Modulus::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::Linear: os << "linear(" << constant_ << ")"; break;
    case Kind::Hoelder: os << "hoelder(" << constant_ << ", " << exponent_ << ")"; break;
    case Kind::Tabulated: os << "tabulated(" << r_.size() << " nodes)"; break;
    case Kind::PointwiseMax: os << "max(" << parts_[0].describe() << ", " << parts_[1].describe() << ")"; break;
  }
  return os.str();
}

void Modulus::validate() const {
  switch (kind_) {
    case Kind::Linear:
      if (constant_ < 0) throw ConfigError("modulus: linear constant must be nonnegative");
      break;
    case Kind::Hoelder:
      if (constant_ < 0 || exponent_ <= 0 || exponent_ > 1)
        throw ConfigError("modulus: hoelder needs constant >= 0 and exponent in (0,1]");
      break;
    case Kind::Tabulated: {
      if (r_.empty() || r_.size() != values_.size()) throw ConfigError("modulus: tabulated needs matching r/value lists");
      double r_prev = 0.0;
      double v_prev = 0.0;
      for (std::size_t i = 0; i < r_.size(); ++i) {
        if (r_[i] <= r_prev) throw ConfigError("modulus: tabulated radii must be positive and increasing");
        if (values_[i] < v_prev) throw ConfigError("modulus: tabulated values must be nondecreasing and >= 0");
        r_prev = r_[i];
        v_prev = values_[i];
      }
      break;
    }
    case Kind::PointwiseMax:
      parts_[0].validate();
      parts_[1].validate();
      break;
  }
}

void RegularityCertificate::validate() const {
  if (C < 0 || C_sigma < 0 || C_f < 0) throw ConfigError("certificate: C, C_sigma, C_f must be nonnegative");
  if (nu < 0) throw ConfigError("certificate: nu must be nonnegative");
  if (gamma && (*gamma <= 0 || *gamma > 1)) throw ConfigError("certificate: gamma must lie in (0,1]");
  if (C_H && *C_H < 0) throw ConfigError("certificate: C_H must be nonnegative");
  omega.validate();
}

RegularityCertificate RegularityCertificate::shared(const RegularityCertificate& a, const RegularityCertificate& b) {
  RegularityCertificate out;
  out.C = std::max(a.C, b.C);
  out.C_sigma = std::max(a.C_sigma, b.C_sigma);
  out.C_f = std::max(a.C_f, b.C_f);
  out.omega = Modulus::pointwise_max(a.omega, b.omega);
  out.nu = std::min(a.nu, b.nu);
  if (a.gamma && b.gamma) out.gamma = std::min(*a.gamma, *b.gamma);
  else if (a.gamma) out.gamma = a.gamma;
  else out.gamma = b.gamma;
  if (a.C_H && b.C_H) out.C_H = std::max(*a.C_H, *b.C_H);
  return out;
}

std::size_t SampleSpec::count() const {
  std::size_t total = 1;
  for (int s : sizes) total *= static_cast<std::size_t>(s);
  return total;
}

VectorXd SampleSpec::point(std::size_t flat) const {
  VectorXd x(static_cast<Eigen::Index>(sizes.size()));
  for (std::size_t d = sizes.size(); d-- > 0;) {
    const auto s = static_cast<std::size_t>(sizes[d]);
    x(static_cast<Eigen::Index>(d)) = static_cast<double>(flat % s) / static_cast<double>(s);
    flat /= s;
  }
  return x;
}

MatrixXd diffusion(const HJBIOperator& op, const VectorXd& x, std::size_t alpha, std::size_t beta) {
  const MatrixXd s = op.sigma_at(x, alpha, beta);
  if (s.rows() != op.n) throw ConfigError("diffusion: sigma has " + std::to_string(s.rows()) + " rows, expected n");
  return s * s.transpose();
}

HamiltonianValue evaluate_hamiltonian_detail(const HJBIOperator& op, const VectorXd& x, const VectorXd& p,
                                             const MatrixXd& X) {
  if (op.A.size() == 0 || op.B.size() == 0) throw ConfigError("evaluate_hamiltonian: empty control set");
  if (p.size() != op.n || X.rows() != op.n || X.cols() != op.n)
    throw ConfigError("evaluate_hamiltonian: p and X must match the state dimension");
  HamiltonianValue best{std::numeric_limits<double>::infinity(), 0, 0};
  for (std::size_t ib = 0; ib < op.B.size(); ++ib) {
    double inner = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t ia = 0; ia < op.A.size(); ++ia) {
      const MatrixXd a = diffusion(op, x, ia, ib);
      const double v = -(a * X).trace() + op.drift_at(x, ia, ib).dot(p) + op.cost_at(x, ia, ib);
      if (v > inner) {
        inner = v;
        arg = ia;
      }
    }
    if (inner < best.value) best = {inner, arg, ib};
  }
  return best;
}

double evaluate_hamiltonian(const HJBIOperator& op, const VectorXd& x, const VectorXd& p, const MatrixXd& X) {
  return evaluate_hamiltonian_detail(op, x, p, X).value;
}

double evaluate_maxmin(const HJBIOperator& op, const VectorXd& x, const VectorXd& p, const MatrixXd& X) {
  if (op.A.size() == 0 || op.B.size() == 0) throw ConfigError("evaluate_maxmin: empty control set");
  double outer = -std::numeric_limits<double>::infinity();
  for (std::size_t ia = 0; ia < op.A.size(); ++ia) {
    double inner = std::numeric_limits<double>::infinity();
    for (std::size_t ib = 0; ib < op.B.size(); ++ib) {
      const MatrixXd a = diffusion(op, x, ia, ib);
      inner = std::min(inner, -(a * X).trace() + op.drift_at(x, ia, ib).dot(p) + op.cost_at(x, ia, ib));
    }
    outer = std::max(outer, inner);
  }
  return outer;
}

CoefficientDistance coefficient_distance(const HJBIOperator& op1, const HJBIOperator& op2, const SampleSpec& sample) {
  if (op1.n != op2.n || op1.p_dim != op2.p_dim)
    throw ConfigError("coefficient_distance: operators have different dimensions");
  if (!(op1.A == op2.A) || !(op1.B == op2.B))
    throw ConfigError("coefficient_distance: operators must share the control sets A and B");
  CoefficientDistance d;
  d.sample = sample;
  const std::size_t count = sample.count();
  for (std::size_t s = 0; s < count; ++s) {
    const VectorXd x = sample.point(s);
    for (std::size_t ib = 0; ib < op1.B.size(); ++ib) {
      for (std::size_t ia = 0; ia < op1.A.size(); ++ia) {
        d.d_sigma = std::max(d.d_sigma, (op1.sigma_at(x, ia, ib) - op2.sigma_at(x, ia, ib)).norm());
        d.d_f = std::max(d.d_f, (op1.drift_at(x, ia, ib) - op2.drift_at(x, ia, ib)).norm());
        d.d_ell = std::max(d.d_ell, std::abs(op1.cost_at(x, ia, ib) - op2.cost_at(x, ia, ib)));
      }
    }
  }
  return d;
}

CoercivityReport check_coercivity_sampled(const HJBIOperator& op, double nu, const CoercivitySampling& sampling) {
  if (nu <= 0) throw ConfigError("check_coercivity: nu must be positive");
  if (op.n > 2) throw ConfigError("check_coercivity: sampled mode supports n <= 2");
  std::vector<MatrixXd> hessians = sampling.hessians;
  if (hessians.empty()) hessians.push_back(MatrixXd::Zero(op.n, op.n));
  CoercivityReport report{true, std::numeric_limits<double>::infinity(), ""};
  const int m = std::max(2, sampling.p_samples);
  const std::size_t p_count = op.n == 1 ? static_cast<std::size_t>(m) : static_cast<std::size_t>(m) * m;
  const std::size_t count = sampling.sample.count();
  for (std::size_t s = 0; s < count; ++s) {
    const VectorXd x = sampling.sample.point(s);
    for (std::size_t k = 0; k < p_count; ++k) {
      VectorXd p(op.n);
      const auto coord = [&](std::size_t i) { return -sampling.p_radius + 2.0 * sampling.p_radius * i / (m - 1); };
      if (op.n == 1) {
        p(0) = coord(k);
      } else {
        p(0) = coord(k / static_cast<std::size_t>(m));
        p(1) = coord(k % static_cast<std::size_t>(m));
      }
      if (p.norm() > sampling.p_radius * (1 + 1e-12)) continue;
      for (const auto& X : hessians) {
        const double margin = evaluate_hamiltonian(op, x, p, X) - (nu * p.norm() - sampling.C);
        if (margin < report.worst_margin) {
          report.worst_margin = margin;
          report.witness = "x=" + format_point(x) + " p=" + format_point(p);
        }
      }
    }
  }
  report.passed = report.worst_margin >= -1e-12;
  return report;
}

CoercivityReport check_coercivity_structural(const HJBIOperator& op, double nu, const SampleSpec& sample,
                                             int directions) {
  if (nu <= 0) throw ConfigError("check_coercivity: nu must be positive");
  if (!op.coercive_subset || op.coercive_subset->empty())
    throw ConfigError("check_coercivity: structural mode needs a declared coercive subset A'");
  if (op.n > 2) throw ConfigError("check_coercivity: structural mode supports n <= 2");
  CoercivityReport report{true, std::numeric_limits<double>::infinity(), ""};
  std::vector<VectorXd> dirs;
  if (op.n == 1) {
    dirs = {VectorXd::Constant(1, 1.0), VectorXd::Constant(1, -1.0)};
  } else {
    for (int k = 0; k < directions; ++k) {
      const double th = 2.0 * std::numbers::pi * k / directions;
      VectorXd d(2);
      d << std::cos(th), std::sin(th);
      dirs.push_back(d);
    }
  }
  const std::size_t count = sample.count();
  for (std::size_t s = 0; s < count; ++s) {
    const VectorXd x = sample.point(s);
    for (std::size_t ib = 0; ib < op.B.size(); ++ib) {
      for (std::size_t ia : *op.coercive_subset) {
        const double sn = op.sigma_at(x, ia, ib).norm();
        if (sn > 1e-12) {
          report.passed = false;
          report.worst_margin = std::min(report.worst_margin, -sn);
          report.witness = "sigma != 0 on A' at x=" + format_point(x) + " alpha#" + std::to_string(ia);
          return report;
        }
      }
      // Support function of the hull must dominate nu in every direction.
      for (const auto& d : dirs) {
        double support = -std::numeric_limits<double>::infinity();
        for (std::size_t ia : *op.coercive_subset) support = std::max(support, op.drift_at(x, ia, ib).dot(d));
        const double margin = support - nu;
        if (margin < report.worst_margin) {
          report.worst_margin = margin;
          report.witness = "x=" + format_point(x) + " beta#" + std::to_string(ib) + " direction=" + format_point(d);
        }
      }
    }
  }
  report.passed = report.worst_margin >= -1e-12;
  return report;
}

bool CertificateReport::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

CertificateReport verify_certificate(const HJBIOperator& op, const RegularityCertificate& cert,
                                     const SampleSpec& sample) {
  constexpr double slack = 1.01;
  const SampledCoefficients table(op, sample);
  const std::size_t count = sample.count();
  CertificateCheck sup{"sup bound", true, 0.0, cert.C, ""};
  CertificateCheck lip_sigma{"sigma Lipschitz", true, 0.0, cert.C_sigma, ""};
  CertificateCheck lip_f{"drift Lipschitz", true, 0.0, cert.C_f, ""};
  CertificateCheck mod_l{"cost modulus", true, 0.0, 0.0, ""};
  CertificateCheck ellip{"ellipticity", true, std::numeric_limits<double>::infinity(), cert.nu, ""};
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t k = 0; k < table.pairs; ++k) {
      const std::size_t i = table.at(s, k);
      const double m = std::max({table.sigma[i].norm(), table.f[i].norm(), std::abs(table.ell[i])});
      if (m > sup.worst) {
        sup.worst = m;
        sup.witness = "x=" + format_point(table.x[s]);
      }
      const double e = min_eigenvalue(MatrixXd(table.sigma[i] * table.sigma[i].transpose()));
      if (e < ellip.worst) {
        ellip.worst = e;
        ellip.witness = "x=" + format_point(table.x[s]);
      }
    }
  }
  sup.passed = sup.worst <= cert.C * slack + 1e-12;
  ellip.passed = ellip.worst >= cert.nu - 1e-12;
  // Worst excess of |l(x)-l(y)| over omega(|x-y|), reported via the ratio when omega > 0.
  double worst_excess = -std::numeric_limits<double>::infinity();
  for_each_sample_pair(sample, [&](std::size_t s1, std::size_t s2) {
    const double r = torus_distance(table.x[s1], table.x[s2]);
    if (r <= 0) return;
    for (std::size_t k = 0; k < table.pairs; ++k) {
      const std::size_t i = table.at(s1, k);
      const std::size_t j = table.at(s2, k);
      const double qs = (table.sigma[i] - table.sigma[j]).norm() / r;
      if (qs > lip_sigma.worst) {
        lip_sigma.worst = qs;
        lip_sigma.witness = "x=" + format_point(table.x[s1]) + " y=" + format_point(table.x[s2]);
      }
      const double qf = (table.f[i] - table.f[j]).norm() / r;
      if (qf > lip_f.worst) {
        lip_f.worst = qf;
        lip_f.witness = "x=" + format_point(table.x[s1]) + " y=" + format_point(table.x[s2]);
      }
      const double dl = std::abs(table.ell[i] - table.ell[j]);
      const double allowed = cert.omega(r) * slack;
      if (dl - allowed > worst_excess) {
        worst_excess = dl - allowed;
        mod_l.worst = dl;
        mod_l.bound = allowed;
        mod_l.witness = "x=" + format_point(table.x[s1]) + " y=" + format_point(table.x[s2]);
      }
    }
  });
  lip_sigma.passed = lip_sigma.worst <= cert.C_sigma * slack + 1e-12;
  lip_f.passed = lip_f.worst <= cert.C_f * slack + 1e-12;
  mod_l.passed = worst_excess <= 1e-12;
  CertificateReport report;
  report.checks = {sup, lip_sigma, lip_f, mod_l, ellip};
  return report;
}

RegularityCertificate estimate_certificate(const HJBIOperator& op, const SampleSpec& sample, double safety) {
  const SampledCoefficients table(op, sample);
  RegularityCertificate cert;
  double min_eig = std::numeric_limits<double>::infinity();
  double lip_l = 0.0;
  for (std::size_t i = 0; i < table.sigma.size(); ++i) {
    cert.C = std::max({cert.C, table.sigma[i].norm(), table.f[i].norm(), std::abs(table.ell[i])});
    min_eig = std::min(min_eig, min_eigenvalue(MatrixXd(table.sigma[i] * table.sigma[i].transpose())));
  }
  for_each_sample_pair(sample, [&](std::size_t s1, std::size_t s2) {
    const double r = torus_distance(table.x[s1], table.x[s2]);
    if (r <= 0) return;
    for (std::size_t k = 0; k < table.pairs; ++k) {
      const std::size_t i = table.at(s1, k);
      const std::size_t j = table.at(s2, k);
      cert.C_sigma = std::max(cert.C_sigma, (table.sigma[i] - table.sigma[j]).norm() / r);
      cert.C_f = std::max(cert.C_f, (table.f[i] - table.f[j]).norm() / r);
      lip_l = std::max(lip_l, std::abs(table.ell[i] - table.ell[j]) / r);
    }
  });
  cert.C *= safety;
  cert.C_sigma *= safety;
  cert.C_f *= safety;
  cert.omega = Modulus::linear(lip_l * safety);
  cert.nu = std::max(0.0, min_eig) / safety;
  if (cert.nu < 1e-12) cert.nu = 0.0;
  return cert;
}

double periodicity_defect(const HJBIOperator& op, const SampleSpec& sample) {
  double worst = 0.0;
  const std::size_t count = sample.count();
  for (std::size_t s = 0; s < count; ++s) {
    const VectorXd x = sample.point(s);
    for (Eigen::Index axis = 0; axis < op.n; ++axis) {
      VectorXd shifted = x;
      shifted(axis) += 1.0;
      for (std::size_t ib = 0; ib < op.B.size(); ++ib) {
        for (std::size_t ia = 0; ia < op.A.size(); ++ia) {
          if (op.sigma.periodic())
            worst = std::max(worst, (op.sigma_at(x, ia, ib) - op.sigma_at(shifted, ia, ib)).norm());
          if (op.drift.periodic())
            worst = std::max(worst, (op.drift_at(x, ia, ib) - op.drift_at(shifted, ia, ib)).norm());
          if (op.cost.periodic())
            worst = std::max(worst, std::abs(op.cost_at(x, ia, ib) - op.cost_at(shifted, ia, ib)));
        }
      }
    }
  }
  return worst;
}

}  // namespace hjbi
