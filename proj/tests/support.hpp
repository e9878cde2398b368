#pragma once

#include <string>
#include <vector>

#include "hjbi/homogenization.hpp"
#include "hjbi/operator_model.hpp"

namespace hjbi::testing {

inline ControlSet controls(std::vector<std::vector<double>> pts, std::string label = "") {
  ControlSet s;
  s.label = std::move(label);
  for (auto& p : pts) s.points.push_back(Eigen::Map<VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
  return s;
}

inline ControlSet singleton() { return controls({{0.0}}); }

inline std::vector<Expression> parse_all(const std::vector<std::string>& texts) {
  std::vector<Expression> out;
  for (const auto& t : texts) out.push_back(Expression::parse(t));
  return out;
}

/// Operator from expression strings; sigma is row-major n x p_dim.
inline HJBIOperator make_operator(Eigen::Index n, Eigen::Index p_dim, const std::vector<std::string>& sigma,
                                  const std::vector<std::string>& drift, const std::string& cost,
                                  ControlSet A = singleton(), ControlSet B = singleton(), std::string name = "op") {
  HJBIOperator op;
  op.name = std::move(name);
  op.n = n;
  op.p_dim = p_dim;
  op.sigma = CoefficientField::matrix(n, p_dim, parse_all(sigma));
  op.drift = CoefficientField::vector(parse_all(drift));
  op.cost = CoefficientField::scalar(Expression::parse(cost));
  op.A = std::move(A);
  op.B = std::move(B);
  op.validate();
  return op;
}

inline HJBIOperator constant_cost(double c) {
  return make_operator(1, 1, {"0"}, {"0"}, std::to_string(c));
}

/// -v'' + cos(2 pi x) with a = 1.
inline HJBIOperator cosine_example() { return make_operator(1, 1, {"1"}, {"0"}, "cos(2*pi*x1)", singleton(), singleton(), "cosine"); }

/// -v'' + |v'| + cos(2 pi x): the maximizer picks the drift sign.
inline HJBIOperator viscous_isaacs() {
  return make_operator(1, 1, {"1"}, {"a1"}, "cos(2*pi*x1)", controls({{-1.0}, {1.0}}, "A"), singleton(), "viscous-isaacs");
}

/// Two-scale operator from strings; Xi is n x p, Sigma is m x p (row-major).
inline TwoScaleOperator make_two_scale(Eigen::Index n, Eigen::Index m, Eigen::Index p_dim,
                                       const std::vector<std::string>& xi, const std::vector<std::string>& sigma,
                                       const std::vector<std::string>& F, const std::vector<std::string>& G,
                                       const std::string& L, const std::string& h, ControlSet A = singleton(),
                                       ControlSet B = singleton(), std::string name = "two-scale") {
  TwoScaleOperator ts;
  ts.name = std::move(name);
  ts.n = n;
  ts.m = m;
  ts.p_dim = p_dim;
  ts.Xi = CoefficientField::matrix(n, p_dim, parse_all(xi));
  ts.Sigma = CoefficientField::matrix(m, p_dim, parse_all(sigma));
  ts.F = CoefficientField::vector(parse_all(F));
  ts.G = CoefficientField::vector(parse_all(G));
  ts.L = CoefficientField::scalar(Expression::parse(L));
  ts.h = Expression::parse(h);
  ts.A = std::move(A);
  ts.B = std::move(B);
  ts.validate();
  return ts;
}

/// Slow diffusion 1/4, fast diffusion 1, fast drift a1 in {-1, 1}, oscillating cost.
inline TwoScaleOperator benchmark_two_scale() {
  return make_two_scale(1, 1, 2, {"0.5", "0"}, {"0", "1"}, {"a1"}, {"0"},
                        "sin(2*pi*x1) + cos(2*pi*y1)*(1 + 0.5*cos(2*pi*x1))", "0.5*cos(2*pi*x1)",
                        controls({{-1.0}, {1.0}}, "A"), singleton(), "benchmark");
}

}  // namespace hjbi::testing
