#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hjbi/ergodic.hpp"

namespace hjbi {

/// Explicit constants of the continuous dependence bounds.
struct BoundConstants {
  double gamma = 1.0;
  double C_H = 0.0;
  double C_bar = 0.0;    // (2 C_H)^(1/(2-gamma))
  double C_tilde = 0.0;  // 2 C_sigma^2 C_bar^2 + 2 + C_f C_bar^2 + C_bar
  double K = 0.0;
  double max_abs_cost = 0.0;
  double M_tilde = 0.0;  // 2 K (1 + max|l|) (2 C_sigma^2 + 2 + C_f)
  std::string K_source;  // "declared" or "empirical(K_emp x safety)"
};

/// Requires gamma in (0,1] and C_H >= 0 on the certificate.
BoundConstants parabolic_constants(const RegularityCertificate& cert);

/// t C~ (d_sigma^gamma + d_f^(gamma/2)) + t (d_l + omega(C_bar (d_sigma + d_f^(1/2)))).
double parabolic_bound_rhs(const CoefficientDistance& dist, const RegularityCertificate& cert, double t);

double ergodic_M_tilde(const RegularityCertificate& cert, double K, double max_abs_cost);
/// M~ (d_sigma + d_f) + omega(d_sigma) + d_l.
double ergodic_bound_rhs(const CoefficientDistance& dist, const RegularityCertificate& cert, double K,
                         double max_abs_cost);

enum class Verdict { Holds, Violated, Inconclusive };
std::string to_string(Verdict v);

struct DependenceReport {
  std::string kind;  // "parabolic" or "ergodic"
  CoefficientDistance distances;
  RegularityCertificate certificate;  // shared certificate actually used
  BoundConstants constants;
  std::string gamma_source;
  std::string C_H_source;
  std::vector<double> times;
  std::vector<double> bound;
  std::vector<double> empirical;
  std::vector<double> margin;  // bound - empirical
  double slack = 0.0;
  Verdict verdict = Verdict::Inconclusive;
  std::optional<double> witness_t;
  std::string reason;  // why a verdict is inconclusive
  // ergodic only
  double U1 = 0.0;
  double U2 = 0.0;
  double agreement_gap1 = 0.0;
  double agreement_gap2 = 0.0;
  double h = 0.0;
  double dt = 0.0;

  bool failed() const { return verdict == Verdict::Violated; }
};

struct ParabolicDependenceOptions {
  std::optional<RegularityCertificate> cert1;  // estimated on the grid when absent
  std::optional<RegularityCertificate> cert2;
  double c_slack = 1.0;                        // slack = c_slack (h + dt) T
  int target_layers = 50;                      // stored layers used for the curves and C_H
  std::optional<double> coercivity_nu;         // structural coercivity test for the degenerate path
  HoelderOptions hoelder;
};

/// Solves both Cauchy problems on one grid with a common time step and compares
/// sup |u1 - u2| with the bound at every stored time.
DependenceReport parabolic_dependence_experiment(const HJBIOperator& op1, const HJBIOperator& op2, const Grid& grid,
                                                 double T, const ParabolicDependenceOptions& options = {});

struct ErgodicDependenceOptions {
  std::optional<RegularityCertificate> cert1;
  std::optional<RegularityCertificate> cert2;
  std::optional<double> K;   // declared constant; otherwise K_safety * K_emp
  double K_safety = 2.0;
  VanishingDiscountOptions vanishing;
};

/// Throws PreconditionError when the shared certificate is not uniformly elliptic.
DependenceReport ergodic_dependence_experiment(const HJBIOperator& op1, const HJBIOperator& op2, const Grid& grid,
                                               const ErgodicDependenceOptions& options = {});

nlohmann::json to_json(const DependenceReport& report);
/// Columns t, empirical, bound, margin.
void write_dependence_csv(const DependenceReport& report, const std::filesystem::path& path);

nlohmann::json to_json(const RegularityCertificate& cert);

}  // namespace hjbi
