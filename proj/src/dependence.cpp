#include "hjbi/dependence.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "hjbi/error.hpp"

namespace hjbi {

namespace {

double checked_gamma(const RegularityCertificate& cert) {
  if (!cert.gamma) throw ConfigError("dependence bound: certificate has no Hoelder exponent gamma");
  const double g = *cert.gamma;
  if (!(g > 0.0 && g <= 1.0)) throw ConfigError("dependence bound: gamma must lie in (0,1], got " + std::to_string(g));
  return g;
}

RegularityCertificate certificate_for(const HJBIOperator& op, const std::optional<RegularityCertificate>& declared,
                                      const Grid& grid) {
  if (declared) {
    declared->validate();
    return *declared;
  }
  return estimate_certificate(op, SampleSpec{grid.sizes()});
}

double coarsest_spacing(const Grid& grid) {
  int smallest = grid.sizes().front();
  for (int s : grid.sizes()) smallest = std::min(smallest, s);
  return 1.0 / smallest;
}

}  // namespace

BoundConstants parabolic_constants(const RegularityCertificate& cert) {
  BoundConstants k;
  k.gamma = checked_gamma(cert);
  if (!cert.C_H) throw ConfigError("dependence bound: certificate has no Hoelder seminorm bound C_H");
  k.C_H = *cert.C_H;
  if (k.C_H < 0) throw ConfigError("dependence bound: C_H must be nonnegative");
  k.C_bar = std::pow(2.0 * k.C_H, 1.0 / (2.0 - k.gamma));
  const double cb2 = k.C_bar * k.C_bar;
  k.C_tilde = 2.0 * cert.C_sigma * cert.C_sigma * cb2 + 2.0 + cert.C_f * cb2 + k.C_bar;
  return k;
}

double parabolic_bound_rhs(const CoefficientDistance& dist, const RegularityCertificate& cert, double t) {
  const BoundConstants k = parabolic_constants(cert);
  const double g = k.gamma;
  const double sqrt_df = std::sqrt(dist.d_f);
  return t * k.C_tilde * (std::pow(dist.d_sigma, g) + std::pow(dist.d_f, g / 2.0)) +
         t * (dist.d_ell + cert.omega(k.C_bar * (dist.d_sigma + sqrt_df)));
}

double ergodic_M_tilde(const RegularityCertificate& cert, double K, double max_abs_cost) {
  if (K < 0) throw ConfigError("ergodic bound: K must be nonnegative");
  return 2.0 * K * (1.0 + max_abs_cost) * (2.0 * cert.C_sigma * cert.C_sigma + 2.0 + cert.C_f);
}

double ergodic_bound_rhs(const CoefficientDistance& dist, const RegularityCertificate& cert, double K,
                         double max_abs_cost) {
  return ergodic_M_tilde(cert, K, max_abs_cost) * (dist.d_sigma + dist.d_f) + cert.omega(dist.d_sigma) + dist.d_ell;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Holds: return "holds";
    case Verdict::Violated: return "violated";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

DependenceReport parabolic_dependence_experiment(const HJBIOperator& op1, const HJBIOperator& op2, const Grid& grid,
                                                 double T, const ParabolicDependenceOptions& options) {
  if (!(T > 0.0)) throw ConfigError("parabolic dependence: T must be positive");
  if (!(options.c_slack >= 0.0)) throw ConfigError("parabolic dependence: c_slack must be nonnegative");
  DependenceReport report;
  report.kind = "parabolic";
  report.distances = coefficient_distance(op1, op2, SampleSpec{grid.sizes()});
  const DiscreteOperator d1(op1, grid), d2(op2, grid);

  RegularityCertificate cert =
      RegularityCertificate::shared(certificate_for(op1, options.cert1, grid), certificate_for(op2, options.cert2, grid));
  if (cert.gamma) {
    report.gamma_source = "declared";
  } else if (cert.nu > 0.0) {
    cert.gamma = 1.0;
    report.gamma_source = "uniform ellipticity (nu=" + std::to_string(cert.nu) + ") on the torus";
  } else if (options.coercivity_nu) {
    const SampleSpec sample{grid.sizes()};
    const auto c1 = check_coercivity_structural(op1, *options.coercivity_nu, sample);
    const auto c2 = check_coercivity_structural(op2, *options.coercivity_nu, sample);
    if (c1.passed && c2.passed) {
      cert.gamma = 1.0;
      report.gamma_source = "structural coercivity (nu=" + std::to_string(*options.coercivity_nu) + ")";
    } else {
      report.reason = "structural coercivity failed: " + (c1.passed ? c2.witness : c1.witness);
    }
  } else {
    report.reason = "degenerate operator without a declared gamma or coercivity test";
  }

  const double dt = std::min(cfl_timestep(d1, 0.0, 1e-2), cfl_timestep(d2, 0.0, 1e-2));
  ParabolicOptions popt;
  popt.dt = dt;
  popt.store_every = std::max(1, static_cast<int>(std::ceil(T / dt / std::max(1, options.target_layers))));
  const auto t1 = solve_parabolic(d1, T, GridFunction::zero(grid), popt);
  const auto t2 = solve_parabolic(d2, T, GridFunction::zero(grid), popt);
  report.h = coarsest_spacing(grid);
  report.dt = dt;
  report.slack = options.c_slack * (report.h + dt) * T;
  report.times = t1.times;
  for (std::size_t k = 0; k < t1.times.size(); ++k)
    report.empirical.push_back((t1.layers[k].values - t2.layers[k].values).cwiseAbs().maxCoeff());

  if (cert.gamma && !cert.C_H) {
    double ch = 0.0;
    for (const auto* traj : {&t1, &t2})
      for (const auto& layer : traj->layers) ch = std::max(ch, seminorm_hoelder(layer, *cert.gamma, options.hoelder).value);
    cert.C_H = ch;
    report.C_H_source = "estimated: max seminorm over stored layers";
  } else if (cert.C_H) {
    report.C_H_source = "declared";
  }
  report.certificate = cert;
  if (!cert.gamma) {
    report.verdict = Verdict::Inconclusive;
    return report;
  }
  report.constants = parabolic_constants(cert);
  report.verdict = Verdict::Holds;
  for (std::size_t k = 0; k < report.times.size(); ++k) {
    const double b = parabolic_bound_rhs(report.distances, cert, report.times[k]);
    report.bound.push_back(b);
    report.margin.push_back(b - report.empirical[k]);
    if (report.empirical[k] > b + report.slack && report.verdict == Verdict::Holds) {
      report.verdict = Verdict::Violated;
      report.witness_t = report.times[k];
    }
  }
  return report;
}

DependenceReport ergodic_dependence_experiment(const HJBIOperator& op1, const HJBIOperator& op2, const Grid& grid,
                                               const ErgodicDependenceOptions& options) {
  DependenceReport report;
  report.kind = "ergodic";
  report.distances = coefficient_distance(op1, op2, SampleSpec{grid.sizes()});
  const RegularityCertificate cert =
      RegularityCertificate::shared(certificate_for(op1, options.cert1, grid), certificate_for(op2, options.cert2, grid));
  if (!(cert.nu > 0.0))
    throw PreconditionError("ergodic dependence: both operators must be uniformly elliptic (shared nu = " +
                            std::to_string(cert.nu) + ")");
  report.certificate = cert;
  const DiscreteOperator d1(op1, grid), d2(op2, grid);
  const ErgodicResult e1 = ergodic_vanishing_discount(d1, options.vanishing);
  const ErgodicResult e2 = ergodic_vanishing_discount(d2, options.vanishing);
  report.U1 = e1.U;
  report.U2 = e2.U;
  report.agreement_gap1 = e1.agreement_gap;
  report.agreement_gap2 = e2.agreement_gap;
  report.h = coarsest_spacing(grid);

  BoundConstants& k = report.constants;
  k.max_abs_cost = std::max(d1.max_abs_cost(), d2.max_abs_cost());
  if (options.K) {
    if (!(*options.K > 0.0)) throw ConfigError("ergodic dependence: declared K must be positive");
    k.K = *options.K;
    k.K_source = "declared";
  } else {
    double K_emp = 0.0;
    if (e1.solves.size() >= 2) K_emp = std::max(K_emp, corrector_regularity_check(e1.solves, d1.max_abs_cost()).K_emp);
    if (e2.solves.size() >= 2) K_emp = std::max(K_emp, corrector_regularity_check(e2.solves, d2.max_abs_cost()).K_emp);
    k.K = options.K_safety * K_emp;
    k.K_source = "empirical(K_emp=" + std::to_string(K_emp) + " x " + std::to_string(options.K_safety) + ")";
  }
  k.M_tilde = ergodic_M_tilde(cert, k.K, k.max_abs_cost);

  const double empirical = std::abs(e1.U - e2.U);
  const double bound = ergodic_bound_rhs(report.distances, cert, k.K, k.max_abs_cost);
  // Each U carries the discounted-solve residual tolerance on top of the schedule gap.
  report.slack = e1.agreement_gap + e2.agreement_gap + 2.0 * options.vanishing.discounted.tol;
  report.empirical = {empirical};
  report.bound = {bound};
  report.margin = {bound - empirical};
  report.verdict = empirical <= bound + report.slack ? Verdict::Holds : Verdict::Violated;
  return report;
}

nlohmann::json to_json(const RegularityCertificate& cert) {
  nlohmann::json j;
  j["C"] = cert.C;
  j["C_sigma"] = cert.C_sigma;
  j["C_f"] = cert.C_f;
  j["omega"] = cert.omega.describe();
  j["nu"] = cert.nu;
  j["gamma"] = cert.gamma ? nlohmann::json(*cert.gamma) : nlohmann::json(nullptr);
  j["C_H"] = cert.C_H ? nlohmann::json(*cert.C_H) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const DependenceReport& r) {
  nlohmann::json j;
  j["kind"] = r.kind;
  j["verdict"] = to_string(r.verdict);
  if (r.witness_t) j["witness_t"] = *r.witness_t;
  if (!r.reason.empty()) j["reason"] = r.reason;
  j["distances"] = {{"d_sigma", r.distances.d_sigma}, {"d_f", r.distances.d_f}, {"d_ell", r.distances.d_ell},
                    {"sample", r.distances.sample.sizes}};
  j["certificate"] = to_json(r.certificate);
  j["constants"] = {{"gamma", r.constants.gamma},     {"C_H", r.constants.C_H},         {"C_bar", r.constants.C_bar},
                    {"C_tilde", r.constants.C_tilde}, {"K", r.constants.K},             {"K_source", r.constants.K_source},
                    {"M_tilde", r.constants.M_tilde}, {"max_abs_cost", r.constants.max_abs_cost}};
  j["gamma_source"] = r.gamma_source;
  j["C_H_source"] = r.C_H_source;
  j["slack"] = r.slack;
  j["h"] = r.h;
  j["dt"] = r.dt;
  j["times"] = r.times;
  j["empirical"] = r.empirical;
  j["bound"] = r.bound;
  j["margin"] = r.margin;
  if (r.kind == "ergodic") {
    j["U1"] = r.U1;
    j["U2"] = r.U2;
    j["agreement_gap1"] = r.agreement_gap1;
    j["agreement_gap2"] = r.agreement_gap2;
  }
  return j;
}

void write_dependence_csv(const DependenceReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "t,empirical,bound,margin\n";
  out.precision(17);
  for (std::size_t k = 0; k < r.empirical.size(); ++k) {
    if (k < r.times.size()) out << r.times[k];
    out << "," << r.empirical[k] << ",";
    if (k < r.bound.size()) out << r.bound[k] << "," << r.margin[k];
    else out << ",";
    out << "\n";
  }
}

}  // namespace hjbi
