#include "hjbi/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "hjbi/error.hpp"
#include "hjbi/io.hpp"

#ifndef HJBI_VERSION
#define HJBI_VERSION "0.0.0"
#endif

namespace hjbi {

std::string Diagnostic::to_string() const {
  std::string out = is_error() ? "error" : "warning";
  if (line > 0) out += " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")";
  if (!path.empty()) out += " " + path;
  return out + ": " + message;
}

namespace {

constexpr std::pair<Workflow, const char*> kWorkflowNames[] = {
    {Workflow::SolveParabolic, "solve-parabolic"},     {Workflow::Ergodic, "ergodic"},
    {Workflow::CompareParabolic, "compare-parabolic"}, {Workflow::CompareErgodic, "compare-ergodic"},
    {Workflow::Effective, "effective"},                {Workflow::TwoScale, "two-scale"},
    {Workflow::ConvergenceStudy, "convergence-study"},
};

// ---------------------------------------------------------------------------
// Reading: every accessor records a diagnostic instead of throwing.

class Reader {
 public:
  explicit Reader(std::vector<Diagnostic>& out) : out_(out) {}

  void error(const YAML::Node& node, const std::string& path, const std::string& msg) {
    add(Diagnostic::Severity::Error, node, path, msg);
  }
  void warn(const YAML::Node& node, const std::string& path, const std::string& msg) {
    add(Diagnostic::Severity::Warning, node, path, msg);
  }

  void check_keys(const YAML::Node& map, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!map.IsMap()) return;
    for (const auto& kv : map) {
      const std::string key = kv.first.Scalar();
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
        warn(kv.first, join(path, key), "unknown key (ignored)");
    }
  }

  bool is_map(const YAML::Node& n, const std::string& path) {
    if (n.IsMap()) return true;
    error(n, path, "expected a mapping");
    return false;
  }

  template <class T>
  std::optional<T> scalar(const YAML::Node& n, const std::string& path, const char* what) {
    if (!n.IsScalar()) {
      error(n, path, std::string("expected ") + what);
      return std::nullopt;
    }
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      error(n, path, std::string("expected ") + what + ", got '" + n.Scalar() + "'");
      return std::nullopt;
    }
  }

  std::optional<double> number(const YAML::Node& n, const std::string& path) {
    auto v = scalar<double>(n, path, "a number");
    if (v && !std::isfinite(*v)) {
      error(n, path, "must be finite");
      return std::nullopt;
    }
    return v;
  }

  std::optional<int> integer(const YAML::Node& n, const std::string& path) { return scalar<int>(n, path, "an integer"); }

  std::optional<bool> boolean(const YAML::Node& n, const std::string& path) { return scalar<bool>(n, path, "true/false"); }

  std::optional<std::string> string(const YAML::Node& n, const std::string& path) {
    return scalar<std::string>(n, path, "a string");
  }

  std::optional<std::vector<double>> numbers(const YAML::Node& n, const std::string& path) {
    if (!n.IsSequence()) {
      error(n, path, "expected a list of numbers");
      return std::nullopt;
    }
    std::vector<double> out;
    bool ok = true;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (auto v = number(n[i], index(path, i))) out.push_back(*v);
      else ok = false;
    }
    if (!ok) return std::nullopt;
    return out;
  }

  std::optional<std::vector<int>> integers(const YAML::Node& n, const std::string& path) {
    if (!n.IsSequence()) {
      error(n, path, "expected a list of integers");
      return std::nullopt;
    }
    std::vector<int> out;
    bool ok = true;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (auto v = integer(n[i], index(path, i))) out.push_back(*v);
      else ok = false;
    }
    if (!ok) return std::nullopt;
    return out;
  }

  std::optional<Expression> expression(const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) {
      error(n, path, "expected an expression");
      return std::nullopt;
    }
    try {
      return Expression::parse(n.Scalar());
    } catch (const ParseError& e) {
      Diagnostic d{Diagnostic::Severity::Error, path, e.what(), 0, 0};
      if (n.Mark().line >= 0) {
        d.line = n.Mark().line + 1;
        d.column = n.Mark().column + e.column();
      }
      out_.push_back(std::move(d));
      return std::nullopt;
    }
  }

  std::optional<ControlSet> controls(const YAML::Node& n, const std::string& path, const std::string& label) {
    if (!n.IsSequence() || n.size() == 0) {
      error(n, path, "expected a nonempty list of control points");
      return std::nullopt;
    }
    ControlSet set;
    set.label = label;
    for (std::size_t i = 0; i < n.size(); ++i) {
      std::vector<double> pt;
      if (n[i].IsScalar()) {
        auto v = number(n[i], index(path, i));
        if (!v) return std::nullopt;
        pt = {*v};
      } else {
        auto v = numbers(n[i], index(path, i));
        if (!v) return std::nullopt;
        pt = *v;
      }
      if (!set.points.empty() && static_cast<Eigen::Index>(pt.size()) != set.dimension()) {
        error(n[i], index(path, i), "control points must share one dimension");
        return std::nullopt;
      }
      set.points.push_back(Eigen::Map<VectorXd>(pt.data(), static_cast<Eigen::Index>(pt.size())));
    }
    return set;
  }

  /// rows x cols matrix of expressions written as a list of rows (a bare scalar for 1 x 1).
  std::optional<std::vector<Expression>> matrix(const YAML::Node& n, const std::string& path, Eigen::Index rows,
                                                Eigen::Index cols, const std::string& dims) {
    std::vector<Expression> out;
    if (n.IsScalar() && rows == 1 && cols == 1) {
      auto e = expression(n, path);
      if (!e) return std::nullopt;
      return std::vector<Expression>{*e};
    }
    const auto mismatch = [&](const std::string& got) {
      error(n, path,
            "expected " + std::to_string(rows) + " x " + std::to_string(cols) + " entries (" + dims + "), got " + got);
      return std::nullopt;
    };
    if (!n.IsSequence()) return mismatch("a non-list value");
    if (static_cast<Eigen::Index>(n.size()) != rows) return mismatch(std::to_string(n.size()) + " rows");
    bool ok = true;
    for (std::size_t r = 0; r < n.size(); ++r) {
      const YAML::Node row = n[r];
      if (row.IsScalar() && cols == 1) {
        if (auto e = expression(row, index(path, r))) out.push_back(*e);
        else ok = false;
        continue;
      }
      if (!row.IsSequence() || static_cast<Eigen::Index>(row.size()) != cols) {
        return mismatch("row " + std::to_string(r) + " with " + (row.IsSequence() ? std::to_string(row.size()) : "1") +
                        " entries");
      }
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (auto e = expression(row[c], index(index(path, r), c))) out.push_back(*e);
        else ok = false;
      }
    }
    if (!ok) return std::nullopt;
    return out;
  }

  std::optional<std::vector<Expression>> vector(const YAML::Node& n, const std::string& path, Eigen::Index size,
                                                const std::string& dims) {
    if (n.IsScalar() && size == 1) {
      auto e = expression(n, path);
      if (!e) return std::nullopt;
      return std::vector<Expression>{*e};
    }
    if (!n.IsSequence() || static_cast<Eigen::Index>(n.size()) != size) {
      error(n, path,
            "expected " + std::to_string(size) + " entries (" + dims + "), got " +
                (n.IsSequence() ? std::to_string(n.size()) : std::string("a non-list value")));
      return std::nullopt;
    }
    std::vector<Expression> out;
    bool ok = true;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (auto e = expression(n[i], index(path, i))) out.push_back(*e);
      else ok = false;
    }
    if (!ok) return std::nullopt;
    return out;
  }

  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
  static std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

 private:
  void add(Diagnostic::Severity s, const YAML::Node& node, const std::string& path, const std::string& msg) {
    Diagnostic d{s, path, msg, 0, 0};
    if (node.IsDefined() && node.Mark().line >= 0) {
      d.line = node.Mark().line + 1;
      d.column = node.Mark().column + 1;
    }
    out_.push_back(std::move(d));
  }

  std::vector<Diagnostic>& out_;
};

// Reads `key` when present; `apply` receives the node and its path.
void optional_field(const YAML::Node& map, const std::string& path, const char* key,
                    const std::function<void(const YAML::Node&, const std::string&)>& apply) {
  if (!map.IsMap()) return;
  const YAML::Node n = map[key];
  if (n.IsDefined() && !n.IsNull()) apply(n, Reader::join(path, key));
}

std::optional<Modulus> read_modulus(Reader& rd, const YAML::Node& n, const std::string& path) {
  if (!rd.is_map(n, path)) return std::nullopt;
  rd.check_keys(n, path, {"linear", "hoelder", "tabulated"});
  if (n.size() != 1) {
    rd.error(n, path, "give exactly one of linear, hoelder, tabulated");
    return std::nullopt;
  }
  try {
    if (n["linear"]) {
      if (auto v = rd.number(n["linear"], path + ".linear")) return Modulus::linear(*v);
    } else if (n["hoelder"]) {
      const YAML::Node h = n["hoelder"];
      if (!rd.is_map(h, path + ".hoelder")) return std::nullopt;
      auto c = rd.number(h["constant"], path + ".hoelder.constant");
      auto e = rd.number(h["exponent"], path + ".hoelder.exponent");
      if (c && e) return Modulus::hoelder(*c, *e);
    } else if (n["tabulated"]) {
      const YAML::Node t = n["tabulated"];
      if (!rd.is_map(t, path + ".tabulated")) return std::nullopt;
      auto r = rd.numbers(t["r"], path + ".tabulated.r");
      auto v = rd.numbers(t["value"], path + ".tabulated.value");
      if (r && v) return Modulus::tabulated(*r, *v);
    }
  } catch (const ConfigError& e) {
    rd.error(n, path, e.what());
  }
  return std::nullopt;
}

std::optional<RegularityCertificate> read_certificate(Reader& rd, const YAML::Node& n, const std::string& path) {
  if (!rd.is_map(n, path)) return std::nullopt;
  rd.check_keys(n, path, {"C", "C_sigma", "C_f", "omega", "nu", "gamma", "C_H"});
  RegularityCertificate c;
  bool ok = true;
  for (auto [key, target] : {std::pair{"C", &c.C}, std::pair{"C_sigma", &c.C_sigma}, std::pair{"C_f", &c.C_f}}) {
    if (!n[key]) {
      rd.error(n, Reader::join(path, key), "required");
      ok = false;
    } else if (auto v = rd.number(n[key], Reader::join(path, key))) {
      *target = *v;
    } else {
      ok = false;
    }
  }
  // The modulus of the running cost is an input, never inferred here.
  if (!n["omega"]) {
    rd.error(n, path + ".omega", "required (linear, hoelder or tabulated modulus of the running cost)");
    ok = false;
  } else if (auto m = read_modulus(rd, n["omega"], path + ".omega")) {
    c.omega = *m;
  } else {
    ok = false;
  }
  optional_field(n, path, "nu", [&](const YAML::Node& v, const std::string& p) {
    if (auto x = rd.number(v, p)) c.nu = *x;
    else ok = false;
  });
  optional_field(n, path, "gamma", [&](const YAML::Node& v, const std::string& p) {
    if (auto x = rd.number(v, p)) c.gamma = *x;
    else ok = false;
  });
  optional_field(n, path, "C_H", [&](const YAML::Node& v, const std::string& p) {
    if (auto x = rd.number(v, p)) c.C_H = *x;
    else ok = false;
  });
  if (!ok) return std::nullopt;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    rd.error(n, path, e.what());
    return std::nullopt;
  }
  return c;
}

ControlSet default_controls(const std::string& label) {
  ControlSet s;
  s.label = label;
  s.points.push_back(VectorXd::Zero(1));
  return s;
}

std::optional<OperatorEntry> read_operator(Reader& rd, const YAML::Node& n, const std::string& path) {
  if (!rd.is_map(n, path)) return std::nullopt;
  rd.check_keys(n, path, {"name", "dim", "noise_dim", "A", "B", "coercive_subset", "sigma", "drift", "cost", "certificate"});
  OperatorEntry entry;
  HJBIOperator& op = entry.op;
  bool ok = true;
  const auto need = [&](const char* key) {
    if (n[key]) return true;
    rd.error(n, Reader::join(path, key), "required");
    ok = false;
    return false;
  };
  if (need("name")) {
    if (auto v = rd.string(n["name"], path + ".name")) op.name = *v;
    else ok = false;
  }
  if (need("dim")) {
    if (auto v = rd.integer(n["dim"], path + ".dim"); v && *v >= 1) op.n = *v;
    else {
      if (v) rd.error(n["dim"], path + ".dim", "must be >= 1");
      ok = false;
    }
  }
  op.p_dim = op.n;
  optional_field(n, path, "noise_dim", [&](const YAML::Node& v, const std::string& p) {
    if (auto x = rd.integer(v, p); x && *x >= 1) op.p_dim = *x;
    else {
      if (x) rd.error(v, p, "must be >= 1");
      ok = false;
    }
  });
  op.A = default_controls("A");
  op.B = default_controls("B");
  optional_field(n, path, "A", [&](const YAML::Node& v, const std::string& p) {
    if (auto s = rd.controls(v, p, "A")) op.A = *s;
    else ok = false;
  });
  optional_field(n, path, "B", [&](const YAML::Node& v, const std::string& p) {
    if (auto s = rd.controls(v, p, "B")) op.B = *s;
    else ok = false;
  });
  optional_field(n, path, "coercive_subset", [&](const YAML::Node& v, const std::string& p) {
    if (auto idx = rd.integers(v, p)) {
      std::vector<std::size_t> s;
      for (int i : *idx) {
        if (i < 0 || static_cast<std::size_t>(i) >= op.A.size()) {
          rd.error(v, p, "index " + std::to_string(i) + " outside the control set A");
          ok = false;
        }
        s.push_back(static_cast<std::size_t>(std::max(i, 0)));
      }
      op.coercive_subset = s;
    } else {
      ok = false;
    }
  });
  if (!ok) return std::nullopt;
  const std::string dims = "dim x noise_dim";
  if (need("sigma")) {
    if (auto m = rd.matrix(n["sigma"], path + ".sigma", op.n, op.p_dim, dims))
      op.sigma = CoefficientField::matrix(op.n, op.p_dim, *m);
    else ok = false;
  }
  if (need("drift")) {
    if (auto v = rd.vector(n["drift"], path + ".drift", op.n, "dim")) op.drift = CoefficientField::vector(*v);
    else ok = false;
  }
  if (need("cost")) {
    if (auto e = rd.expression(n["cost"], path + ".cost")) op.cost = CoefficientField::scalar(*e);
    else ok = false;
  }
  optional_field(n, path, "certificate", [&](const YAML::Node& v, const std::string& p) {
    if (auto c = read_certificate(rd, v, p)) entry.certificate = *c;
    else ok = false;
  });
  if (!ok) return std::nullopt;
  try {
    op.validate();
  } catch (const ConfigError& e) {
    rd.error(n, path, e.what());
    return std::nullopt;
  }
  return entry;
}

std::optional<TwoScaleOperator> read_two_scale(Reader& rd, const YAML::Node& n, const std::string& path) {
  if (!rd.is_map(n, path)) return std::nullopt;
  rd.check_keys(n, path, {"name", "slow_dim", "fast_dim", "noise_dim", "Xi", "Sigma", "F", "G", "L", "h", "A", "B", "nu"});
  TwoScaleOperator ts;
  ts.name = "two-scale";
  bool ok = true;
  const auto dim = [&](const char* key, Eigen::Index& target, bool required) {
    if (!n[key]) {
      if (required) {
        rd.error(n, Reader::join(path, key), "required");
        ok = false;
      }
      return;
    }
    if (auto v = rd.integer(n[key], Reader::join(path, key)); v && *v >= 1) target = *v;
    else {
      if (v) rd.error(n[key], Reader::join(path, key), "must be >= 1");
      ok = false;
    }
  };
  optional_field(n, path, "name", [&](const YAML::Node& v, const std::string& p) {
    if (auto s = rd.string(v, p)) ts.name = *s;
  });
  dim("slow_dim", ts.n, true);
  dim("fast_dim", ts.m, true);
  ts.p_dim = ts.n + ts.m;
  dim("noise_dim", ts.p_dim, false);
  ts.A = default_controls("A");
  ts.B = default_controls("B");
  optional_field(n, path, "A", [&](const YAML::Node& v, const std::string& p) {
    if (auto s = rd.controls(v, p, "A")) ts.A = *s;
    else ok = false;
  });
  optional_field(n, path, "B", [&](const YAML::Node& v, const std::string& p) {
    if (auto s = rd.controls(v, p, "B")) ts.B = *s;
    else ok = false;
  });
  optional_field(n, path, "nu", [&](const YAML::Node& v, const std::string& p) {
    if (auto x = rd.number(v, p)) ts.nu = *x;
    else ok = false;
  });
  if (!ok) return std::nullopt;
  const auto field = [&](const char* key, auto&& build) {
    if (!n[key]) {
      rd.error(n, Reader::join(path, key), "required");
      ok = false;
      return;
    }
    if (!build(n[key], Reader::join(path, key))) ok = false;
  };
  field("Xi", [&](const YAML::Node& v, const std::string& p) {
    auto m = rd.matrix(v, p, ts.n, ts.p_dim, "slow_dim x noise_dim");
    if (m) ts.Xi = CoefficientField::matrix(ts.n, ts.p_dim, *m);
    return m.has_value();
  });
  field("Sigma", [&](const YAML::Node& v, const std::string& p) {
    auto m = rd.matrix(v, p, ts.m, ts.p_dim, "fast_dim x noise_dim");
    if (m) ts.Sigma = CoefficientField::matrix(ts.m, ts.p_dim, *m);
    return m.has_value();
  });
  field("F", [&](const YAML::Node& v, const std::string& p) {
    auto e = rd.vector(v, p, ts.m, "fast_dim");
    if (e) ts.F = CoefficientField::vector(*e);
    return e.has_value();
  });
  field("G", [&](const YAML::Node& v, const std::string& p) {
    auto e = rd.vector(v, p, ts.n, "slow_dim");
    if (e) ts.G = CoefficientField::vector(*e);
    return e.has_value();
  });
  field("L", [&](const YAML::Node& v, const std::string& p) {
    auto e = rd.expression(v, p);
    if (e) ts.L = CoefficientField::scalar(*e);
    return e.has_value();
  });
  ts.h = Expression::constant(0.0);
  optional_field(n, path, "h", [&](const YAML::Node& v, const std::string& p) {
    if (auto e = rd.expression(v, p)) ts.h = *e;
    else ok = false;
  });
  if (!ok) return std::nullopt;
  try {
    ts.validate();
  } catch (const ConfigError& e) {
    rd.error(n, path, e.what());
    return std::nullopt;
  }
  return ts;
}

void read_parabolic(Reader& rd, const YAML::Node& n, const std::string& path, ExperimentConfig& c) {
  if (!rd.is_map(n, path)) return;
  rd.check_keys(n, path, {"dt_max", "dt", "store_every", "output_times", "binary_layers"});
  optional_field(n, path, "dt_max", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.parabolic.dt_max = *x; });
  optional_field(n, path, "dt", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.parabolic.dt = *x; });
  optional_field(n, path, "store_every", [&](auto& v, auto& p) { if (auto x = rd.integer(v, p)) c.parabolic.store_every = *x; });
  optional_field(n, path, "output_times", [&](auto& v, auto& p) { if (auto x = rd.numbers(v, p)) c.parabolic.output_times = *x; });
  optional_field(n, path, "binary_layers", [&](auto& v, auto& p) { if (auto x = rd.boolean(v, p)) c.binary_layers = *x; });
}

void read_ergodic(Reader& rd, const YAML::Node& n, const std::string& path, ExperimentConfig& c) {
  if (!rd.is_map(n, path)) return;
  rd.check_keys(n, path, {"method", "schedule", "tol", "discounted_method", "max_iterations", "reference_node", "T",
                          "window", "spread_threshold", "direct_tol", "regularity_max_ratio"});
  optional_field(n, path, "method", [&](auto& v, auto& p) {
    const auto s = rd.string(v, p);
    if (!s) return;
    if (*s == "vanishing-discount") c.ergodic_method = ErgodicMethod::VanishingDiscount;
    else if (*s == "long-time") c.ergodic_method = ErgodicMethod::LongTime;
    else if (*s == "direct") c.ergodic_method = ErgodicMethod::Direct;
    else rd.error(v, p, "unknown method '" + *s + "' (vanishing-discount, long-time, direct)");
  });
  optional_field(n, path, "schedule", [&](auto& v, auto& p) { if (auto x = rd.numbers(v, p)) c.vanishing.schedule = *x; });
  optional_field(n, path, "tol", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.vanishing.discounted.tol = *x; });
  optional_field(n, path, "discounted_method", [&](auto& v, auto& p) {
    const auto s = rd.string(v, p);
    if (!s) return;
    if (*s == "policy-newton") c.vanishing.discounted.method = DiscountedMethod::PolicyNewton;
    else if (*s == "marching") c.vanishing.discounted.method = DiscountedMethod::Marching;
    else rd.error(v, p, "unknown discounted method '" + *s + "' (policy-newton, marching)");
  });
  optional_field(n, path, "max_iterations", [&](auto& v, auto& p) {
    if (auto x = rd.scalar<long>(v, p, "an integer")) c.vanishing.discounted.max_iterations = *x;
  });
  optional_field(n, path, "reference_node", [&](auto& v, auto& p) {
    if (auto x = rd.integer(v, p)) c.vanishing.reference_node = static_cast<std::size_t>(std::max(*x, 0));
  });
  optional_field(n, path, "T", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.long_time_T = *x; });
  optional_field(n, path, "window", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.long_time.window = *x; });
  optional_field(n, path, "spread_threshold", [&](auto& v, auto& p) {
    if (auto x = rd.number(v, p)) c.long_time.spread_threshold = *x;
  });
  optional_field(n, path, "direct_tol", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.direct.tol = *x; });
  optional_field(n, path, "regularity_max_ratio", [&](auto& v, auto& p) {
    if (auto x = rd.number(v, p)) c.regularity_max_ratio = *x;
  });
}

void read_dependence(Reader& rd, const YAML::Node& n, const std::string& path, ExperimentConfig& c) {
  if (!rd.is_map(n, path)) return;
  rd.check_keys(n, path, {"c_slack", "target_layers", "coercivity_nu", "K", "K_safety"});
  optional_field(n, path, "c_slack", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.c_slack = *x; });
  optional_field(n, path, "target_layers", [&](auto& v, auto& p) { if (auto x = rd.integer(v, p)) c.target_layers = *x; });
  optional_field(n, path, "coercivity_nu", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.coercivity_nu = *x; });
  optional_field(n, path, "K", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.K = *x; });
  optional_field(n, path, "K_safety", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.K_safety = *x; });
}

void read_homogenization(Reader& rd, const YAML::Node& n, const std::string& path, ExperimentConfig& c) {
  if (!rd.is_map(n, path)) return;
  rd.check_keys(n, path, {"epsilon", "epsilons", "grids", "y_points", "cache_file", "cache_step", "dt_floor",
                          "allow_cross_diffusion", "output_times", "structure_pairs"});
  optional_field(n, path, "epsilon", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.epsilon = *x; });
  optional_field(n, path, "epsilons", [&](auto& v, auto& p) { if (auto x = rd.numbers(v, p)) c.epsilons = *x; });
  optional_field(n, path, "grids", [&](const YAML::Node& v, const std::string& p) {
    if (!v.IsSequence()) {
      rd.error(v, p, "expected a list of grids");
      return;
    }
    for (std::size_t i = 0; i < v.size(); ++i)
      if (auto g = rd.integers(v[i], Reader::index(p, i))) c.grids.push_back(*g);
  });
  optional_field(n, path, "y_points", [&](auto& v, auto& p) { if (auto x = rd.integer(v, p)) c.y_points = *x; });
  optional_field(n, path, "cache_file", [&](auto& v, auto& p) { if (auto x = rd.string(v, p)) c.cache_file = *x; });
  optional_field(n, path, "cache_step", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.cache_step = *x; });
  optional_field(n, path, "dt_floor", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.dt_floor = *x; });
  optional_field(n, path, "allow_cross_diffusion", [&](auto& v, auto& p) {
    if (auto x = rd.boolean(v, p)) c.allow_cross_diffusion = *x;
  });
  optional_field(n, path, "output_times", [&](auto& v, auto& p) { if (auto x = rd.numbers(v, p)) c.output_times = *x; });
  optional_field(n, path, "structure_pairs", [&](auto& v, auto& p) { if (auto x = rd.integer(v, p)) c.structure_pairs = *x; });
}

}  // namespace

std::string to_string(Workflow w) {
  for (const auto& [k, name] : kWorkflowNames)
    if (k == w) return name;
  return "?";
}

std::optional<Workflow> parse_workflow(std::string_view name) {
  for (const auto& [k, n] : kWorkflowNames)
    if (name == n) return k;
  return std::nullopt;
}

const OperatorEntry* ExperimentConfig::find_operator(const std::string& name) const {
  for (const auto& e : operators)
    if (e.op.name == name) return &e;
  return nullptr;
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source) {
  ExperimentConfig c;
  c.source = source;
  c.text = yaml_text;
  Reader rd(c.parse_diagnostics);
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    c.parse_diagnostics.push_back(
        {Diagnostic::Severity::Error, "", "YAML syntax: " + e.msg, e.mark.line + 1, e.mark.column + 1});
    return c;
  }
  if (!root.IsMap()) {
    rd.error(root, "", "the config must be a mapping");
    return c;
  }
  rd.check_keys(root, "", {"workflow", "output_dir", "operators", "operator", "compare", "two_scale", "grid", "T",
                           "initial", "seed", "parabolic", "ergodic", "dependence", "homogenization"});
  optional_field(root, "", "workflow", [&](auto& v, auto& p) {
    if (auto s = rd.string(v, p)) {
      c.workflow = parse_workflow(*s);
      if (!c.workflow) {
        std::string known;
        for (const auto& [k, name] : kWorkflowNames) known += std::string(known.empty() ? "" : ", ") + name;
        rd.error(v, p, "unknown workflow '" + *s + "' (" + known + ")");
      }
    }
  });
  optional_field(root, "", "output_dir", [&](auto& v, auto& p) { if (auto s = rd.string(v, p)) c.output_dir = *s; });
  optional_field(root, "", "operators", [&](const YAML::Node& v, const std::string& p) {
    if (!v.IsSequence()) {
      rd.error(v, p, "expected a list of operators");
      return;
    }
    for (std::size_t i = 0; i < v.size(); ++i)
      if (auto e = read_operator(rd, v[i], Reader::index(p, i))) c.operators.push_back(std::move(*e));
  });
  optional_field(root, "", "operator", [&](auto& v, auto& p) { if (auto s = rd.string(v, p)) c.operator_ref = *s; });
  optional_field(root, "", "compare", [&](const YAML::Node& v, const std::string& p) {
    if (!v.IsSequence() || v.size() != 2) {
      rd.error(v, p, "expected a list of two operator names");
      return;
    }
    for (std::size_t i = 0; i < 2; ++i)
      if (auto s = rd.string(v[i], Reader::index(p, i))) c.compare_refs.push_back(*s);
  });
  optional_field(root, "", "two_scale", [&](auto& v, auto& p) { c.two_scale = read_two_scale(rd, v, p); });
  optional_field(root, "", "grid", [&](auto& v, auto& p) {
    if (v.IsScalar()) {
      if (auto x = rd.integer(v, p)) c.grid = {*x};
    } else if (auto g = rd.integers(v, p)) {
      c.grid = *g;
    }
  });
  optional_field(root, "", "T", [&](auto& v, auto& p) { if (auto x = rd.number(v, p)) c.T = *x; });
  optional_field(root, "", "initial", [&](auto& v, auto& p) { c.initial = rd.expression(v, p); });
  optional_field(root, "", "seed", [&](auto& v, auto& p) {
    if (auto x = rd.scalar<std::uint64_t>(v, p, "a nonnegative integer")) c.seed = *x;
  });
  optional_field(root, "", "parabolic", [&](auto& v, auto& p) { read_parabolic(rd, v, p, c); });
  optional_field(root, "", "ergodic", [&](auto& v, auto& p) { read_ergodic(rd, v, p, c); });
  optional_field(root, "", "dependence", [&](auto& v, auto& p) { read_dependence(rd, v, p, c); });
  optional_field(root, "", "homogenization", [&](auto& v, auto& p) { read_homogenization(rd, v, p, c); });
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str(), path.string());
  if (c.output_dir.empty()) c.output_dir = std::filesystem::path("out") / path.stem();
  return c;
}

// ---------------------------------------------------------------------------
// validation

namespace {

bool needs_T(Workflow w) { return w != Workflow::Ergodic && w != Workflow::CompareErgodic; }
bool is_two_scale(Workflow w) {
  return w == Workflow::Effective || w == Workflow::TwoScale || w == Workflow::ConvergenceStudy;
}

struct Validator {
  const ExperimentConfig& c;
  std::vector<Diagnostic> out;

  // An operator that failed to parse already has its own diagnostic.
  bool operators_broken() const {
    return std::any_of(c.parse_diagnostics.begin(), c.parse_diagnostics.end(),
                       [](const Diagnostic& d) { return d.is_error() && d.path.rfind("operators", 0) == 0; });
  }

  void error(const std::string& path, const std::string& msg) { out.push_back({Diagnostic::Severity::Error, path, msg, 0, 0}); }
  void warn(const std::string& path, const std::string& msg) { out.push_back({Diagnostic::Severity::Warning, path, msg, 0, 0}); }

  std::string known_names() const {
    std::string s;
    for (const auto& e : c.operators) s += (s.empty() ? "" : ", ") + e.op.name;
    return s.empty() ? "none" : s;
  }

  const OperatorEntry* resolve(const std::string& name, const std::string& path) {
    const OperatorEntry* e = c.find_operator(name);
    if (!e) error(path, "unknown operator '" + name + "' (defined: " + known_names() + ")");
    return e;
  }

  bool check_grid(const std::vector<int>& g, Eigen::Index dim, const std::string& path, const std::string& what) {
    if (g.empty()) {
      error(path, "required");
      return false;
    }
    if (static_cast<Eigen::Index>(g.size()) != dim) {
      error(path, "grid has " + std::to_string(g.size()) + " axes but " + what + " has dimension " + std::to_string(dim));
      return false;
    }
    for (int s : g)
      if (s < 3) {
        error(path, "every axis needs at least 3 nodes");
        return false;
      }
    return true;
  }

  void check_admissible(const HJBIOperator& op, const Grid& grid, const std::string& path) {
    try {
      const DiscreteOperator d(op, grid);
      if (needs_T(*c.workflow) && c.T > 0) {
        const double dt = c.parabolic.dt > 0 ? c.parabolic.dt : cfl_timestep(d, 0.0, c.parabolic.dt_max);
        if (c.T / dt > 5e6)
          warn(path, "about " + std::to_string(static_cast<long>(c.T / dt)) + " explicit steps; consider a coarser grid");
      }
    } catch (const Error& e) {
      error(path, e.what());
    }
  }

  void check_positive(double v, const std::string& path) {
    if (!(v > 0)) error(path, "must be positive");
  }

  void check_decreasing(const std::vector<double>& v, const std::string& path) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] > 0)) error(path, "entries must be positive");
      if (i && !(v[i] < v[i - 1])) {
        error(path, "entries must be strictly decreasing");
        return;
      }
    }
  }

  void check_cfl(const TwoScaleOperator& ts, double eps, const std::vector<int>& g, const std::string& path) {
    try {
      const double dt = two_scale_timestep(ts, eps, Grid(g), c.parabolic.dt_max);
      if (dt < c.dt_floor) {
        // The fast budget dominates and scales like 1/(eps h_y^2).
        const double shrink = std::sqrt(dt / c.dt_floor);
        std::string fast;
        for (std::size_t i = static_cast<std::size_t>(ts.n); i < g.size(); ++i)
          fast += (fast.empty() ? "" : "x") + std::to_string(std::max(3, static_cast<int>(std::floor(g[i] * shrink))));
        std::ostringstream os;
        os << "CFL step " << dt << " at eps=" << eps << " is below the floor " << c.dt_floor
           << "; suggested fast grid " << fast << " or eps >= " << eps * c.dt_floor / dt;
        warn(path, os.str());
      }
    } catch (const Error& e) {
      error(path, e.what());
    }
  }

  void run() {
    out = c.parse_diagnostics;
    if (!c.workflow) {
      if (std::none_of(out.begin(), out.end(), [](const Diagnostic& d) { return d.path == "workflow"; }))
        error("workflow", "required");
      return;
    }
    const Workflow w = *c.workflow;
    std::set<std::string> names;
    for (std::size_t i = 0; i < c.operators.size(); ++i)
      if (!names.insert(c.operators[i].op.name).second)
        error("operators[" + std::to_string(i) + "].name", "duplicate operator name '" + c.operators[i].op.name + "'");

    if (needs_T(w) && !(c.T > 0)) error("T", c.T == 0 ? "required (positive time horizon)" : "must be positive");
    check_positive(c.parabolic.dt_max, "parabolic.dt_max");
    if (c.parabolic.dt < 0) error("parabolic.dt", "must be nonnegative");
    if (c.parabolic.store_every < 0) error("parabolic.store_every", "must be >= 0 (0: about 50 layers)");
    check_positive(c.vanishing.discounted.tol, "ergodic.tol");
    check_positive(c.direct.tol, "ergodic.direct_tol");
    check_decreasing(c.vanishing.schedule, "ergodic.schedule");
    if (c.c_slack < 0) error("dependence.c_slack", "must be nonnegative");
    if (c.K) check_positive(*c.K, "dependence.K");
    check_positive(c.K_safety, "dependence.K_safety");
    if (c.target_layers < 1) error("dependence.target_layers", "must be >= 1");

    if (w == Workflow::SolveParabolic || w == Workflow::Ergodic) {
      const OperatorEntry* e = nullptr;
      if (!c.operator_ref.empty()) e = resolve(c.operator_ref, "operator");
      else if (c.operators.size() == 1) e = &c.operators.front();
      else if (!operators_broken()) error("operator", c.operators.empty() ? "no operators defined" : "required when several operators are defined");
      if (e && check_grid(c.grid, e->op.n, "grid", "operator '" + e->op.name + "'")) check_admissible(e->op, Grid(c.grid), "operator");
      if (e && c.initial) {
        if (c.initial->max_index(VariableFamily::State) >= e->op.n || c.initial->max_index(VariableFamily::Fast) >= 0 ||
            c.initial->max_index(VariableFamily::Alpha) >= 0 || c.initial->max_index(VariableFamily::Beta) >= 0)
          error("initial", "may only use x1..x" + std::to_string(e->op.n));
      }
      if (w == Workflow::Ergodic && c.ergodic_method == ErgodicMethod::LongTime && !(c.long_time_T > 0))
        error("ergodic.T", "required for the long-time method");
    }
    if (w == Workflow::CompareParabolic || w == Workflow::CompareErgodic) {
      if (c.compare_refs.size() != 2) {
        error("compare", "required: two operator names");
      } else {
        const OperatorEntry* a = resolve(c.compare_refs[0], "compare[0]");
        const OperatorEntry* b = resolve(c.compare_refs[1], "compare[1]");
        if (a && b) {
          if (a->op.n != b->op.n) error("compare", "operators have different dimensions");
          else if (check_grid(c.grid, a->op.n, "grid", "operator '" + a->op.name + "'")) {
            check_admissible(a->op, Grid(c.grid), "compare[0]");
            check_admissible(b->op, Grid(c.grid), "compare[1]");
          }
        }
      }
    }
    if (is_two_scale(w)) {
      if (!c.two_scale) {
        if (std::none_of(out.begin(), out.end(), [](const Diagnostic& d) { return d.path.rfind("two_scale", 0) == 0; }))
          error("two_scale", "required for workflow " + to_string(w));
        return;
      }
      const TwoScaleOperator& ts = *c.two_scale;
      if (c.y_points < 3) error("homogenization.y_points", "must be >= 3");
      if (c.cache_step < 0) error("homogenization.cache_step", "must be nonnegative");
      check_positive(c.dt_floor, "homogenization.dt_floor");
      try {
        const TwoScaleConstants k = estimate_two_scale_constants(ts);
        check_ellipticity(ts, k);
        if (k.max_abs_E > 1e-14 && !c.allow_cross_diffusion && w != Workflow::Effective)
          error("two_scale", "cross diffusion Sigma Xi^T is nonzero; set homogenization.allow_cross_diffusion");
      } catch (const Error& e) {
        error("two_scale", e.what());
      }
      if (w == Workflow::Effective) {
        if (ts.n > 2) error("two_scale.slow_dim", "the effective solver supports slow dimension <= 2");
        check_grid(c.grid, ts.n, "grid", "the slow variable");
        if (c.structure_pairs != 0 && c.structure_pairs < 10)
          error("homogenization.structure_pairs", "use 0 (skip) or at least 10 pairs");
      }
      if (w == Workflow::TwoScale) {
        if (!c.epsilon) error("homogenization.epsilon", "required for workflow two-scale");
        else if (!(*c.epsilon > 0)) error("homogenization.epsilon", "must be positive");
        else if (check_grid(c.grid, ts.n + ts.m, "grid", "the product space (slow axes first)"))
          check_cfl(ts, *c.epsilon, c.grid, "homogenization.epsilon");
      }
      if (w == Workflow::ConvergenceStudy) {
        if (c.epsilons.empty()) error("homogenization.epsilons", "required for workflow convergence-study");
        check_decreasing(c.epsilons, "homogenization.epsilons");
        std::vector<std::vector<int>> grids = c.grids;
        std::string gpath = "homogenization.grids";
        if (grids.empty() && !c.grid.empty()) {
          grids = {c.grid};
          gpath = "grid";
        }
        if (grids.empty()) error("homogenization.grids", "required (one product grid or one per epsilon)");
        else if (grids.size() != 1 && grids.size() != c.epsilons.size())
          error(gpath, "give one grid or one grid per epsilon");
        else {
          bool ok = true;
          for (std::size_t i = 0; i < grids.size(); ++i)
            ok = check_grid(grids[i], ts.n + ts.m, gpath + "[" + std::to_string(i) + "]", "the product space") && ok;
          if (ok)
            for (std::size_t i = 0; i < c.epsilons.size(); ++i)
              if (c.epsilons[i] > 0)
                check_cfl(ts, c.epsilons[i], grids.size() == 1 ? grids[0] : grids[i],
                          "homogenization.epsilons[" + std::to_string(i) + "]");
        }
      }
    }
  }
};

}  // namespace

std::vector<Diagnostic> validate(const ExperimentConfig& config) {
  Validator v{config, {}};
  v.run();
  return v.out;
}

// ---------------------------------------------------------------------------
// running

std::string artifact_version() { return HJBI_VERSION; }

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["artifact_version"] = artifact_version;
  j["workflow"] = workflow;
  j["started_at"] = started_at;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : stages) j["stages"].push_back({{"name", s.name}, {"seconds", s.seconds}});
  j["files"] = nlohmann::json::array();
  for (const auto& f : files) j["files"].push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  j["verdict"] = verdict;
  j["status"] = static_cast<int>(status);
  j["summary"] = summary;
  return j;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json grid_stats(const GridFunction& u) {
  return {{"min", u.values.minCoeff()}, {"max", u.values.maxCoeff()}, {"mean", u.values.mean()}};
}

Verdict verdict_of(bool passed) { return passed ? Verdict::Holds : Verdict::Violated; }

struct Runner {
  const ExperimentConfig& c;
  std::filesystem::path dir;
  RunManifest manifest;
  std::vector<std::filesystem::path> written;  // files or directories, relative to dir
  nlohmann::json report;

  template <class F>
  auto stage(const std::string& name, F&& f) {
    const auto t0 = Clock::now();
    struct Record {
      Runner* self;
      std::string name;
      Clock::time_point t0;
      ~Record() { self->manifest.stages.push_back({name, std::chrono::duration<double>(Clock::now() - t0).count()}); }
    } rec{this, name, t0};
    try {
      return f();
    } catch (const Error& e) {
      current_stage = name;
      throw;
    }
  }
  std::string current_stage;

  std::filesystem::path out(const std::string& rel) {
    written.emplace_back(rel);
    return dir / rel;
  }

  const OperatorEntry& single() const {
    return c.operator_ref.empty() ? c.operators.front() : *c.find_operator(c.operator_ref);
  }

  GridFunction initial(const Grid& grid) const {
    if (!c.initial) return GridFunction::zero(grid);
    const Expression e = *c.initial;
    return GridFunction::sample(grid, [&](const VectorXd& x) {
      return e.evaluate(EvalPoint{{x.data(), static_cast<std::size_t>(x.size())}, {}, {}, {}});
    });
  }

  ParabolicOptions parabolic() const { return c.parabolic; }

  Verdict solve_parabolic_workflow() {
    const auto& e = single();
    const Grid grid(c.grid);
    const DiscreteOperator d = stage("discretize", [&] { return DiscreteOperator(e.op, grid); });
    const GridFunction u0 = initial(grid);
    const auto traj = stage("solve", [&] { return solve_parabolic(d, c.T, u0, parabolic()); });
    const double C = time_lipschitz_constant(d, u0);
    const auto lip = time_lipschitz_check(traj, C);
    stage("export", [&] {
      export_trajectory(traj, out("trajectory"), operator_hash(e.op), c.binary_layers);
      write_csv(traj.final_layer(), out("final.csv"));
      return 0;
    });
    report = {{"operator", e.op.name}, {"operator_hash", operator_hash(e.op)}, {"grid", c.grid}, {"T", c.T},
              {"dt", traj.dt}, {"steps", traj.steps}, {"stored_layers", traj.times.size()},
              {"final", grid_stats(traj.final_layer())},
              {"time_lipschitz", {{"constant", C}, {"passed", lip.passed}, {"worst_ratio", lip.worst_ratio}}}};
    manifest.summary = "u(T) in [" + std::to_string(traj.final_layer().values.minCoeff()) + ", " +
                       std::to_string(traj.final_layer().values.maxCoeff()) + "] after " + std::to_string(traj.steps) +
                       " steps";
    return lip.passed ? Verdict::Holds : Verdict::Violated;
  }

  Verdict ergodic_workflow() {
    const auto& e = single();
    const Grid grid(c.grid);
    const DiscreteOperator d = stage("discretize", [&] { return DiscreteOperator(e.op, grid); });
    ErgodicResult r;
    bool passed = true;
    report = {{"operator", e.op.name}, {"operator_hash", operator_hash(e.op)}, {"grid", c.grid}};
    if (c.ergodic_method == ErgodicMethod::VanishingDiscount) {
      r = stage("vanishing-discount", [&] { return ergodic_vanishing_discount(d, c.vanishing); });
      // delta |w_delta|_inf <= max |l|
      double worst = -std::numeric_limits<double>::infinity();
      for (const auto& s : r.solves) worst = std::max(worst, s.scaled_sup() - d.max_abs_cost());
      const bool bound_ok = worst <= 1e-8;
      report["discounted_bound"] = {{"max_abs_cost", d.max_abs_cost()}, {"worst_excess", worst}, {"passed", bound_ok}};
      passed = passed && bound_ok;
      if (r.solves.size() >= 2) {
        const auto reg = corrector_regularity_check(r.solves, d.max_abs_cost(), c.regularity_max_ratio);
        report["corrector_regularity"] = {{"seminorms", reg.seminorms}, {"ratio", reg.ratio},
                                          {"relative_variation", reg.relative_variation}, {"K_emp", reg.K_emp},
                                          {"passed", reg.passed}};
        passed = passed && reg.passed;
      }
      report["deltas"] = r.deltas;
      report["scaled_values"] = r.scaled_values;
    } else if (c.ergodic_method == ErgodicMethod::LongTime) {
      r = stage("long-time", [&] { return ergodic_long_time(d, c.long_time_T, c.long_time); });
      report["horizon"] = r.horizon;
      report["slope_spread"] = r.slope_spread;
    } else {
      r = stage("direct", [&] { return ergodic_direct(d, c.direct); });
      report["iterations"] = r.iterations;
    }
    report["method"] = c.ergodic_method == ErgodicMethod::VanishingDiscount ? "vanishing-discount"
                       : c.ergodic_method == ErgodicMethod::LongTime       ? "long-time"
                                                                           : "direct";
    report["U"] = r.U;
    report["residual"] = r.residual;
    report["agreement_gap"] = r.agreement_gap;
    stage("export", [&] {
      write_csv(r.corrector, out("corrector.csv"));
      return 0;
    });
    std::ostringstream os;
    os.precision(12);
    os << "U = " << r.U << " (residual " << r.residual << ")";
    manifest.summary = os.str();
    return verdict_of(passed);
  }

  Verdict compare_workflow(bool parabolic_kind) {
    const auto& a = *c.find_operator(c.compare_refs[0]);
    const auto& b = *c.find_operator(c.compare_refs[1]);
    const Grid grid(c.grid);
    DependenceReport rep;
    if (parabolic_kind) {
      ParabolicDependenceOptions o;
      o.cert1 = a.certificate;
      o.cert2 = b.certificate;
      o.c_slack = c.c_slack;
      o.target_layers = c.target_layers;
      o.coercivity_nu = c.coercivity_nu;
      o.hoelder.seed = c.seed;
      rep = stage("compare", [&] { return parabolic_dependence_experiment(a.op, b.op, grid, c.T, o); });
    } else {
      ErgodicDependenceOptions o;
      o.cert1 = a.certificate;
      o.cert2 = b.certificate;
      o.K = c.K;
      o.K_safety = c.K_safety;
      o.vanishing = c.vanishing;
      rep = stage("compare", [&] { return ergodic_dependence_experiment(a.op, b.op, grid, o); });
    }
    report = to_json(rep);
    report["operators"] = {a.op.name, b.op.name};
    report["operator_hashes"] = {operator_hash(a.op), operator_hash(b.op)};
    report["grid"] = c.grid;
    stage("export", [&] {
      write_dependence_csv(rep, out("curves.csv"));
      return 0;
    });
    std::ostringstream os;
    os.precision(6);
    if (parabolic_kind)
    {
      double min_margin = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < rep.margin.size(); ++k)
        if (rep.times[k] > 0) min_margin = std::min(min_margin, rep.margin[k]);
      os << "verdict " << to_string(rep.verdict) << "; min margin over t > 0: " << min_margin;
    }
    else
      os << "verdict " << to_string(rep.verdict) << "; |U1-U2| = " << std::abs(rep.U1 - rep.U2) << ", bound "
         << (rep.bound.empty() ? 0.0 : rep.bound.front());
    if (!rep.reason.empty()) os << " (" << rep.reason << ")";
    manifest.summary = os.str();
    return rep.verdict;
  }

  EffectiveHamiltonianCache make_cache() const { return EffectiveHamiltonianCache(c.cache_step); }

  Verdict effective_workflow() {
    const TwoScaleOperator& ts = *c.two_scale;
    EffectiveHamiltonianCache cache = make_cache();
    if (!c.cache_file.empty()) cache.attach(c.cache_file);
    bool passed = true;
    CellSolveOptions cell{c.y_points, c.direct};
    if (c.structure_pairs > 0) {
      const auto pairs = structure_samples(ts.n, static_cast<std::size_t>(c.structure_pairs), c.seed);
      const StructureReport s = stage("structure-check", [&] { return effective_structure_check(ts, pairs, &cache, cell); });
      report["structure"] = {{"K_bar", std::isfinite(s.K_bar) ? nlohmann::json(s.K_bar) : nlohmann::json("inf")},
                             {"passed", s.passed},
                             {"pairs", pairs.size()},
                             {"worst_index", s.worst_index},
                             {"worst_lhs", s.worst_lhs},
                             {"worst_rhs", s.worst_rhs},
                             {"C", s.constants.C},
                             {"C_Sigma", s.constants.C_Sigma},
                             {"omega_L", s.constants.omega_L.describe()},
                             {"min_eig_M", s.constants.min_eig_M},
                             {"min_eig_N", s.constants.min_eig_N}};
      passed = s.passed;
    }
    EffectiveSolveOptions eo;
    eo.y_points = c.y_points;
    eo.parabolic = parabolic();
    eo.ergodic = c.direct;
    const auto eff = stage("solve-effective", [&] { return solve_effective(ts, Grid(c.grid), c.T, cache, eo); });
    stage("export", [&] {
      export_trajectory(eff.trajectory, out("trajectory"), sha256_hex(ts.canonical_text()), c.binary_layers);
      write_csv(eff.trajectory.final_layer(), out("final.csv"));
      return 0;
    });
    report["operator"] = ts.name;
    report["grid"] = c.grid;
    report["y_points"] = c.y_points;
    report["dt"] = eff.trajectory.dt;
    report["steps"] = eff.trajectory.steps;
    report["cell_solves"] = eff.cell_solves;
    report["cache_hits"] = eff.cache_hits;
    report["cache_step"] = c.cache_step;
    report["max_cell_residual"] = eff.max_cell_residual;
    report["final"] = grid_stats(eff.trajectory.final_layer());
    manifest.summary = std::to_string(eff.cell_solves) + " cell solves, " + std::to_string(eff.cache_hits) +
                       " cache hits" + (report.contains("structure") ? std::string(passed ? "; structure check passed"
                                                                                           : "; structure check failed")
                                                                    : std::string());
    return verdict_of(passed);
  }

  TwoScaleOptions two_scale_options() const {
    TwoScaleOptions o;
    o.parabolic = parabolic();
    o.dt_floor = c.dt_floor;
    o.allow_cross_diffusion = c.allow_cross_diffusion;
    return o;
  }

  Verdict two_scale_workflow() {
    const TwoScaleOperator& ts = *c.two_scale;
    const auto r = stage("solve-two-scale", [&] { return solve_two_scale(ts, *c.epsilon, Grid(c.grid), c.T, two_scale_options()); });
    stage("export", [&] {
      export_trajectory(r.trajectory, out("trajectory"), operator_hash(r.product), c.binary_layers);
      write_csv(r.trajectory.final_layer(), out("final.csv"));
      return 0;
    });
    report = {{"operator", ts.name}, {"epsilon", *c.epsilon}, {"grid", c.grid}, {"dt", r.trajectory.dt},
              {"steps", r.trajectory.steps}, {"final", grid_stats(r.trajectory.final_layer())}};
    manifest.summary = "eps = " + std::to_string(*c.epsilon) + ", " + std::to_string(r.trajectory.steps) + " steps";
    return Verdict::Holds;
  }

  Verdict convergence_workflow() {
    const TwoScaleOperator& ts = *c.two_scale;
    std::vector<Grid> grids;
    for (const auto& g : c.grids.empty() ? std::vector<std::vector<int>>{c.grid} : c.grids) grids.emplace_back(g);
    EffectiveHamiltonianCache cache = make_cache();
    if (!c.cache_file.empty()) cache.attach(c.cache_file);
    ConvergenceOptions o;
    o.output_times = c.output_times;
    o.two_scale = two_scale_options();
    o.effective.parabolic = parabolic();
    o.effective.ergodic = c.direct;
    const auto table = stage("convergence", [&] { return convergence_study(ts, c.epsilons, grids, c.T, cache, o); });
    stage("export", [&] {
      table.write_csv(out("convergence.csv"));
      return 0;
    });
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows)
      rows.push_back({{"epsilon", r.epsilon}, {"error", r.error}, {"grid", r.grid}, {"dt", r.dt}, {"steps", r.steps}});
    report = {{"operator", ts.name}, {"T", c.T}, {"rows", rows}};
    if (table.strictly_decreasing) report["strictly_decreasing"] = *table.strictly_decreasing;
    std::ostringstream os;
    os.precision(4);
    os << "errors";
    for (const auto& r : table.rows) os << " " << r.error;
    if (table.strictly_decreasing) os << (*table.strictly_decreasing ? " (strictly decreasing)" : " (NOT decreasing)");
    manifest.summary = os.str();
    return table.strictly_decreasing.value_or(true) ? Verdict::Holds : Verdict::Violated;
  }

  void inventory() {
    std::vector<OutputFile> files;
    const auto add = [&](const std::filesystem::path& p) {
      files.push_back({std::filesystem::relative(p, dir).generic_string(), sha256_file(p), std::filesystem::file_size(p)});
    };
    for (const auto& rel : written) {
      const auto p = dir / rel;
      if (std::filesystem::is_directory(p)) {
        for (const auto& e : std::filesystem::recursive_directory_iterator(p))
          if (e.is_regular_file()) add(e.path());
      } else if (std::filesystem::exists(p)) {
        add(p);
      }
    }
    std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    manifest.files = std::move(files);
  }
};

}  // namespace

RunManifest run(const ExperimentConfig& config) {
  const auto diags = validate(config);
  std::string errors;
  for (const auto& d : diags)
    if (d.is_error()) errors += "\n  " + d.to_string();
  if (!errors.empty()) throw ConfigError("invalid config " + config.source + ":" + errors);
  if (config.output_dir.empty()) throw ConfigError("run: output directory not set");

  Runner r{config, config.output_dir, {}, {}, {}, {}};
  std::filesystem::create_directories(r.dir);
  RunManifest& m = r.manifest;
  m.config_hash = sha256_hex(config.text);
  m.artifact_version = artifact_version();
  m.workflow = to_string(*config.workflow);
  m.started_at = utc_now();
  const auto t0 = Clock::now();

  try {
    Verdict v = Verdict::Holds;
    switch (*config.workflow) {
      case Workflow::SolveParabolic: v = r.solve_parabolic_workflow(); break;
      case Workflow::Ergodic: v = r.ergodic_workflow(); break;
      case Workflow::CompareParabolic: v = r.compare_workflow(true); break;
      case Workflow::CompareErgodic: v = r.compare_workflow(false); break;
      case Workflow::Effective: v = r.effective_workflow(); break;
      case Workflow::TwoScale: v = r.two_scale_workflow(); break;
      case Workflow::ConvergenceStudy: v = r.convergence_workflow(); break;
    }
    m.verdict = to_string(v);
    m.status = v == Verdict::Holds ? RunStatus::Ok : v == Verdict::Violated ? RunStatus::Failed : RunStatus::Inconclusive;
  } catch (const InconclusiveError& e) {
    m.verdict = "inconclusive";
    m.status = RunStatus::Inconclusive;
    m.summary = "stage '" + r.current_stage + "': " + e.what();
  } catch (const Error& e) {
    m.verdict = "failed";
    m.status = RunStatus::Error;
    m.summary = "stage '" + r.current_stage + "': " + e.what();
    r.report["error"] = {{"stage", r.current_stage}, {"message", e.what()}};
  }
  r.report["workflow"] = m.workflow;
  r.report["verdict"] = m.verdict;
  write_json(r.report, r.out("report.json"));
  m.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  r.inventory();
  write_json(m.to_json(), r.dir / "manifest.json");
  return m;
}

}  // namespace hjbi
