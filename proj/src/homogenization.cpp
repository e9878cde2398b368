#include "hjbi/homogenization.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hjbi/error.hpp"
#include "hjbi/io.hpp"

namespace hjbi {

namespace {

void check_field(const CoefficientField& f, FieldKind kind, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (f.kind() != kind || f.rows() != rows || f.cols() != cols)
    throw ConfigError(std::string("two-scale operator: field ") + name + " must be " + std::to_string(rows) + "x" +
                      std::to_string(cols));
}

void check_indices(const CoefficientField& f, const TwoScaleOperator& ts, const char* name) {
  const auto fail = [&](const char* what) {
    throw ConfigError(std::string("two-scale operator: field ") + name + " uses an unbound " + what + " variable");
  };
  if (f.max_index(VariableFamily::State) >= ts.n) fail("slow");
  if (f.max_index(VariableFamily::Fast) >= ts.m) fail("fast");
  if (f.max_index(VariableFamily::Alpha) >= ts.A.dimension()) fail("alpha");
  if (f.max_index(VariableFamily::Beta) >= ts.B.dimension()) fail("beta");
}

std::string hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

std::string describe_triple(const VectorXd& x, const VectorXd& p, const MatrixXd& X) {
  std::ostringstream os;
  os.precision(6);
  const Eigen::IOFormat fmt(Eigen::StreamPrecision, Eigen::DontAlignCols, ", ", "; ", "", "", "[", "]");
  os << "x=" << x.transpose().format(fmt) << " p=" << p.transpose().format(fmt) << " X=" << X.format(fmt);
  return os.str();
}

double lipschitz_along_axes(const std::vector<double>& per_axis) {
  double s = 0.0;
  for (double v : per_axis) s += v * v;
  return std::sqrt(s);
}

Expression substitute_fast(const Expression& e, Eigen::Index offset) {
  return e.substitute([offset](VariableFamily f, int i) -> std::optional<Expression> {
    if (f == VariableFamily::Fast) return Expression::variable(VariableFamily::State, static_cast<int>(offset) + i);
    return std::nullopt;
  });
}

// Initial datum h(x) sampled on the slow axes of `grid` (the first n axes).
GridFunction sample_initial(const TwoScaleOperator& ts, const Grid& grid) {
  return GridFunction::sample(grid, [&](const VectorXd& z) {
    const VectorXd x = z.head(ts.n);
    return ts.h.evaluate(EvalPoint{{x.data(), static_cast<std::size_t>(x.size())}, {}, {}, {}});
  });
}

}  // namespace

void TwoScaleOperator::validate() const {
  if (n < 1 || m < 1 || p_dim < 1) throw ConfigError("two-scale operator: dimensions must be positive");
  A.validate();
  B.validate();
  check_field(Xi, FieldKind::Matrix, n, p_dim, "Xi");
  check_field(Sigma, FieldKind::Matrix, m, p_dim, "Sigma");
  check_field(F, FieldKind::Vector, m, 1, "F");
  check_field(G, FieldKind::Vector, n, 1, "G");
  check_field(L, FieldKind::Scalar, 1, 1, "L");
  for (const auto& [f, name] : {std::pair{&Xi, "Xi"}, std::pair{&Sigma, "Sigma"}, std::pair{&F, "F"},
                                std::pair{&G, "G"}, std::pair{&L, "L"}})
    check_indices(*f, *this, name);
  if (h.max_index(VariableFamily::State) >= n) throw ConfigError("two-scale operator: h uses an unbound slow variable");
  if (h.max_index(VariableFamily::Fast) >= 0 || h.max_index(VariableFamily::Alpha) >= 0 ||
      h.max_index(VariableFamily::Beta) >= 0)
    throw ConfigError("two-scale operator: the initial datum h may depend on x only");
  if (nu < 0) throw ConfigError("two-scale operator: nu must be nonnegative");
}

MatrixXd TwoScaleOperator::M(const VectorXd& x, const VectorXd& y, std::size_t ia, std::size_t ib) const {
  const MatrixXd xi = Xi.evaluate(point(x, y, ia, ib));
  return xi * xi.transpose();
}

MatrixXd TwoScaleOperator::N(const VectorXd& x, const VectorXd& y, std::size_t ia, std::size_t ib) const {
  const MatrixXd s = Sigma.evaluate(point(x, y, ia, ib));
  return s * s.transpose();
}

MatrixXd TwoScaleOperator::E(const VectorXd& x, const VectorXd& y, std::size_t ia, std::size_t ib) const {
  const EvalPoint pt = point(x, y, ia, ib);
  return Sigma.evaluate(pt) * Xi.evaluate(pt).transpose();
}

std::string TwoScaleOperator::canonical_text() const {
  std::string out = "n=" + std::to_string(n) + " m=" + std::to_string(m) + " p=" + std::to_string(p_dim);
  out += " Xi=" + hjbi::canonical_text(Xi) + " Sigma=" + hjbi::canonical_text(Sigma);
  out += " F=" + hjbi::canonical_text(F) + " G=" + hjbi::canonical_text(G) + " L=" + hjbi::canonical_text(L);
  out += " h=" + h.to_string() + " A=" + hjbi::canonical_text(A) + " B=" + hjbi::canonical_text(B);
  return out;
}

TwoScaleConstants estimate_two_scale_constants(const TwoScaleOperator& ts, int points, double safety) {
  ts.validate();
  const SampleSpec xs = SampleSpec::uniform(ts.n, points);
  const SampleSpec ys = SampleSpec::uniform(ts.m, points);
  TwoScaleConstants k;
  k.min_eig_M = k.min_eig_N = std::numeric_limits<double>::infinity();
  std::vector<double> lip_sigma(ts.n, 0.0), lip_f(ts.n, 0.0), lip_m(ts.n, 0.0), lip_g(ts.n, 0.0), lip_l(ts.n, 0.0);
  const double h = 1.0 / points;
  for (std::size_t sx = 0; sx < xs.count(); ++sx) {
    const VectorXd x = xs.point(sx);
    for (std::size_t sy = 0; sy < ys.count(); ++sy) {
      const VectorXd y = ys.point(sy);
      for (std::size_t ib = 0; ib < ts.B.size(); ++ib) {
        for (std::size_t ia = 0; ia < ts.A.size(); ++ia) {
          const EvalPoint pt = ts.point(x, y, ia, ib);
          const MatrixXd xi = ts.Xi.evaluate(pt), sg = ts.Sigma.evaluate(pt);
          const MatrixXd M = xi * xi.transpose(), N = sg * sg.transpose(), E = sg * xi.transpose();
          const VectorXd F = ts.F.evaluate_vector(pt), G = ts.G.evaluate_vector(pt);
          const double L = ts.L.evaluate_scalar(pt);
          k.C = std::max({k.C, M.norm(), N.norm(), E.norm(), F.norm(), G.norm(), std::abs(L)});
          k.min_eig_M = std::min(k.min_eig_M, min_eigenvalue(M));
          k.min_eig_N = std::min(k.min_eig_N, min_eigenvalue(N));
          k.max_abs_E = std::max(k.max_abs_E, E.cwiseAbs().maxCoeff());
          for (Eigen::Index i = 0; i < ts.n; ++i) {
            VectorXd x2 = x;
            x2(i) += h;
            const EvalPoint q = ts.point(x2, y, ia, ib);
            const MatrixXd xi2 = ts.Xi.evaluate(q);
            lip_sigma[i] = std::max(lip_sigma[i], (ts.Sigma.evaluate(q) - sg).norm() / h);
            lip_f[i] = std::max(lip_f[i], (ts.F.evaluate_vector(q) - F).norm() / h);
            lip_m[i] = std::max(lip_m[i], (xi2 * xi2.transpose() - M).norm() / h);
            lip_g[i] = std::max(lip_g[i], (ts.G.evaluate_vector(q) - G).norm() / h);
            lip_l[i] = std::max(lip_l[i], std::abs(ts.L.evaluate_scalar(q) - L) / h);
          }
        }
      }
    }
  }
  k.C_Sigma = safety * lipschitz_along_axes(lip_sigma);
  k.C_F = safety * lipschitz_along_axes(lip_f);
  k.C_M = safety * lipschitz_along_axes(lip_m);
  k.C_G = safety * lipschitz_along_axes(lip_g);
  k.omega_L = Modulus::linear(safety * lipschitz_along_axes(lip_l));
  return k;
}

void check_ellipticity(const TwoScaleOperator& ts, const TwoScaleConstants& k) {
  const double required = std::max(ts.nu, 0.0);
  const auto fail = [&](const char* which, double value) {
    std::ostringstream os;
    os << "two-scale operator '" << ts.name << "': sampled min eigenvalue of " << which << " is " << value
       << (ts.nu > 0 ? " < declared nu = " + std::to_string(ts.nu) : std::string(" (not positive)"))
       << "; the cell problems and the effective comparison principle need M, N >= nu I with nu > 0";
    throw PreconditionError(os.str());
  };
  if (k.min_eig_M < required - 1e-12 || k.min_eig_M <= 1e-12) fail("M", k.min_eig_M);
  if (k.min_eig_N < required - 1e-12 || k.min_eig_N <= 1e-12) fail("N", k.min_eig_N);
}

CellProblem build_cell_operator(const TwoScaleOperator& ts, const VectorXd& x_bar, const VectorXd& p_bar,
                                const MatrixXd& X_bar, const std::optional<TwoScaleConstants>& constants) {
  ts.validate();
  if (x_bar.size() != ts.n || p_bar.size() != ts.n || X_bar.rows() != ts.n || X_bar.cols() != ts.n)
    throw ConfigError("build_cell_operator: frozen triple has the wrong dimensions");
  const TwoScaleConstants k = constants ? *constants : estimate_two_scale_constants(ts);
  check_ellipticity(ts, k);

  // x -> xbar (constants), y_j -> x_j of the cell operator.
  const auto rule = [&](VariableFamily f, int i) -> std::optional<Expression> {
    if (f == VariableFamily::State) return Expression::constant(x_bar(i));
    if (f == VariableFamily::Fast) return Expression::variable(VariableFamily::State, i);
    return std::nullopt;
  };
  const auto sub = [&](const CoefficientField& field) {
    std::vector<Expression> e;
    for (const auto& x : field.entries()) e.push_back(x.substitute(rule));
    return e;
  };
  CellProblem cp;
  cp.x_bar = x_bar;
  cp.p_bar = p_bar;
  cp.X_bar = X_bar;
  HJBIOperator& c = cp.cell;
  c.name = ts.name + "/cell";
  c.n = ts.m;
  c.p_dim = ts.p_dim;
  c.sigma = CoefficientField::matrix(ts.m, ts.p_dim, sub(ts.Sigma));
  c.drift = CoefficientField::vector(sub(ts.F));
  const std::vector<Expression> xi = sub(ts.Xi);
  const std::vector<Expression> g = sub(ts.G);
  Expression cost = sub(ts.L).front();
  // -tr(M Xbar) = -sum_ij Xbar_ij sum_k Xi_ik Xi_jk
  for (Eigen::Index i = 0; i < ts.n; ++i) {
    for (Eigen::Index j = 0; j < ts.n; ++j) {
      if (X_bar(i, j) == 0.0) continue;
      Expression mij;
      for (Eigen::Index q = 0; q < ts.p_dim; ++q) mij = mij + xi[i * ts.p_dim + q] * xi[j * ts.p_dim + q];
      cost = cost - Expression::constant(X_bar(i, j)) * mij;
    }
    if (p_bar(i) != 0.0) cost = cost + Expression::constant(p_bar(i)) * g[i];
  }
  c.cost = CoefficientField::scalar(cost);
  c.A = ts.A;
  c.B = ts.B;
  c.validate();
  cp.omega = Modulus::pointwise_max(
      Modulus::linear(k.C_M * X_bar.norm() + k.C_G * p_bar.norm() +
                      (k.omega_L.kind() == Modulus::Kind::Linear ? k.omega_L(1.0) : 0.0)),
      k.omega_L);
  return cp;
}

// ---------------------------------------------------------------------------
// cache

EffectiveHamiltonianCache::EffectiveHamiltonianCache(double step) : step_(step) {
  if (!(step >= 0.0)) throw ConfigError("effective Hamiltonian cache: quantization step must be >= 0");
}

std::string EffectiveHamiltonianCache::key(std::string_view fingerprint, std::span<const double> exact,
                                           std::span<const double> quantized) const {
  std::string k(fingerprint);
  k += '|';
  for (double v : exact) k += hex(v) + ",";
  k += '|';
  for (double v : quantized) {
    if (step_ > 0.0) k += std::to_string(std::llround(v / step_)) + ",";
    else k += hex(v) + ",";
  }
  return k;
}

std::optional<CacheRecord> EffectiveHamiltonianCache::find(const std::string& key) const {
  std::shared_lock lock(mutex_);
  const auto it = map_.find(key);
  if (it == map_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return it->second;
}

CacheRecord EffectiveHamiltonianCache::insert(const std::string& key, const CacheRecord& record) {
  std::unique_lock lock(mutex_);
  const auto [it, inserted] = map_.emplace(key, record);
  if (inserted && file_) {
    nlohmann::json j{{"key", key}, {"value", record.value}, {"residual", record.residual},
                     {"iterations", record.iterations}};
    const std::string line = j.dump() + "\n";
    const int fd = ::open(file_->c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd < 0) throw Error("effective Hamiltonian cache: cannot append to " + file_->string());
    ::flock(fd, LOCK_EX);
    const ssize_t written = ::write(fd, line.data(), line.size());
    ::flock(fd, LOCK_UN);
    ::close(fd);
    if (written != static_cast<ssize_t>(line.size()))
      throw Error("effective Hamiltonian cache: short write to " + file_->string());
  }
  return it->second;
}

void EffectiveHamiltonianCache::attach(const std::filesystem::path& path) {
  std::unique_lock lock(mutex_);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_RDONLY | O_CREAT, 0644);
  if (fd < 0) throw Error("effective Hamiltonian cache: cannot open " + path.string());
  ::flock(fd, LOCK_SH);
  std::string content;
  char buf[1 << 16];
  for (ssize_t got; (got = ::read(fd, buf, sizeof buf)) > 0;) content.append(buf, static_cast<std::size_t>(got));
  ::flock(fd, LOCK_UN);
  ::close(fd);
  std::istringstream in(content);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("key") || !j.contains("value")) continue;  // torn tail record
    CacheRecord r;
    r.value = j["value"].get<double>();
    r.residual = j.value("residual", 0.0);
    r.iterations = j.value("iterations", 0);
    map_.emplace(j["key"].get<std::string>(), r);  // earlier records win
  }
  file_ = path;
}

std::size_t EffectiveHamiltonianCache::size() const {
  std::shared_lock lock(mutex_);
  return map_.size();
}

// ---------------------------------------------------------------------------

double effective_hamiltonian(const TwoScaleOperator& ts, const VectorXd& x_bar, const VectorXd& p_bar,
                             const MatrixXd& X_bar, EffectiveHamiltonianCache* cache, const CellSolveOptions& options) {
  std::string key;
  if (cache) {
    const std::string fp =
        sha256_hex(ts.canonical_text() + "|analytic|y=" + std::to_string(options.y_points));
    std::vector<double> q(p_bar.data(), p_bar.data() + p_bar.size());
    for (Eigen::Index i = 0; i < X_bar.rows(); ++i)
      for (Eigen::Index j = i; j < X_bar.cols(); ++j) q.push_back(X_bar(i, j));
    key = cache->key(fp, std::span<const double>(x_bar.data(), static_cast<std::size_t>(x_bar.size())), q);
    if (auto hit = cache->find(key)) return hit->value;
  }
  const CellProblem cp = build_cell_operator(ts, x_bar, p_bar, X_bar);
  ErgodicResult r;
  try {
    r = ergodic_direct(DiscreteOperator(cp.cell, Grid::uniform(ts.m, options.y_points)), options.ergodic);
  } catch (const NonConvergenceError& e) {
    throw NonConvergenceError(std::string(e.what()) + " [cell problem at " + describe_triple(x_bar, p_bar, X_bar) + "]");
  }
  if (!cache) return r.U;
  return cache->insert(key, CacheRecord{r.U, r.residual, static_cast<int>(r.iterations)}).value;
}

std::vector<StructurePair> structure_samples(Eigen::Index n, std::size_t count, std::uint64_t seed, double p_radius,
                                             double X_radius) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0), pr(-p_radius, p_radius), Xr(-X_radius, X_radius),
      dx(-0.1, 0.1);
  const auto draw = [&](const VectorXd& x) {
    StructureSample s;
    s.x = x;
    s.p = VectorXd::NullaryExpr(n, [&] { return pr(rng); });
    MatrixXd R = MatrixXd::NullaryExpr(n, n, [&] { return Xr(rng); });
    s.X = 0.5 * (R + R.transpose());
    return s;
  };
  std::vector<StructurePair> out;
  for (std::size_t k = 0; k < count; ++k) {
    const VectorXd x1 = VectorXd::NullaryExpr(n, [&] { return unit(rng); });
    VectorXd x2 = x1;
    if (k % 3 != 0)
      for (Eigen::Index i = 0; i < n; ++i) x2(i) = x1(i) + dx(rng);
    for (Eigen::Index i = 0; i < n; ++i) x2(i) -= std::floor(x2(i));
    StructureSample a = draw(x1), b = draw(x2);
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

StructureReport effective_structure_check(const TwoScaleOperator& ts, const std::vector<StructurePair>& pairs,
                                          EffectiveHamiltonianCache* cache, const CellSolveOptions& options) {
  if (pairs.size() < 10) throw ConfigError("effective_structure_check: at least 10 sample pairs are required");
  StructureReport rep;
  rep.constants = estimate_two_scale_constants(ts);
  check_ellipticity(ts, rep.constants);
  const TwoScaleConstants& k = rep.constants;
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
    const auto& [s1, s2] = pairs[idx];
    const double h1 = effective_hamiltonian(ts, s1.x, s1.p, s1.X, cache, options);
    const double h2 = effective_hamiltonian(ts, s2.x, s2.p, s2.X, cache, options);
    const double lhs = std::abs(h1 - h2);
    const double r = torus_distance(s1.x, s2.x);
    const double rhs = k.C * (s1.X - s2.X).norm() + k.C * (s1.p - s2.p).norm() + k.omega_L(k.C_Sigma * r) + k.omega_L(r);
    const double tol = 1e-8 * (1.0 + std::abs(h1) + std::abs(h2));
    double needed = 0.0;
    if (lhs > rhs + tol) {
      needed = r > 0.0 ? (lhs - rhs) / (r * (1.0 + std::max(s1.p.norm(), s2.p.norm()) + std::max(s1.X.norm(), s2.X.norm())))
                       : std::numeric_limits<double>::infinity();
    }
    rep.lhs.push_back(lhs);
    rep.required_K.push_back(needed);
    if (lhs - rhs > worst_excess) {
      worst_excess = lhs - rhs;
      rep.worst_index = idx;
      rep.worst_lhs = lhs;
      rep.worst_rhs = rhs;
    }
    rep.K_bar = std::max(rep.K_bar, needed);
  }
  rep.passed = std::isfinite(rep.K_bar);
  return rep;
}

// ---------------------------------------------------------------------------

EffectiveTrajectory solve_effective(const TwoScaleOperator& ts, const Grid& grid_x, double T,
                                    EffectiveHamiltonianCache& cache, const EffectiveSolveOptions& options) {
  ts.validate();
  if (ts.n > 2) throw ConfigError("solve_effective: slow dimension above 2 is not supported");
  if (grid_x.dimension() != ts.n) throw ConfigError("solve_effective: grid dimension differs from the slow dimension");
  const TwoScaleConstants constants = estimate_two_scale_constants(ts);
  check_ellipticity(ts, constants);

  const Grid grid_y = Grid::uniform(ts.m, options.y_points);
  const std::size_t Nx = grid_x.node_count(), Ny = grid_y.node_count();
  const std::size_t P = ts.A.size() * ts.B.size();
  const std::size_t Kx = static_cast<std::size_t>(2 * ts.n + 2 * ts.n * (ts.n - 1));
  const std::size_t Ky = static_cast<std::size_t>(2 * ts.m + 2 * ts.m * (ts.m - 1));

  // Per slow node: slow weights and L over (y, pair), and the fast stencil as a cell operator.
  std::vector<double> slow_w(Nx * Ny * P * Kx), slow_cost(Nx * Ny * P);
  std::vector<DiscreteOperator> cells;
  cells.reserve(Nx);
  double max_budget = 0.0;
  for (std::size_t i = 0; i < Nx; ++i) {
    const VectorXd x = grid_x.coordinates(i);
    std::vector<double> w(Ny * P * Ky), costs(Ny * P, 0.0);
    std::vector<StencilBudget> budgets(Ny * P);
    for (std::size_t j = 0; j < Ny; ++j) {
      const VectorXd y = grid_y.coordinates(j);
      for (std::size_t ib = 0; ib < ts.B.size(); ++ib) {
        for (std::size_t ia = 0; ia < ts.A.size(); ++ia) {
          const std::size_t pair = ib * ts.A.size() + ia;
          const EvalPoint pt = ts.point(x, y, ia, ib);
          const MatrixXd xi = ts.Xi.evaluate(pt), sg = ts.Sigma.evaluate(pt);
          const MatrixXd M = xi * xi.transpose(), N = sg * sg.transpose();
          const VectorXd G = ts.G.evaluate_vector(pt), F = ts.F.evaluate_vector(pt);
          const std::size_t e = (i * Ny + j) * P + pair;
          Eigen::Index axis = -1;
          if (!stencil_weights(M, G, grid_x, &slow_w[e * Kx], &axis))
            throw AdmissibilityError("solve_effective: slow diffusion M is not diagonally dominant on the grid (axis " +
                                     std::to_string(axis + 1) + ")");
          if (!stencil_weights(N, F, grid_y, &w[(j * P + pair) * Ky], &axis))
            throw AdmissibilityError("solve_effective: fast diffusion N is not diagonally dominant on the cell grid (axis " +
                                     std::to_string(axis + 1) + ")");
          slow_cost[e] = ts.L.evaluate_scalar(pt);
          budgets[j * P + pair] = stencil_budget(N, F, grid_y);
          max_budget = std::max(max_budget, stencil_budget(M, G, grid_x).total());
        }
      }
    }
    cells.emplace_back(grid_y, ts.A.size(), ts.B.size(), std::move(w), std::move(costs), std::move(budgets));
  }

  const double cfl = max_budget > 0.0 ? std::min(options.parabolic.dt_max, 0.9 / max_budget) : options.parabolic.dt_max;
  double dt = cfl;
  if (options.parabolic.dt > 0.0) {
    if (options.parabolic.dt > cfl * (1.0 + 1e-12))
      throw ConfigError("solve_effective: requested dt exceeds the effective CFL step " + std::to_string(cfl));
    dt = options.parabolic.dt;
  }

  std::string sizes;
  for (int s : grid_x.sizes()) sizes += std::to_string(s) + ",";
  const std::string fp = sha256_hex(ts.canonical_text() + "|stencil|x=" + sizes + "|y=" + std::to_string(options.y_points));
  const auto offsets = stencil_offsets(ts.n);
  std::vector<double> scale(Kx);
  for (std::size_t k = 0; k < Kx; ++k) {
    double s = 1.0;
    int moved = 0;
    for (Eigen::Index a = 0; a < ts.n; ++a)
      if (offsets[k][a] != 0) {
        s *= grid_x.spacing(a);
        ++moved;
      }
    if (moved == 1) s *= s;  // axis offsets: h_i^2, diagonal offsets: h_i h_j
    scale[k] = s;
  }
  std::vector<std::vector<std::uint32_t>> neighbors(Nx, std::vector<std::uint32_t>(Kx));
  for (std::size_t i = 0; i < Nx; ++i)
    for (std::size_t k = 0; k < Kx; ++k) neighbors[i][k] = static_cast<std::uint32_t>(grid_x.shifted(i, offsets[k]));

  EffectiveTrajectory result;
  std::vector<VectorXd> warm(Nx);
  std::atomic<std::size_t> solves{0};
  const std::size_t hits_before = cache.hits();
  double max_residual = 0.0;

  const HamiltonianSweep sweep = [&](const VectorXd& u, VectorXd& out) {
    out.resize(static_cast<Eigen::Index>(Nx));
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < Nx; ++i) {
      try {
        double d[32];
        std::vector<double> q(Kx);
        for (std::size_t k = 0; k < Kx; ++k) {
          d[k] = u(static_cast<Eigen::Index>(i)) - u(neighbors[i][k]);
          q[k] = d[k] / scale[k];
        }
        const VectorXd x = grid_x.coordinates(i);
        const std::string key = cache.key(fp, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), q);
        if (auto hit = cache.find(key)) {
          out(static_cast<Eigen::Index>(i)) = hit->value;
          continue;
        }
        std::vector<double> costs(Ny * P);
        for (std::size_t e = 0; e < Ny * P; ++e) {
          const double* w = &slow_w[(i * Ny * P + e) * Kx];
          double c = slow_cost[i * Ny * P + e];
          for (std::size_t k = 0; k < Kx; ++k) c += w[k] * d[k];
          costs[e] = c;
        }
        const DiscreteOperator cell = cells[i].with_costs(std::move(costs));
        const ErgodicResult r = ergodic_direct(cell, options.ergodic, warm[i].size() ? &warm[i] : nullptr);
        warm[i] = r.corrector.values;
        ++solves;
        const CacheRecord rec = cache.insert(key, CacheRecord{r.U, r.residual, static_cast<int>(r.iterations)});
        out(static_cast<Eigen::Index>(i)) = rec.value;
#pragma omp critical(hjbi_effective_residual)
        max_residual = std::max(max_residual, r.residual);
      } catch (...) {
#pragma omp critical(hjbi_effective_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) {
      try {
        std::rethrow_exception(failure);
      } catch (const NonConvergenceError& e) {
        throw NonConvergenceError(std::string(e.what()) + " [effective cell solve]");
      }
    }
  };

  result.trajectory = march_explicit(grid_x, T, sample_initial(ts, grid_x), dt, options.parabolic, sweep);
  result.trajectory.operator_name = ts.name + " (effective)";
  result.cell_solves = solves;
  result.cache_hits = cache.hits() - hits_before;
  result.max_cell_residual = max_residual;
  return result;
}

HJBIOperator two_scale_product_operator(const TwoScaleOperator& ts, double epsilon) {
  ts.validate();
  if (!(epsilon > 0.0)) throw ConfigError("two-scale: epsilon must be positive");
  const Eigen::Index n = ts.n, m = ts.m;
  const Expression inv_sqrt = Expression::constant(1.0 / std::sqrt(epsilon));
  const Expression inv = Expression::constant(1.0 / epsilon);
  std::vector<Expression> sigma;
  for (const auto& e : ts.Xi.entries()) sigma.push_back(substitute_fast(e, n));
  for (const auto& e : ts.Sigma.entries()) sigma.push_back(inv_sqrt * substitute_fast(e, n));
  std::vector<Expression> drift;
  for (const auto& e : ts.G.entries()) drift.push_back(substitute_fast(e, n));
  for (const auto& e : ts.F.entries()) drift.push_back(inv * substitute_fast(e, n));
  HJBIOperator op;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s@eps=%g", ts.name.c_str(), epsilon);
  op.name = buf;
  op.n = n + m;
  op.p_dim = ts.p_dim;
  op.sigma = CoefficientField::matrix(n + m, ts.p_dim, sigma);
  op.drift = CoefficientField::vector(drift);
  op.cost = CoefficientField::scalar(substitute_fast(ts.L.entry(0), n));
  op.A = ts.A;
  op.B = ts.B;
  op.validate();
  return op;
}

double two_scale_timestep(const TwoScaleOperator& ts, double epsilon, const Grid& grid_xy, double dt_max) {
  if (grid_xy.dimension() != ts.n + ts.m)
    throw ConfigError("two-scale: the product grid must have n + m axes (slow axes first)");
  return cfl_timestep(DiscreteOperator(two_scale_product_operator(ts, epsilon), grid_xy), 0.0, dt_max);
}

TwoScaleResult solve_two_scale(const TwoScaleOperator& ts, double epsilon, const Grid& grid_xy, double T,
                               const TwoScaleOptions& options) {
  if (grid_xy.dimension() != ts.n + ts.m)
    throw ConfigError("solve_two_scale: the product grid must have n + m axes (slow axes first)");
  if (!options.allow_cross_diffusion) {
    const TwoScaleConstants k = estimate_two_scale_constants(ts);
    if (k.max_abs_E > 1e-14)
      throw PreconditionError("solve_two_scale: cross diffusion E = Sigma Xi^T is nonzero (max |E| = " +
                              std::to_string(k.max_abs_E) +
                              "); use orthogonal noise columns or enable the sign-split cross stencil");
  }
  TwoScaleResult out;
  out.epsilon = epsilon;
  out.grid = grid_xy;
  out.product = two_scale_product_operator(ts, epsilon);
  const DiscreteOperator d(out.product, grid_xy);
  const double dt = options.parabolic.dt > 0.0 ? options.parabolic.dt : cfl_timestep(d, 0.0, options.parabolic.dt_max);
  if (dt < options.dt_floor) {
    std::ostringstream os;
    os << "solve_two_scale: time step " << dt << " is below the floor " << options.dt_floor << " at eps=" << epsilon
       << "; the fast budget scales like 1/(eps h_y^2): use eps >= " << epsilon * options.dt_floor / dt
       << " or a coarser fast grid";
    throw InfeasibleError(os.str());
  }
  out.trajectory = solve_parabolic(d, T, sample_initial(ts, grid_xy), options.parabolic);
  out.trajectory.operator_name = out.product.name;
  return out;
}

void ConvergenceTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "epsilon,error,grid,dt,steps\n";
  for (const auto& r : rows) {
    std::string g;
    for (std::size_t i = 0; i < r.grid.size(); ++i) g += (i ? "x" : "") + std::to_string(r.grid[i]);
    out << r.epsilon << "," << r.error << "," << g << "," << r.dt << "," << r.steps << "\n";
  }
}

ConvergenceTable convergence_study(const TwoScaleOperator& ts, const std::vector<double>& eps_list,
                                   const std::vector<Grid>& grids, double T, EffectiveHamiltonianCache& cache,
                                   const ConvergenceOptions& options) {
  if (eps_list.empty()) throw ConfigError("convergence_study: empty epsilon list");
  for (std::size_t k = 1; k < eps_list.size(); ++k)
    if (!(eps_list[k] < eps_list[k - 1])) throw ConfigError("convergence_study: epsilons must be strictly decreasing");
  if (grids.size() != 1 && grids.size() != eps_list.size())
    throw ConfigError("convergence_study: give one grid or one grid per epsilon");
  std::vector<double> times = options.output_times;
  if (times.empty())
    for (int k = 1; k <= 10; ++k) times.push_back(T * k / 10.0);

  std::map<std::vector<int>, EffectiveTrajectory> effective;
  ConvergenceTable table;
  for (std::size_t e = 0; e < eps_list.size(); ++e) {
    const Grid& grid = grids.size() == 1 ? grids.front() : grids[e];
    if (grid.dimension() != ts.n + ts.m) throw ConfigError("convergence_study: grids must have n + m axes");
    const std::vector<int> xs(grid.sizes().begin(), grid.sizes().begin() + ts.n);
    const std::vector<int> ys(grid.sizes().begin() + ts.n, grid.sizes().end());
    for (int s : ys)
      if (s != ys.front()) throw ConfigError("convergence_study: fast axes must share one size");
    auto it = effective.find(grid.sizes());
    if (it == effective.end()) {
      EffectiveSolveOptions eo = options.effective;
      eo.y_points = ys.front();
      eo.parabolic.output_times = times;
      eo.parabolic.store_every = std::numeric_limits<int>::max();
      it = effective.emplace(grid.sizes(), solve_effective(ts, Grid(xs), T, cache, eo)).first;
    }
    TwoScaleOptions to = options.two_scale;
    to.parabolic.output_times = times;
    to.parabolic.store_every = std::numeric_limits<int>::max();
    const TwoScaleResult two = solve_two_scale(ts, eps_list[e], grid, T, to);

    const ParabolicTrajectory& eff = it->second.trajectory;
    std::size_t fast_nodes = 1;
    for (int s : ys) fast_nodes *= static_cast<std::size_t>(s);
    double err = 0.0;
    for (std::size_t a = 0; a < two.trajectory.times.size(); ++a) {
      const double t = two.trajectory.times[a];
      if (t == 0.0) continue;
      for (std::size_t b = 0; b < eff.times.size(); ++b) {
        if (eff.times[b] != t) continue;
        const VectorXd& ue = two.trajectory.layers[a].values;
        const VectorXd& u0 = eff.layers[b].values;
        for (Eigen::Index node = 0; node < ue.size(); ++node)
          err = std::max(err, std::abs(ue(node) - u0(static_cast<Eigen::Index>(static_cast<std::size_t>(node) / fast_nodes))));
      }
    }
    table.rows.push_back(ConvergenceRow{eps_list[e], err, grid.sizes(), two.trajectory.dt, two.trajectory.steps});
  }
  if (table.rows.size() >= 2) {
    bool dec = true;
    for (std::size_t k = 1; k < table.rows.size(); ++k) dec = dec && table.rows[k].error < table.rows[k - 1].error;
    table.strictly_decreasing = dec;
  }
  return table;
}

}  // namespace hjbi
