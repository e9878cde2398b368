// hjbi: command-line entry points for every workflow.
//
// Exit status: 0 ok/holds, 1 violated or failed check, 2 invalid config,
// 3 inconclusive, 4 numerical or precondition error.

#include <omp.h>

#include <iostream>

#include <CLI11.hpp>

#include "hjbi/config.hpp"
#include "hjbi/error.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  int threads = 0;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "experiment config (YAML)")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory (default: out/<config name> or output_dir)");
  sub->add_option("--threads", f.threads, "OpenMP threads (0: runtime default)")->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", f.seed, "seed for sampled checks (overrides the config)");
  sub->add_flag("--quiet", f.quiet, "print nothing on success");
}

int print_diagnostics(const std::vector<hjbi::Diagnostic>& diags, const std::string& source, bool quiet) {
  int errors = 0;
  for (const auto& d : diags) {
    errors += d.is_error();
    if (!quiet || d.is_error()) std::cerr << source << ": " << d.to_string() << "\n";
  }
  return errors;
}

int run_workflow(const std::string& name, const Flags& f) {
  hjbi::ExperimentConfig cfg = hjbi::load_config(f.config);
  const auto requested = hjbi::parse_workflow(name);
  if (cfg.workflow && cfg.workflow != requested) {
    std::cerr << f.config << ": config declares workflow '" << hjbi::to_string(*cfg.workflow) << "', not '" << name
              << "'\n";
    return 2;
  }
  cfg.workflow = requested;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.seed) cfg.seed = *f.seed;
  if (print_diagnostics(hjbi::validate(cfg), f.config, f.quiet) > 0) return 2;

  const hjbi::RunManifest m = hjbi::run(cfg);
  const int status = static_cast<int>(m.status);
  if (!f.quiet || status != 0) {
    std::ostream& os = status == 0 ? std::cout : std::cerr;
    os << name << ": " << m.verdict << " - " << m.summary << "\n";
    if (!f.quiet) os << "outputs in " << cfg.output_dir.string() << " (" << m.files.size() + 1 << " files)\n";
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HJBI numerical lab: monotone schemes, ergodic constants, dependence bounds, homogenization"};
  app.set_version_flag("--version", hjbi::artifact_version());
  app.require_subcommand(1);

  Flags flags;
  const std::vector<std::pair<const char*, const char*>> workflows = {
      {"solve-parabolic", "explicit solve of the Cauchy problem"},
      {"ergodic", "ergodic constant and corrector"},
      {"compare-parabolic", "continuous dependence of the Cauchy problem on the coefficients"},
      {"compare-ergodic", "continuous dependence of the ergodic constant on the coefficients"},
      {"effective", "effective Hamiltonian structure check and effective solve"},
      {"two-scale", "direct solve of the two-scale problem at one epsilon"},
      {"convergence-study", "two-scale vs effective error over a list of epsilons"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : workflows) {
    subs.push_back(app.add_subcommand(name, help));
    add_common(subs.back(), flags);
  }
  CLI::App* run_cmd = app.add_subcommand("run", "run the workflow named in the config");
  add_common(run_cmd, flags);
  CLI::App* validate_cmd = app.add_subcommand("validate", "static checks only; prints diagnostics");
  validate_cmd->add_option("--config", flags.config, "experiment config (YAML)")->required()->check(CLI::ExistingFile);
  validate_cmd->add_flag("--quiet", flags.quiet, "print errors only");

  CLI11_PARSE(app, argc, argv);

  try {
    if (flags.threads > 0) omp_set_num_threads(flags.threads);
    if (validate_cmd->parsed()) {
      const auto cfg = hjbi::load_config(flags.config);
      const int errors = print_diagnostics(hjbi::validate(cfg), flags.config, flags.quiet);
      if (errors == 0 && !flags.quiet) std::cout << flags.config << ": ok\n";
      return errors > 0 ? 2 : 0;
    }
    if (run_cmd->parsed()) {
      const auto cfg = hjbi::load_config(flags.config);
      if (!cfg.workflow) {
        print_diagnostics(hjbi::validate(cfg), flags.config, flags.quiet);
        return 2;
      }
      return run_workflow(hjbi::to_string(*cfg.workflow), flags);
    }
    for (auto* sub : subs)
      if (sub->parsed()) return run_workflow(sub->get_name(), flags);
  } catch (const hjbi::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
