#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hjbi/dependence.hpp"
#include "hjbi/homogenization.hpp"

namespace hjbi {

struct Diagnostic {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  std::string path;  // field path, e.g. operators[1].sigma[0][1]
  std::string message;
  int line = 0;  // 1-based; 0 when not tied to a source position
  int column = 0;

  bool is_error() const { return severity == Severity::Error; }
  std::string to_string() const;
};

enum class Workflow {
  SolveParabolic,
  Ergodic,
  CompareParabolic,
  CompareErgodic,
  Effective,
  TwoScale,
  ConvergenceStudy,
};

std::string to_string(Workflow w);
std::optional<Workflow> parse_workflow(std::string_view name);

struct OperatorEntry {
  HJBIOperator op;
  std::optional<RegularityCertificate> certificate;
};

struct ExperimentConfig {
  std::string source;  // file name, for messages
  std::string text;    // raw document; hashed into the manifest
  std::optional<Workflow> workflow;
  std::filesystem::path output_dir;

  std::vector<OperatorEntry> operators;
  std::string operator_ref;               // single-operator workflows
  std::vector<std::string> compare_refs;  // comparison workflows
  std::optional<TwoScaleOperator> two_scale;

  std::vector<int> grid;
  double T = 0.0;
  std::optional<Expression> initial;
  bool binary_layers = false;
  std::uint64_t seed = 1;

  ParabolicOptions parabolic = [] {
    ParabolicOptions p;
    p.store_every = 0;  // about 50 stored layers
    return p;
  }();

  ErgodicMethod ergodic_method = ErgodicMethod::VanishingDiscount;
  VanishingDiscountOptions vanishing;
  LongTimeOptions long_time;
  double long_time_T = 0.0;
  DirectErgodicOptions direct;
  double regularity_max_ratio = 1.25;

  double c_slack = 1.0;
  int target_layers = 50;
  std::optional<double> coercivity_nu;
  std::optional<double> K;
  double K_safety = 2.0;

  std::optional<double> epsilon;
  std::vector<double> epsilons;
  std::vector<std::vector<int>> grids;  // product grids for the convergence study
  int y_points = 32;
  std::filesystem::path cache_file;
  double cache_step = 1e-3;
  double dt_floor = 1e-6;
  bool allow_cross_diffusion = false;
  std::vector<double> output_times;
  int structure_pairs = 12;

  /// Problems found while reading the document (syntax, types, unknown keys).
  std::vector<Diagnostic> parse_diagnostics;

  const OperatorEntry* find_operator(const std::string& name) const;
};

/// Never throws on bad input: problems land in parse_diagnostics.
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Static checks without running solves: parse problems, references, workflow fields,
/// stencil admissibility and a CFL feasibility estimate.
std::vector<Diagnostic> validate(const ExperimentConfig& config);

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

enum class RunStatus { Ok = 0, Failed = 1, ConfigInvalid = 2, Inconclusive = 3, Error = 4 };

struct RunManifest {
  std::string config_hash;
  std::string artifact_version;
  std::string workflow;
  std::string started_at;  // UTC, ISO 8601
  double wall_clock_seconds = 0.0;
  std::vector<StageTiming> stages;
  std::vector<OutputFile> files;
  std::string verdict;  // ok | holds | violated | inconclusive | failed
  RunStatus status = RunStatus::Ok;
  std::string summary;  // one human-readable line

  nlohmann::json to_json() const;
};

std::string artifact_version();

/// Runs the configured workflow and writes its outputs plus manifest.json into
/// config.output_dir. Throws ConfigError listing the diagnostics when validation fails;
/// workflow errors propagate with the stage name prepended.
RunManifest run(const ExperimentConfig& config);

}  // namespace hjbi
