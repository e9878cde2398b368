#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "hjbi/config.hpp"
#include "hjbi/error.hpp"
#include "hjbi/grid.hpp"
#include "hjbi/io.hpp"

using namespace hjbi;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(HJBI_SOURCE_DIR) / "configs";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hjbi_config_test_" + name);
  fs::remove_all(p);
  return p;
}

bool has(const std::vector<Diagnostic>& d, const std::string& path, const std::string& fragment,
         Diagnostic::Severity s = Diagnostic::Severity::Error) {
  for (const auto& x : d)
    if (x.severity == s && x.path == path && x.message.find(fragment) != std::string::npos) return true;
  return false;
}

std::size_t errors(const std::vector<Diagnostic>& d) {
  return static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](const Diagnostic& x) { return x.is_error(); }));
}

const char* kConstant = R"(workflow: solve-parabolic
grid: [8]
T: 1.5
operators:
  - name: c
    dim: 1
    sigma: "0"
    drift: "0"
    cost: "0.7"
)";

}  // namespace

TEST(Config, ShippedExamplesValidateClean) {
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(kConfigs)) {
    if (e.path().extension() != ".yaml") continue;
    ++count;
    const auto diags = validate(load_config(e.path()));
    for (const auto& d : diags) ADD_FAILURE() << e.path().filename() << ": " << d.to_string();
  }
  EXPECT_GE(count, 8u);
}

TEST(Config, YamlSyntaxErrorHasPosition) {
  const auto c = parse_config("workflow: ergodic\ngrid: [8\nT: 1\n");
  ASSERT_FALSE(c.parse_diagnostics.empty());
  EXPECT_GT(c.parse_diagnostics.front().line, 0);
  EXPECT_NE(c.parse_diagnostics.front().message.find("YAML"), std::string::npos);
}

TEST(Config, ExpressionErrorPointsIntoTheDocument) {
  std::string text = kConstant;
  text.replace(text.find("\"0.7\""), 5, "\"0.7 +* x1\"");
  const auto diags = validate(parse_config(text));
  ASSERT_EQ(errors(diags), 1u);
  EXPECT_EQ(diags.front().path, "operators[0].cost");
  EXPECT_EQ(diags.front().line, 9);
  EXPECT_GT(diags.front().column, 11);
}

TEST(Config, MissingOperatorNamesTheField) {
  std::string text = kConstant;
  text += "operator: nope\n";
  const auto diags = validate(parse_config(text));
  EXPECT_TRUE(has(diags, "operator", "unknown operator 'nope'"));
  EXPECT_THROW(run(parse_config(text)), ConfigError);
}

TEST(Config, SigmaDimensionMismatchCitesCoefficient) {
  std::string text = kConstant;
  text.replace(text.find("sigma: \"0\""), 10, "sigma: [[\"1\", \"0\"]]");
  const auto diags = validate(parse_config(text));
  EXPECT_TRUE(has(diags, "operators[0].sigma", "expected 1 x 1 entries"));
}

TEST(Config, WorkflowFieldsAndTolerances) {
  auto d = validate(parse_config("workflow: compare-ergodic\ngrid: [8]\nergodic: {tol: -1}\n"));
  EXPECT_TRUE(has(d, "compare", "required"));
  EXPECT_TRUE(has(d, "ergodic.tol", "positive"));
  d = validate(parse_config("grid: [8]\n"));
  EXPECT_TRUE(has(d, "workflow", "required"));
  d = validate(parse_config("workflow: solve-parbolic\n"));
  EXPECT_TRUE(has(d, "workflow", "unknown workflow"));
  std::string typo = kConstant;
  typo += "parabolic: {dtmax: 0.1}\n";
  d = validate(parse_config(typo));
  EXPECT_EQ(errors(d), 0u);
  EXPECT_TRUE(has(d, "parabolic.dtmax", "unknown key", Diagnostic::Severity::Warning));
}

TEST(Config, CflFloorWarningSuggestsGrid) {
  auto c = load_config(kConfigs / "two_scale_benchmark.yaml");
  c.epsilon = 1e-5;
  const auto d = validate(c);
  EXPECT_EQ(errors(d), 0u);
  ASSERT_TRUE(has(d, "homogenization.epsilon", "below the floor", Diagnostic::Severity::Warning));
  for (const auto& x : d)
    if (!x.is_error()) EXPECT_NE(x.message.find("suggested fast grid"), std::string::npos);
}

TEST(Run, ConstantCostTrajectoryAndManifest) {
  auto c = parse_config(kConstant);
  c.output_dir = scratch("constant");
  const RunManifest m = run(c);
  EXPECT_EQ(m.status, RunStatus::Ok);
  const GridFunction u = read_csv(c.output_dir / "final.csv");
  EXPECT_LE((u.values.array() + 0.7 * 1.5).abs().maxCoeff(), 1e-12);
  ASSERT_TRUE(fs::exists(c.output_dir / "manifest.json"));
  ASSERT_TRUE(fs::exists(c.output_dir / "trajectory" / "manifest.json"));
  EXPECT_EQ(m.config_hash, sha256_hex(kConstant));
  for (const auto& f : m.files) EXPECT_EQ(sha256_file(c.output_dir / f.path), f.sha256) << f.path;
  fs::remove_all(c.output_dir);
}

TEST(Run, ShiftComparisonHolds) {
  auto c = load_config(kConfigs / "compare_ergodic_shift.yaml");
  c.output_dir = scratch("shift");
  const RunManifest m = run(c);
  EXPECT_EQ(m.verdict, "holds");
  std::ifstream in(c.output_dir / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["verdict"], "holds");
  EXPECT_NEAR(j["U2"].get<double>() - j["U1"].get<double>(), 0.25, 1e-6);
  fs::remove_all(c.output_dir);
}

TEST(Run, DeterministicOutputs) {
  auto c = load_config(kConfigs / "effective_benchmark.yaml");
  c.output_dir = scratch("det_a");
  const RunManifest a = run(c);
  c.output_dir = scratch("det_b");
  const RunManifest b = run(c);
  ASSERT_EQ(a.files.size(), b.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    EXPECT_EQ(a.files[i].path, b.files[i].path);
    EXPECT_EQ(a.files[i].sha256, b.files[i].sha256) << a.files[i].path;
  }
  EXPECT_EQ(a.config_hash, b.config_hash);
  fs::remove_all(scratch("det_a"));
  fs::remove_all(c.output_dir);
}

TEST(Run, WorkflowErrorsCarryStage) {
  auto c = load_config(kConfigs / "two_scale_benchmark.yaml");
  c.epsilon = 1e-5;  // validates with a warning, then the solver refuses
  c.output_dir = scratch("infeasible");
  const RunManifest m = run(c);
  EXPECT_EQ(m.status, RunStatus::Error);
  EXPECT_NE(m.summary.find("solve-two-scale"), std::string::npos);
  EXPECT_NE(m.summary.find("below the floor"), std::string::npos);
  fs::remove_all(c.output_dir);
}
