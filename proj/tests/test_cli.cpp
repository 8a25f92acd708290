#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "distimpute/app.hpp"
#include "distimpute/simulation.hpp"
#include "fixtures.hpp"

using namespace distimpute;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("distimpute_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

RunConfig parse(std::vector<std::string> args) {
  args.insert(args.begin(), "distimpute");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  const auto cfg = parse_command_line(static_cast<int>(argv.size()), argv.data(), out);
  REQUIRE(cfg.has_value());
  return *cfg;
}

fs::path trial_csv(const fs::path& dir, std::uint64_t seed = 1) {
  const fs::path p = dir / "trial.csv";
  spit(p, format_dataset(simulate_trial(fixture::small_design(60), seed)));
  return p;
}

}  // namespace

TEST_CASE("command-line parsing") {
  const auto cfg = parse({"analyze", "--input", "trial.csv", "--model", "rtb", "--estimand", "ate", "--estimand",
                          "risk:4.5", "--M", "20", "--B", "30", "--weights", "poisson1", "--seed", "9", "--threads", "4"});
  CHECK(cfg.command == Command::Analyze);
  CHECK(cfg.input == fs::path("trial.csv"));
  CHECK(cfg.model == SensitivityModel::Rtb);
  CHECK(cfg.estimands == std::vector<std::string>{"ate", "risk:4.5"});
  CHECK(cfg.m == 20);
  CHECK(cfg.b == 30);
  CHECK(cfg.weights == WeightScheme::Poisson1);
  CHECK(cfg.seed == 9);
  CHECK(cfg.threads == 4);

  const auto defaults = parse({"fit", "--input", "x.csv"});
  CHECK(defaults.command == Command::Fit);
  CHECK(defaults.model == SensitivityModel::J2R);
  CHECK(defaults.m == 100);
  CHECK(defaults.method == "di");

  std::ostringstream out;
  const char* help[] = {"distimpute", "--help"};
  CHECK_FALSE(parse_command_line(2, help, out).has_value());
  CHECK(out.str().find("j2r") != std::string::npos);

  const char* unknown[] = {"distimpute", "analyze", "--bogus"};
  CHECK_THROWS_AS(parse_command_line(3, unknown, out), ConfigError);
  const char* bad_model[] = {"distimpute", "analyze", "--model", "J2R"};
  CHECK_THROWS_AS(parse_command_line(4, bad_model, out), ConfigError);
  const char* none[] = {"distimpute"};
  CHECK_THROWS_AS(parse_command_line(1, none, out), ConfigError);
}

TEST_CASE("command-line flags override the config file") {
  const auto dir = scratch("config");
  const auto file = dir / "run.toml";
  spit(file, "model = \"rtb\"\nM = 7\nseed = 5\n");
  const auto cfg = parse({"analyze", "--config", file.string(), "--M", "9"});
  CHECK(cfg.model == SensitivityModel::Rtb);
  CHECK(cfg.m == 9);
  CHECK(cfg.seed == 5);
}

TEST_CASE("configuration validation") {
  RunConfig cfg;
  cfg.command = Command::Simulate;
  cfg.preset = "j2r-ate";
  CHECK_NOTHROW(validate(cfg));
  cfg.input = "trial.csv";
  CHECK_THROWS_AS(validate(cfg), ConfigError);

  RunConfig a;
  a.command = Command::Analyze;
  CHECK_THROWS_AS(validate(a), ConfigError);  // no input
  a.input = "trial.csv";
  CHECK_NOTHROW(validate(a));
  a.method = "bayes";
  CHECK_THROWS_AS(validate(a), ConfigError);
  a.method = "mi";
  a.m = 1;
  CHECK_THROWS_AS(validate(a), ConfigError);
  a.m = 10;
  a.long_format = true;
  CHECK_THROWS_AS(validate(a), ConfigError);  // visits missing

  CHECK_FALSE(to_json(a).contains("threads"));
}

TEST_CASE("analyze writes the documented artifacts") {
  const auto dir = scratch("analyze");
  RunConfig cfg;
  cfg.command = Command::Analyze;
  cfg.input = trial_csv(dir);
  cfg.estimands = {"ate-ancova", "risk:2", "qte:0.5", "cdf"};
  cfg.m = 20;
  cfg.b = 20;
  cfg.output_dir = dir;
  cfg.emit_fit = true;
  cfg.emit_cdf = true;
  std::ostringstream out, err;
  REQUIRE(run(cfg, out, err) == 0);
  CHECK(err.str().empty());
  CHECK(out.str().find("estimand=ate-ancova method=di") != std::string::npos);

  const auto doc = nlohmann::json::parse(slurp(dir / "analysis.json"));
  CHECK(doc["config"]["model"] == "j2r");
  CHECK(doc["config"]["M"] == 20);
  CHECK(doc["data"]["n_subjects"] == 120);
  CHECK(doc.contains("imputation_fingerprint"));
  REQUIRE(doc["results"].size() == 4);
  const auto& ate = doc["results"][0]["result"];
  for (const char* key : {"tau_hat", "se", "ci", "p_value"}) CHECK(ate.contains(key));
  CHECK(doc["results"][3]["result"].size() == 101);

  const auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
  CHECK(fit["fit"].contains("loglik"));
  const auto cdf = slurp(dir / "cdf_treatment.csv");
  CHECK(cdf.find("y,cdf\n") != std::string::npos);
  CHECK(fs::exists(dir / "cdf_control.csv"));
}

TEST_CASE("artifacts are byte-identical across thread counts") {
  const auto dir = scratch("threads");
  const auto input = trial_csv(dir, 3);
  std::string analysis, imputed;
  for (unsigned threads : {1u, 3u}) {
    const auto sub = dir / std::to_string(threads);
    fs::create_directories(sub);
    RunConfig cfg;
    cfg.input = input;
    cfg.m = 15;
    cfg.b = 15;
    cfg.threads = threads;
    cfg.output_dir = sub;
    cfg.estimands = {"ate-ancova", "qte:0.5"};
    std::ostringstream out, err;
    cfg.command = Command::Analyze;
    REQUIRE(run(cfg, out, err) == 0);
    cfg.command = Command::Impute;
    cfg.emit_imputed = 3;
    REQUIRE(run(cfg, out, err) == 0);
    const auto a = slurp(sub / "analysis.json");
    const auto i = slurp(sub / "imputed_3.csv");
    if (threads == 1) {
      analysis = a;
      imputed = i;
    } else {
      CHECK(a == analysis);
      CHECK(i == imputed);
    }
  }
  CHECK(imputed.rfind("# config=", 0) == 0);
}

TEST_CASE("errors carry their stage and a nonzero status") {
  const auto dir = scratch("errors");
  spit(dir / "holes.csv", "x1,group,y1,y2,y3\n0.1,1,1.0,NA,2.0\n0.2,2,1.5,2.5,3.5\n");
  RunConfig cfg;
  cfg.command = Command::Fit;
  cfg.input = dir / "holes.csv";
  cfg.output_dir = dir;
  std::ostringstream out, err;
  CHECK(run(cfg, out, err) != 0);
  CHECK(err.str().rfind("data:", 0) == 0);
  CHECK(err.str().find("subject 1") != std::string::npos);

  std::ostringstream err2;
  cfg.input = dir / "missing.csv";
  CHECK(run(cfg, out, err2) != 0);
  CHECK(err2.str().rfind("data:", 0) == 0);

  std::ostringstream err3;
  cfg.command = Command::Simulate;
  cfg.preset = "j2r-ate";
  CHECK(run(cfg, out, err3) != 0);
  CHECK(err3.str().rfind("config:", 0) == 0);
}

TEST_CASE("simulate writes a metrics table") {
  const auto dir = scratch("simulate");
  RunConfig cfg;
  cfg.command = Command::Simulate;
  cfg.preset = "rtb-ate";
  cfg.n_per_group = 100;
  cfg.reps = 4;
  cfg.m = 5;
  cfg.b = 5;
  cfg.output_dir = dir;
  std::ostringstream out, err;
  REQUIRE(run(cfg, out, err) == 0);
  const auto csv = slurp(dir / "metrics.csv");
  CHECK(csv.find("\nMI,") != std::string::npos);
  CHECK(csv.find("\nDI,") != std::string::npos);
  CHECK(csv.find("# true_tau=1.5896") != std::string::npos);
}
