#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "distimpute/inference.hpp"
#include "distimpute/sensitivity.hpp"

namespace distimpute {

enum class Command { Fit, Impute, Analyze, Simulate };

std::string_view to_string(Command command);

/// Resolved settings of one command-line run.
struct RunConfig {
  Command command = Command::Analyze;

  // Data source: an input file (fit / impute / analyze) or a preset (simulate).
  std::filesystem::path input;
  bool long_format = false;
  std::size_t visits = 0;  // required with long_format
  std::string preset;

  SensitivityModel model = SensitivityModel::J2R;
  std::vector<std::string> estimands{"ate-ancova"};
  std::string method = "di";  // mi or di
  std::size_t m = 100;
  std::size_t b = 100;
  WeightScheme weights = WeightScheme::Exp1;
  std::uint64_t seed = 1;
  unsigned threads = 1;  // never affects results, so never written to artifacts

  // simulate
  std::size_t n_per_group = 1000;
  std::size_t reps = 500;

  std::filesystem::path output_dir = ".";
  bool emit_fit = false;
  std::optional<std::size_t> emit_imputed;  // 1-based completed-dataset index
  bool emit_cdf = false;
  bool emit_metrics = true;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ConfigError on inconsistent settings.
void validate(const RunConfig& cfg);

/// Every setting that can influence an artifact (everything but `threads`).
nlohmann::json to_json(const RunConfig& cfg);

/// Executes the command, writing artifacts under `output_dir` and one summary
/// line per estimand to `out`. Errors are reported on `err` prefixed with the
/// stage that raised them. Returns the process exit status.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Parses argv (subcommand first) into a RunConfig; flags override values from
/// a flat `key = value` file given by --config. Returns nullopt after printing
/// help, or throws ConfigError on bad input.
std::optional<RunConfig> parse_command_line(int argc, const char* const* argv, std::ostream& out);

}  // namespace distimpute
