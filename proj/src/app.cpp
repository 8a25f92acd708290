#include "distimpute/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "distimpute/dataset.hpp"
#include "distimpute/estimands.hpp"
#include "distimpute/gaussian.hpp"
#include "distimpute/imputation.hpp"
#include "distimpute/mmrm.hpp"
#include "distimpute/simulation.hpp"

namespace distimpute {
namespace {

constexpr std::size_t kDefaultCdfPoints = 101;

// Stream salts so imputation and bootstrap never share random numbers.
constexpr std::uint64_t kImputeSalt = 0x1A9;
constexpr std::uint64_t kBootstrapSalt = 0xB57;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("error writing " + path.string());
}

std::string config_comment(const RunConfig& cfg) { return "# config=" + to_json(cfg).dump() + "\n"; }

TrialDataset load_input(const RunConfig& cfg) {
  if (!cfg.long_format) return load_dataset(cfg.input);
  std::ifstream f(cfg.input, std::ios::binary);
  if (!f) throw DataError("cannot open " + cfg.input.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_dataset(long_to_wide_csv(buf.str(), cfg.visits));
}

// `cdf` without an explicit grid spans the observed final-visit range.
EstimandSpec resolve_estimand(const std::string& text, const TrialDataset& data) {
  if (text != "cdf") return parse_estimand(text);
  const auto last = static_cast<Eigen::Index>(data.n_visits() - 1);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const Subject& s : data.subjects()) {
    if (!s.is_complete()) continue;
    lo = std::min(lo, s.outcomes[last]);
    hi = std::max(hi, s.outcomes[last]);
  }
  if (!(lo < hi)) throw EstimandError("cdf: need at least two distinct observed final-visit values to span a grid");
  CdfCurve curve;
  for (std::size_t i = 0; i < kDefaultCdfPoints; ++i) {
    curve.grid.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kDefaultCdfPoints - 1));
  }
  return curve;
}

std::string format_cdf(const RunConfig& cfg, const std::vector<double>& grid, const std::vector<double>& cdf) {
  std::string text = config_comment(cfg) + "y,cdf\n";
  char buf[64];
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", grid[i], cdf[i]);
    text += buf;
  }
  return text;
}

std::string summary_line(const std::string& estimand, const std::string& method, const InferenceOutput& o,
                         std::size_t component, std::size_t n_components) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "estimand=%s%s method=%s tau_hat=%.6g se=%.6g ci=[%.6g, %.6g] p=%.4g",
                estimand.c_str(),
                n_components > 1 ? ("[" + std::to_string(component) + "]").c_str() : "", method.c_str(),
                o.tau_hat, o.se, o.ci_low, o.ci_high, o.p_value);
  return buf;
}

MmrmFit fit_stage(const TrialDataset& data) { return fit_mmrm(data); }

int run_fit(const RunConfig& cfg, std::ostream& out) {
  const TrialDataset data = load_input(cfg);
  const MmrmFit fit = fit_stage(data);
  nlohmann::json doc{{"config", to_json(cfg)}, {"fit", to_json(fit)}};
  write_text(cfg.output_dir / "fit.json", doc.dump(2) + "\n");
  char buf[128];
  std::snprintf(buf, sizeof buf, "fit: n=%zu T=%zu p=%zu loglik=%.10g", data.n_subjects(), data.n_visits(),
                data.n_covariates(), fit.loglik);
  out << buf << "\n";
  return 0;
}

int run_impute(const RunConfig& cfg, std::ostream& out) {
  const TrialDataset data = load_input(cfg);
  const MmrmFit fit = fit_stage(data);
  const ImputationSet set = impute(fit, data, cfg.model, cfg.m, splitmix64(cfg.seed ^ kImputeSalt), cfg.threads);
  const std::size_t m = cfg.emit_imputed.value_or(1);
  const auto path = cfg.output_dir / ("imputed_" + std::to_string(m) + ".csv");
  write_text(path, config_comment(cfg) + format_completed(set, data, m - 1));
  if (cfg.emit_fit) {
    write_text(cfg.output_dir / "fit.json", nlohmann::json{{"config", to_json(cfg)}, {"fit", to_json(fit)}}.dump(2) + "\n");
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "impute: model=%s M=%zu fingerprint=%016llx wrote %s",
                std::string(to_string(cfg.model)).c_str(), cfg.m,
                static_cast<unsigned long long>(set.fingerprint()), path.filename().string().c_str());
  out << buf << "\n";
  return 0;
}

int run_analyze(const RunConfig& cfg, std::ostream& out) {
  const TrialDataset data = load_input(cfg);
  const MmrmFit fit = fit_stage(data);
  const ImputationSet set = impute(fit, data, cfg.model, cfg.m, splitmix64(cfg.seed ^ kImputeSalt), cfg.threads);

  nlohmann::json results = nlohmann::json::array();
  for (const std::string& text : cfg.estimands) {
    const EstimandSpec spec = resolve_estimand(text, data);
    std::vector<InferenceOutput> outputs;
    if (cfg.method == "mi") {
      outputs = mi_inference(set, data, spec, cfg.threads);
    } else {
      BootstrapConfig bc;
      bc.replicates = cfg.b;
      bc.scheme = cfg.weights;
      bc.seed = splitmix64(cfg.seed ^ kBootstrapSalt);
      bc.threads = cfg.threads;
      outputs = di_inference(set, data, fit, spec, bc);
    }
    nlohmann::json entry{{"estimand", to_string(spec)}};
    if (outputs.size() == 1) {
      entry["result"] = to_json(outputs.front());
    } else {
      entry["result"] = nlohmann::json::array();
      for (const auto& o : outputs) entry["result"].push_back(to_json(o, false));
    }
    results.push_back(std::move(entry));
    for (std::size_t c = 0; c < outputs.size(); ++c) {
      out << summary_line(to_string(spec), cfg.method, outputs[c], c, outputs.size()) << "\n";
    }

    if (cfg.emit_cdf && is_curve(spec)) {
      const PointEstimate pe = solve_di(set, data, spec);
      const auto& grid = std::get<CdfCurve>(spec).grid;
      write_text(cfg.output_dir / "cdf_control.csv", format_cdf(cfg, grid, pe.tau1));
      write_text(cfg.output_dir / "cdf_treatment.csv", format_cdf(cfg, grid, pe.tau2));
    }
  }
  nlohmann::json doc{{"config", to_json(cfg)},
                     {"data", {{"n_subjects", data.n_subjects()}, {"n_visits", data.n_visits()},
                               {"n_covariates", data.n_covariates()}}},
                     {"imputation_fingerprint", set.fingerprint()},
                     {"results", std::move(results)}};
  write_text(cfg.output_dir / "analysis.json", doc.dump(2) + "\n");
  if (cfg.emit_fit) {
    write_text(cfg.output_dir / "fit.json", nlohmann::json{{"config", to_json(cfg)}, {"fit", to_json(fit)}}.dump(2) + "\n");
  }
  return 0;
}

int run_simulate(const RunConfig& cfg, std::ostream& out) {
  SimScenario scn = paper_preset(cfg.preset);
  scn.n_per_group = cfg.n_per_group;
  scn.m = cfg.m;
  scn.bootstrap_replicates = cfg.b;
  scn.scheme = cfg.weights;
  scn.n_reps = cfg.reps;
  scn.seed = cfg.seed;
  const MonteCarloResult result = run_monte_carlo(scn, cfg.threads);
  const std::string csv = config_comment(cfg) + format_metrics_csv(scn, result);
  if (cfg.emit_metrics) write_text(cfg.output_dir / "metrics.csv", csv);
  for (const MetricsRow* row : {&result.mi, &result.di}) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "simulate: preset=%s method=%s point=%.4f true_var=%.3e var_est=%.3e rel_bias=%.2f%% "
                  "coverage=%.1f%%",
                  cfg.preset.c_str(), row->method.c_str(), row->point_mean, row->mc_variance,
                  row->mean_variance_estimate, 100.0 * row->relative_bias, 100.0 * row->coverage);
    out << buf << "\n";
  }
  return 0;
}

std::string subject_context(const DataError& e) {
  std::string ctx;
  if (e.subject()) ctx += " [subject " + std::to_string(*e.subject() + 1);
  if (e.visit()) ctx += (ctx.empty() ? " [" : ", ") + std::string("visit ") + std::to_string(*e.visit() + 1);
  if (!ctx.empty()) ctx += "]";
  return ctx;
}

const char* kModelHelp =
    "Sensitivity models for dropouts (missing visits are always the tail after the last observed visit):\n"
    "  mar      missing visits follow the subject's own-arm conditional law given its observed history\n"
    "  j2r      jump to reference: both arms take the control-arm mean profile after dropout and the\n"
    "           control-arm covariance; control subjects coincide with mar\n"
    "  rtb      return to baseline: the final visit is drawn from the subject's own-arm baseline\n"
    "           marginal law, independent of its post-baseline outcomes\n"
    "  washout  mar for control dropouts, rtb for treatment dropouts\n"
    "Estimands: ate, ate-ancova, risk:<c>, qte:<q>, cdf, cdf:<lo>:<hi>:<n>\n";

}  // namespace

std::string_view to_string(Command command) {
  switch (command) {
    case Command::Fit: return "fit";
    case Command::Impute: return "impute";
    case Command::Analyze: return "analyze";
    case Command::Simulate: return "simulate";
  }
  return "?";
}

void validate(const RunConfig& cfg) {
  if (cfg.command == Command::Simulate) {
    if (!cfg.input.empty()) throw ConfigError("simulate takes --preset, not an input file");
    if (cfg.preset.empty()) throw ConfigError("simulate requires --preset");
    paper_preset(cfg.preset);  // rejects unknown names
    if (cfg.reps < 2) throw ConfigError("--reps must be at least 2");
    if (cfg.n_per_group < 10) throw ConfigError("--N must be at least 10");
  } else {
    if (cfg.input.empty()) throw ConfigError(std::string(to_string(cfg.command)) + " requires --input");
    if (!cfg.preset.empty()) throw ConfigError("--preset only applies to simulate");
    if (cfg.long_format && cfg.visits == 0) throw ConfigError("--long-format requires --visits");
  }
  if (cfg.m < 2) throw ConfigError("--M must be at least 2");
  if (cfg.b < 2) throw ConfigError("--B must be at least 2");
  if (cfg.method != "mi" && cfg.method != "di") throw ConfigError("--method must be mi or di");
  if (cfg.estimands.empty()) throw ConfigError("at least one --estimand is required");
  for (const auto& e : cfg.estimands) {
    if (e != "cdf") validate(parse_estimand(e));
  }
  if (cfg.emit_imputed && (*cfg.emit_imputed < 1 || *cfg.emit_imputed > cfg.m)) {
    throw ConfigError("--emit must be in 1..M");
  }
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j{{"command", to_string(cfg.command)},
                   {"model", to_string(cfg.model)},
                   {"estimands", cfg.estimands},
                   {"method", cfg.method},
                   {"M", cfg.m},
                   {"B", cfg.b},
                   {"weights", to_string(cfg.weights)},
                   {"seed", cfg.seed}};
  if (cfg.command == Command::Simulate) {
    j["preset"] = cfg.preset;
    j["N"] = cfg.n_per_group;
    j["reps"] = cfg.reps;
  } else {
    j["input"] = cfg.input.filename().string();
    j["long_format"] = cfg.long_format;
    if (cfg.long_format) j["visits"] = cfg.visits;
  }
  if (cfg.emit_imputed) j["emit"] = *cfg.emit_imputed;
  return j;
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    validate(cfg);
    std::filesystem::create_directories(cfg.output_dir);
    switch (cfg.command) {
      case Command::Fit: return run_fit(cfg, out);
      case Command::Impute: return run_impute(cfg, out);
      case Command::Analyze: return run_analyze(cfg, out);
      case Command::Simulate: return run_simulate(cfg, out);
    }
  } catch (const ConfigError& e) {
    err << "config: " << e.what() << "\n";
  } catch (const DataError& e) {
    err << "data: " << e.what() << subject_context(e) << "\n";
  } catch (const FitError& e) {
    err << "mmrm_fit: " << e.what() << "\n";
  } catch (const SingularCovarianceError& e) {
    err << "gaussian: " << e.what() << "\n";
  } catch (const ModelError& e) {
    err << "sensitivity: " << e.what() << "\n";
  } catch (const EstimandError& e) {
    err << "estimands: " << e.what() << "\n";
  } catch (const InferenceError& e) {
    err << "inference: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << to_string(cfg.command) << ": " << e.what() << "\n";
  }
  return 1;
}

std::optional<RunConfig> parse_command_line(int argc, const char* const* argv, std::ostream& out) {
  RunConfig cfg;
  CLI::App app{"Distributional and multiple imputation for longitudinal trials with dropout", "distimpute"};
  app.footer(kModelHelp);
  app.set_config("--config", "", "Flat `key = value` settings file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  std::string input, model = "j2r", weights = "exp1", output = ".";
  std::size_t emit = 0;
  app.add_option("--input", input, "Wide CSV (x1..xp, group, y1..yT; NA marks missing)");
  app.add_flag("--long-format", cfg.long_format, "Input is long (id, visit, y, covariates, group)");
  app.add_option("--visits", cfg.visits, "Number of visits T for long-format input");
  app.add_option("--preset", cfg.preset, "Simulation preset: <j2r|rtb|washout>-<ate|risk|qte>");
  app.add_option("--model", model, "Sensitivity model: mar, j2r, rtb, washout")->capture_default_str();
  app.add_option("--estimand", cfg.estimands, "Estimand(s); repeat for several")->capture_default_str();
  app.add_option("--method", cfg.method, "Inference: mi (Rubin) or di (weighted bootstrap)")->capture_default_str();
  app.add_option("--M", cfg.m, "Imputations per incomplete subject")->capture_default_str();
  app.add_option("--B", cfg.b, "Bootstrap replicates")->capture_default_str();
  app.add_option("--weights", weights, "Bootstrap weight law: exp1 or poisson1")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--threads", cfg.threads, "Worker threads (results do not depend on it)")->capture_default_str();
  app.add_option("--N", cfg.n_per_group, "Subjects per arm (simulate)")->capture_default_str();
  app.add_option("--reps", cfg.reps, "Monte Carlo replications (simulate)")->capture_default_str();
  app.add_option("--out", output, "Output directory")->capture_default_str();
  app.add_flag("--emit-fit", cfg.emit_fit, "Also write fit.json");
  app.add_option("--emit", emit, "impute: write the m-th completed dataset (1-based)");
  app.add_flag("--emit-cdf", cfg.emit_cdf, "analyze: write per-arm CDF CSVs for curve estimands");

  auto* fit = app.add_subcommand("fit", "Fit the group-specific MMRM and write fit.json");
  auto* imp = app.add_subcommand("impute", "Fit, impute M draws and write one completed dataset");
  auto* ana = app.add_subcommand("analyze", "Fit, impute and estimate with MI or DI inference");
  auto* sim = app.add_subcommand("simulate", "Monte Carlo study of MI versus DI on a preset scenario");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, out);
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  if (fit->parsed()) cfg.command = Command::Fit;
  if (imp->parsed()) cfg.command = Command::Impute;
  if (ana->parsed()) cfg.command = Command::Analyze;
  if (sim->parsed()) cfg.command = Command::Simulate;
  cfg.input = input;
  cfg.output_dir = output;
  try {
    cfg.model = parse_model(model);
    cfg.weights = parse_weight_scheme(weights);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (emit > 0) cfg.emit_imputed = emit;
  return cfg;
}

}  // namespace distimpute
