#include "distimpute/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "distimpute/gaussian.hpp"
#include "distimpute/imputation.hpp"
#include "distimpute/parallel.hpp"

namespace distimpute {
namespace {

constexpr std::uint64_t kTrialStream = 0x7121A1;
constexpr std::uint64_t kRepStream = 0x5EB5;
constexpr std::uint64_t kTruthStream = 0x7247;

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> values) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct PresetTruth {
  const char* model;
  const char* estimand;
  double value;
};

// Published true values by (sensitivity model, estimand).
constexpr PresetTruth kPresetTruths[] = {
    {"j2r", "ate", 1.5400},     {"j2r", "risk", 0.2197},     {"j2r", "qte", 1.5570},
    {"rtb", "ate", 1.5896},     {"rtb", "risk", 0.2192},     {"rtb", "qte", 1.8120},
    {"washout", "ate", 0.7858}, {"washout", "risk", 0.1478}, {"washout", "qte", 1.1313},
};

// Final-visit law of one subject under the truth: a point mass at the observed
// value (sd = 0) or a normal from the imputation law.
struct EndpointLaw {
  double mean;
  double sd;
};

double mixture_cdf(const std::vector<EndpointLaw>& laws, double t) {
  double total = 0.0;
  for (const auto& l : laws) {
    if (l.sd == 0.0) {
      total += l.mean <= t ? 1.0 : 0.0;
    } else {
      total += normal_cdf((t - l.mean) / l.sd);
    }
  }
  return total / static_cast<double>(laws.size());
}

struct ArmQuantile {
  double value;
  double se;
};

// Root of the arm mixture CDF at q by bisection, with the delta-method MC
// standard error sd(F_i(t)) / (sqrt(n) f(t)).
ArmQuantile mixture_quantile(const std::vector<EndpointLaw>& laws, double q) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& l : laws) {
    lo = std::min(lo, l.mean - 10.0 * l.sd);
    hi = std::max(hi, l.mean + 10.0 * l.sd);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-9 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (mixture_cdf(laws, mid) >= q ? hi : lo) = mid;
  }
  const double t = hi;
  const double n = static_cast<double>(laws.size());
  double s = 0.0;
  double s2 = 0.0;
  for (const auto& l : laws) {
    const double f = l.sd == 0.0 ? (l.mean <= t ? 1.0 : 0.0) : normal_cdf((t - l.mean) / l.sd);
    s += f;
    s2 += f * f;
  }
  const double var_f = std::max(0.0, s2 / n - (s / n) * (s / n));
  const double h = 0.02;
  const double density = (mixture_cdf(laws, t + h) - mixture_cdf(laws, t - h)) / (2.0 * h);
  return {t, density > 0.0 ? std::sqrt(var_f / n) / density : 0.0};
}

}  // namespace

void SimScenario::validate() const {
  const Eigen::Index t = beta[0].rows();
  const Eigen::Index q = beta[0].cols();
  if (t < 1 || q < 1) throw std::invalid_argument("scenario: empty coefficient matrix");
  for (int j = 0; j < 2; ++j) {
    if (beta[j].rows() != t || beta[j].cols() != q) throw std::invalid_argument("scenario: beta shapes differ by arm");
    if (sigma[j].rows() != t || sigma[j].cols() != t) throw std::invalid_argument("scenario: sigma must be T x T");
    GaussianLaw(Eigen::VectorXd::Zero(t), sigma[j]);  // throws unless symmetric positive definite
  }
  if (n_per_group < 2) throw std::invalid_argument("scenario: need at least two subjects per group");
  if (m < 2) throw std::invalid_argument("scenario: M must be at least 2");
  if (bootstrap_replicates < 2) throw std::invalid_argument("scenario: B must be at least 2");
  if (is_curve(spec)) throw std::invalid_argument("scenario: curve estimands have no scalar truth");
  distimpute::validate(spec);
}

SimScenario paper_design() {
  SimScenario scn;
  scn.name = "paper";
  scn.beta[0] = rows({{0.50, 1.00, -3.00, 2.00},
                      {0.73, 0.80, -1.46, 0.16},
                      {1.55, -0.07, 1.31, -0.09},
                      {2.19, -0.08, -1.35, 0.95},
                      {4.29, 0.62, -1.76, 1.30}});
  scn.beta[1] = rows({{0.50, 1.00, -3.00, 2.00},
                      {2.16, 1.08, -2.24, 1.23},
                      {7.31, 0.39, -3.29, 0.88},
                      {6.45, 1.05, -0.22, 0.18},
                      {5.82, 0.09, 0.83, -0.47}});
  scn.sigma[0] = rows({{4.00, 2.66, -0.63, 1.58, 1.93},
                       {2.66, 5.01, 0.34, 1.10, 1.81},
                       {-0.63, 0.34, 4.27, 0.98, 0.42},
                       {1.58, 1.10, 0.98, 5.41, 3.09},
                       {1.93, 1.81, 0.42, 3.09, 6.99}});
  scn.sigma[1] = rows({{4.00, 2.91, 2.28, 0.12, 0.21},
                       {2.91, 5.36, 4.74, 1.99, 0.73},
                       {2.28, 4.74, 8.23, 2.63, -0.22},
                       {0.12, 1.99, 2.63, 5.67, 0.37},
                       {0.21, 0.73, -0.22, 0.37, 5.16}});
  scn.dropout_intercept = {-3.2, -4.0};
  scn.dropout_slope = {0.2, 0.2};
  return scn;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresetTruths) names.push_back(std::string(p.model) + "-" + p.estimand);
  return names;
}

SimScenario paper_preset(std::string_view name) {
  for (const auto& p : kPresetTruths) {
    if (name != std::string(p.model) + "-" + p.estimand) continue;
    SimScenario scn = paper_design();
    scn.name = std::string(name);
    scn.model = parse_model(p.model);
    const std::string_view est = p.estimand;
    if (est == "ate") {
      scn.spec = AteAncova{};
    } else if (est == "risk") {
      scn.spec = RiskDiff{4.5};
    } else {
      scn.spec = Qte{0.5};
    }
    scn.true_tau = p.value;
    scn.truth_source = "published";
    return scn;
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

SimScenario random_sequential_design(std::uint64_t seed) {
  constexpr std::size_t kVisits = 5;
  constexpr std::size_t kCovariates = 3;
  const double mu[2][kVisits - 1] = {{1.0, 1.5, 2.0, 3.0}, {1.5, 3.0, 4.5, 6.0}};
  const double eta[kVisits - 1] = {0.5, 1.0, 1.0, 1.0};
  const double sd[kVisits] = {2.0, 1.8, 2.0, 2.1, 2.2};
  const double baseline[kCovariates + 1] = {0.5, 1.0, -3.0, 2.0};

  SimScenario scn = paper_design();
  scn.name = "random-sequential";
  Rng rng = Rng::substream(seed, 0xA1FA);
  for (int j = 0; j < 2; ++j) {
    std::vector<VisitRegression> seq(kVisits);
    seq[0].coef = Eigen::Map<const Eigen::VectorXd>(baseline, kCovariates + 1);
    seq[0].residual_variance = sd[0] * sd[0];
    for (std::size_t k = 1; k < kVisits; ++k) {
      Eigen::VectorXd coef(static_cast<Eigen::Index>(kCovariates + 1 + k));
      coef[0] = mu[j][k - 1] + eta[k - 1] * rng.normal();
      for (Eigen::Index l = 1; l < coef.size() - 1; ++l) coef[l] = std::sqrt(0.5) * rng.normal();
      coef[coef.size() - 1] = rng.uniform();
      seq[k].coef = coef;
      seq[k].residual_variance = sd[k] * sd[k];
    }
    const GroupFit g = moments_from_sequential(std::move(seq), kCovariates);
    scn.beta[j] = g.beta;
    scn.sigma[j] = 0.5 * (g.sigma + g.sigma.transpose());
  }
  scn.true_tau.reset();
  scn.truth_source = "unset";
  return scn;
}

MmrmFit scenario_parameters(const SimScenario& scn) {
  MmrmFit fit;
  for (int j = 0; j < 2; ++j) {
    fit.groups[j].beta = scn.beta[j];
    fit.groups[j].sigma = scn.sigma[j];
    fit.groups[j].seq = sequential_from_moments(scn.beta[j], scn.sigma[j]);
  }
  return fit;
}

SimulatedTrial simulate_trial_latent(const SimScenario& scn, std::uint64_t rep_seed) {
  scn.validate();
  const auto t = static_cast<Eigen::Index>(scn.n_visits());
  const auto p = static_cast<Eigen::Index>(scn.n_covariates());
  const std::size_t n = 2 * scn.n_per_group;
  std::array<Eigen::MatrixXd, 2> chol;
  for (int j = 0; j < 2; ++j) chol[j] = Eigen::LLT<Eigen::MatrixXd>(scn.sigma[j]).matrixL();

  Rng rng = Rng::substream(rep_seed, kTrialStream);
  std::vector<Subject> subjects;
  subjects.reserve(n);
  Eigen::MatrixXd latent(static_cast<Eigen::Index>(n), t);
  Eigen::VectorXd z(t);
  for (std::size_t i = 0; i < n; ++i) {
    const int j = i < scn.n_per_group ? 0 : 1;
    Subject s;
    s.id = std::to_string(i + 1);
    s.group = j == 0 ? Group::Control : Group::Treatment;
    s.covariates.resize(p);
    for (Eigen::Index c = 0; c < p; ++c) s.covariates[c] = rng.normal();
    for (Eigen::Index k = 0; k < t; ++k) z[k] = rng.normal();
    const Eigen::VectorXd y = scn.beta[j] * s.design() + chol[j] * z;
    latent.row(static_cast<Eigen::Index>(i)) = y.transpose();

    s.outcomes = Eigen::VectorXd::Constant(t, std::numeric_limits<double>::quiet_NaN());
    s.observed.assign(static_cast<std::size_t>(t), false);
    s.outcomes[0] = y[0];
    s.observed[0] = true;
    for (Eigen::Index k = 1; k < t; ++k) {
      const double p_drop = expit(scn.dropout_intercept[j] + scn.dropout_slope[j] * y[k - 1]);
      if (rng.bernoulli(p_drop)) break;
      s.outcomes[k] = y[k];
      s.observed[static_cast<std::size_t>(k)] = true;
    }
    subjects.push_back(std::move(s));
  }
  return {TrialDataset::create(std::move(subjects), scn.n_visits(), scn.n_covariates()), std::move(latent)};
}

TrialDataset simulate_trial(const SimScenario& scn, std::uint64_t rep_seed) {
  return simulate_trial_latent(scn, rep_seed).data;
}

TruthEstimate brute_force_truth(const SimScenario& scn, std::size_t n_subjects, std::uint64_t seed) {
  scn.validate();
  constexpr std::size_t kChunkPerGroup = 50000;
  const std::size_t per_group = std::max<std::size_t>(1, n_subjects / 2);
  const std::size_t n_chunks = (per_group + kChunkPerGroup - 1) / kChunkPerGroup;
  const MmrmFit truth = scenario_parameters(scn);
  const LawBuilder builder(truth, scn.model);
  const auto last = static_cast<Eigen::Index>(scn.n_visits() - 1);

  std::array<std::vector<EndpointLaw>, 2> laws;
  for (auto& l : laws) l.reserve(n_chunks * kChunkPerGroup);
  SimScenario chunk = scn;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    chunk.n_per_group = std::min(kChunkPerGroup, per_group - c * kChunkPerGroup);
    if (chunk.n_per_group < 2) break;
    const TrialDataset data = simulate_trial(chunk, Rng::substream(seed, kTruthStream, c).next_u64());
    for (const Subject& s : data.subjects()) {
      auto& out = laws[group_index(s.group)];
      if (s.is_complete()) {
        out.push_back({s.outcomes[last], 0.0});
        continue;
      }
      const LawBuilder::View v = builder.view(s);
      const Eigen::Index row = v.chol->rows() - 1;
      out.push_back({v.mean[v.mean.size() - 1], v.chol->row(row).norm()});
    }
  }

  // Per-subject contribution h_i; the arm value is mean(h_i) with MC se sd(h)/sqrt(n).
  const auto arm_mean = [](const std::vector<EndpointLaw>& arm, auto&& h) {
    double s = 0.0;
    double s2 = 0.0;
    for (const auto& l : arm) {
      const double v = h(l);
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(arm.size());
    return ArmQuantile{s / n, std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)) / n)};
  };

  std::array<ArmQuantile, 2> arm{};
  std::visit(
      [&](const auto& spec) {
        using S = std::decay_t<decltype(spec)>;
        for (int j = 0; j < 2; ++j) {
          if constexpr (std::is_same_v<S, AteSimple> || std::is_same_v<S, AteAncova>) {
            arm[j] = arm_mean(laws[j], [](const EndpointLaw& l) { return l.mean; });
          } else if constexpr (std::is_same_v<S, RiskDiff>) {
            const double c = spec.threshold;
            arm[j] = arm_mean(laws[j], [c](const EndpointLaw& l) {
              if (l.sd == 0.0) return l.mean >= c ? 1.0 : 0.0;
              return 1.0 - normal_cdf((c - l.mean) / l.sd);
            });
          } else if constexpr (std::is_same_v<S, Qte>) {
            arm[j] = mixture_quantile(laws[j], spec.q);
          } else {
            throw std::invalid_argument("brute-force truth: curve estimands are not scalar");
          }
        }
      },
      scn.spec);
  return {arm[1].value - arm[0].value, std::hypot(arm[0].se, arm[1].se)};
}

double true_tau(const SimScenario& scn) {
  if (scn.true_tau) return *scn.true_tau;
  return brute_force_truth(scn, 10'000'000, scn.seed).value;
}

MetricsRow summarize_replications(std::string method, const std::vector<double>& estimates,
                                  const std::vector<double>& variances, double truth) {
  if (estimates.size() != variances.size() || estimates.size() < 2) {
    throw std::invalid_argument("summarize_replications: need at least two paired estimates");
  }
  const double n = static_cast<double>(estimates.size());
  MetricsRow row;
  row.method = std::move(method);
  row.point_mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / n;
  double ss = 0.0;
  for (double e : estimates) ss += (e - row.point_mean) * (e - row.point_mean);
  row.mc_variance = ss / (n - 1.0);
  row.mean_variance_estimate = std::accumulate(variances.begin(), variances.end(), 0.0) / n;
  row.relative_bias = (row.mean_variance_estimate - row.mc_variance) / row.mc_variance;
  std::size_t covered = 0;
  double length = 0.0;
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    const InferenceOutput w = wald_summary(estimates[r], variances[r]);
    if (w.ci_low <= truth && truth <= w.ci_high) ++covered;
    length += w.ci_high - w.ci_low;
  }
  row.coverage = static_cast<double>(covered) / n;
  row.mean_ci_length = length / n;
  return row;
}

MonteCarloResult run_monte_carlo(const SimScenario& scn, unsigned threads) {
  scn.validate();
  MonteCarloResult result;
  result.truth = true_tau(scn);
  result.replications.resize(scn.n_reps);

  parallel_for(scn.n_reps, threads, [&](std::size_t r) {
    ReplicationResult& rep = result.replications[r];
    rep.index = r;
    const std::uint64_t rep_seed = Rng::substream(scn.seed, kRepStream, r).next_u64();
    try {
      const TrialDataset data = simulate_trial(scn, rep_seed);
      const MmrmFit fit = fit_mmrm(data);
      const ImputationSet set = impute(fit, data, scn.model, scn.m, splitmix64(rep_seed ^ 1));
      rep.mi = mi_inference(set, data, scn.spec).front();
      BootstrapConfig cfg;
      cfg.replicates = scn.bootstrap_replicates;
      cfg.scheme = scn.scheme;
      cfg.seed = splitmix64(rep_seed ^ 2);
      rep.di = di_inference(set, data, fit, scn.spec, cfg).front();
      rep.ok = true;
    } catch (const std::exception& e) {
      rep.error = e.what();
    }
  });

  std::vector<double> mi_est, mi_var, di_est, di_var;
  for (const auto& rep : result.replications) {
    if (!rep.ok) {
      ++result.failures;
      continue;
    }
    mi_est.push_back(rep.mi.tau_hat);
    mi_var.push_back(rep.mi.variance);
    di_est.push_back(rep.di.tau_hat);
    di_var.push_back(rep.di.variance);
  }
  if (static_cast<double>(result.failures) > 0.02 * static_cast<double>(scn.n_reps)) {
    std::string first;
    for (const auto& rep : result.replications) {
      if (!rep.ok) {
        first = "replication " + std::to_string(rep.index) + ": " + rep.error;
        break;
      }
    }
    throw std::runtime_error("monte carlo aborted: " + std::to_string(result.failures) + " of " +
                             std::to_string(scn.n_reps) + " replications failed (first: " + first + ")");
  }
  result.mi = summarize_replications("MI", mi_est, mi_var, result.truth);
  result.di = summarize_replications("DI", di_est, di_var, result.truth);
  return result;
}

std::string format_metrics_csv(const SimScenario& scn, const MonteCarloResult& result) {
  std::ostringstream out;
  out << "# scenario=" << scn.name << " model=" << to_string(scn.model) << " estimand=" << to_string(scn.spec)
      << " N=" << scn.n_per_group << " M=" << scn.m << " B=" << scn.bootstrap_replicates
      << " reps=" << scn.n_reps << " seed=" << scn.seed << " failures=" << result.failures << "\n";
  out << "# true_tau=" << result.truth << " (" << scn.truth_source << ")\n";
  out << "method,N,M,point_est,true_var,var_est,relative_bias_pct,coverage_pct,mean_ci_length\n";
  char buf[256];
  for (const MetricsRow* row : {&result.mi, &result.di}) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.6f,%.6e,%.6e,%.2f,%.2f,%.6f\n", row->method.c_str(),
                  scn.n_per_group, scn.m, row->point_mean, row->mc_variance, row->mean_variance_estimate,
                  100.0 * row->relative_bias, 100.0 * row->coverage, row->mean_ci_length);
    out << buf;
  }
  return out.str();
}

}  // namespace distimpute
