#include "distimpute/inference.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "distimpute/gaussian.hpp"
#include "distimpute/parallel.hpp"

namespace distimpute {

namespace {

constexpr double kZ975 = 1.96;
constexpr std::uint64_t kBootstrapStream = 0xB0075742ULL;

std::vector<double> draw_subject_weights(WeightScheme scheme, std::size_t n, Rng& rng) {
  std::vector<double> u(n, 1.0);
  if (scheme == WeightScheme::Unit) return u;
  for (auto& w : u) w = scheme == WeightScheme::Exp1 ? rng.exponential() : static_cast<double>(rng.poisson1());
  return u;
}

// Log-density of each draw of subject i under one fit's imputation law.
Eigen::VectorXd draw_log_densities(const LawBuilder& builder, const Subject& s, const SubjectDraws& d) {
  auto view = builder.view(s);
  if (view.first_missing != d.first_missing || view.mean.size() != d.draws.cols()) {
    throw InferenceError("importance weights: imputation law shape differs from stored draws for subject '" + s.id + "'");
  }
  Eigen::VectorXd out(d.draws.rows());
  for (Eigen::Index m = 0; m < d.draws.rows(); ++m) {
    out(m) = log_density_chol(view.mean, *view.chol, view.log_det, d.draws.row(m).transpose());
  }
  if (!out.allFinite()) throw InferenceError("importance weights: non-finite log-density for subject '" + s.id + "'");
  return out;
}

std::vector<Eigen::VectorXd> all_log_densities(const LawBuilder& builder, const ImputationSet& set,
                                               const TrialDataset& data) {
  std::vector<Eigen::VectorXd> out(data.n_subjects());
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    if (!set.subject(i).is_observed()) out[i] = draw_log_densities(builder, data.subject(i), set.subject(i));
  }
  return out;
}

double ess(const Eigen::VectorXd& w) { return 1.0 / w.squaredNorm(); }

}  // namespace

std::string_view to_string(WeightScheme scheme) {
  switch (scheme) {
    case WeightScheme::Exp1: return "exp1";
    case WeightScheme::Poisson1: return "poisson1";
    case WeightScheme::Unit: return "unit";
  }
  return "?";
}

WeightScheme parse_weight_scheme(std::string_view text) {
  if (text == "exp1") return WeightScheme::Exp1;
  if (text == "poisson1") return WeightScheme::Poisson1;
  if (text == "unit") return WeightScheme::Unit;
  throw std::invalid_argument("unknown weight scheme '" + std::string(text) + "' (expected exp1, poisson1)");
}

std::string_view to_string(InferenceMethod method) {
  switch (method) {
    case InferenceMethod::MIRubin: return "MI-Rubin";
    case InferenceMethod::DIWeightedBootstrap: return "DI-weighted-bootstrap";
    case InferenceMethod::Wald: return "Wald";
  }
  return "?";
}

InferenceOutput wald_summary(double tau_hat, double variance) {
  if (!(variance >= 0.0)) throw InferenceError("wald_summary: negative or undefined variance");
  InferenceOutput out;
  out.tau_hat = tau_hat;
  out.variance = variance;
  out.se = std::sqrt(variance);
  out.ci_low = tau_hat - kZ975 * out.se;
  out.ci_high = tau_hat + kZ975 * out.se;
  if (out.se > 0.0) {
    out.p_value = std::erfc(std::abs(tau_hat / out.se) / std::numbers::sqrt2);
  } else {
    out.p_value = tau_hat == 0.0 ? 1.0 : 0.0;
  }
  return out;
}

InferenceOutput rubin_combine(std::span<const double> estimates, std::span<const double> within_vars) {
  const std::size_t m = estimates.size();
  if (m < 2) throw InferenceError("rubin_combine: need at least two imputations");
  if (within_vars.size() != m) throw InferenceError("rubin_combine: estimates and variances differ in length");
  const double md = static_cast<double>(m);
  const double point = std::accumulate(estimates.begin(), estimates.end(), 0.0) / md;
  double between = 0.0;
  for (double e : estimates) between += (e - point) * (e - point);
  between /= md - 1.0;
  const double within = std::accumulate(within_vars.begin(), within_vars.end(), 0.0) / md;
  auto out = wald_summary(point, within + (1.0 + 1.0 / md) * between);
  out.method = InferenceMethod::MIRubin;
  out.between_variance = between;
  out.within_variance = within;
  return out;
}

Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& log_weights) {
  if (log_weights.size() == 0) return log_weights;
  if (!log_weights.allFinite()) throw InferenceError("importance weights: non-finite log-weight");
  const double mx = log_weights.maxCoeff();
  Eigen::VectorXd w = (log_weights.array() - mx).exp().matrix();
  return w / w.sum();
}

ImportanceWeights importance_reweight(const ImputationSet& set, const TrialDataset& data, const MmrmFit& fit_hat,
                                      const MmrmFit& fit_b) {
  if (set.n_subjects() != data.n_subjects()) throw InferenceError("importance weights: set does not match dataset");
  const LawBuilder hat(fit_hat, set.model());
  const LawBuilder rep(fit_b, set.model());
  ImportanceWeights w;
  w.per_subject.resize(data.n_subjects());
  const auto m = static_cast<Eigen::Index>(set.m());
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto& d = set.subject(i);
    if (d.is_observed()) {
      w.per_subject[i] = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
      continue;
    }
    const Eigen::VectorXd num = draw_log_densities(rep, data.subject(i), d);
    const Eigen::VectorXd den = draw_log_densities(hat, data.subject(i), d);
    w.per_subject[i] = normalize_log_weights(num - den);
  }
  return w;
}

std::vector<InferenceOutput> mi_inference(const ImputationSet& set, const TrialDataset& data, const EstimandSpec& spec,
                                          unsigned threads) {
  const std::size_t m = set.m();
  if (m < 2) throw InferenceError("MI inference needs M >= 2");
  std::vector<PointEstimate> est(m);
  std::vector<std::vector<double>> var(m);
  parallel_for(m, threads, [&](std::size_t k) {
    const Eigen::VectorXd y = completed_endpoint(set, data, k);
    est[k] = solve_complete(data, y, spec);
    var[k] = complete_data_variance(data, y, spec);
  });
  const std::size_t comps = est[0].tau.size();
  std::vector<InferenceOutput> out;
  for (std::size_t c = 0; c < comps; ++c) {
    std::vector<double> e(m), v(m);
    for (std::size_t k = 0; k < m; ++k) {
      e[k] = est[k].tau[c];
      v[k] = var[k][c];
    }
    out.push_back(rubin_combine(e, v));
  }
  return out;
}

std::vector<InferenceOutput> di_inference(const ImputationSet& set, const TrialDataset& data, const MmrmFit& fit_hat,
                                          const EstimandSpec& spec, const BootstrapConfig& cfg) {
  if (cfg.replicates < 2) throw InferenceError("weighted bootstrap needs B >= 2");
  if (set.theta_fingerprint() != fingerprint(fit_hat)) {
    throw InferenceError("weighted bootstrap: imputation set was not generated under the supplied fit");
  }
  const PooledEndpoints pooled = PooledEndpoints::from_imputation(set, data);
  const PointEstimate tau_hat = solve_pooled(data, pooled, {}, spec);
  const std::size_t comps = tau_hat.tau.size();

  const LawBuilder hat_builder(fit_hat, set.model());
  const auto log_hat = all_log_densities(hat_builder, set, data);

  struct Replicate {
    std::optional<std::vector<double>> tau;
    std::string error;
    double ess_sum = 0.0;
    double ess_min = std::numeric_limits<double>::infinity();
    std::size_t ess_count = 0;
  };
  std::vector<Replicate> reps(cfg.replicates);

  parallel_for(cfg.replicates, cfg.threads, [&](std::size_t b) {
    auto& rep = reps[b];
    Rng rng = Rng::substream(cfg.seed, kBootstrapStream, b);
    const auto u = draw_subject_weights(cfg.scheme, data.n_subjects(), rng);
    try {
      const MmrmFit fit_b = fit_mmrm(data, u);
      const LawBuilder builder(fit_b, set.model());
      PooledEndpoints pb = pooled;
      for (std::size_t i = 0; i < data.n_subjects(); ++i) {
        const auto& d = set.subject(i);
        if (d.is_observed()) continue;
        const Eigen::VectorXd w = normalize_log_weights(draw_log_densities(builder, data.subject(i), d) - log_hat[i]);
        pb.set_weights(i, std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
        const double e = ess(w);
        rep.ess_sum += e;
        rep.ess_min = std::min(rep.ess_min, e);
        ++rep.ess_count;
      }
      rep.tau = solve_pooled(data, pb, u, spec).tau;
    } catch (const FitError& e) {
      rep.error = e.what();
    } catch (const SingularCovarianceError& e) {
      rep.error = e.what();
    } catch (const EstimandError& e) {
      rep.error = e.what();
    }
  });

  BootstrapDiagnostics diag;
  diag.requested = cfg.replicates;
  std::vector<std::vector<double>> ok;
  double ess_sum = 0.0;
  std::size_t ess_count = 0;
  double ess_min = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < reps.size(); ++b) {
    if (!reps[b].tau) {
      diag.failed_replicates.push_back(b);
      diag.failure_messages.push_back(reps[b].error);
      continue;
    }
    ok.push_back(*reps[b].tau);
    diag.replicate_estimates.push_back((*reps[b].tau)[0]);
    ess_sum += reps[b].ess_sum;
    ess_count += reps[b].ess_count;
    ess_min = std::min(ess_min, reps[b].ess_min);
  }
  diag.used = ok.size();
  diag.mean_ess = ess_count ? ess_sum / static_cast<double>(ess_count) : static_cast<double>(set.m());
  diag.min_ess = ess_count ? ess_min : static_cast<double>(set.m());
  const double failed = static_cast<double>(diag.failed_replicates.size());
  if (failed > cfg.max_failure_fraction * static_cast<double>(cfg.replicates) || ok.size() < 2) {
    throw InferenceError("weighted bootstrap: " + std::to_string(diag.failed_replicates.size()) + " of " +
                         std::to_string(cfg.replicates) + " replicate refits failed (first: " +
                         (diag.failure_messages.empty() ? std::string("n/a") : diag.failure_messages.front()) + ")");
  }

  std::vector<InferenceOutput> out;
  for (std::size_t c = 0; c < comps; ++c) {
    double ss = 0.0;
    for (const auto& r : ok) ss += (r[c] - tau_hat.tau[c]) * (r[c] - tau_hat.tau[c]);
    auto o = wald_summary(tau_hat.tau[c], ss / static_cast<double>(ok.size() - 1));
    o.method = InferenceMethod::DIWeightedBootstrap;
    if (c == 0) {
      o.bootstrap = diag;
    } else {
      o.bootstrap.requested = diag.requested;
      o.bootstrap.used = diag.used;
    }
    out.push_back(std::move(o));
  }
  return out;
}

InferenceOutput weighted_bootstrap(const ImputationSet& set, const TrialDataset& data, const MmrmFit& fit_hat,
                                   const EstimandSpec& spec, const BootstrapConfig& cfg) {
  if (is_curve(spec)) throw InferenceError("weighted_bootstrap: use di_inference for curve estimands");
  return di_inference(set, data, fit_hat, spec, cfg).front();
}

nlohmann::json to_json(const InferenceOutput& out, bool include_replicates) {
  nlohmann::json j{{"method", std::string(to_string(out.method))},
                   {"tau_hat", out.tau_hat},
                   {"variance", out.variance},
                   {"se", out.se},
                   {"ci", {out.ci_low, out.ci_high}},
                   {"p_value", out.p_value}};
  if (out.method == InferenceMethod::MIRubin) {
    j["between_variance"] = out.between_variance;
    j["within_variance"] = out.within_variance;
  }
  if (out.method == InferenceMethod::DIWeightedBootstrap) {
    nlohmann::json d{{"replicates_requested", out.bootstrap.requested},
                     {"replicates_used", out.bootstrap.used},
                     {"failed_replicates", out.bootstrap.failed_replicates},
                     {"failure_messages", out.bootstrap.failure_messages},
                     {"mean_effective_sample_size", out.bootstrap.mean_ess},
                     {"min_effective_sample_size", out.bootstrap.min_ess}};
    if (include_replicates) d["replicate_estimates"] = out.bootstrap.replicate_estimates;
    j["diagnostics"] = std::move(d);
  }
  return j;
}

}  // namespace distimpute
