#include "distimpute/estimands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace distimpute {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument("invalid " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_colon(std::string_view s) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(':', start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

double weight_of(std::span<const double> u, std::size_t i) { return u.empty() ? 1.0 : u[i]; }

struct ArmSample {
  std::vector<double> values;
  std::vector<double> weights;
  double total = 0.0;
};

std::array<ArmSample, 2> arm_samples(const TrialDataset& data, const PooledEndpoints& pooled,
                                     std::span<const double> u) {
  std::array<ArmSample, 2> arms;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const double ui = weight_of(u, i);
    if (ui == 0.0) continue;
    auto& arm = arms[static_cast<std::size_t>(group_index(data.subject(i).group))];
    auto v = pooled.values(i);
    auto w = pooled.weights(i);
    for (std::size_t m = 0; m < v.size(); ++m) {
      arm.values.push_back(v[m]);
      arm.weights.push_back(ui * w[m]);
    }
    arm.total += ui;
  }
  for (const auto& a : arms) {
    if (!(a.total > 0.0)) throw EstimandError("empty group: no subject with positive weight in an arm");
  }
  return arms;
}

struct AncovaSolution {
  Eigen::VectorXd gamma;
  Eigen::VectorXd xbar;  // weighted mean of x~ over all subjects
  Eigen::MatrixXd design;
  Eigen::VectorXd response;
};

AncovaSolution solve_ancova(const TrialDataset& data, const Eigen::VectorXd& response, std::span<const double> u) {
  const auto n = static_cast<Eigen::Index>(data.n_subjects());
  const auto px = static_cast<Eigen::Index>(data.n_covariates() + 1);
  AncovaSolution sol;
  sol.design = Eigen::MatrixXd::Zero(n, 2 * px);
  sol.response = response;
  sol.xbar = Eigen::VectorXd::Zero(px);
  Eigen::VectorXd sw(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data.subject(static_cast<std::size_t>(i));
    const Eigen::VectorXd x = s.design();
    sol.design.row(i).head(px) = x.transpose();
    if (s.group == Group::Treatment) sol.design.row(i).tail(px) = x.transpose();
    const double ui = weight_of(u, static_cast<std::size_t>(i));
    sw(i) = std::sqrt(ui);
    sol.xbar += ui * x;
    total += ui;
  }
  if (!(total > 0.0)) throw EstimandError("ANCOVA: all subject weights are zero");
  sol.xbar /= total;
  const Eigen::MatrixXd vw = sw.asDiagonal() * sol.design;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(vw);
  qr.setThreshold(1e-10);
  if (qr.rank() < 2 * px) throw EstimandError("ANCOVA: degenerate design (rank-deficient V^T V)");
  sol.gamma = qr.solve(Eigen::VectorXd(sw.asDiagonal() * response));
  return sol;
}

PointEstimate scalar_estimate(double t1, double t2) {
  PointEstimate pe;
  pe.tau1 = {t1};
  pe.tau2 = {t2};
  pe.tau = {t2 - t1};
  return pe;
}

std::vector<double> weighted_cdf(const ArmSample& arm, const std::vector<double>& grid) {
  std::vector<std::size_t> order(arm.values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return arm.values[a] < arm.values[b]; });
  std::vector<double> out(grid.size());
  std::size_t pos = 0;
  double cum = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    while (pos < order.size() && arm.values[order[pos]] <= grid[g]) cum += arm.weights[order[pos++]];
    out[g] = std::clamp(cum / arm.total, 0.0, 1.0);
  }
  return out;
}

double sample_sd(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0));
}

// Type-7 (linear interpolation) sample quantile of sorted data.
double interpolated_quantile(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::array<std::vector<double>, 2> split_by_arm(const TrialDataset& data, const Eigen::VectorXd& endpoint) {
  std::array<std::vector<double>, 2> arms;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    arms[static_cast<std::size_t>(group_index(data.subject(i).group))].push_back(endpoint(static_cast<Eigen::Index>(i)));
  }
  return arms;
}

}  // namespace

EstimandSpec parse_estimand(std::string_view text) {
  if (text == "ate") return AteSimple{};
  if (text == "ate-ancova") return AteAncova{};
  auto parts = split_colon(text);
  EstimandSpec spec;
  if (parts[0] == "risk" && parts.size() == 2) {
    spec = RiskDiff{parse_double(parts[1], "risk threshold")};
  } else if (parts[0] == "qte" && parts.size() == 2) {
    spec = Qte{parse_double(parts[1], "quantile level")};
  } else if (parts[0] == "cdf" && parts.size() == 4) {
    const double lo = parse_double(parts[1], "grid start");
    const double hi = parse_double(parts[2], "grid end");
    const double n = parse_double(parts[3], "grid size");
    if (n < 2 || n != std::floor(n)) throw std::invalid_argument("cdf grid size must be an integer >= 2");
    CdfCurve c;
    const auto count = static_cast<std::size_t>(n);
    for (std::size_t g = 0; g < count; ++g) c.grid.push_back(lo + (hi - lo) * static_cast<double>(g) / (n - 1.0));
    spec = std::move(c);
  } else {
    throw std::invalid_argument("unknown estimand '" + std::string(text) +
                                "' (expected ate, ate-ancova, risk:<c>, qte:<q>, cdf:<lo>:<hi>:<n>)");
  }
  validate(spec);
  return spec;
}

std::string to_string(const EstimandSpec& spec) {
  return std::visit(overloaded{
                        [](const AteSimple&) { return std::string("ate"); },
                        [](const AteAncova&) { return std::string("ate-ancova"); },
                        [](const RiskDiff& r) { return "risk:" + fmt(r.threshold); },
                        [](const Qte& q) { return "qte:" + fmt(q.q); },
                        [](const CdfCurve& c) {
                          return "cdf:" + fmt(c.grid.front()) + ":" + fmt(c.grid.back()) + ":" +
                                 std::to_string(c.grid.size());
                        },
                    },
                    spec);
}

void validate(const EstimandSpec& spec) {
  if (auto* q = std::get_if<Qte>(&spec)) {
    if (!(q->q > 0.0 && q->q < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
  }
  if (auto* r = std::get_if<RiskDiff>(&spec)) {
    if (!std::isfinite(r->threshold)) throw std::invalid_argument("risk threshold must be finite");
  }
  if (auto* c = std::get_if<CdfCurve>(&spec)) {
    if (c->grid.empty()) throw std::invalid_argument("CDF grid must be nonempty");
    for (std::size_t g = 1; g < c->grid.size(); ++g) {
      if (!(c->grid[g] > c->grid[g - 1])) throw std::invalid_argument("CDF grid must be strictly increasing");
    }
  }
}

bool is_curve(const EstimandSpec& spec) { return std::holds_alternative<CdfCurve>(spec); }

double PointEstimate::scalar() const {
  if (tau.size() != 1) throw std::logic_error("PointEstimate::scalar on a curve estimate");
  return tau[0];
}

PooledEndpoints PooledEndpoints::from_imputation(const ImputationSet& set, const TrialDataset& data) {
  if (set.n_subjects() != data.n_subjects()) throw std::invalid_argument("imputation set does not match dataset");
  PooledEndpoints p;
  const auto t = static_cast<Eigen::Index>(data.n_visits());
  const double w = 1.0 / static_cast<double>(set.m());
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto& d = set.subject(i);
    if (d.is_observed()) {
      p.values_.push_back(data.subject(i).outcomes(t - 1));
      p.weights_.push_back(1.0);
    } else {
      const auto col = d.draws.cols() - 1;
      for (Eigen::Index m = 0; m < d.draws.rows(); ++m) {
        p.values_.push_back(d.draws(m, col));
        p.weights_.push_back(w);
      }
    }
    p.offset_.push_back(p.values_.size());
  }
  return p;
}

PooledEndpoints PooledEndpoints::from_slice(const TrialDataset& data, const Eigen::VectorXd& endpoint) {
  if (static_cast<std::size_t>(endpoint.size()) != data.n_subjects()) {
    throw std::invalid_argument("endpoint vector does not match dataset");
  }
  PooledEndpoints p;
  for (Eigen::Index i = 0; i < endpoint.size(); ++i) {
    if (!std::isfinite(endpoint(i))) throw EstimandError("completed slice has a missing endpoint");
    p.values_.push_back(endpoint(i));
    p.weights_.push_back(1.0);
    p.offset_.push_back(p.values_.size());
  }
  return p;
}

void PooledEndpoints::set_weights(std::size_t i, std::span<const double> w) {
  if (w.size() != offset_[i + 1] - offset_[i]) throw std::invalid_argument("set_weights: length mismatch");
  std::copy(w.begin(), w.end(), weights_.begin() + static_cast<std::ptrdiff_t>(offset_[i]));
}

double PooledEndpoints::weighted_mean(std::size_t i) const {
  auto v = values(i);
  auto w = weights(i);
  double s = 0.0;
  for (std::size_t m = 0; m < v.size(); ++m) s += w[m] * v[m];
  return s;
}

double weighted_quantile(std::span<const double> values, std::span<const double> weights, double q) {
  if (values.empty() || values.size() != weights.size()) throw EstimandError("quantile of an empty sample");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw EstimandError("quantile of a sample with zero total weight");
  // Relative slack absorbs rounding in sums of 1/M weights.
  const double target = q * total * (1.0 - 1e-12);
  double cum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    cum += weights[order[r]];
    const bool last_of_tie = r + 1 == order.size() || values[order[r + 1]] != values[order[r]];
    if (last_of_tie && cum >= target) return values[order[r]];
  }
  return values[order.back()];
}

double kernel_density(std::span<const double> values, double x) {
  const std::size_t n = values.size();
  if (n < 2) throw EstimandError("kernel density needs at least two points");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double sd = sample_sd(values);
  const double iqr = interpolated_quantile(sorted, 0.75) - interpolated_quantile(sorted, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  if (!(h > 0.0)) return 0.0;
  double s = 0.0;
  for (double v : values) {
    const double z = (x - v) / h;
    s += std::exp(-0.5 * z * z);
  }
  return s / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
}

PointEstimate solve_pooled(const TrialDataset& data, const PooledEndpoints& pooled,
                           std::span<const double> subject_weights, const EstimandSpec& spec) {
  if (pooled.n_subjects() != data.n_subjects()) throw std::invalid_argument("pooled endpoints do not match dataset");
  if (!subject_weights.empty() && subject_weights.size() != data.n_subjects()) {
    throw std::invalid_argument("subject weight vector does not match dataset");
  }
  const auto& u = subject_weights;
  return std::visit(
      overloaded{
          [&](const AteSimple&) {
            double sum[2] = {0.0, 0.0}, tot[2] = {0.0, 0.0};
            for (std::size_t i = 0; i < data.n_subjects(); ++i) {
              const auto g = static_cast<std::size_t>(group_index(data.subject(i).group));
              const double ui = weight_of(u, i);
              sum[g] += ui * pooled.weighted_mean(i);
              tot[g] += ui;
            }
            if (!(tot[0] > 0.0) || !(tot[1] > 0.0)) throw EstimandError("empty group in ATE");
            return scalar_estimate(sum[0] / tot[0], sum[1] / tot[1]);
          },
          [&](const AteAncova&) {
            Eigen::VectorXd response(static_cast<Eigen::Index>(data.n_subjects()));
            for (std::size_t i = 0; i < data.n_subjects(); ++i) response(static_cast<Eigen::Index>(i)) = pooled.weighted_mean(i);
            auto sol = solve_ancova(data, response, u);
            const auto px = sol.xbar.size();
            const double t1 = sol.xbar.dot(sol.gamma.head(px));
            const double diff = sol.xbar.dot(sol.gamma.tail(px));
            PointEstimate pe;
            pe.tau1 = {t1};
            pe.tau2 = {t1 + diff};
            pe.tau = {pe.tau2[0] - pe.tau1[0]};
            return pe;
          },
          [&](const RiskDiff& r) {
            auto arms = arm_samples(data, pooled, u);
            double p[2];
            for (std::size_t g = 0; g < 2; ++g) {
              double s = 0.0;
              for (std::size_t e = 0; e < arms[g].values.size(); ++e) {
                if (arms[g].values[e] >= r.threshold) s += arms[g].weights[e];
              }
              p[g] = std::clamp(s / arms[g].total, 0.0, 1.0);
            }
            return scalar_estimate(p[0], p[1]);
          },
          [&](const Qte& q) {
            auto arms = arm_samples(data, pooled, u);
            return scalar_estimate(weighted_quantile(arms[0].values, arms[0].weights, q.q),
                                   weighted_quantile(arms[1].values, arms[1].weights, q.q));
          },
          [&](const CdfCurve& c) {
            auto arms = arm_samples(data, pooled, u);
            PointEstimate pe;
            pe.tau1 = weighted_cdf(arms[0], c.grid);
            pe.tau2 = weighted_cdf(arms[1], c.grid);
            for (std::size_t g = 0; g < c.grid.size(); ++g) pe.tau.push_back(pe.tau2[g] - pe.tau1[g]);
            return pe;
          },
      },
      spec);
}

PointEstimate solve_di(const ImputationSet& set, const TrialDataset& data, const EstimandSpec& spec) {
  auto pe = solve_pooled(data, PooledEndpoints::from_imputation(set, data), {}, spec);
  pe.method = EstimateMethod::DI;
  return pe;
}

PointEstimate solve_complete(const TrialDataset& data, const Eigen::VectorXd& endpoint, const EstimandSpec& spec) {
  auto pe = solve_pooled(data, PooledEndpoints::from_slice(data, endpoint), {}, spec);
  pe.method = EstimateMethod::MIPerDataset;
  return pe;
}

std::vector<double> complete_data_variance(const TrialDataset& data, const Eigen::VectorXd& endpoint,
                                           const EstimandSpec& spec) {
  if (static_cast<std::size_t>(endpoint.size()) != data.n_subjects()) {
    throw std::invalid_argument("endpoint vector does not match dataset");
  }
  const auto arms = split_by_arm(data, endpoint);
  for (const auto& a : arms) {
    if (a.size() < 2) throw EstimandError("complete-data variance needs at least two subjects per arm");
  }
  const double n1 = static_cast<double>(arms[0].size());
  const double n2 = static_cast<double>(arms[1].size());

  return std::visit(
      overloaded{
          [&](const AteSimple&) {
            const double s1 = sample_sd(arms[0]);
            const double s2 = sample_sd(arms[1]);
            return std::vector<double>{s1 * s1 / n1 + s2 * s2 / n2};
          },
          [&](const AteAncova&) {
            auto sol = solve_ancova(data, endpoint, {});
            const auto n = sol.design.rows();
            const auto k = sol.design.cols();
            const auto px = sol.xbar.size();
            if (n <= k) throw EstimandError("ANCOVA variance: no residual degrees of freedom");
            const double sigma2 = (sol.response - sol.design * sol.gamma).squaredNorm() / static_cast<double>(n - k);
            const Eigen::MatrixXd vtv_inv = (sol.design.transpose() * sol.design).inverse();
            Eigen::VectorXd a = Eigen::VectorXd::Zero(k);
            a.tail(px) = sol.xbar;
            double var = sigma2 * a.dot(vtv_inv * a);
            if (px > 1) {
              // Variability of the covariate mean at which the arm lines are compared.
              Eigen::MatrixXd xs(n, px - 1);
              for (Eigen::Index i = 0; i < n; ++i) xs.row(i) = data.subject(static_cast<std::size_t>(i)).covariates.transpose();
              const Eigen::MatrixXd centered = xs.rowwise() - xs.colwise().mean();
              const Eigen::MatrixXd sx = centered.transpose() * centered / static_cast<double>(n - 1);
              const Eigen::VectorXd slope_diff = sol.gamma.tail(px - 1);
              var += slope_diff.dot(sx * slope_diff) / static_cast<double>(n);
            }
            return std::vector<double>{var};
          },
          [&](const RiskDiff& r) {
            double v = 0.0;
            for (const auto& a : arms) {
              const double p = static_cast<double>(std::count_if(a.begin(), a.end(), [&](double y) { return y >= r.threshold; })) /
                               static_cast<double>(a.size());
              v += p * (1.0 - p) / static_cast<double>(a.size());
            }
            return std::vector<double>{v};
          },
          [&](const Qte& q) {
            double v = 0.0;
            for (const auto& a : arms) {
              const std::vector<double> w(a.size(), 1.0);
              const double tq = weighted_quantile(a, w, q.q);
              const double f = kernel_density(a, tq);
              if (!(f > 0.0)) throw EstimandError("QTE variance: estimated density is zero at the quantile");
              v += q.q * (1.0 - q.q) / (static_cast<double>(a.size()) * f * f);
            }
            return std::vector<double>{v};
          },
          [&](const CdfCurve& c) {
            std::vector<double> out(c.grid.size(), 0.0);
            for (const auto& a : arms) {
              std::vector<double> sorted = a;
              std::sort(sorted.begin(), sorted.end());
              for (std::size_t g = 0; g < c.grid.size(); ++g) {
                const double p = static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), c.grid[g]) - sorted.begin()) /
                                 static_cast<double>(sorted.size());
                out[g] += p * (1.0 - p) / static_cast<double>(sorted.size());
              }
            }
            return out;
          },
      },
      spec);
}

}  // namespace distimpute
