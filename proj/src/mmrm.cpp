#include "distimpute/mmrm.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <string>

#include "distimpute/gaussian.hpp"

namespace distimpute {

namespace {

void check_weights(const TrialDataset& data, std::span<const double> weights) {
  if (weights.empty()) return;
  if (weights.size() != data.n_subjects()) throw FitError("fit: weight vector length does not match subject count");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i])) throw FitError("fit: non-finite weight for subject " + std::to_string(i + 1));
    if (weights[i] < 0.0) throw FitError("fit: negative weight for subject " + std::to_string(i + 1));
  }
}

double weight_of(std::span<const double> weights, std::size_t i) { return weights.empty() ? 1.0 : weights[i]; }

const char* group_name(Group g) { return g == Group::Control ? "control" : "treatment"; }

VisitRegression fit_visit(const TrialDataset& data, std::span<const double> weights, Group g, std::size_t visit) {
  const std::size_t p = data.n_covariates();
  const auto q = static_cast<Eigen::Index>(p + 1 + visit);
  std::vector<std::size_t> rows;
  double wsum = 0.0;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subject(i);
    if (s.group != g || !s.observed[visit]) continue;
    const double w = weight_of(weights, i);
    if (w <= 0.0) continue;
    rows.push_back(i);
    wsum += w;
  }
  const std::string where = std::string(group_name(g)) + " group, visit " + std::to_string(visit + 1);
  if (static_cast<Eigen::Index>(rows.size()) < q + 1) {
    throw FitError("fit: rank deficiency at " + where + ": " + std::to_string(rows.size()) +
                   " weighted observations for " + std::to_string(q) + " coefficients");
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd z(n, q);
  Eigen::VectorXd y(n);
  Eigen::VectorXd sw(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& s = data.subject(rows[static_cast<std::size_t>(r)]);
    sw(r) = std::sqrt(weight_of(weights, rows[static_cast<std::size_t>(r)]));
    z(r, 0) = 1.0;
    z.row(r).segment(1, static_cast<Eigen::Index>(p)) = s.covariates.transpose();
    z.row(r).tail(static_cast<Eigen::Index>(visit)) = s.outcomes.head(static_cast<Eigen::Index>(visit)).transpose();
    y(r) = s.outcomes(static_cast<Eigen::Index>(visit));
  }
  if (!z.allFinite() || !y.allFinite()) throw FitError("fit: non-finite input at " + where);

  const Eigen::MatrixXd zw = sw.asDiagonal() * z;
  const Eigen::VectorXd yw = sw.asDiagonal() * y;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(zw);
  qr.setThreshold(1e-10);
  if (qr.rank() < q) throw FitError("fit: rank deficiency at " + where);

  VisitRegression reg;
  reg.coef = qr.solve(yw);
  reg.residual_variance = (yw - zw * reg.coef).squaredNorm() / wsum;
  if (!(reg.residual_variance > 0.0) || !std::isfinite(reg.residual_variance)) {
    throw FitError("fit: degenerate residual variance at " + where);
  }
  return reg;
}

struct MarginalCache {
  Eigen::MatrixXd chol;
  double log_det;
};

}  // namespace

GroupFit moments_from_sequential(std::vector<VisitRegression> seq, std::size_t n_covariates) {
  const auto t = static_cast<Eigen::Index>(seq.size());
  const auto px = static_cast<Eigen::Index>(n_covariates + 1);
  GroupFit g;
  g.beta = Eigen::MatrixXd::Zero(t, px);
  g.sigma = Eigen::MatrixXd::Zero(t, t);
  for (Eigen::Index k = 0; k < t; ++k) {
    const auto& reg = seq[static_cast<std::size_t>(k)];
    if (reg.coef.size() != px + k) throw std::invalid_argument("moments_from_sequential: coefficient length mismatch");
    const Eigen::VectorXd c = reg.coef.tail(k);
    g.beta.row(k) = reg.coef.head(px).transpose();
    if (k > 0) {
      g.beta.row(k) += c.transpose() * g.beta.topRows(k);
      const Eigen::RowVectorXd cross = c.transpose() * g.sigma.topLeftCorner(k, k);
      g.sigma.row(k).head(k) = cross;
      g.sigma.col(k).head(k) = cross.transpose();
      g.sigma(k, k) = reg.residual_variance + cross.dot(c);
    } else {
      g.sigma(0, 0) = reg.residual_variance;
    }
  }
  g.seq = std::move(seq);
  return g;
}

std::vector<VisitRegression> sequential_from_moments(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& sigma) {
  const Eigen::Index t = beta.rows();
  const Eigen::Index px = beta.cols();
  std::vector<VisitRegression> seq(static_cast<std::size_t>(t));
  for (Eigen::Index k = 0; k < t; ++k) {
    auto& reg = seq[static_cast<std::size_t>(k)];
    reg.coef.resize(px + k);
    if (k == 0) {
      reg.coef = beta.row(0).transpose();
      reg.residual_variance = sigma(0, 0);
      continue;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sigma.topLeftCorner(k, k));
    const Eigen::VectorXd c = llt.solve(sigma.col(k).head(k));
    reg.coef.head(px) = beta.row(k).transpose() - beta.topRows(k).transpose() * c;
    reg.coef.tail(k) = c;
    reg.residual_variance = sigma(k, k) - sigma.col(k).head(k).dot(c);
  }
  return seq;
}

MmrmFit fit_mmrm(const TrialDataset& data, std::span<const double> weights) {
  check_weights(data, weights);
  MmrmFit fit;
  for (Group g : {Group::Control, Group::Treatment}) {
    std::vector<VisitRegression> seq;
    for (std::size_t k = 0; k < data.n_visits(); ++k) seq.push_back(fit_visit(data, weights, g, k));
    fit.group(g) = moments_from_sequential(std::move(seq), data.n_covariates());
  }
  fit.loglik = observed_loglik(fit, data, weights);
  return fit;
}

double observed_loglik(const MmrmFit& fit, const TrialDataset& data, std::span<const double> weights) {
  if (fit.n_visits() != data.n_visits() || fit.n_covariates() != data.n_covariates()) {
    throw std::invalid_argument("observed_loglik: fit dimensions do not match dataset");
  }
  if (!weights.empty() && weights.size() != data.n_subjects()) {
    throw std::invalid_argument("observed_loglik: weight vector length does not match subject count");
  }
  std::map<std::pair<int, std::size_t>, MarginalCache> cache;
  double total = 0.0;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const double w = weight_of(weights, i);
    if (w == 0.0) continue;
    const auto& s = data.subject(i);
    const std::size_t k = s.n_observed();
    const auto& gf = fit.group(s.group);
    auto key = std::make_pair(group_index(s.group), k);
    auto it = cache.find(key);
    if (it == cache.end()) {
      GaussianLaw marginal(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k)),
                           gf.sigma.topLeftCorner(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));
      it = cache.emplace(key, MarginalCache{marginal.chol(), marginal.log_det()}).first;
    }
    const auto kk = static_cast<Eigen::Index>(k);
    const Eigen::VectorXd mean = gf.beta.topRows(kk) * s.design();
    total += w * log_density_chol(mean, it->second.chol, it->second.log_det, s.outcomes.head(kk));
  }
  return total;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(r)).size()) != cols) {
      throw std::invalid_argument("ragged matrix in fit JSON");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const MmrmFit& fit) {
  nlohmann::json j;
  j["n_visits"] = fit.n_visits();
  j["n_covariates"] = fit.n_covariates();
  j["loglik"] = fit.loglik;
  for (Group g : {Group::Control, Group::Treatment}) {
    const auto& gf = fit.group(g);
    nlohmann::json gj;
    gj["group"] = static_cast<int>(g);
    gj["beta"] = matrix_to_json(gf.beta);
    gj["sigma"] = matrix_to_json(gf.sigma);
    auto seq = nlohmann::json::array();
    for (const auto& reg : gf.seq) {
      seq.push_back({{"coef", std::vector<double>(reg.coef.data(), reg.coef.data() + reg.coef.size())},
                     {"residual_variance", reg.residual_variance}});
    }
    gj["seq"] = std::move(seq);
    j["groups"].push_back(std::move(gj));
  }
  return j;
}

MmrmFit fit_from_json(const nlohmann::json& j) {
  MmrmFit fit;
  fit.loglik = j.value("loglik", 0.0);
  const auto p = j.at("n_covariates").get<std::size_t>();
  for (const auto& gj : j.at("groups")) {
    const int label = gj.at("group").get<int>();
    if (label != 1 && label != 2) throw std::invalid_argument("fit JSON: unknown group label");
    Eigen::MatrixXd beta = matrix_from_json(gj.at("beta"));
    Eigen::MatrixXd sigma = matrix_from_json(gj.at("sigma"));
    if (beta.cols() != static_cast<Eigen::Index>(p + 1) || sigma.rows() != beta.rows() || sigma.cols() != beta.rows()) {
      throw std::invalid_argument("fit JSON: inconsistent dimensions");
    }
    auto& gf = fit.group(static_cast<Group>(label));
    gf = moments_from_sequential(sequential_from_moments(beta, sigma), p);
    gf.beta = std::move(beta);
    gf.sigma = std::move(sigma);
  }
  return fit;
}

std::uint64_t fingerprint(const MmrmFit& fit) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const double* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, data + i, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  };
  for (const auto& g : fit.groups) {
    mix(g.beta.data(), g.beta.size());
    mix(g.sigma.data(), g.sigma.size());
  }
  return h;
}

}  // namespace distimpute
