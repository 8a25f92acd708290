#include "distimpute/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace distimpute {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2 pi)

struct Factor {
  Eigen::MatrixXd lower;
  double log_det;
};

Factor factorize(const Eigen::MatrixXd& cov, const char* what) {
  if (cov.rows() == 0) throw SingularCovarianceError(std::string(what) + ": empty covariance");
  if (!cov.allFinite()) throw SingularCovarianceError(std::string(what) + ": non-finite covariance");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw SingularCovarianceError(std::string(what) + ": covariance is not positive definite");
  }
  if (llt.rcond() < kSingularRcond) {
    throw SingularCovarianceError(std::string(what) + ": covariance is numerically singular");
  }
  Factor f{llt.matrixL(), 0.0};
  f.log_det = 2.0 * f.lower.diagonal().array().log().sum();
  return f;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return Rng(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ULL)));
}

double Rng::uniform() {
  // 53 random bits mapped to the open interval (0, 1).
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

double Rng::exponential() { return -std::log(uniform()); }

int Rng::poisson1() {
  const double u = uniform();
  double p = std::exp(-1.0);
  double cdf = p;
  int k = 0;
  while (u > cdf && k < 64) {
    ++k;
    p /= k;
    cdf += p;
  }
  return k;
}

GaussianLaw::GaussianLaw(Eigen::VectorXd mean, Eigen::MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size()) {
    throw std::invalid_argument("GaussianLaw: mean/covariance dimension mismatch");
  }
  if (!mean_.allFinite()) throw std::invalid_argument("GaussianLaw: non-finite mean");
  const double scale = std::max(cov_.cwiseAbs().maxCoeff(), 1e-300);
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("GaussianLaw: covariance is not symmetric");
  }
  auto f = factorize(cov_, "GaussianLaw");
  chol_ = std::move(f.lower);
  log_det_ = f.log_det;
}

std::vector<Eigen::Index> complement_indices(Eigen::Index d, std::span<const Eigen::Index> observed_idx) {
  std::vector<bool> taken(static_cast<std::size_t>(d), false);
  for (auto i : observed_idx) {
    if (i < 0 || i >= d) throw std::invalid_argument("condition: observed index out of range");
    if (taken[static_cast<std::size_t>(i)]) throw std::invalid_argument("condition: duplicate observed index");
    taken[static_cast<std::size_t>(i)] = true;
  }
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!taken[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

GaussianLaw condition(const GaussianLaw& joint, std::span<const Eigen::Index> observed_idx,
                      const Eigen::VectorXd& observed_vals) {
  const Eigen::Index d = joint.dim();
  if (observed_idx.empty()) throw std::invalid_argument("condition: empty observed set");
  if (static_cast<Eigen::Index>(observed_idx.size()) != observed_vals.size()) {
    throw std::invalid_argument("condition: observed values/indices length mismatch");
  }
  auto missing = complement_indices(d, observed_idx);
  if (missing.empty()) throw std::invalid_argument("condition: observed set must be a proper subset");

  const auto k = static_cast<Eigen::Index>(observed_idx.size());
  const auto m = static_cast<Eigen::Index>(missing.size());
  Eigen::MatrixXd s11(k, k), s21(m, k), s22(m, m);
  Eigen::VectorXd mu1(k), mu2(m);
  for (Eigen::Index a = 0; a < k; ++a) {
    mu1(a) = joint.mean()(observed_idx[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < k; ++b) {
      s11(a, b) = joint.cov()(observed_idx[static_cast<std::size_t>(a)], observed_idx[static_cast<std::size_t>(b)]);
    }
  }
  for (Eigen::Index a = 0; a < m; ++a) {
    mu2(a) = joint.mean()(missing[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < k; ++b) {
      s21(a, b) = joint.cov()(missing[static_cast<std::size_t>(a)], observed_idx[static_cast<std::size_t>(b)]);
    }
    for (Eigen::Index b = 0; b < m; ++b) {
      s22(a, b) = joint.cov()(missing[static_cast<std::size_t>(a)], missing[static_cast<std::size_t>(b)]);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(s11);
  if (llt.info() != Eigen::Success || llt.rcond() < kSingularRcond) {
    throw SingularCovarianceError("condition: observed covariance block is singular");
  }
  const Eigen::MatrixXd regression = llt.solve(s21.transpose()).transpose();
  Eigen::MatrixXd cov = s22 - regression * s21.transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
  return GaussianLaw(mu2 + regression * (observed_vals - mu1), std::move(cov));
}

double log_density_chol(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol, double log_det,
                        const Eigen::VectorXd& x) {
  if (x.size() != mean.size()) throw std::invalid_argument("log_density: dimension mismatch");
  const Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (static_cast<double>(mean.size()) * kLog2Pi + log_det + z.squaredNorm());
}

double log_density(const GaussianLaw& law, const Eigen::VectorXd& x) {
  return log_density_chol(law.mean(), law.chol(), law.log_det(), x);
}

Eigen::VectorXd sample(const GaussianLaw& law, Rng& rng) {
  Eigen::VectorXd z(law.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return law.mean() + law.chol().triangularView<Eigen::Lower>() * z;
}

LeadingBlockConditioner::LeadingBlockConditioner(const Eigen::MatrixXd& cov, Eigen::Index n_observed) {
  const Eigen::Index d = cov.rows();
  if (n_observed <= 0 || n_observed >= d) {
    throw std::invalid_argument("LeadingBlockConditioner: observed block must be a proper leading block");
  }
  const Eigen::Index m = d - n_observed;
  Eigen::LLT<Eigen::MatrixXd> llt(cov.topLeftCorner(n_observed, n_observed));
  if (llt.info() != Eigen::Success || llt.rcond() < kSingularRcond) {
    throw SingularCovarianceError("condition: observed covariance block is singular");
  }
  const Eigen::MatrixXd s21 = cov.bottomLeftCorner(m, n_observed);
  regression_ = llt.solve(s21.transpose()).transpose();
  cond_cov_ = cov.bottomRightCorner(m, m) - regression_ * s21.transpose();
  cond_cov_ = 0.5 * (cond_cov_ + cond_cov_.transpose()).eval();
  auto f = factorize(cond_cov_, "conditional law");
  cond_chol_ = std::move(f.lower);
  cond_log_det_ = f.log_det;
}

}  // namespace distimpute
