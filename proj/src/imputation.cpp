#include "distimpute/imputation.hpp"

#include <cstdio>
#include <cstring>
#include <sstream>

#include "distimpute/gaussian.hpp"
#include "distimpute/parallel.hpp"

namespace distimpute {

ImputationSet::ImputationSet(std::size_t m, SensitivityModel model, std::uint64_t theta_fingerprint,
                             std::uint64_t seed, std::vector<SubjectDraws> subjects)
    : m_(m), model_(model), theta_fingerprint_(theta_fingerprint), seed_(seed), subjects_(std::move(subjects)) {
  if (m_ < 1) throw std::invalid_argument("ImputationSet: M must be at least 1");
  for (const auto& s : subjects_) {
    if (!s.is_observed() && static_cast<std::size_t>(s.draws.rows()) != m_) {
      throw std::invalid_argument("ImputationSet: draw matrix row count differs from M");
    }
  }
}

std::uint64_t ImputationSet::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t meta[4] = {m_, static_cast<std::uint64_t>(model_), theta_fingerprint_, seed_};
  mix_bytes(meta, sizeof meta);
  for (const auto& s : subjects_) {
    const std::int64_t shape[3] = {s.first_missing, s.draws.rows(), s.draws.cols()};
    mix_bytes(shape, sizeof shape);
    mix_bytes(s.draws.data(), static_cast<std::size_t>(s.draws.size()) * sizeof(double));
  }
  return h;
}

ImputationSet impute(const MmrmFit& fit, const TrialDataset& data, SensitivityModel model, std::size_t m,
                     std::uint64_t seed, unsigned threads) {
  if (m < 1) throw std::invalid_argument("impute: M must be at least 1");
  const LawBuilder builder(fit, model);
  std::vector<SubjectDraws> out(data.n_subjects());
  parallel_for(data.n_subjects(), threads, [&](std::size_t i) {
    const auto& s = data.subject(i);
    if (s.is_complete()) return;
    LawBuilder::View view;
    try {
      view = builder.view(s);
    } catch (const std::exception& e) {
      throw ModelError("impute: law construction failed for subject '" + s.id + "': " + e.what());
    }
    const auto d = view.mean.size();
    auto& slot = out[i];
    slot.first_missing = view.first_missing;
    slot.draws.resize(static_cast<Eigen::Index>(m), d);
    Rng rng = Rng::substream(seed, i);
    Eigen::VectorXd z(d);
    for (std::size_t r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) z(c) = rng.normal();
      slot.draws.row(static_cast<Eigen::Index>(r)) =
          (view.mean + view.chol->triangularView<Eigen::Lower>() * z).transpose();
    }
  });
  return ImputationSet(m, model, fingerprint(fit), seed, std::move(out));
}

Eigen::VectorXd completed_endpoint(const ImputationSet& set, const TrialDataset& data, std::size_t m) {
  if (m >= set.m()) throw std::out_of_range("completed_endpoint: imputation index out of range");
  if (set.n_subjects() != data.n_subjects()) throw std::invalid_argument("completed_endpoint: subject count mismatch");
  const auto t = static_cast<Eigen::Index>(data.n_visits());
  Eigen::VectorXd y(static_cast<Eigen::Index>(data.n_subjects()));
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto& d = set.subject(i);
    y(static_cast<Eigen::Index>(i)) = d.is_observed() ? data.subject(i).outcomes(t - 1)
                                                      : d.draws(static_cast<Eigen::Index>(m), d.draws.cols() - 1);
  }
  return y;
}

std::string format_completed(const ImputationSet& set, const TrialDataset& data, std::size_t m) {
  if (m >= set.m()) throw std::out_of_range("format_completed: imputation index out of range");
  std::ostringstream out;
  char buf[32];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "id";
  for (std::size_t c = 0; c < data.n_covariates(); ++c) out << ",x" << c + 1;
  out << ",group";
  for (std::size_t k = 0; k < data.n_visits(); ++k) out << ",y" << k + 1;
  out << ",imputed_from\n";
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subject(i);
    const auto& d = set.subject(i);
    out << s.id;
    for (Eigen::Index c = 0; c < s.covariates.size(); ++c) out << ',' << num(s.covariates(c));
    out << ',' << static_cast<int>(s.group);
    for (std::size_t k = 0; k < data.n_visits(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (s.observed[k]) {
        out << ',' << num(s.outcomes(kk));
      } else if (!d.is_observed() && kk >= d.first_missing) {
        out << ',' << num(d.draws(static_cast<Eigen::Index>(m), kk - d.first_missing));
      } else {
        out << ",NA";
      }
    }
    out << ',' << (d.is_observed() ? 0 : d.first_missing + 1) << '\n';
  }
  return out.str();
}

}  // namespace distimpute
