#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "distimpute/dataset.hpp"
#include "distimpute/mmrm.hpp"
#include "distimpute/sensitivity.hpp"

namespace distimpute {

/// Draws for one subject. Complete subjects have no visits and an empty matrix.
struct SubjectDraws {
  Eigen::Index first_missing = 0;  // imputed visits are first_missing..T-1
  Eigen::MatrixXd draws;           // M x d_i

  bool is_observed() const { return draws.size() == 0; }
  /// Final-visit column of the draws.
  Eigen::VectorXd endpoint() const { return draws.col(draws.cols() - 1); }
};

/// M completions per incomplete subject, shared by DI and MI. Immutable.
class ImputationSet {
 public:
  ImputationSet(std::size_t m, SensitivityModel model, std::uint64_t theta_fingerprint, std::uint64_t seed,
                std::vector<SubjectDraws> subjects);

  std::size_t m() const { return m_; }
  SensitivityModel model() const { return model_; }
  std::uint64_t theta_fingerprint() const { return theta_fingerprint_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t n_subjects() const { return subjects_.size(); }
  const SubjectDraws& subject(std::size_t i) const { return subjects_.at(i); }
  const std::vector<SubjectDraws>& subjects() const { return subjects_; }

  /// FNV-1a over the metadata and every draw.
  std::uint64_t fingerprint() const;

 private:
  std::size_t m_;
  SensitivityModel model_;
  std::uint64_t theta_fingerprint_;
  std::uint64_t seed_;
  std::vector<SubjectDraws> subjects_;
};

/// M i.i.d. draws per incomplete subject from its imputation law under `fit`.
/// Subject i draws from the substream keyed by (seed, i), so the result does
/// not depend on `threads`.
ImputationSet impute(const MmrmFit& fit, const TrialDataset& data, SensitivityModel model, std::size_t m,
                     std::uint64_t seed, unsigned threads = 1);

/// Final-visit value per subject in the m-th completed dataset (0-based m).
Eigen::VectorXd completed_endpoint(const ImputationSet& set, const TrialDataset& data, std::size_t m);

/// The m-th completed dataset as wide CSV. Visits not imputed by the model
/// (intermediate visits under RTB/washout) stay NA.
std::string format_completed(const ImputationSet& set, const TrialDataset& data, std::size_t m);

}  // namespace distimpute
