#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "distimpute/dataset.hpp"
#include "distimpute/gaussian.hpp"
#include "distimpute/mmrm.hpp"

namespace distimpute {

/// How missing outcomes after dropout are modelled.
///   Mar      own-group law conditioned on the observed visits.
///   J2R      jump to reference: post-dropout means follow the control arm,
///            observed-block means stay with the subject's own arm, and the
///            control covariance supplies both the regression operator and
///            the residual covariance. Identical to Mar for control subjects.
///   Rtb      return to baseline: only the final visit is imputed, from the
///            own-group baseline marginal N(x~^T beta_g1, Sigma_g[1,1]),
///            independent of any post-baseline observation.
///   Washout  Mar for control subjects, Rtb for treatment subjects.
enum class SensitivityModel { Mar, J2R, Rtb, Washout };

std::string_view to_string(SensitivityModel model);
SensitivityModel parse_model(std::string_view text);

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Imputation law for one incomplete subject: Gaussian over `missing_visits`
/// (0-based visit indices, increasing; the final visit is always last).
struct ConditionalLaw {
  std::size_t subject = 0;
  std::vector<Eigen::Index> missing_visits;
  GaussianLaw law;
};

/// Builds the law by direct conditioning of the assembled joint law.
/// Throws ModelError for a complete subject.
ConditionalLaw imputation_law(const MmrmFit& fit, const TrialDataset& data, std::size_t subject,
                              SensitivityModel model);

/// True iff every incomplete control subject has parameter-identical J2R and
/// MAR laws (1e-12).
bool mar_control_equivalence_check(const MmrmFit& fit, const TrialDataset& data);

/// Per-pattern cache of the conditioning operators for one (fit, model), so
/// that laws for many subjects share the Cholesky work. Produces the same laws
/// as `imputation_law` up to rounding.
class LawBuilder {
 public:
  LawBuilder(const MmrmFit& fit, SensitivityModel model);

  struct View {
    Eigen::VectorXd mean;
    const Eigen::MatrixXd* chol = nullptr;  // lower factor of the law covariance
    double log_det = 0.0;
    Eigen::Index first_missing = 0;         // missing visits are first_missing..T-1
  };

  /// Throws ModelError for a complete subject.
  View view(const Subject& subject) const;
  ConditionalLaw law(const TrialDataset& data, std::size_t subject) const;

  SensitivityModel model() const { return model_; }

 private:
  struct Marginal {
    Eigen::MatrixXd chol;
    double log_det;
  };

  bool uses_rtb(Group g) const;
  const LeadingBlockConditioner& conditioner(int cov_group, std::size_t n_observed) const;

  const MmrmFit* fit_;
  SensitivityModel model_;
  std::size_t n_visits_;
  // Indexed by (covariance group, observed count).
  std::array<std::vector<std::optional<LeadingBlockConditioner>>, 2> conditioners_;
  std::array<Marginal, 2> baseline_;
};

}  // namespace distimpute
