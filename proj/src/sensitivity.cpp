#include "distimpute/sensitivity.hpp"

#include <numeric>

namespace distimpute {

namespace {

// Joint law whose conditioning on the observed block gives the MAR or J2R
// imputation law: observed-block means from the subject's own arm, missing-block
// means and the covariance from `cov_group`'s arm (own arm for MAR, control for J2R).
struct JointSpec {
  Eigen::VectorXd mean;
  Group cov_group;
};

JointSpec conditioned_joint(const MmrmFit& fit, const Subject& s, SensitivityModel model, std::size_t k) {
  const Eigen::VectorXd x = s.design();
  const bool jump = model == SensitivityModel::J2R;
  const Group reference = jump ? Group::Control : s.group;
  JointSpec j{fit.group(reference).mean_for(x), reference};
  const auto kk = static_cast<Eigen::Index>(k);
  j.mean.head(kk) = fit.group(s.group).beta.topRows(kk) * x;
  return j;
}

bool rtb_for(SensitivityModel model, Group g) {
  return model == SensitivityModel::Rtb || (model == SensitivityModel::Washout && g == Group::Treatment);
}

void require_incomplete(const Subject& s) {
  if (s.is_complete()) {
    throw ModelError("subject '" + s.id + "' is complete; no imputation law exists (final visit observed)");
  }
}

}  // namespace

std::string_view to_string(SensitivityModel model) {
  switch (model) {
    case SensitivityModel::Mar: return "mar";
    case SensitivityModel::J2R: return "j2r";
    case SensitivityModel::Rtb: return "rtb";
    case SensitivityModel::Washout: return "washout";
  }
  return "?";
}

SensitivityModel parse_model(std::string_view text) {
  if (text == "mar") return SensitivityModel::Mar;
  if (text == "j2r") return SensitivityModel::J2R;
  if (text == "rtb") return SensitivityModel::Rtb;
  if (text == "washout") return SensitivityModel::Washout;
  throw std::invalid_argument("unknown sensitivity model '" + std::string(text) + "' (expected mar, j2r, rtb, washout)");
}

ConditionalLaw imputation_law(const MmrmFit& fit, const TrialDataset& data, std::size_t subject,
                              SensitivityModel model) {
  const auto& s = data.subject(subject);
  require_incomplete(s);
  const auto t = static_cast<Eigen::Index>(data.n_visits());
  const auto& own = fit.group(s.group);

  if (rtb_for(model, s.group)) {
    Eigen::VectorXd mean(1);
    mean(0) = own.beta.row(0).dot(s.design());
    Eigen::MatrixXd cov(1, 1);
    cov(0, 0) = own.sigma(0, 0);
    return ConditionalLaw{subject, {t - 1}, GaussianLaw(std::move(mean), std::move(cov))};
  }

  const std::size_t k = s.n_observed();
  auto joint = conditioned_joint(fit, s, model, k);
  GaussianLaw joint_law(joint.mean, fit.group(joint.cov_group).sigma);
  std::vector<Eigen::Index> observed(k);
  std::iota(observed.begin(), observed.end(), Eigen::Index{0});
  auto law = condition(joint_law, observed, s.outcomes.head(static_cast<Eigen::Index>(k)));
  return ConditionalLaw{subject, complement_indices(t, observed), std::move(law)};
}

bool mar_control_equivalence_check(const MmrmFit& fit, const TrialDataset& data) {
  constexpr double tol = 1e-12;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subject(i);
    if (s.group != Group::Control || s.is_complete()) continue;
    const auto mar = imputation_law(fit, data, i, SensitivityModel::Mar);
    const auto j2r = imputation_law(fit, data, i, SensitivityModel::J2R);
    if (mar.missing_visits != j2r.missing_visits) return false;
    if ((mar.law.mean() - j2r.law.mean()).cwiseAbs().maxCoeff() > tol) return false;
    if ((mar.law.cov() - j2r.law.cov()).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

LawBuilder::LawBuilder(const MmrmFit& fit, SensitivityModel model)
    : fit_(&fit), model_(model), n_visits_(fit.n_visits()) {
  for (Group g : {Group::Control, Group::Treatment}) {
    const int gi = group_index(g);
    const auto& sigma = fit.group(g).sigma;
    auto& ops = conditioners_[static_cast<std::size_t>(gi)];
    ops.resize(n_visits_);
    for (std::size_t k = 1; k < n_visits_; ++k) ops[k].emplace(sigma, static_cast<Eigen::Index>(k));
    GaussianLaw marginal(Eigen::VectorXd::Zero(1), sigma.topLeftCorner(1, 1));
    baseline_[static_cast<std::size_t>(gi)] = Marginal{marginal.chol(), marginal.log_det()};
  }
}

bool LawBuilder::uses_rtb(Group g) const { return rtb_for(model_, g); }

const LeadingBlockConditioner& LawBuilder::conditioner(int cov_group, std::size_t n_observed) const {
  return *conditioners_[static_cast<std::size_t>(cov_group)][n_observed];
}

LawBuilder::View LawBuilder::view(const Subject& s) const {
  require_incomplete(s);
  const auto t = static_cast<Eigen::Index>(n_visits_);
  if (uses_rtb(s.group)) {
    const auto& b = baseline_[static_cast<std::size_t>(group_index(s.group))];
    View v;
    v.mean.resize(1);
    v.mean(0) = fit_->group(s.group).beta.row(0).dot(s.design());
    v.chol = &b.chol;
    v.log_det = b.log_det;
    v.first_missing = t - 1;
    return v;
  }
  const std::size_t k = s.n_observed();
  const auto kk = static_cast<Eigen::Index>(k);
  auto joint = conditioned_joint(*fit_, s, model_, k);
  const auto& op = conditioner(group_index(joint.cov_group), k);
  View v;
  v.mean = op.conditional_mean(joint.mean.head(kk), joint.mean.tail(t - kk), s.outcomes.head(kk));
  v.chol = &op.conditional_chol();
  v.log_det = op.conditional_log_det();
  v.first_missing = kk;
  return v;
}

ConditionalLaw LawBuilder::law(const TrialDataset& data, std::size_t subject) const {
  const auto& s = data.subject(subject);
  auto v = view(s);
  const Eigen::MatrixXd cov = (*v.chol) * v.chol->transpose();
  std::vector<Eigen::Index> missing;
  for (auto k = v.first_missing; k < static_cast<Eigen::Index>(n_visits_); ++k) missing.push_back(k);
  return ConditionalLaw{subject, std::move(missing), GaussianLaw(std::move(v.mean), cov)};
}

}  // namespace distimpute
