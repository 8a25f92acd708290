#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "distimpute/dataset.hpp"
#include "distimpute/simulation.hpp"

namespace fixture {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Subject with the given covariates and outcomes; NaN marks a missing visit.
inline distimpute::Subject subject(distimpute::Group g, std::vector<double> x, std::vector<double> y) {
  distimpute::Subject s;
  s.group = g;
  s.covariates = Eigen::Map<VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  s.outcomes = Eigen::Map<VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  for (double v : y) s.observed.push_back(!std::isnan(v));
  return s;
}

constexpr double NA = std::numeric_limits<double>::quiet_NaN();

/// Small three-visit, one-covariate design with roughly a third of each arm
/// dropping out before the last visit.
inline distimpute::SimScenario small_design(std::size_t n_per_group) {
  distimpute::SimScenario scn;
  scn.name = "small";
  scn.beta[0] = (MatrixXd(3, 2) << 0.5, 1.0, 1.0, 0.5, 1.5, -0.3).finished();
  scn.beta[1] = (MatrixXd(3, 2) << 0.5, 1.0, 2.0, 0.8, 3.0, 0.1).finished();
  scn.sigma[0] = (MatrixXd(3, 3) << 1.0, 0.5, 0.3, 0.5, 1.5, 0.6, 0.3, 0.6, 2.0).finished();
  scn.sigma[1] = (MatrixXd(3, 3) << 1.2, 0.4, 0.2, 0.4, 1.3, 0.7, 0.2, 0.7, 1.8).finished();
  scn.dropout_intercept = {-1.6, -1.8};
  scn.dropout_slope = {0.3, 0.2};
  scn.n_per_group = n_per_group;
  scn.model = distimpute::SensitivityModel::J2R;
  scn.spec = distimpute::AteSimple{};
  return scn;
}

}  // namespace fixture
