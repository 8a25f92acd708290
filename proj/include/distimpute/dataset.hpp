#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace distimpute {

/// Error raised while reading or validating trial data. Carries the offending
/// subject (0-based row) and visit (0-based) when they are known.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what,
                     std::optional<std::size_t> subject = std::nullopt,
                     std::optional<std::size_t> visit = std::nullopt)
      : std::runtime_error(what), subject_(subject), visit_(visit) {}

  std::optional<std::size_t> subject() const { return subject_; }
  std::optional<std::size_t> visit() const { return visit_; }

 private:
  std::optional<std::size_t> subject_;
  std::optional<std::size_t> visit_;
};

enum class Group : int { Control = 1, Treatment = 2 };

inline int group_index(Group g) { return g == Group::Control ? 0 : 1; }

/// One row of a wide-format trial: baseline covariates, arm, and the outcome
/// vector with its observation mask. Unobserved outcomes hold NaN.
struct Subject {
  std::string id;
  Eigen::VectorXd covariates;
  Group group = Group::Control;
  Eigen::VectorXd outcomes;
  std::vector<bool> observed;

  /// Number of observed visits (the last observed visit, 1-based).
  std::size_t n_observed() const;
  bool is_complete() const { return n_observed() == observed.size(); }

  /// (1, x^T)^T, the intercept-first design vector.
  Eigen::VectorXd design() const;
};

struct DropoutPattern {
  std::size_t last_observed = 0;  // k, 1-based
  bool is_complete = false;
};

/// Longitudinal trial data with monotone missingness. Constructed only through
/// `TrialDataset::create`, which enforces the invariants; immutable afterwards.
class TrialDataset {
 public:
  static TrialDataset create(std::vector<Subject> subjects, std::size_t n_visits,
                             std::size_t n_covariates);

  std::size_t n_subjects() const { return subjects_.size(); }
  std::size_t n_visits() const { return n_visits_; }
  std::size_t n_covariates() const { return n_covariates_; }
  std::size_t n_in_group(Group g) const;

  const Subject& subject(std::size_t i) const { return subjects_.at(i); }
  const std::vector<Subject>& subjects() const { return subjects_; }

 private:
  TrialDataset() = default;
  std::vector<Subject> subjects_;
  std::size_t n_visits_ = 0;
  std::size_t n_covariates_ = 0;
};

DropoutPattern pattern_of(const Subject& subject);

/// Column layout of a wide CSV file. Empty vectors mean "infer from header":
/// covariates are the `x1..xp` columns, outcomes `y1..yT`.
struct CsvSchema {
  std::vector<std::string> covariate_columns;
  std::string group_column = "group";
  std::vector<std::string> outcome_columns;
  std::string id_column = "id";  // optional in the file
};

TrialDataset load_dataset(const std::filesystem::path& path, const CsvSchema& schema = {});
TrialDataset parse_dataset(const std::string& csv_text, const CsvSchema& schema = {});

/// Writes `id` (when any subject has a non-default id), `x1..xp`, `group`,
/// `y1..yT`. Numbers use `%.17g`, so load(write(d)) reproduces d exactly.
std::string format_dataset(const TrialDataset& data);
void write_dataset(const TrialDataset& data, const std::filesystem::path& path);

/// Long layout (`id,visit,y` plus per-subject columns repeated on each row)
/// to wide. Visits are 1-based integers; absent visits become missing.
std::string long_to_wide_csv(const std::string& long_csv, std::size_t n_visits);

}  // namespace distimpute
