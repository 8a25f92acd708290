#include "distimpute/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "csv.hpp"

namespace distimpute {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA"; }

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string default_id(std::size_t row) { return std::to_string(row + 1); }

std::string describe(const Subject& s, std::size_t row) {
  return "subject '" + s.id + "' (row " + std::to_string(row + 1) + ")";
}

// Columns named prefix1, prefix2, ... in order of their numeric suffix.
std::vector<std::string> numbered_columns(const std::vector<std::string>& header, char prefix) {
  std::map<int, std::string> found;
  for (const auto& h : header) {
    if (h.size() < 2 || h[0] != prefix) continue;
    int idx = 0;
    auto [ptr, ec] = std::from_chars(h.data() + 1, h.data() + h.size(), idx);
    if (ec == std::errc() && ptr == h.data() + h.size() && idx >= 1) found.emplace(idx, h);
  }
  std::vector<std::string> out;
  int expect = 1;
  for (const auto& [idx, name] : found) {
    if (idx != expect) {
      throw DataError(std::string("column ") + prefix + std::to_string(expect) + " missing from header");
    }
    out.push_back(name);
    ++expect;
  }
  return out;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("column '" + name + "' not found in header");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

std::size_t Subject::n_observed() const {
  return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), true));
}

Eigen::VectorXd Subject::design() const {
  Eigen::VectorXd d(covariates.size() + 1);
  d(0) = 1.0;
  d.tail(covariates.size()) = covariates;
  return d;
}

DropoutPattern pattern_of(const Subject& subject) {
  DropoutPattern p;
  p.last_observed = subject.n_observed();
  p.is_complete = p.last_observed == subject.observed.size();
  return p;
}

TrialDataset TrialDataset::create(std::vector<Subject> subjects, std::size_t n_visits,
                                  std::size_t n_covariates) {
  if (n_visits == 0) throw DataError("dataset must have at least one visit");
  bool seen[2] = {false, false};
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    auto& s = subjects[i];
    if (s.id.empty()) s.id = default_id(i);
    if (s.group != Group::Control && s.group != Group::Treatment) {
      throw DataError("unknown group label for " + describe(s, i), i);
    }
    if (static_cast<std::size_t>(s.covariates.size()) != n_covariates) {
      throw DataError("covariate count mismatch for " + describe(s, i), i);
    }
    if (!s.covariates.allFinite()) {
      throw DataError("missing or non-finite covariate for " + describe(s, i), i);
    }
    if (static_cast<std::size_t>(s.outcomes.size()) != n_visits || s.observed.size() != n_visits) {
      throw DataError("outcome count mismatch for " + describe(s, i), i);
    }
    if (!s.observed[0]) throw DataError("missing baseline outcome for " + describe(s, i), i, 0);
    for (std::size_t k = 1; k < n_visits; ++k) {
      if (s.observed[k] && !s.observed[k - 1]) {
        throw DataError("non-monotone missingness for " + describe(s, i) + ": visit " +
                            std::to_string(k + 1) + " observed after visit " + std::to_string(k) +
                            " is missing",
                        i, k);
      }
    }
    for (std::size_t k = 0; k < n_visits; ++k) {
      if (s.observed[k] && !std::isfinite(s.outcomes(k))) {
        throw DataError("non-finite outcome for " + describe(s, i), i, k);
      }
      if (!s.observed[k]) s.outcomes(k) = kMissing;
    }
    seen[group_index(s.group)] = true;
  }
  if (!seen[0] || !seen[1]) throw DataError("both groups must be nonempty");

  TrialDataset d;
  d.subjects_ = std::move(subjects);
  d.n_visits_ = n_visits;
  d.n_covariates_ = n_covariates;
  return d;
}

std::size_t TrialDataset::n_in_group(Group g) const {
  return static_cast<std::size_t>(
      std::count_if(subjects_.begin(), subjects_.end(), [g](const Subject& s) { return s.group == g; }));
}

TrialDataset parse_dataset(const std::string& csv_text, const CsvSchema& schema) {
  auto table = csv::parse(csv_text);
  const auto& header = table.header;

  auto cov_cols = schema.covariate_columns.empty() ? numbered_columns(header, 'x') : schema.covariate_columns;
  auto out_cols = schema.outcome_columns.empty() ? numbered_columns(header, 'y') : schema.outcome_columns;
  if (out_cols.empty()) throw DataError("no outcome columns (y1..yT) in header");

  std::vector<std::size_t> cov_idx, out_idx;
  for (const auto& c : cov_cols) cov_idx.push_back(column_index(header, c));
  for (const auto& c : out_cols) out_idx.push_back(column_index(header, c));
  const std::size_t group_idx = column_index(header, schema.group_column);
  auto id_it = std::find(header.begin(), header.end(), schema.id_column);
  const bool has_id = id_it != header.end();
  const auto id_idx = static_cast<std::size_t>(id_it - header.begin());

  std::vector<Subject> subjects;
  subjects.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    Subject s;
    s.id = has_id ? row[id_idx] : default_id(r);
    s.covariates.resize(static_cast<Eigen::Index>(cov_idx.size()));
    for (std::size_t c = 0; c < cov_idx.size(); ++c) {
      const auto& cell = row[cov_idx[c]];
      if (is_missing_token(cell)) throw DataError("missing covariate '" + cov_cols[c] + "' for " + describe(s, r), r);
      auto v = parse_number(cell);
      if (!v) throw DataError("malformed covariate '" + cell + "' for " + describe(s, r), r);
      s.covariates(static_cast<Eigen::Index>(c)) = *v;
    }
    const auto& g = row[group_idx];
    if (g == "1") {
      s.group = Group::Control;
    } else if (g == "2") {
      s.group = Group::Treatment;
    } else {
      throw DataError("unknown group label '" + g + "' for " + describe(s, r), r);
    }
    s.outcomes.resize(static_cast<Eigen::Index>(out_idx.size()));
    s.observed.resize(out_idx.size());
    for (std::size_t k = 0; k < out_idx.size(); ++k) {
      const auto& cell = row[out_idx[k]];
      if (is_missing_token(cell)) {
        s.observed[k] = false;
        s.outcomes(static_cast<Eigen::Index>(k)) = kMissing;
        continue;
      }
      auto v = parse_number(cell);
      if (!v) {
        throw DataError("malformed outcome '" + cell + "' in column " + out_cols[k] + " for " + describe(s, r), r, k);
      }
      s.observed[k] = true;
      s.outcomes(static_cast<Eigen::Index>(k)) = *v;
    }
    subjects.push_back(std::move(s));
  }
  return TrialDataset::create(std::move(subjects), out_idx.size(), cov_idx.size());
}

TrialDataset load_dataset(const std::filesystem::path& path, const CsvSchema& schema) {
  return parse_dataset(csv::read_file(path.string()), schema);
}

std::string format_dataset(const TrialDataset& data) {
  std::ostringstream out;
  bool custom_ids = false;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    if (data.subject(i).id != default_id(i)) custom_ids = true;
  }
  std::vector<std::string> cols;
  if (custom_ids) cols.push_back("id");
  for (std::size_t c = 0; c < data.n_covariates(); ++c) cols.push_back("x" + std::to_string(c + 1));
  cols.push_back("group");
  for (std::size_t k = 0; k < data.n_visits(); ++k) cols.push_back("y" + std::to_string(k + 1));
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (const auto& s : data.subjects()) {
    bool first = true;
    auto emit = [&](const std::string& v) {
      out << (first ? "" : ",") << v;
      first = false;
    };
    if (custom_ids) emit(s.id);
    for (Eigen::Index c = 0; c < s.covariates.size(); ++c) emit(format_double(s.covariates(c)));
    emit(std::to_string(static_cast<int>(s.group)));
    for (std::size_t k = 0; k < data.n_visits(); ++k) {
      emit(s.observed[k] ? format_double(s.outcomes(static_cast<Eigen::Index>(k))) : "NA");
    }
    out << '\n';
  }
  return out.str();
}

void write_dataset(const TrialDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << format_dataset(data);
}

std::string long_to_wide_csv(const std::string& long_csv, std::size_t n_visits) {
  auto table = csv::parse(long_csv);
  const auto& header = table.header;
  const std::size_t id_idx = column_index(header, "id");
  const std::size_t visit_idx = column_index(header, "visit");
  const std::size_t y_idx = column_index(header, "y");

  std::vector<std::size_t> carry;  // per-subject columns copied from the first row seen
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != id_idx && c != visit_idx && c != y_idx) carry.push_back(c);
  }

  struct Wide {
    std::vector<std::string> fixed;
    std::vector<std::string> y;
  };
  std::vector<std::string> order;
  std::map<std::string, Wide> by_id;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto& id = row[id_idx];
    auto [it, inserted] = by_id.try_emplace(id);
    if (inserted) {
      order.push_back(id);
      for (auto c : carry) it->second.fixed.push_back(row[c]);
      it->second.y.assign(n_visits, "NA");
    } else {
      for (std::size_t j = 0; j < carry.size(); ++j) {
        if (it->second.fixed[j] != row[carry[j]]) {
          throw DataError("column '" + header[carry[j]] + "' varies within subject '" + id + "'", r);
        }
      }
    }
    int visit = 0;
    const auto& vs = row[visit_idx];
    auto [ptr, ec] = std::from_chars(vs.data(), vs.data() + vs.size(), visit);
    if (ec != std::errc() || ptr != vs.data() + vs.size() || visit < 1 ||
        static_cast<std::size_t>(visit) > n_visits) {
      throw DataError("invalid visit '" + vs + "' for subject '" + id + "'", r);
    }
    it->second.y[static_cast<std::size_t>(visit - 1)] = is_missing_token(row[y_idx]) ? "NA" : row[y_idx];
  }

  std::ostringstream out;
  out << "id";
  for (auto c : carry) out << ',' << header[c];
  for (std::size_t k = 0; k < n_visits; ++k) out << ",y" << (k + 1);
  out << '\n';
  for (const auto& id : order) {
    const auto& w = by_id.at(id);
    out << id;
    for (const auto& f : w.fixed) out << ',' << f;
    for (const auto& y : w.y) out << ',' << y;
    out << '\n';
  }
  return out.str();
}

}  // namespace distimpute
