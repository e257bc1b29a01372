#include "hybridtrial/data.hpp"

#include "hybridtrial/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace hybridtrial {

namespace {

std::vector<Index> rank_ids(const std::vector<std::string>& ids) {
  std::vector<Index> order(ids.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return ids[a] < ids[b]; });
  std::vector<Index> rank(ids.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<Index>(r);
  return rank;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::optional<double> parse_real(const std::string& text) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

struct ParsedCsv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

ParsedCsv read_csv(std::istream& in) {
  ParsedCsv csv;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!have_header) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      if (line.front() == '#') continue;
      csv.header = split_line(line);
      have_header = true;
      continue;
    }
    csv.rows.push_back(split_line(line));
  }
  if (!have_header) throw Error(ErrorCode::MissingColumn, "CSV input has no header row");
  return csv;
}

struct ColumnMap {
  Index outcome = -1;
  Index assignment = -1;
  Index sample = -1;
  Index id = -1;
  std::vector<Index> covariates;
  std::vector<std::string> covariate_names;
};

ColumnMap map_columns(const std::vector<std::string>& header, const ColumnSchema& schema,
                      std::vector<ValidationIssue>* issues) {
  std::unordered_map<std::string, Index> position;
  for (std::size_t c = 0; c < header.size(); ++c) position.emplace(header[c], static_cast<Index>(c));

  auto missing = [&](const std::string& name) {
    if (issues) {
      issues->push_back({0, name, "MissingColumn", "column '" + name + "' not found in header"});
      return Index{-1};
    }
    throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
  };
  auto find = [&](const std::string& name) {
    const auto it = position.find(name);
    return it == position.end() ? missing(name) : it->second;
  };

  ColumnMap map;
  map.outcome = find(schema.outcome);
  map.assignment = find(schema.assignment);
  map.sample = find(schema.sample);
  if (schema.id_column) map.id = find(*schema.id_column);

  if (!schema.covariates.empty()) {
    for (const auto& name : schema.covariates) {
      map.covariates.push_back(find(name));
      map.covariate_names.push_back(name);
    }
  } else {
    for (std::size_t c = 0; c < header.size(); ++c) {
      const auto& name = header[c];
      if (name == schema.outcome || name == schema.assignment || name == schema.sample ||
          (schema.id_column && name == *schema.id_column)) {
        continue;
      }
      map.covariates.push_back(static_cast<Index>(c));
      map.covariate_names.push_back(name);
    }
  }
  if (map.covariates.empty()) {
    if (!issues) throw Error(ErrorCode::MissingColumn, "schema names no covariate column");
    issues->push_back({0, "", "MissingColumn", "schema names no covariate column"});
  }
  return map;
}

// Converts one CSV row. Problems go to `issues` when given, otherwise throw.
void convert_row(const std::vector<std::string>& fields, const std::vector<std::string>& header,
                 const ColumnMap& map, Index row, std::vector<double>& covariates, double& outcome,
                 int& assignment, int& sample, std::vector<ValidationIssue>* issues) {
  auto report = [&](ErrorCode code, Index col, const std::string& message) {
    const std::string column = col >= 0 && static_cast<std::size_t>(col) < header.size()
                                   ? header[col]
                                   : std::string{};
    if (!issues) {
      throw Error(code, "row " + std::to_string(row) + ", column '" + column + "': " + message);
    }
    issues->push_back({row, column, std::string(to_string(code)), message});
  };
  auto field = [&](Index col) -> const std::string* {
    if (col < 0) return nullptr;
    if (static_cast<std::size_t>(col) >= fields.size() || fields[col].empty()) {
      report(ErrorCode::BadValue, col, "missing value");
      return nullptr;
    }
    return &fields[col];
  };
  auto real = [&](Index col) -> std::optional<double> {
    const auto* text = field(col);
    if (!text) return std::nullopt;
    auto value = parse_real(*text);
    if (!value) report(ErrorCode::BadValue, col, "not a finite number: '" + *text + "'");
    return value;
  };
  auto binary = [&](Index col) -> std::optional<int> {
    const auto value = real(col);
    if (!value) return std::nullopt;
    if (*value != 0.0 && *value != 1.0) {
      report(ErrorCode::BadValue, col, "expected 0 or 1");
      return std::nullopt;
    }
    return static_cast<int>(*value);
  };

  if (fields.size() != header.size()) {
    report(ErrorCode::BadValue, -1,
           "expected " + std::to_string(header.size()) + " fields, found " +
               std::to_string(fields.size()));
  }

  const auto y = real(map.outcome);
  const auto a = binary(map.assignment);
  const auto s = binary(map.sample);
  covariates.assign(map.covariates.size(), 0.0);
  for (std::size_t k = 0; k < map.covariates.size(); ++k) {
    if (const auto x = real(map.covariates[k])) covariates[k] = *x;
  }
  if (a && s && *s == 0 && *a == 1) {
    report(ErrorCode::EcTreated, map.assignment, "external control (s=0) cannot be treated");
  }
  outcome = y.value_or(0.0);
  assignment = a.value_or(0);
  sample = s.value_or(1);
}

}  // namespace

TrialData::TrialData(CovariateMatrix covariates, Eigen::VectorXd outcome,
                     Eigen::VectorXi assignment, Eigen::VectorXi sample_indicator,
                     std::vector<std::string> unit_ids)
    : covariates_(std::move(covariates)),
      outcome_(std::move(outcome)),
      assignment_(std::move(assignment)),
      sample_(std::move(sample_indicator)) {
  const Index n = outcome_.size();
  if (unit_ids.empty()) {
    unit_ids.reserve(n);
    for (Index i = 0; i < n; ++i) unit_ids.push_back(std::to_string(i));
  }
  if (static_cast<Index>(unit_ids.size()) != n) {
    throw Error(ErrorCode::InvalidArgument, "unit_ids length does not match outcome length");
  }
  id_rank_ = std::make_shared<const std::vector<Index>>(rank_ids(unit_ids));
  id_pool_ = std::make_shared<const std::vector<std::string>>(std::move(unit_ids));
  id_ref_.resize(n);
  std::iota(id_ref_.begin(), id_ref_.end(), Index{0});
  validate();
  n_rct_ = sample_.sum();
}

void TrialData::validate() const {
  const Index n = outcome_.size();
  if (covariates_.rows() != n || assignment_.size() != n || sample_.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "covariates, outcome, A and S must have equal length");
  }
  if (covariates_.cols() < 1) throw Error(ErrorCode::InvalidArgument, "need at least one covariate");
  if (!covariates_.allFinite() || !outcome_.allFinite()) {
    throw Error(ErrorCode::BadValue, "covariates and outcome must be finite");
  }
  for (Index i = 0; i < n; ++i) {
    const int a = assignment_[i];
    const int s = sample_[i];
    if ((a != 0 && a != 1) || (s != 0 && s != 1)) {
      throw Error(ErrorCode::BadValue, "A and S must be 0 or 1 (unit " + std::to_string(i) + ")");
    }
    if (s == 0 && a == 1) {
      throw Error(ErrorCode::EcTreated, "external control " + unit_id(i) + " is treated");
    }
  }
}

std::vector<std::string> TrialData::unit_ids() const {
  std::vector<std::string> ids;
  ids.reserve(size());
  for (Index i = 0; i < size(); ++i) ids.push_back(unit_id(i));
  return ids;
}

std::vector<std::string> TrialData::unit_ids(std::span<const Index> rows) const {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (const Index i : rows) ids.push_back(unit_id(i));
  return ids;
}

TrialData TrialData::with_assignment(Eigen::VectorXi assignment) const {
  TrialData copy = *this;
  copy.assignment_ = std::move(assignment);
  copy.validate();
  return copy;
}

TrialData TrialData::with_outcome(Eigen::VectorXd outcome) const {
  TrialData copy = *this;
  copy.outcome_ = std::move(outcome);
  copy.validate();
  return copy;
}

TrialData TrialData::subset(std::span<const Index> rows) const {
  TrialData out;
  const Index m = static_cast<Index>(rows.size());
  out.covariates_.resize(m, dim());
  out.outcome_.resize(m);
  out.assignment_.resize(m);
  out.sample_.resize(m);
  out.id_ref_.resize(m);
  for (Index k = 0; k < m; ++k) {
    const Index i = rows[k];
    out.covariates_.row(k) = covariates_.row(i);
    out.outcome_[k] = outcome_[i];
    out.assignment_[k] = assignment_[i];
    out.sample_[k] = sample_[i];
    out.id_ref_[k] = id_ref_[i];
  }
  out.id_pool_ = id_pool_;
  out.id_rank_ = id_rank_;
  out.n_rct_ = out.sample_.sum();
  return out;
}

IndexSets partition(const TrialData& data) {
  IndexSets sets;
  const auto& a = data.assignment();
  const auto& s = data.sample_indicator();
  for (Index i = 0; i < data.size(); ++i) {
    if (s[i] == 1) {
      sets.rct_all.push_back(i);
      (a[i] == 1 ? sets.treated : sets.rct_controls).push_back(i);
    } else {
      sets.external.push_back(i);
    }
  }
  if (sets.treated.empty()) throw Error(ErrorCode::EmptyGroup, "no treated randomized units");
  if (sets.rct_controls.empty()) throw Error(ErrorCode::EmptyGroup, "no randomized controls");
  return sets;
}

DesignSpec DesignSpec::bernoulli(double probability) {
  if (!(probability > 0.0 && probability < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "treatment probability must lie in (0, 1)");
  }
  return DesignSpec(probability);
}

TrialData load_dataset(std::istream& csv, const ColumnSchema& schema) {
  const ParsedCsv parsed = read_csv(csv);
  const ColumnMap map = map_columns(parsed.header, schema, nullptr);

  const Index n = static_cast<Index>(parsed.rows.size());
  const Index p = static_cast<Index>(map.covariates.size());
  CovariateMatrix x(n, p);
  Eigen::VectorXd y(n);
  Eigen::VectorXi a(n);
  Eigen::VectorXi s(n);
  std::vector<std::string> ids;
  ids.reserve(n);
  std::vector<double> row_x;
  for (Index r = 0; r < n; ++r) {
    convert_row(parsed.rows[r], parsed.header, map, r + 1, row_x, y[r], a[r], s[r], nullptr);
    for (Index k = 0; k < p; ++k) x(r, k) = row_x[k];
    ids.push_back(map.id >= 0 ? parsed.rows[r][map.id] : std::to_string(r));
  }
  return TrialData(std::move(x), std::move(y), std::move(a), std::move(s), std::move(ids));
}

TrialData load_dataset_file(const std::string& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return load_dataset(in, schema);
}

std::vector<ValidationIssue> validate_dataset(std::istream& csv, const ColumnSchema& schema) {
  std::vector<ValidationIssue> issues;
  ParsedCsv parsed;
  try {
    parsed = read_csv(csv);
  } catch (const Error& e) {
    issues.push_back({0, "", std::string(to_string(e.code())), e.what()});
    return issues;
  }
  const ColumnMap map = map_columns(parsed.header, schema, &issues);
  if (!issues.empty()) return issues;

  std::vector<double> row_x;
  double y = 0.0;
  int a = 0;
  int s = 0;
  for (std::size_t r = 0; r < parsed.rows.size(); ++r) {
    convert_row(parsed.rows[r], parsed.header, map, static_cast<Index>(r + 1), row_x, y, a, s,
                &issues);
  }
  return issues;
}

void write_dataset(std::ostream& out, const TrialData& data, const ColumnSchema& schema) {
  std::vector<std::string> names = schema.covariates;
  if (names.empty()) {
    for (Index k = 0; k < data.dim(); ++k) names.push_back("x" + std::to_string(k + 1));
  }
  if (static_cast<Index>(names.size()) != data.dim()) {
    throw Error(ErrorCode::InvalidArgument, "schema covariate count does not match data");
  }

  if (schema.id_column) out << *schema.id_column << ',';
  out << schema.outcome << ',' << schema.assignment << ',' << schema.sample;
  for (const auto& name : names) out << ',' << name;
  out << '\n';

  char buffer[32];
  auto real = [&](double v) {
    std::snprintf(buffer, sizeof buffer, "%.17g", v);
    return buffer;
  };
  for (Index i = 0; i < data.size(); ++i) {
    if (schema.id_column) out << data.unit_id(i) << ',';
    out << real(data.outcome()[i]) << ',' << data.assignment()[i] << ','
        << data.sample_indicator()[i];
    for (Index k = 0; k < data.dim(); ++k) out << ',' << real(data.covariates()(i, k));
    out << '\n';
  }
}

}  // namespace hybridtrial
