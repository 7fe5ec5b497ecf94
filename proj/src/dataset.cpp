#include "dce/dataset.hpp"

#include <map>

#include "dce/csv.hpp"
#include "dce/errors.hpp"

namespace dce {

namespace {

constexpr const char* kFixedColumns[] = {"gid", "respondent", "alt", "choice"};

}  // namespace

std::optional<std::size_t> ResponseDataset::column_index(std::string_view name) const {
  for (std::size_t k = 0; k < covariate_names.size(); ++k) {
    if (covariate_names[k] == name) return k;
  }
  return std::nullopt;
}

std::size_t ResponseDataset::n_tasks() const {
  std::map<std::int64_t, int> seen;
  for (const auto& r : rows) seen[r.gid] = 1;
  return seen.size();
}

std::vector<std::string> check_dataset(const ResponseDataset& data) {
  std::vector<std::string> problems;
  for (std::size_t k = 0; k < data.covariate_names.size(); ++k) {
    if (data.covariate_names[k].empty()) problems.push_back("covariate column " + std::to_string(k + 1) + " has no name");
    for (std::size_t m = 0; m < k; ++m) {
      if (data.covariate_names[m] == data.covariate_names[k]) {
        problems.push_back("duplicate covariate column '" + data.covariate_names[k] + "'");
      }
    }
  }
  struct Task {
    std::size_t rows = 0;
    std::size_t chosen = 0;
  };
  std::map<std::int64_t, Task> tasks;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    const auto& r = data.rows[i];
    if (r.covariates.size() != data.covariate_names.size()) {
      problems.push_back("row " + std::to_string(i + 1) + " has " + std::to_string(r.covariates.size()) +
                         " covariates, expected " + std::to_string(data.covariate_names.size()));
    }
    if (r.choice != 0 && r.choice != 1) {
      problems.push_back("row " + std::to_string(i + 1) + " has choice " + std::to_string(r.choice) + " (must be 0 or 1)");
    }
    auto& t = tasks[r.gid];
    ++t.rows;
    if (r.choice == 1) ++t.chosen;
  }
  for (const auto& [gid, t] : tasks) {
    if (t.chosen != 1) {
      problems.push_back("gid " + std::to_string(gid) + " has " + std::to_string(t.chosen) + " chosen rows (must be exactly 1)");
    }
    if (t.rows < 2) problems.push_back("gid " + std::to_string(gid) + " has fewer than 2 alternatives");
  }
  return problems;
}

std::string write_dataset_csv(const ResponseDataset& data) {
  std::vector<std::string> header(std::begin(kFixedColumns), std::end(kFixedColumns));
  header.insert(header.end(), data.covariate_names.begin(), data.covariate_names.end());
  std::string out = csv::join(header) + "\n";
  for (const auto& r : data.rows) {
    std::string line = std::to_string(r.gid) + "," + std::to_string(r.respondent) + "," + std::to_string(r.alt) + "," +
                       std::to_string(r.choice);
    for (double v : r.covariates) line += "," + csv::format_number(v);
    out += line + "\n";
  }
  return out;
}

ResponseDataset read_dataset_csv(std::string_view text) {
  const auto records = csv::parse(text);
  std::size_t at = 0;
  while (at < records.size() && records[at].comment) ++at;
  if (at == records.size()) throw ParseError("missing header row", 1);
  const auto& header = records[at];
  if (header.fields.size() < 4) throw ParseError("header needs gid,respondent,alt,choice", header.line);
  for (std::size_t k = 0; k < 4; ++k) {
    if (header.fields[k] != kFixedColumns[k]) {
      throw ParseError("header column " + std::to_string(k + 1) + " must be '" + kFixedColumns[k] + "'", header.line);
    }
  }
  ResponseDataset data;
  data.covariate_names.assign(header.fields.begin() + 4, header.fields.end());
  for (std::size_t r = at + 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.comment) continue;
    if (rec.fields.size() != header.fields.size()) {
      throw ParseError("expected " + std::to_string(header.fields.size()) + " fields, got " +
                           std::to_string(rec.fields.size()),
                       rec.line);
    }
    ResponseRow row;
    row.gid = csv::parse_integer(rec.fields[0], rec.line);
    row.respondent = csv::parse_integer(rec.fields[1], rec.line);
    const long long alt = csv::parse_integer(rec.fields[2], rec.line);
    if (alt < 1) throw ParseError("alt must be positive", rec.line);
    row.alt = static_cast<std::size_t>(alt);
    row.choice = static_cast<int>(csv::parse_integer(rec.fields[3], rec.line));
    row.covariates.reserve(data.covariate_names.size());
    for (std::size_t k = 4; k < rec.fields.size(); ++k) row.covariates.push_back(csv::parse_number(rec.fields[k], rec.line));
    data.rows.push_back(std::move(row));
  }
  const auto problems = check_dataset(data);
  if (!problems.empty()) throw InvalidInput("invalid response dataset: " + problems.front());
  return data;
}

}  // namespace dce
