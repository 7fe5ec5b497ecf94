#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dce {

/// One alternative of one answered choice task, in long format.
struct ResponseRow {
  std::int64_t gid = 0;         // choice-task identifier
  std::int64_t respondent = 0;
  std::size_t alt = 0;          // 1-based position within the task
  int choice = 0;               // 1 on the chosen alternative
  std::vector<double> covariates;

  bool operator==(const ResponseRow&) const = default;
};

/// Long-format choice data: every row carries the same covariate columns.
struct ResponseDataset {
  std::vector<std::string> covariate_names;
  std::vector<ResponseRow> rows;

  std::optional<std::size_t> column_index(std::string_view name) const;
  std::size_t n_tasks() const;

  bool operator==(const ResponseDataset&) const = default;
};

/// Lists every invariant violation; empty means valid. An empty dataset
/// with a column registry is valid.
std::vector<std::string> check_dataset(const ResponseDataset& data);

/// CSV columns: gid,respondent,alt,choice, then one per covariate.
std::string write_dataset_csv(const ResponseDataset& data);
/// Throws ParseError (with line) on malformed input, InvalidInput when the
/// rows violate the dataset invariants.
ResponseDataset read_dataset_csv(std::string_view text);

}  // namespace dce
