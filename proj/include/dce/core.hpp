#pragma once

// Choice-model math shared by the optimizer, estimator and survey engine:
// dummy coding, multinomial-logit probabilities, Fisher information,
// D-error / DB-error, prior draws and synthetic respondents.
//
// Everything here is a pure function of its arguments, seeds included.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dce/dataset.hpp"

namespace dce {

inline constexpr double kSymmetryTolerance = 1e-10;
inline constexpr double kSingularDeterminant = 1e-300;
/// A Cholesky pivot whose square is below this fraction of the largest
/// diagonal entry is rounding noise; the matrix counts as singular.
inline constexpr double kRelativePivotTolerance = 1e-12;
inline constexpr double kInfiniteError = std::numeric_limits<double>::infinity();

struct AttributeSpec {
  std::string name;
  std::vector<std::string> levels;  // first entry is the omitted base level

  bool operator==(const AttributeSpec&) const = default;
};

/// How prior draws are generated for the Bayesian criterion.
enum class DrawScheme { pseudo_random, halton };

struct PriorSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::size_t n_draws = 100;
  std::uint64_t draw_seed_offset = 0;
  DrawScheme scheme = DrawScheme::pseudo_random;

  /// Zero mean, identity covariance.
  static PriorSpec standard(std::size_t n_parameters);

  bool operator==(const PriorSpec& o) const {
    return mean == o.mean && covariance == o.covariance && n_draws == o.n_draws &&
           draw_seed_offset == o.draw_seed_offset && scheme == o.scheme;
  }
};

struct DesignSettings {
  std::vector<AttributeSpec> attributes;
  std::size_t n_alts = 2;  // non-opt-out alternatives per set
  std::size_t n_sets = 1;
  bool opt_out = false;
  bool bayesian = false;
  PriorSpec priors;
  std::uint64_t seed = 0;

  std::vector<std::size_t> level_counts() const;
  /// K = sum over attributes of (levels - 1).
  std::size_t n_parameters() const;

  bool operator==(const DesignSettings&) const = default;
};

/// Attributes named "A1", "A2", ... with levels "L1", "L2", ...
std::vector<AttributeSpec> default_attributes(std::span<const std::size_t> level_counts);

/// Settings with default names and priors (zero mean, identity covariance).
DesignSettings make_settings(std::span<const std::size_t> level_counts, std::size_t n_alts, std::size_t n_sets,
                             bool opt_out = false, bool bayesian = false, std::uint64_t seed = 0);

/// Maps (attribute, level) to a dummy column; the first level has none.
class CodingMap {
 public:
  struct Attribute {
    std::string name;
    std::vector<std::string> levels;
    std::size_t first_column = 0;  // column of levels[1]
  };

  explicit CodingMap(std::vector<AttributeSpec> attributes);

  std::size_t n_columns() const noexcept { return column_names_.size(); }
  std::size_t n_attributes() const noexcept { return attributes_.size(); }
  const std::vector<Attribute>& attributes() const noexcept { return attributes_; }
  const std::vector<std::string>& column_names() const noexcept { return column_names_; }

  /// Column for a level index, nullopt for the base level.
  std::optional<std::size_t> column_of(std::size_t attribute, std::size_t level) const;

  /// Coded vector for one profile (one level index per attribute).
  Eigen::VectorXd encode(std::span<const int> levels) const;
  /// Inverse of encode. Throws CorruptDesign unless every entry is 0 or 1
  /// with at most one 1 per attribute.
  std::vector<int> decode(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;

 private:
  std::vector<Attribute> attributes_;
  std::vector<std::string> column_names_;
};

CodingMap dummy_code(const DesignSettings& settings);

/// Dummy-coded design matrix; rows ordered by (set, alternative), each set
/// occupying alts_per_set consecutive rows. With an opt-out the last row of
/// every set is the all-zero opt-out row.
struct CodedDesign {
  std::vector<std::string> column_names;
  std::size_t n_sets = 0;
  std::size_t alts_per_set = 0;  // includes the opt-out
  bool opt_out = false;
  Eigen::MatrixXd x;

  std::size_t n_columns() const noexcept { return column_names.size(); }
  std::size_t n_rows() const noexcept { return n_sets * alts_per_set; }
  /// Number of real (non-opt-out) alternatives per set.
  std::size_t n_real_alts() const noexcept { return opt_out ? alts_per_set - 1 : alts_per_set; }
  /// `set` is 0-based.
  auto set_rows(std::size_t set) const { return x.middleRows(set * alts_per_set, alts_per_set); }
  bool is_opt_out_alt(std::size_t alt) const noexcept { return opt_out && alt + 1 == alts_per_set; }

  bool operator==(const CodedDesign& o) const {
    return column_names == o.column_names && n_sets == o.n_sets && alts_per_set == o.alts_per_set &&
           opt_out == o.opt_out && x.rows() == o.x.rows() && x.cols() == o.x.cols() && x == o.x;
  }
};

/// Lists every violated design invariant; empty means valid.
std::vector<std::string> check_design(const CodedDesign& design, const CodingMap& coding);

struct Coefficients {
  std::vector<std::string> names;
  Eigen::VectorXd beta;
};

struct ChoiceProbabilities {
  std::size_t set_index = 0;  // 1-based
  Eigen::VectorXd probs;
};

/// Product of the level counts. Throws InvalidInput on an empty list or a
/// count below 2.
std::uint64_t count_full_factorial(std::span<const std::size_t> level_counts);
/// n(n-1)/2. Throws InvalidInput when n < 2.
std::uint64_t count_unordered_pairs(std::uint64_t n_profiles);

/// Never throws; returns one message per violated rule.
std::vector<std::string> validate_settings(const DesignSettings& settings);

/// Softmax of rows * beta with the maximum utility subtracted first.
Eigen::VectorXd mnl_probabilities(const Eigen::Ref<const Eigen::MatrixXd>& rows, const Eigen::VectorXd& beta);
std::vector<ChoiceProbabilities> choice_probabilities(const CodedDesign& design, const Eigen::VectorXd& beta);

/// Sum over sets of X_s' (diag(p_s) - p_s p_s') X_s.
Eigen::MatrixXd fisher_information(const CodedDesign& design, const Eigen::VectorXd& beta);

/// det(M)^(-1/K), or kInfiniteError when M is singular.
double d_error_from_information(const Eigen::MatrixXd& information);
/// Same, reusing a caller-owned factorization buffer.
double d_error_from_information(const Eigen::MatrixXd& information, Eigen::LLT<Eigen::MatrixXd>& workspace);
double d_error(const CodedDesign& design, const Eigen::VectorXd& beta);

/// n_draws x K matrix of draws from N(mean, covariance). Throws
/// InvalidInput when the covariance is not symmetric PSD.
Eigen::MatrixXd draw_priors(const PriorSpec& prior, std::uint64_t seed);

/// Mean D-error over the rows of `draws`; infinite if any draw is.
double db_error_over_draws(const CodedDesign& design, const Eigen::MatrixXd& draws);
double db_error(const CodedDesign& design, const PriorSpec& prior, std::uint64_t seed);

/// Synthetic respondents answering every set by MNL sampling. Rows use
/// gid = respondent_index * n_sets + set (set 1-based, respondent 0-based)
/// and respondent ids starting at 1.
ResponseDataset simulate_choices(const CodedDesign& design, const Eigen::VectorXd& true_beta,
                                 std::size_t n_respondents, std::uint64_t seed);

}  // namespace dce
