#pragma once

// Conditional logit estimation, willingness to pay, and coefficient-plot
// data for long-format choice responses.

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dce/core.hpp"
#include "dce/dataset.hpp"

namespace dce {

inline constexpr double kNormalQuantile975 = 1.96;
inline constexpr const char* kContinuousPriceName = "cont_price";

struct FitOptions {
  std::size_t max_iterations = 100;
  double gradient_tolerance = 1e-6;  // on max |g|
  double step_tolerance = 1e-4;      // on max |Newton step|
  double separation_bound = 50.0;    // any |beta_k| above this is separation
  std::size_t max_halvings = 20;
};

struct EstimationResult {
  Coefficients coefficients;
  Eigen::MatrixXd vcov;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd z_values;
  Eigen::VectorXd p_values;
  double log_likelihood = 0.0;
  double null_log_likelihood = 0.0;  // at beta = 0
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t n_tasks = 0;

  std::optional<std::size_t> index_of(std::string_view name) const;
};

struct WtpEntry {
  std::string name;
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct WtpResult {
  std::string price_name;
  std::vector<WtpEntry> entries;
};

struct PlotPoint {
  std::string name;
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Choice tasks of a dataset restricted to selected covariates, grouped by
/// gid in order of first appearance.
class ChoiceTasks {
 public:
  /// Throws InvalidInput on an unknown or empty covariate selection, or a
  /// dataset that violates its invariants.
  ChoiceTasks(const ResponseDataset& data, std::vector<std::string> covariates);

  struct Evaluation {
    double log_likelihood = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;  // empty unless requested
  };

  Evaluation evaluate(const Eigen::VectorXd& beta, bool with_hessian = true) const;
  double log_likelihood(const Eigen::VectorXd& beta) const { return evaluate(beta, false).log_likelihood; }

  std::size_t n_tasks() const noexcept { return tasks_.size(); }
  const std::vector<std::string>& covariates() const noexcept { return covariates_; }

  /// Names of columns that add no within-task variation beyond earlier
  /// columns (including columns constant within every task).
  std::vector<std::string> collinear_columns() const;

 private:
  struct Task {
    Eigen::MatrixXd x;
    Eigen::Index chosen = 0;
  };
  std::vector<std::string> covariates_;
  std::vector<Task> tasks_;
};

/// Replaces the dummy columns of a price attribute by one continuous
/// column: base_value + sum_c dummy_c * (value_c - base_value). Rows whose
/// alt equals `opt_out_alt` get 0 instead, since the opt-out carries no
/// price.
ResponseDataset recode_price_continuous(const ResponseDataset& data, const std::vector<std::string>& price_columns,
                                        const std::map<std::string, double>& level_values, double base_value,
                                        std::optional<std::size_t> opt_out_alt = std::nullopt,
                                        const std::string& new_name = kContinuousPriceName);

/// Same, with the price columns being every "<attribute>.<level>" column in
/// dataset order and `values` listing the base value first, then one value
/// per column.
ResponseDataset recode_price_attribute(const ResponseDataset& data, const std::string& attribute,
                                       const std::vector<double>& values,
                                       std::optional<std::size_t> opt_out_alt = std::nullopt);

struct PriceRecoding {
  std::string attribute;
  std::vector<double> values;  // base level first
  std::optional<std::size_t> opt_out_alt;
};

/// Applies an optional price recoding and resolves the covariate selection:
/// empty means every column, and selected dummies of the price attribute
/// collapse into the single continuous price column.
std::pair<ResponseDataset, std::vector<std::string>> prepare_estimation(const ResponseDataset& data,
                                                                        std::vector<std::string> covariates,
                                                                        const std::optional<PriceRecoding>& price);

/// Newton-Raphson maximum likelihood with step halving, starting at zero.
/// Throws EstimationError for rank deficiency (naming the columns) or
/// separation; returns converged = false after max_iterations.
EstimationResult fit_conditional_logit(const ResponseDataset& data, const std::vector<std::string>& covariates,
                                       const FitOptions& options = {});

/// WTP_k = -beta_k / beta_price with delta-method standard errors.
WtpResult wtp(const EstimationResult& est, const std::string& price_name, const std::vector<std::string>& targets);

std::vector<PlotPoint> coefficient_plot_data(const EstimationResult& est);

}  // namespace dce
