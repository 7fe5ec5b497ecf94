#pragma once

// JSON mappings for the library's value types (nlohmann ADL hooks).
// Parsing errors surface as dce::ParseError.

#include "json.hpp"

#include <Eigen/Dense>

#include "dce/core.hpp"
#include "dce/estimation.hpp"
#include "dce/optimizer.hpp"

namespace dce {

using Json = nlohmann::json;

Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j, std::string_view what);
Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j, std::string_view what);

/// Reals that may be infinite: stored as the strings "Inf" / "-Inf".
Json real_to_json(double v);
double real_from_json(const Json& j, std::string_view what);

void to_json(Json& j, const AttributeSpec& a);
void from_json(const Json& j, AttributeSpec& a);
void to_json(Json& j, const PriorSpec& p);
void to_json(Json& j, const DesignSettings& s);

/// A mean array or a full object; missing parts default to zero mean and
/// identity covariance of size n_parameters.
PriorSpec prior_from_json(const Json& j, std::size_t n_parameters);

/// Accepts either "attributes": [{name, levels}] or the shorthand
/// "levels": [3, 2, 3, 3]. "priors" may be a mean array or an object with
/// mean / covariance / n_draws / draw_seed_offset / scheme; missing parts
/// default to zero mean and identity covariance. The result is not
/// validated; run validate_settings on it.
DesignSettings settings_from_json(const Json& j);

Json optimizer_config_to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const Json& j, const DesignSettings& settings);

/// Coefficient table, fit statistics, vcov and plot data.
Json estimation_to_json(const EstimationResult& est);
Json wtp_to_json(const WtpResult& w);

/// Parses text, rethrowing nlohmann errors as ParseError.
Json parse_json(std::string_view text);

}  // namespace dce
