#include "dce/json_io.hpp"

#include <cmath>

#include "dce/errors.hpp"

namespace dce {

namespace {

std::string_view scheme_name(DrawScheme s) { return s == DrawScheme::halton ? "halton" : "pseudo_random"; }

DrawScheme scheme_from(const std::string& s) {
  if (s == "pseudo_random") return DrawScheme::pseudo_random;
  if (s == "halton") return DrawScheme::halton;
  throw ParseError("unknown draw scheme '" + s + "'");
}

}  // namespace

Json vector_to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(real_to_json(v(i)));
  return out;
}

Eigen::VectorXd vector_from_json(const Json& j, std::string_view what) {
  if (!j.is_array()) throw ParseError(std::string(what) + " must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = real_from_json(j[i], what);
  return v;
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_to_json(m.row(r).transpose()));
  return out;
}

Eigen::MatrixXd matrix_from_json(const Json& j, std::string_view what) {
  if (!j.is_array()) throw ParseError(std::string(what) + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].is_array() ? j[0].size() : 0) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto v = vector_from_json(j[static_cast<std::size_t>(r)], what);
    if (v.size() != cols) throw ParseError(std::string(what) + " rows have unequal lengths");
    m.row(r) = v.transpose();
  }
  return m;
}

Json real_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  if (std::isnan(v)) return "NaN";
  return v;
}

double real_from_json(const Json& j, std::string_view what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "Inf") return HUGE_VAL;
    if (s == "-Inf") return -HUGE_VAL;
    if (s == "NaN") return std::nan("");
  }
  throw ParseError(std::string(what) + " must be a number");
}

void to_json(Json& j, const AttributeSpec& a) { j = Json{{"name", a.name}, {"levels", a.levels}}; }

void from_json(const Json& j, AttributeSpec& a) {
  if (!j.is_object() || !j.contains("name") || !j.contains("levels")) {
    throw ParseError("attribute entries need \"name\" and \"levels\"");
  }
  a.name = j.at("name").get<std::string>();
  a.levels = j.at("levels").get<std::vector<std::string>>();
}

void to_json(Json& j, const PriorSpec& p) {
  j = Json{{"mean", vector_to_json(p.mean)},
           {"covariance", matrix_to_json(p.covariance)},
           {"n_draws", p.n_draws},
           {"draw_seed_offset", p.draw_seed_offset},
           {"scheme", scheme_name(p.scheme)}};
}

void to_json(Json& j, const DesignSettings& s) {
  j = Json{{"attributes", s.attributes}, {"n_alts", s.n_alts}, {"n_sets", s.n_sets}, {"opt_out", s.opt_out},
           {"bayesian", s.bayesian},     {"priors", s.priors},  {"seed", s.seed}};
}

PriorSpec prior_from_json(const Json& p, std::size_t n_parameters) {
  try {
    PriorSpec prior = PriorSpec::standard(n_parameters);
    if (p.is_array()) {
      prior.mean = vector_from_json(p, "priors");
    } else if (p.is_object()) {
      if (p.contains("mean")) prior.mean = vector_from_json(p.at("mean"), "priors.mean");
      if (p.contains("covariance")) prior.covariance = matrix_from_json(p.at("covariance"), "priors.covariance");
      if (p.contains("n_draws")) prior.n_draws = p.at("n_draws").get<std::size_t>();
      if (p.contains("draw_seed_offset")) prior.draw_seed_offset = p.at("draw_seed_offset").get<std::uint64_t>();
      if (p.contains("scheme")) prior.scheme = scheme_from(p.at("scheme").get<std::string>());
    } else {
      throw ParseError("priors must be an array or an object");
    }
    return prior;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad priors: ") + e.what());
  }
}

DesignSettings settings_from_json(const Json& j) {
  try {
    if (!j.is_object()) throw ParseError("design settings must be a JSON object");
    DesignSettings s;
    if (j.contains("attributes")) {
      s.attributes = j.at("attributes").get<std::vector<AttributeSpec>>();
    } else if (j.contains("levels")) {
      s.attributes = default_attributes(j.at("levels").get<std::vector<std::size_t>>());
    } else {
      throw ParseError("design settings need \"attributes\" or \"levels\"");
    }
    auto count = [&](const char* key, std::size_t fallback) {
      if (!j.contains(key)) return fallback;
      const auto& v = j.at(key);
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ParseError(std::string(key) + " must be a non-negative integer");
      return v.get<std::size_t>();
    };
    s.n_alts = count("n_alts", 2);
    s.n_sets = count("n_sets", 1);
    s.opt_out = j.value("opt_out", false);
    s.bayesian = j.value("bayesian", false);
    s.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : 0;

    s.priors = j.contains("priors") ? prior_from_json(j.at("priors"), s.n_parameters())
                                    : PriorSpec::standard(s.n_parameters());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad design settings: ") + e.what());
  }
}

Json optimizer_config_to_json(const OptimizerConfig& c) {
  return Json{{"n_starts", c.n_starts},
              {"max_passes", c.max_passes},
              {"improvement_tolerance", c.improvement_tolerance},
              {"seed", c.seed}};
}

OptimizerConfig optimizer_config_from_json(const Json& j, const DesignSettings& settings) {
  OptimizerConfig c = OptimizerConfig::from_settings(settings);
  try {
    if (j.is_null()) return c;
    if (!j.is_object()) throw ParseError("optimizer config must be an object");
    c.n_starts = j.value("n_starts", c.n_starts);
    c.max_passes = j.value("max_passes", c.max_passes);
    c.improvement_tolerance = j.value("improvement_tolerance", c.improvement_tolerance);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad optimizer config: ") + e.what());
  }
  return c;
}

Json estimation_to_json(const EstimationResult& est) {
  Json coefs = Json::array();
  for (std::size_t k = 0; k < est.coefficients.names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    coefs.push_back({{"name", est.coefficients.names[k]},
                     {"estimate", real_to_json(est.coefficients.beta(i))},
                     {"std_error", real_to_json(est.std_errors(i))},
                     {"z", real_to_json(est.z_values(i))},
                     {"p", real_to_json(est.p_values(i))}});
  }
  Json plot = Json::array();
  for (const auto& p : coefficient_plot_data(est)) {
    plot.push_back({{"name", p.name},
                    {"estimate", real_to_json(p.estimate)},
                    {"ci_low", real_to_json(p.ci_low)},
                    {"ci_high", real_to_json(p.ci_high)}});
  }
  return Json{{"coefficients", coefs},
              {"log_likelihood", real_to_json(est.log_likelihood)},
              {"null_log_likelihood", real_to_json(est.null_log_likelihood)},
              {"iterations", est.iterations},
              {"converged", est.converged},
              {"n_tasks", est.n_tasks},
              {"vcov", matrix_to_json(est.vcov)},
              {"plot", plot}};
}

Json wtp_to_json(const WtpResult& w) {
  Json entries = Json::array();
  for (const auto& e : w.entries) {
    entries.push_back({{"name", e.name},
                       {"estimate", real_to_json(e.estimate)},
                       {"std_error", real_to_json(e.std_error)},
                       {"ci_low", real_to_json(e.ci_low)},
                       {"ci_high", real_to_json(e.ci_high)}});
  }
  return Json{{"price", w.price_name}, {"entries", entries}};
}

Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace dce
