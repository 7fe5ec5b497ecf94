#include "dce/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "dce/errors.hpp"

namespace dce {

std::optional<std::size_t> EstimationResult::index_of(std::string_view name) const {
  for (std::size_t k = 0; k < coefficients.names.size(); ++k) {
    if (coefficients.names[k] == name) return k;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Tasks

ChoiceTasks::ChoiceTasks(const ResponseDataset& data, std::vector<std::string> covariates)
    : covariates_(std::move(covariates)) {
  if (covariates_.empty()) throw InvalidInput("select at least one covariate");
  if (const auto problems = check_dataset(data); !problems.empty()) {
    throw InvalidInput("invalid response dataset: " + problems.front());
  }
  std::vector<std::size_t> cols;
  for (const auto& name : covariates_) {
    auto idx = data.column_index(name);
    if (!idx) throw InvalidInput("unknown covariate '" + name + "'");
    cols.push_back(*idx);
  }
  std::unordered_map<std::int64_t, std::size_t> slot;
  std::vector<std::vector<const ResponseRow*>> grouped;
  for (const auto& row : data.rows) {
    auto [it, fresh] = slot.try_emplace(row.gid, grouped.size());
    if (fresh) grouped.emplace_back();
    grouped[it->second].push_back(&row);
  }
  const auto k = static_cast<Eigen::Index>(cols.size());
  tasks_.reserve(grouped.size());
  for (const auto& rows : grouped) {
    Task t;
    t.x.resize(static_cast<Eigen::Index>(rows.size()), k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (Eigen::Index c = 0; c < k; ++c) t.x(static_cast<Eigen::Index>(i), c) = rows[i]->covariates[cols[static_cast<std::size_t>(c)]];
      if (rows[i]->choice == 1) t.chosen = static_cast<Eigen::Index>(i);
    }
    tasks_.push_back(std::move(t));
  }
}

ChoiceTasks::Evaluation ChoiceTasks::evaluate(const Eigen::VectorXd& beta, bool with_hessian) const {
  const auto k = static_cast<Eigen::Index>(covariates_.size());
  if (beta.size() != k) throw InvalidInput("beta length does not match the covariates");
  Evaluation ev;
  ev.gradient = Eigen::VectorXd::Zero(k);
  if (with_hessian) ev.hessian = Eigen::MatrixXd::Zero(k, k);
  for (const auto& t : tasks_) {
    const Eigen::VectorXd u = t.x * beta;
    const double umax = u.maxCoeff();
    const Eigen::VectorXd e = (u.array() - umax).exp();
    const double denom = e.sum();
    const Eigen::VectorXd p = e / denom;
    ev.log_likelihood += u(t.chosen) - umax - std::log(denom);
    const Eigen::RowVectorXd centre = p.transpose() * t.x;
    ev.gradient += (t.x.row(t.chosen) - centre).transpose();
    if (with_hessian) {
      const Eigen::MatrixXd z = t.x.rowwise() - centre;
      ev.hessian.noalias() -= z.transpose() * p.asDiagonal() * z;
    }
  }
  return ev;
}

std::vector<std::string> ChoiceTasks::collinear_columns() const {
  // Gram-Schmidt on the within-task demeaned columns; this is the column
  // space of the information matrix at beta = 0.
  std::size_t n_rows = 0;
  for (const auto& t : tasks_) n_rows += static_cast<std::size_t>(t.x.rows());
  const auto k = static_cast<Eigen::Index>(covariates_.size());
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n_rows), k);
  Eigen::Index at = 0;
  for (const auto& t : tasks_) {
    z.middleRows(at, t.x.rows()) = t.x.rowwise() - t.x.colwise().mean();
    at += t.x.rows();
  }
  std::vector<std::string> out;
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd v = z.col(c);
    const double norm = v.norm();
    for (int sweep = 0; sweep < 2; ++sweep)
      for (const auto& q : basis) v -= q.dot(v) * q;
    const double resid = v.norm();
    if (norm == 0.0 || resid <= 1e-9 * norm) {
      out.push_back(covariates_[static_cast<std::size_t>(c)]);
    } else {
      basis.push_back(v / resid);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Price recoding

ResponseDataset recode_price_continuous(const ResponseDataset& data, const std::vector<std::string>& price_columns,
                                        const std::map<std::string, double>& level_values, double base_value,
                                        std::optional<std::size_t> opt_out_alt, const std::string& new_name) {
  if (price_columns.empty()) throw InvalidInput("no price columns given");
  if (data.column_index(new_name)) throw InvalidInput("dataset already has a '" + new_name + "' column");
  std::vector<std::size_t> idx;
  std::vector<double> delta;
  for (const auto& c : price_columns) {
    auto i = data.column_index(c);
    if (!i) throw InvalidInput("unknown price column '" + c + "'");
    auto v = level_values.find(c);
    if (v == level_values.end()) throw InvalidInput("no value given for price level '" + c + "'");
    idx.push_back(*i);
    delta.push_back(v->second - base_value);
  }
  std::vector<char> drop(data.covariate_names.size(), 0);
  for (auto i : idx) drop[i] = 1;

  ResponseDataset out;
  for (std::size_t c = 0; c < data.covariate_names.size(); ++c)
    if (!drop[c]) out.covariate_names.push_back(data.covariate_names[c]);
  out.covariate_names.push_back(new_name);
  out.rows.reserve(data.rows.size());
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const auto& row = data.rows[r];
    double price = base_value;
    int ones = 0;
    for (std::size_t m = 0; m < idx.size(); ++m) {
      const double v = row.covariates.at(idx[m]);
      if (v != 0.0 && v != 1.0) throw InvalidInput("price column '" + price_columns[m] + "' is not a dummy column");
      if (v == 1.0) {
        ++ones;
        price += delta[m];
      }
    }
    if (ones > 1) throw InvalidInput("row " + std::to_string(r + 1) + " has more than one price level set");
    if (opt_out_alt && row.alt == *opt_out_alt) price = 0.0;
    ResponseRow nr = row;
    nr.covariates.clear();
    for (std::size_t c = 0; c < row.covariates.size(); ++c)
      if (!drop[c]) nr.covariates.push_back(row.covariates[c]);
    nr.covariates.push_back(price);
    out.rows.push_back(std::move(nr));
  }
  return out;
}

ResponseDataset recode_price_attribute(const ResponseDataset& data, const std::string& attribute,
                                       const std::vector<double>& values, std::optional<std::size_t> opt_out_alt) {
  const std::string prefix = attribute + ".";
  std::vector<std::string> cols;
  for (const auto& name : data.covariate_names) {
    if (name.compare(0, prefix.size(), prefix) == 0) cols.push_back(name);
  }
  if (cols.empty()) throw InvalidInput("no columns found for price attribute '" + attribute + "'");
  if (values.size() != cols.size() + 1) {
    throw InvalidInput("price attribute '" + attribute + "' has " + std::to_string(cols.size() + 1) + " levels but " +
                       std::to_string(values.size()) + " values were given");
  }
  std::map<std::string, double> level_values;
  for (std::size_t i = 0; i < cols.size(); ++i) level_values[cols[i]] = values[i + 1];
  return recode_price_continuous(data, cols, level_values, values.front(), opt_out_alt);
}

std::pair<ResponseDataset, std::vector<std::string>> prepare_estimation(const ResponseDataset& data,
                                                                        std::vector<std::string> covariates,
                                                                        const std::optional<PriceRecoding>& price) {
  if (!price) {
    if (covariates.empty()) covariates = data.covariate_names;
    return {data, std::move(covariates)};
  }
  ResponseDataset recoded = recode_price_attribute(data, price->attribute, price->values, price->opt_out_alt);
  if (covariates.empty()) return {recoded, recoded.covariate_names};
  const std::string prefix = price->attribute + ".";
  std::vector<std::string> out;
  bool price_added = false;
  for (auto& c : covariates) {
    if (c.compare(0, prefix.size(), prefix) == 0 || c == kContinuousPriceName) {
      if (!price_added) out.emplace_back(kContinuousPriceName);
      price_added = true;
    } else {
      out.push_back(std::move(c));
    }
  }
  return {std::move(recoded), std::move(out)};
}

// ---------------------------------------------------------------------------
// Estimation

namespace {

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

void check_separation(const Eigen::VectorXd& beta, const std::vector<std::string>& names, double bound) {
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    if (!(std::abs(beta(k)) <= bound)) {
      throw EstimationError(EstimationError::Kind::separation,
                            "separation: coefficient of '" + names[static_cast<std::size_t>(k)] +
                                "' diverges (|beta| > " + std::to_string(static_cast<int>(bound)) +
                                "); its level perfectly predicts the choices");
    }
  }
}

}  // namespace

EstimationResult fit_conditional_logit(const ResponseDataset& data, const std::vector<std::string>& covariates,
                                       const FitOptions& options) {
  const ChoiceTasks tasks(data, covariates);
  if (tasks.n_tasks() == 0) throw InvalidInput("dataset has no choice tasks");
  if (const auto bad = tasks.collinear_columns(); !bad.empty()) {
    throw EstimationError(EstimationError::Kind::rank_deficient,
                          "rank deficiency: no within-task variation beyond other columns for " + join_names(bad));
  }
  const auto k = static_cast<Eigen::Index>(covariates.size());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);

  EstimationResult res;
  res.n_tasks = tasks.n_tasks();
  auto ev = tasks.evaluate(beta);
  res.null_log_likelihood = ev.log_likelihood;

  auto newton_step = [&](const ChoiceTasks::Evaluation& e) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-e.hessian);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) {
      throw EstimationError(EstimationError::Kind::separation,
                            "separation: the information matrix became singular while the likelihood kept rising");
    }
    return Eigen::VectorXd(ldlt.solve(e.gradient));
  };

  std::vector<Eigen::VectorXd> path{beta};
  for (;;) {
    const Eigen::VectorXd step = newton_step(ev);
    const bool small_gradient = ev.gradient.cwiseAbs().maxCoeff() < options.gradient_tolerance;
    if (small_gradient && step.cwiseAbs().maxCoeff() < options.step_tolerance) {
      res.converged = true;
      break;
    }
    if (res.iterations >= options.max_iterations) break;

    double scale = 1.0;
    bool accepted = false;
    for (std::size_t h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      const Eigen::VectorXd trial = beta + scale * step;
      auto trial_ev = tasks.evaluate(trial);
      // Near the optimum the likelihood change drops below rounding; accept
      // such steps when they shrink the gradient instead.
      const double slack = 1e-12 * std::max(1.0, std::abs(ev.log_likelihood));
      const bool ascent = trial_ev.log_likelihood >= ev.log_likelihood;
      const bool flat = trial_ev.log_likelihood >= ev.log_likelihood - slack &&
                        trial_ev.gradient.cwiseAbs().maxCoeff() < ev.gradient.cwiseAbs().maxCoeff();
      if (ascent || flat) {
        beta = trial;
        ev = std::move(trial_ev);
        accepted = true;
        check_separation(beta, covariates, options.separation_bound);
        break;
      }
    }
    ++res.iterations;
    path.push_back(beta);
    if (!accepted) {
      // No ascent left at working precision.
      const double step_max = step.cwiseAbs().maxCoeff();
      res.converged = small_gradient && step_max < options.step_tolerance;
      break;
    }
  }
  {
    // Once exp() saturates the gradient can vanish at a finite but
    // meaningless beta. A likelihood that keeps rising along the recent
    // drift has no finite maximum; probe far past the separation bound.
    const Eigen::VectorXd drift = beta - path[path.size() / 2];
    const double drift_max = drift.cwiseAbs().maxCoeff();
    if (drift_max > options.step_tolerance) {
      const Eigen::VectorXd far = beta + (2.0 * options.separation_bound / drift_max) * drift;
      const double slack = 1e-9 * std::max(1.0, std::abs(ev.log_likelihood));
      if (tasks.log_likelihood(far) >= ev.log_likelihood - slack) {
        Eigen::Index worst = 0;
        drift.cwiseAbs().maxCoeff(&worst);
        throw EstimationError(EstimationError::Kind::separation,
                              "separation: coefficient of '" + covariates[static_cast<std::size_t>(worst)] +
                                  "' diverges; the likelihood keeps rising along it");
      }
    }
  }

  res.coefficients.names = covariates;
  res.coefficients.beta = beta;
  res.log_likelihood = ev.log_likelihood;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(-ev.hessian);
  res.vcov = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
  res.vcov = 0.5 * (res.vcov + res.vcov.transpose()).eval();
  res.std_errors = res.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.z_values = beta.cwiseQuotient(res.std_errors);
  res.p_values.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) res.p_values(i) = std::erfc(std::abs(res.z_values(i)) / std::sqrt(2.0));
  return res;
}

WtpResult wtp(const EstimationResult& est, const std::string& price_name, const std::vector<std::string>& targets) {
  const auto p = est.index_of(price_name);
  if (!p) throw InvalidInput("unknown price coefficient '" + price_name + "'");
  if (targets.empty()) throw InvalidInput("no WTP targets given");
  const double bp = est.coefficients.beta(static_cast<Eigen::Index>(*p));
  if (std::abs(bp) < 1e-12) {
    throw EstimationError(EstimationError::Kind::degenerate_price,
                          "price coefficient '" + price_name + "' is zero; WTP is undefined");
  }
  const auto pi = static_cast<Eigen::Index>(*p);
  const double var_p = est.vcov(pi, pi);
  WtpResult out;
  out.price_name = price_name;
  for (const auto& name : targets) {
    if (name == price_name) throw InvalidInput("the price coefficient cannot be a WTP target");
    const auto t = est.index_of(name);
    if (!t) throw InvalidInput("unknown WTP target '" + name + "' (base levels have no coefficient)");
    const auto ti = static_cast<Eigen::Index>(*t);
    const double bk = est.coefficients.beta(ti);
    WtpEntry e;
    e.name = name;
    e.estimate = -bk / bp;
    const double var = est.vcov(ti, ti) / (bp * bp) + bk * bk * var_p / std::pow(bp, 4) -
                       2.0 * bk * est.vcov(ti, pi) / std::pow(bp, 3);
    e.std_error = std::sqrt(std::max(var, 0.0));
    e.ci_low = e.estimate - kNormalQuantile975 * e.std_error;
    e.ci_high = e.estimate + kNormalQuantile975 * e.std_error;
    out.entries.push_back(std::move(e));
  }
  return out;
}

std::vector<PlotPoint> coefficient_plot_data(const EstimationResult& est) {
  std::vector<PlotPoint> out;
  for (std::size_t k = 0; k < est.coefficients.names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double b = est.coefficients.beta(i);
    const double se = est.std_errors(i);
    out.push_back({est.coefficients.names[k], b, b - kNormalQuantile975 * se, b + kNormalQuantile975 * se});
  }
  return out;
}

}  // namespace dce
