#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dce/core.hpp"
#include "dce/errors.hpp"
#include "dce/estimation.hpp"
#include "dce/optimizer.hpp"
#include "dce/random.hpp"

using namespace dce;

namespace {

const std::vector<std::size_t> kFourAttr{3, 2, 3, 3};

Eigen::VectorXd true_beta() {
  Eigen::VectorXd b(7);
  b << 0.6, 1.0, 0.4, 0.5, -0.3, -0.4, -0.8;
  return b;
}

CodedDesign four_attribute_design(std::uint64_t seed = 1) {
  return generate_design(make_settings(kFourAttr, 2, 16, true, false, seed)).design;
}

// Log-likelihood by plain loops over the rows.
double oracle_log_likelihood(const ResponseDataset& data, const Eigen::VectorXd& beta) {
  std::map<std::int64_t, std::pair<double, double>> tasks;  // gid -> (sum exp, chosen utility)
  for (const auto& r : data.rows) {
    double u = 0;
    for (std::size_t k = 0; k < r.covariates.size(); ++k) u += r.covariates[k] * beta(static_cast<Eigen::Index>(k));
    tasks[r.gid].first += std::exp(u);
    if (r.choice == 1) tasks[r.gid].second = u;
  }
  double ll = 0;
  for (const auto& [gid, t] : tasks) ll += t.second - std::log(t.first);
  return ll;
}

const ResponseDataset& simulated() {
  static const ResponseDataset d = simulate_choices(four_attribute_design(), true_beta(), 400, 77);
  return d;
}

}  // namespace

TEST(Likelihood, MatchesOracle) {
  const ChoiceTasks tasks(simulated(), simulated().covariate_names);
  EXPECT_EQ(tasks.n_tasks(), 400u * 16u);
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    Eigen::VectorXd b(7);
    for (int k = 0; k < 7; ++k) b(k) = 2 * rng.uniform() - 1;
    const double expected = oracle_log_likelihood(simulated(), b);
    EXPECT_NEAR(tasks.log_likelihood(b), expected, 1e-9 * std::abs(expected));
  }
}

TEST(Likelihood, GradientAndHessianMatchFiniteDifferences) {
  const ChoiceTasks tasks(simulated(), simulated().covariate_names);
  Eigen::VectorXd b = true_beta() * 0.5;
  const auto ev = tasks.evaluate(b);
  const double h = 1e-5;
  for (int k = 0; k < 7; ++k) {
    Eigen::VectorXd up = b, dn = b;
    up(k) += h;
    dn(k) -= h;
    const double fd = (tasks.log_likelihood(up) - tasks.log_likelihood(dn)) / (2 * h);
    EXPECT_NEAR(ev.gradient(k), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    const Eigen::VectorXd gfd = (tasks.evaluate(up, false).gradient - tasks.evaluate(dn, false).gradient) / (2 * h);
    for (int j = 0; j < 7; ++j) EXPECT_NEAR(ev.hessian(k, j), gfd(j), 1e-6 * std::max(1.0, std::abs(gfd(j))));
  }
  EXPECT_LT((ev.hessian - ev.hessian.transpose()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Fit, RecoversTheTrueCoefficients) {
  const auto est = fit_conditional_logit(simulated(), simulated().covariate_names);
  ASSERT_TRUE(est.converged);
  EXPECT_EQ(est.n_tasks, 6400u);
  EXPECT_GT(est.log_likelihood, est.null_log_likelihood);
  const ChoiceTasks tasks(simulated(), simulated().covariate_names);
  const auto ev = tasks.evaluate(est.coefficients.beta);
  EXPECT_LT(ev.gradient.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(ev.log_likelihood, est.log_likelihood, 1e-9);
  // vcov is the inverse observed information.
  const Eigen::MatrixXd prod = est.vcov * (-ev.hessian);
  EXPECT_LT((prod - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-8);
  for (int k = 0; k < 7; ++k) {
    EXPECT_NEAR(est.std_errors(k), std::sqrt(est.vcov(k, k)), 1e-15);
    EXPECT_LT(std::abs(est.coefficients.beta(k) - true_beta()(k)), 4 * est.std_errors(k)) << k;
    EXPECT_NEAR(est.z_values(k), est.coefficients.beta(k) / est.std_errors(k), 1e-12);
    const double p = std::erfc(std::abs(est.z_values(k)) / std::sqrt(2.0));
    EXPECT_NEAR(est.p_values(k), p, 1e-12);
  }
}

TEST(Fit, SubsetOfCovariatesAndOrder) {
  const auto est = fit_conditional_logit(simulated(), {"A4.L3", "A1.L2"});
  ASSERT_TRUE(est.converged);
  EXPECT_EQ(est.coefficients.names, (std::vector<std::string>{"A4.L3", "A1.L2"}));
  EXPECT_EQ(*est.index_of("A1.L2"), 1u);
  EXPECT_FALSE(est.index_of("A2.L2").has_value());
}

TEST(Fit, PlotDataUsesNormalIntervals) {
  const auto est = fit_conditional_logit(simulated(), simulated().covariate_names);
  const auto plot = coefficient_plot_data(est);
  ASSERT_EQ(plot.size(), 7u);
  for (int k = 0; k < 7; ++k) {
    EXPECT_EQ(plot[k].name, est.coefficients.names[k]);
    EXPECT_DOUBLE_EQ(plot[k].ci_low, est.coefficients.beta(k) - 1.96 * est.std_errors(k));
    EXPECT_DOUBLE_EQ(plot[k].ci_high, est.coefficients.beta(k) + 1.96 * est.std_errors(k));
  }
}

TEST(Fit, RankDeficiencyNamesTheColumns) {
  auto d = simulated();
  d.covariate_names.push_back("dup");
  for (auto& r : d.rows) r.covariates.push_back(r.covariates[0]);
  try {
    fit_conditional_logit(d, d.covariate_names);
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_EQ(e.kind(), EstimationError::Kind::rank_deficient);
    EXPECT_NE(std::string(e.what()).find("dup"), std::string::npos);
  }
  // A column constant within every task has no information either.
  d = simulated();
  d.covariate_names.push_back("age");
  for (auto& r : d.rows) r.covariates.push_back(static_cast<double>(r.respondent % 7));
  try {
    fit_conditional_logit(d, d.covariate_names);
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_EQ(e.kind(), EstimationError::Kind::rank_deficient);
    EXPECT_NE(std::string(e.what()).find("age"), std::string::npos);
  }
}

TEST(Fit, SeparationIsReported) {
  // The alternative with x = 1 is always chosen.
  ResponseDataset d;
  d.covariate_names = {"x", "z"};
  Rng rng(4);
  for (std::int64_t g = 1; g <= 60; ++g) {
    const double z1 = rng.uniform(), z2 = rng.uniform();
    d.rows.push_back({g, g, 1, 1, {1, z1}});
    d.rows.push_back({g, g, 2, 0, {0, z2}});
  }
  try {
    fit_conditional_logit(d, d.covariate_names);
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_EQ(e.kind(), EstimationError::Kind::separation);
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
}

TEST(Fit, QuasiCompleteSeparationIsReported) {
  // x appears in a third of the tasks and is always chosen there; z varies
  // everywhere with an ordinary effect.
  ResponseDataset d;
  d.covariate_names = {"x", "z"};
  Rng rng(6);
  for (std::int64_t g = 1; g <= 300; ++g) {
    const double z1 = rng.normal(), z2 = rng.normal();
    const bool has_x = g % 3 == 0;
    const bool first = has_x || rng.uniform() < 1.0 / (1.0 + std::exp(-(0.8 * (z1 - z2))));
    d.rows.push_back({g, g, 1, first ? 1 : 0, {has_x ? 1.0 : 0.0, z1}});
    d.rows.push_back({g, g, 2, first ? 0 : 1, {0, z2}});
  }
  try {
    fit_conditional_logit(d, d.covariate_names);
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_EQ(e.kind(), EstimationError::Kind::separation);
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
}

TEST(Fit, IterationLimitIsNotSeparation) {
  FitOptions o;
  o.max_iterations = 1;
  const auto est = fit_conditional_logit(simulated(), simulated().covariate_names, o);
  EXPECT_FALSE(est.converged);
  EXPECT_EQ(est.iterations, 1u);
}

TEST(Fit, InputErrors) {
  EXPECT_THROW(fit_conditional_logit(simulated(), {"nope"}), InvalidInput);
  EXPECT_THROW(fit_conditional_logit(simulated(), {}), InvalidInput);
  ResponseDataset empty;
  empty.covariate_names = {"x"};
  EXPECT_THROW(fit_conditional_logit(empty, {"x"}), InvalidInput);
}

TEST(Price, RecodeReplacesDummiesWithValues) {
  const auto& d = simulated();
  const auto r = recode_price_attribute(d, "A1", {10, 15, 20}, 3);
  EXPECT_EQ(r.covariate_names, (std::vector<std::string>{"A2.L2", "A3.L2", "A3.L3", "A4.L2", "A4.L3", "cont_price"}));
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    const auto& in = d.rows[i];
    const double expected = in.alt == 3 ? 0.0 : 10 + 5 * in.covariates[0] + 10 * in.covariates[1];
    EXPECT_EQ(r.rows[i].covariates.back(), expected);
    EXPECT_EQ(r.rows[i].covariates[0], in.covariates[2]);
  }
  // Without an opt-out alternative the all-zero row gets the base value.
  const auto nb = recode_price_attribute(d, "A1", {10, 15, 20});
  EXPECT_EQ(nb.rows[2].covariates.back(), 10.0);
}

TEST(Price, RecodeErrors) {
  const auto& d = simulated();
  EXPECT_THROW(recode_price_attribute(d, "A9", {1, 2, 3}), InvalidInput);
  EXPECT_THROW(recode_price_attribute(d, "A1", {1, 2}), InvalidInput);
  EXPECT_THROW(recode_price_continuous(d, {"A1.L2"}, {}, 0), InvalidInput);
  auto bad = d;
  bad.rows[0].covariates[0] = 0.5;
  EXPECT_THROW(recode_price_attribute(bad, "A1", {1, 2, 3}), InvalidInput);
}

TEST(Price, LinearUtilityIsRecovered) {
  // Price enters linearly: A1 dummies are -0.02 * (15 - 10) and -0.02 * (20 - 10).
  Eigen::VectorXd b = true_beta();
  b(0) = -0.1;
  b(1) = -0.2;
  const auto data = simulate_choices(four_attribute_design(2), b, 500, 8);
  const auto [prepared, covs] = prepare_estimation(data, {}, PriceRecoding{"A1", {10, 15, 20}, 3});
  EXPECT_EQ(covs.back(), "cont_price");
  const auto est = fit_conditional_logit(prepared, covs);
  ASSERT_TRUE(est.converged);
  const auto p = *est.index_of("cont_price");
  EXPECT_LT(std::abs(est.coefficients.beta(static_cast<Eigen::Index>(p)) + 0.02), 4 * est.std_errors(p));
}

TEST(Prepare, SelectionRules) {
  const auto& d = simulated();
  auto [all, c1] = prepare_estimation(d, {}, std::nullopt);
  EXPECT_EQ(c1, d.covariate_names);
  auto [sub, c2] = prepare_estimation(d, {"A1.L3", "A2.L2"}, PriceRecoding{"A1", {1, 2, 3}, 3});
  EXPECT_EQ(c2, (std::vector<std::string>{"cont_price", "A2.L2"}));
  auto [sub2, c3] = prepare_estimation(d, {"A2.L2", "cont_price", "A1.L2"}, PriceRecoding{"A1", {1, 2, 3}, 3});
  EXPECT_EQ(c3, (std::vector<std::string>{"A2.L2", "cont_price"}));
}

TEST(Wtp, MatchesTheDeltaMethodOracle) {
  const auto [prepared, covs] = prepare_estimation(simulated(), {}, PriceRecoding{"A4", {100, 150, 200}, 3});
  const auto est = fit_conditional_logit(prepared, covs);
  const std::vector<std::string> targets{"A1.L2", "A2.L2", "A3.L3"};
  const auto w = wtp(est, "cont_price", targets);
  ASSERT_EQ(w.entries.size(), 3u);
  const auto p = static_cast<Eigen::Index>(*est.index_of("cont_price"));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto t = static_cast<Eigen::Index>(*est.index_of(targets[i]));
    const double bt = est.coefficients.beta(t), bp = est.coefficients.beta(p);
    EXPECT_DOUBLE_EQ(w.entries[i].estimate, -bt / bp);
    // Gradient of -bt/bp by central differences, then g' V g.
    const double h = 1e-6;
    Eigen::Vector2d g((-(bt + h) / bp + (bt - h) / bp) / (2 * h), (-bt / (bp + h) + bt / (bp - h)) / (2 * h));
    Eigen::Matrix2d v;
    v << est.vcov(t, t), est.vcov(t, p), est.vcov(p, t), est.vcov(p, p);
    EXPECT_NEAR(w.entries[i].std_error, std::sqrt(g.dot(v * g)), 1e-6 * w.entries[i].std_error);
    EXPECT_DOUBLE_EQ(w.entries[i].ci_high - w.entries[i].estimate, 1.96 * w.entries[i].std_error);
  }
}

TEST(Wtp, Errors) {
  const auto [prepared, covs] = prepare_estimation(simulated(), {}, PriceRecoding{"A4", {100, 150, 200}, 3});
  const auto est = fit_conditional_logit(prepared, covs);
  EXPECT_THROW(wtp(est, "cont_price", {"cont_price"}), InvalidInput);
  EXPECT_THROW(wtp(est, "cont_price", {"A1.L1"}), InvalidInput);  // base level
  EXPECT_THROW(wtp(est, "cont_price", {}), InvalidInput);
  EXPECT_THROW(wtp(est, "price", {"A1.L2"}), InvalidInput);
  auto zero = est;
  zero.coefficients.beta(static_cast<Eigen::Index>(*est.index_of("cont_price"))) = 0;
  try {
    wtp(zero, "cont_price", {"A1.L2"});
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_EQ(e.kind(), EstimationError::Kind::degenerate_price);
  }
}
