// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1).

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <fcntl.h>
#include <unistd.h>
#include <sys/wait.h>

#include "dce/codec.hpp"
#include "dce/core.hpp"
#include "dce/errors.hpp"
#include "dce/estimation.hpp"
#include "dce/json_io.hpp"
#include "dce/optimizer.hpp"
#include "dce/random.hpp"
#include "dce/serial.hpp"

#include "../support/oracles.hpp"

// After Eigen: <resolv.h> from httplib defines _res, an Eigen parameter name.
#include "httplib.h"

#ifndef DCE_BINARY
#error "DCE_BINARY must name the dce executable"
#endif

using namespace dce;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

const std::vector<std::size_t> kFourAttrLevels{3, 2, 3, 3};

DesignSettings four_attribute_settings() { return make_settings(kFourAttrLevels, 2, 16, true, false, 9999); }

Eigen::VectorXd true_beta() {
  Eigen::VectorXd b(7);
  b << 0.6, -0.4, 0.3, 0.5, -0.2, -0.3, -0.5;
  return b;
}

std::vector<oracle::Mat> to_oracle_sets(const CodedDesign& d) {
  std::vector<oracle::Mat> sets;
  for (std::size_t s = 0; s < d.n_sets; ++s) {
    oracle::Mat rows;
    const auto block = d.set_rows(s);
    for (Eigen::Index j = 0; j < block.rows(); ++j) {
      oracle::Vec r;
      for (Eigen::Index c = 0; c < block.cols(); ++c) r.push_back(block(j, c));
      rows.push_back(r);
    }
    sets.push_back(rows);
  }
  return sets;
}

// ---------------------------------------------------------------------------

Outcome combinatorics() {
  const auto ff = count_full_factorial(kFourAttrLevels);
  const auto pairs = count_unordered_pairs(ff);
  return {ff == 54 && pairs == 1431, "full factorial " + std::to_string(ff) + " (want 54), pairs " +
                                         std::to_string(pairs) + " (want 1431)"};
}

Outcome coding_anchor() {
  const auto k = dummy_code(four_attribute_settings()).n_columns();
  return {k == 7, "K = " + std::to_string(k) + " (want 7)"};
}

Outcome seed_reproducibility() {
  const auto s = four_attribute_settings();
  const auto a = export_design(labeled_from_result(generate_design(s), s), DesignFormat::json);
  const auto b = export_design(labeled_from_result(generate_design(s), s), DesignFormat::json);
  auto sb = s;
  sb.bayesian = true;
  const auto c = export_design(labeled_from_result(generate_design(sb), sb), DesignFormat::json);
  const auto d = export_design(labeled_from_result(generate_design(sb), sb), DesignFormat::json);
  return {a == b && c == d, std::string("D-optimal runs ") + (a == b ? "identical" : "DIFFER") + " (" +
                                std::to_string(a.size()) + " bytes); Bayesian runs " + (c == d ? "identical" : "DIFFER")};
}

Outcome optimizer_oracle() {
  struct Space {
    std::vector<std::size_t> levels;
    std::size_t alts, sets;
    bool opt_out;
    std::vector<double> prior;
    double factor;  // allowed ratio to the global minimum
  };
  const std::vector<Space> spaces{
      {{2, 2}, 2, 2, false, {0, 0}, 1.0},
      {{3, 2}, 2, 3, false, {0.5, -0.5, 0.3}, 1.05},
      {{2, 2, 2}, 2, 3, false, {0, 0, 0}, 1.05},
      {{2, 2, 2}, 3, 2, true, {0.4, -0.3, 0.2}, 1.05},
  };
  bool ok = true;
  std::string detail;
  for (const auto& sp : spaces) {
    auto s = make_settings(sp.levels, sp.alts, sp.sets, sp.opt_out, false, 4242);
    s.priors.mean = Eigen::Map<const Eigen::VectorXd>(sp.prior.data(), static_cast<Eigen::Index>(sp.prior.size()));
    OptimizerConfig cfg = OptimizerConfig::from_settings(s);
    cfg.n_starts = 5;
    const auto res = coordinate_exchange(s, cfg);
    const auto global = oracle::enumerate_min_d_error(sp.levels, sp.alts, sp.sets, sp.opt_out, sp.prior);
    const double check = oracle::d_error(to_oracle_sets(res.design), sp.prior);
    const bool exact = sp.factor == 1.0;
    const bool pass = exact ? std::abs(res.criterion_value - global.best) <= 1e-12 * global.best
                            : res.criterion_value <= sp.factor * global.best;
    const bool consistent = std::abs(check - res.criterion_value) <= 1e-10 * check;
    ok = ok && pass && consistent;
    if (!detail.empty()) detail += "; ";
    std::string lv;
    for (auto l : sp.levels) lv += (lv.empty() ? "" : ",") + std::to_string(l);
    detail += "[" + lv + "] J=" + std::to_string(sp.alts) + " S=" + std::to_string(sp.sets) +
              (sp.opt_out ? "+opt-out" : "") + ": " + fmt(res.criterion_value, 10) + " vs min " +
              fmt(global.best, 10) + " over " + std::to_string(global.designs) + " designs" +
              (exact ? " (exact)" : " (ratio " + fmt(res.criterion_value / global.best, 5) + ")") +
              (consistent ? "" : " ORACLE MISMATCH");
  }
  return {ok, detail};
}

Outcome monotonicity() {
  Rng rng(20240601);
  std::size_t checked = 0, steps = 0;
  for (int run = 0; run < 100; ++run) {
    const std::size_t n_attr = 2 + rng.below(3);
    std::vector<std::size_t> levels;
    for (std::size_t a = 0; a < n_attr; ++a) levels.push_back(2 + rng.below(3));
    const std::size_t alts = 2 + rng.below(2);
    const bool opt_out = rng.below(2) == 1;
    const bool bayes = rng.below(4) == 0;
    auto s = make_settings(levels, alts, 1, opt_out, bayes, rng.below(1u << 30));
    const std::size_t k = s.n_parameters();
    s.n_sets = (k + alts - 2) / (alts - 1) + rng.below(4);
    while (s.n_sets * (alts - 1) < k) ++s.n_sets;
    for (std::size_t i = 0; i < k; ++i) s.priors.mean(static_cast<Eigen::Index>(i)) = rng.uniform() - 0.5;
    s.priors.n_draws = 10;
    if (!validate_settings(s).empty()) continue;
    OptimizerConfig cfg = OptimizerConfig::from_settings(s);
    cfg.n_starts = 2;
    OptimResult res;
    try {
      res = coordinate_exchange(s, cfg);
    } catch (const DegenerateDesignSpace&) {
      continue;
    }
    ++checked;
    for (std::size_t i = 1; i < res.error_trace.size(); ++i) {
      ++steps;
      if (!(res.error_trace[i] <= res.error_trace[i - 1])) {
        return {false, "run " + std::to_string(run) + ": trace rises at step " + std::to_string(i)};
      }
    }
    if (res.error_trace.back() != res.criterion_value) {
      return {false, "run " + std::to_string(run) + ": trace end differs from the reported criterion"};
    }
  }
  return {checked == 100, std::to_string(checked) + " of 100 optimizations checked, " + std::to_string(steps) +
                              " accepted exchanges, no increase"};
}

Outcome estimator_correctness() {
  const auto s = four_attribute_settings();
  const auto design = generate_design(s).design;
  const Eigen::VectorXd beta = true_beta();

  // Finite differences at random points.
  const ResponseDataset small = simulate_choices(design, beta, 200, 1);
  const ChoiceTasks tasks(small, small.covariate_names);
  Rng rng(99);
  double worst = 0.0;
  for (int p = 0; p < 10; ++p) {
    Eigen::VectorXd b(7);
    for (int k = 0; k < 7; ++k) b(k) = 2.0 * rng.uniform() - 1.0;
    const Eigen::VectorXd g = tasks.evaluate(b, false).gradient;
    Eigen::VectorXd fd(7);
    const double h = 1e-5;
    for (int k = 0; k < 7; ++k) {
      Eigen::VectorXd up = b, down = b;
      up(k) += h;
      down(k) -= h;
      fd(k) = (tasks.log_likelihood(up) - tasks.log_likelihood(down)) / (2 * h);
    }
    worst = std::max(worst, (g - fd).norm() / fd.norm());
  }
  const bool fd_ok = worst < 1e-5;

  int covered = 0;
  std::string misses;
  for (int run = 0; run < 20; ++run) {
    const auto data = simulate_choices(design, beta, 1000, 5000 + static_cast<std::uint64_t>(run));
    const auto est = fit_conditional_logit(data, data.covariate_names);
    bool all = est.converged;
    for (int k = 0; k < 7; ++k) all = all && std::abs(est.coefficients.beta(k) - beta(k)) <= 3.0 * est.std_errors(k);
    covered += all ? 1 : 0;
    if (!all) misses += " " + std::to_string(run);
  }
  return {fd_ok && covered >= 19, "max relative gradient error " + fmt(worst, 3) + " (limit 1e-5); recovery " +
                                      std::to_string(covered) + "/20 runs within 3 SE (need 19)" +
                                      (misses.empty() ? "" : ", missed runs:" + misses)};
}

Outcome wtp_check() {
  const auto s = four_attribute_settings();
  const auto design = generate_design(s).design;
  Eigen::VectorXd beta(7);
  beta << 0.6, -0.4, 0.3, 0.5, -0.2, -0.25, -0.5;  // linear in price: -0.005 per unit
  const auto data = simulate_choices(design, beta, 1000, 77);
  const auto [recoded, covs] = prepare_estimation(data, {}, PriceRecoding{"A4", {100, 150, 200}, 3});
  const auto est = fit_conditional_logit(recoded, covs);
  std::vector<std::string> targets;
  for (const auto& n : est.coefficients.names)
    if (n != kContinuousPriceName) targets.push_back(n);
  const auto w = wtp(est, kContinuousPriceName, targets);

  const auto p = *est.index_of(kContinuousPriceName);
  bool exact = true;
  for (const auto& e : w.entries) {
    const auto k = *est.index_of(e.name);
    exact = exact && e.estimate == -est.coefficients.beta(static_cast<Eigen::Index>(k)) /
                                       est.coefficients.beta(static_cast<Eigen::Index>(p));
  }

  // Parametric bootstrap: beta* ~ N(beta_hat, vcov).
  const Eigen::LLT<Eigen::MatrixXd> llt(est.vcov);
  const Eigen::MatrixXd l = llt.matrixL();
  const std::size_t draws = 10000;
  std::vector<std::vector<double>> ratios(w.entries.size());
  Rng rng(31337);
  for (std::size_t r = 0; r < draws; ++r) {
    Eigen::VectorXd z(est.coefficients.beta.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    const Eigen::VectorXd b = est.coefficients.beta + l * z;
    for (std::size_t e = 0; e < w.entries.size(); ++e) {
      const auto k = *est.index_of(w.entries[e].name);
      ratios[e].push_back(-b(static_cast<Eigen::Index>(k)) / b(static_cast<Eigen::Index>(p)));
    }
  }
  double worst = 0.0;
  std::string detail;
  for (std::size_t e = 0; e < w.entries.size(); ++e) {
    double mean = 0.0, sq = 0.0;
    for (double v : ratios[e]) mean += v;
    mean /= static_cast<double>(draws);
    for (double v : ratios[e]) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(draws - 1));
    const double rel = std::abs(w.entries[e].std_error - sd) / sd;
    worst = std::max(worst, rel);
    detail += " " + w.entries[e].name + " " + fmt(w.entries[e].std_error, 4) + "/" + fmt(sd, 4);
  }
  return {exact && worst <= 0.10, std::string("point values ") + (exact ? "exact" : "DIFFER") +
                                      "; worst SE deviation from bootstrap " + fmt(100 * worst, 3) +
                                      "% (limit 10%); delta/bootstrap SE:" + detail};
}

// Answers every set of a new session by MNL sampling at `beta`.
void simulate_respondent(Survey& survey, const Eigen::VectorXd& beta, Rng& rng) {
  const auto start = survey.start_session();
  const auto snap = survey.snapshot();
  const auto& d = snap.design_history.at(start.design_version - 1).design.coded;
  for (std::size_t set = 0; set < d.n_sets; ++set) {
    const Eigen::VectorXd p = mnl_probabilities(d.set_rows(set), beta);
    const double u = rng.uniform();
    double c = 0.0;
    std::size_t k = 0;
    for (; k + 1 < static_cast<std::size_t>(p.size()); ++k) {
      c += p(static_cast<Eigen::Index>(k));
      if (u < c) break;
    }
    survey.submit_answer(start.session_id, k + 1);
  }
}

std::vector<std::size_t> switch_points(const SurveyState& st) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < st.design_history.size(); ++i) out.push_back(st.design_history[i].respondents_at_switch);
  return out;
}

std::string list(const std::vector<std::size_t>& v) {
  std::string out;
  for (auto x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return "{" + out + "}";
}

Outcome serial_engine() {
  const Eigen::VectorXd beta = true_beta();
  std::string detail;
  bool ok = true;

  auto make_survey = [](std::uint64_t seed, SerialMode mode) {
    const auto s = make_settings(kFourAttrLevels, 2, 16, true, false, seed);
    SurveyDefinition def;
    def.design = labeled_from_result(generate_design(s), s);
    def.settings = s;
    def.serial_mode = mode;
    return def;
  };

  {
    Survey survey(make_survey(9999, {SerialMode::Kind::per_batch, 5}));
    Rng rng(1);
    for (int i = 0; i < 12; ++i) simulate_respondent(survey, beta, rng);
    const auto sw = switch_points(survey.snapshot());
    const bool pass = sw == std::vector<std::size_t>{5, 10};
    ok = ok && pass;
    detail += "per_batch(5), 12 respondents: switches at " + list(sw) + " (want {5,10})";
  }
  {
    Survey survey(make_survey(9999, {SerialMode::Kind::per_respondent, 5}));
    Rng rng(2);
    for (int i = 0; i < 4; ++i) simulate_respondent(survey, beta, rng);
    const auto st = survey.snapshot();
    const auto sw = switch_points(st);
    std::size_t converged = 0;
    for (const auto& e : st.update_log) converged += e.regenerated ? 1 : 0;
    const bool pass = sw == std::vector<std::size_t>{1, 2, 3, 4};
    ok = ok && pass;
    detail += "; per_respondent, 4 respondents: switches at " + list(sw) + " (want {1,2,3,4})";
    for (const auto& e : st.update_log)
      if (!e.regenerated) detail += " [skip at " + std::to_string(e.completed_respondents) + ": " + e.reason + "]";
  }
  {
    int wins = 0;
    for (int run = 0; run < 20; ++run) {
      Survey survey(make_survey(1000 + static_cast<std::uint64_t>(run), {SerialMode::Kind::per_batch, 5}));
      Rng rng(derive_seed(77, static_cast<std::uint64_t>(run)));
      for (int i = 0; i < 30; ++i) simulate_respondent(survey, beta, rng);
      const auto st = survey.snapshot();
      const double initial = d_error(st.design_history.front().design.coded, beta);
      const double final_err = d_error(st.design_history.back().design.coded, beta);
      wins += final_err <= initial ? 1 : 0;
    }
    const bool pass = wins >= 14;
    ok = ok && pass;
    detail += "; final serial design at true beta no worse than the initial zero-prior design in " +
              std::to_string(wins) + "/20 runs (need 14; per_batch(5), 30 respondents)";
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// Service round trip against a real process.

class ServerProcess {
 public:
  explicit ServerProcess(fs::path data_dir) : dir_(std::move(data_dir)) {}
  ~ServerProcess() { kill(); }

  void start() {
    const fs::path port_file = dir_ / "port.txt";
    fs::remove(port_file);
    pid_ = ::fork();
    if (pid_ == 0) {
      const std::string dir = (dir_ / "data").string(), pf = port_file.string();
      const int devnull = ::open("/dev/null", O_WRONLY);
      if (devnull >= 0) ::dup2(devnull, STDERR_FILENO);
      ::execl(DCE_BINARY, DCE_BINARY, "serve", "--data-dir", dir.c_str(), "--port", "0", "--port-file", pf.c_str(),
              static_cast<char*>(nullptr));
      ::_exit(127);
    }
    for (int i = 0; i < 200 && !fs::exists(port_file); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(25));
    std::ifstream in(port_file);
    if (!(in >> port_)) throw std::runtime_error("server did not report a port");
  }

  void kill() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  void restart() {
    kill();
    start();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

 private:
  fs::path dir_;
  pid_t pid_ = -1;
  int port_ = 0;
};

struct Reply {
  int status = 0;
  std::string body;
};

Reply get(const ServerProcess& srv, const std::string& path) {
  auto c = srv.client();
  auto r = c.Get(path);
  return r ? Reply{r->status, r->body} : Reply{};
}

Reply post(const ServerProcess& srv, const std::string& path, const std::string& body) {
  auto c = srv.client();
  auto r = c.Post(path, body, "application/json");
  return r ? Reply{r->status, r->body} : Reply{};
}

Outcome service_round_trip() {
  char tmpl[] = "/tmp/dce-acceptance-XXXXXX";
  const fs::path dir = ::mkdtemp(tmpl);
  std::string detail;
  bool ok = true;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
    return cond;
  };
  {
    ServerProcess srv(dir);
    srv.start();

    const auto created = post(srv, "/designs",
                              R"({"levels":[3,2,3,3],"n_alts":2,"n_sets":16,"opt_out":true,)"
                              R"("priors":[0,0,0,0,0,0,0],"seed":9999})");
    expect(created.status == 201, "create design returned " + std::to_string(created.status));
    const std::string design_id = Json::parse(created.body).value("id", "");
    const auto design_before = get(srv, "/designs/" + design_id);
    srv.restart();
    expect(get(srv, "/designs/" + design_id).body == design_before.body, "design changed across restart");

    const auto survey = post(srv, "/surveys", R"({"design_id":")" + design_id + R"(","intro_text":"Welcome"})");
    expect(survey.status == 201, "create survey returned " + std::to_string(survey.status));
    const std::string survey_id = Json::parse(survey.body).value("id", "");
    const auto survey_before = get(srv, "/surveys/" + survey_id);
    srv.restart();
    expect(get(srv, "/surveys/" + survey_id).body == survey_before.body, "survey changed across restart");

    // Two concurrent respondents answering interleaved, with a restart midway.
    std::vector<std::string> sids;
    std::set<long long> respondent_ids;
    for (int i = 0; i < 2; ++i) {
      const auto s = post(srv, "/surveys/" + survey_id + "/sessions", "");
      expect(s.status == 201, "start session returned " + std::to_string(s.status));
      const Json j = Json::parse(s.body);
      sids.push_back(j.value("session_id", ""));
      respondent_ids.insert(j.value("respondent_id", 0LL));
    }
    expect(respondent_ids.size() == 2, "respondent ids are not distinct");
    auto answer_range = [&](int from, int to) {
      std::vector<std::thread> threads;
      std::vector<int> failures(sids.size(), 0);
      for (std::size_t t = 0; t < sids.size(); ++t) {
        threads.emplace_back([&, t] {
          for (int set = from; set < to; ++set) {
            const int choice = 1 + static_cast<int>((static_cast<std::size_t>(set) + t) % 3);
            const auto r = post(srv, "/sessions/" + sids[t] + "/answers", "{\"choice\":" + std::to_string(choice) + "}");
            if (r.status != 200) ++failures[t];
          }
        });
      }
      for (auto& th : threads) th.join();
      for (int f : failures) expect(f == 0, std::to_string(f) + " answers failed");
    };
    answer_range(0, 8);
    const auto mid_before = get(srv, "/surveys/" + survey_id);
    srv.restart();
    expect(get(srv, "/surveys/" + survey_id).body == mid_before.body, "mid-survey state changed across restart");
    answer_range(8, 16);
    const auto late = post(srv, "/sessions/" + sids[0] + "/answers", R"({"choice":1})");
    expect(late.status == 409, "answer after completion returned " + std::to_string(late.status));

    expect(post(srv, "/surveys/" + survey_id + "/close", "").status == 200, "close failed");
    srv.restart();
    const auto after_close = post(srv, "/surveys/" + survey_id + "/sessions", "");
    expect(after_close.status == 409, "session after close returned " + std::to_string(after_close.status));
    const auto csv = get(srv, "/surveys/" + survey_id + "/responses");
    srv.restart();
    expect(get(srv, "/surveys/" + survey_id + "/responses").body == csv.body, "responses changed across restart");

    try {
      const auto data = read_dataset_csv(csv.body);
      std::map<std::int64_t, int> chosen;
      for (const auto& row : data.rows) chosen[row.gid] += row.choice;
      bool one_each = !chosen.empty();
      for (const auto& [gid, n] : chosen) one_each = one_each && n == 1;
      expect(chosen.size() == 32, "expected 32 gids, got " + std::to_string(chosen.size()));
      expect(one_each, "a gid does not have exactly one choice=1");
      if (ok) detail = "32 gids from 2 concurrent respondents, one choice=1 each; state identical across 5 kill/restart cycles";
    } catch (const std::exception& e) {
      expect(false, std::string("responses CSV unreadable: ") + e.what());
    }
  }
  fs::remove_all(dir);
  return {ok, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"combinatorics anchors", combinatorics},
      {"coding anchor", coding_anchor},
      {"seed reproducibility", seed_reproducibility},
      {"optimizer oracle", optimizer_oracle},
      {"monotonicity", monotonicity},
      {"estimator correctness", estimator_correctness},
      {"wtp", wtp_check},
      {"serial engine", serial_engine},
      {"service round trip", service_round_trip},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
