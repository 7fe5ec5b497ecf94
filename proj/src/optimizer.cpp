#include "dce/optimizer.hpp"

#include <cmath>
#include <string>

#include "dce/errors.hpp"

namespace dce {

OptimizerConfig OptimizerConfig::from_settings(const DesignSettings& settings) {
  OptimizerConfig c;
  c.seed = settings.seed;
  return c;
}

std::string_view to_string(CriterionKind kind) { return kind == CriterionKind::db ? "db" : "d"; }

CodedDesign encode_levels(const LevelDesign& levels, const CodingMap& coding, bool opt_out) {
  CodedDesign d;
  d.column_names = coding.column_names();
  d.n_sets = levels.n_sets;
  d.alts_per_set = levels.n_alts + (opt_out ? 1 : 0);
  d.opt_out = opt_out;
  d.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.n_rows()), static_cast<Eigen::Index>(coding.n_columns()));
  for (std::size_t s = 0; s < levels.n_sets; ++s) {
    for (std::size_t j = 0; j < levels.n_alts; ++j) {
      d.x.row(static_cast<Eigen::Index>(s * d.alts_per_set + j)) = coding.encode(levels.profile(s, j)).transpose();
    }
  }
  return d;
}

namespace {

bool duplicates_earlier(const LevelDesign& d, std::size_t s, std::size_t j) {
  const auto p = d.profile(s, j);
  for (std::size_t k = 0; k < j; ++k) {
    if (std::equal(p.begin(), p.end(), d.profile(s, k).begin())) return true;
  }
  return false;
}

bool duplicates_any(const LevelDesign& d, std::size_t s, std::size_t j) {
  const auto p = d.profile(s, j);
  for (std::size_t k = 0; k < d.n_alts; ++k) {
    if (k != j && std::equal(p.begin(), p.end(), d.profile(s, k).begin())) return true;
  }
  return false;
}

}  // namespace

LevelDesign random_initial_levels(const DesignSettings& settings, Rng& rng) {
  const auto counts = settings.level_counts();
  LevelDesign d;
  d.n_sets = settings.n_sets;
  d.n_alts = settings.n_alts;
  d.n_attributes = counts.size();
  d.levels.assign(d.n_sets * d.n_alts * d.n_attributes, 0);
  for (std::size_t s = 0; s < d.n_sets; ++s) {
    for (std::size_t j = 0; j < d.n_alts; ++j) {
      bool unique = false;
      for (int attempt = 0; attempt < 1000 && !unique; ++attempt) {
        for (std::size_t a = 0; a < d.n_attributes; ++a) d.at(s, j, a) = static_cast<int>(rng.below(counts[a]));
        unique = !duplicates_earlier(d, s, j);
      }
      // mixed-radix increment; terminates because n_alts <= full factorial
      while (!unique) {
        for (std::size_t a = 0; a < d.n_attributes; ++a) {
          d.at(s, j, a) = (d.at(s, j, a) + 1) % static_cast<int>(counts[a]);
          if (d.at(s, j, a) != 0) break;
        }
        unique = !duplicates_earlier(d, s, j);
      }
    }
  }
  return d;
}

CodedDesign random_initial_design(const DesignSettings& settings, Rng& rng) {
  return encode_levels(random_initial_levels(settings, rng), dummy_code(settings), settings.opt_out);
}

namespace {

// Screens single-attribute exchanges without rebuilding the whole
// information matrix: keeps each set's contribution per draw, so a
// candidate costs one set contribution and one Cholesky per draw.
class ExchangeScreen {
 public:
  ExchangeScreen(const CodingMap& coding, const Eigen::MatrixXd& draws, std::size_t n_sets, bool opt_out)
      : coding_(coding),
        draws_(draws),
        n_sets_(n_sets),
        opt_out_(opt_out),
        k_(static_cast<Eigen::Index>(coding.n_columns())),
        contrib_(static_cast<std::size_t>(draws.rows()) * n_sets, Eigen::MatrixXd::Zero(k_, k_)),
        total_(static_cast<std::size_t>(draws.rows()), Eigen::MatrixXd::Zero(k_, k_)),
        work_(k_, k_),
        cand_(k_, k_),
        centre_(k_),
        llt_(k_) {}

  void reset(const LevelDesign& d) {
    for (Eigen::Index r = 0; r < draws_.rows(); ++r) {
      for (std::size_t s = 0; s < n_sets_; ++s) contribution(d, s, r, kNoOverride, 0, 0, slot(r, s));
      resum(r);
    }
  }

  void refresh_set(const LevelDesign& d, std::size_t s) {
    for (Eigen::Index r = 0; r < draws_.rows(); ++r) {
      contribution(d, s, r, kNoOverride, 0, 0, slot(r, s));
      resum(r);
    }
  }

  /// Criterion with attribute `a` of alternative (s, j) set to `level`.
  double candidate(const LevelDesign& d, std::size_t s, std::size_t j, std::size_t a, int level) {
    double mean = 0.0;
    for (Eigen::Index r = 0; r < draws_.rows(); ++r) {
      contribution(d, s, r, j, a, level, work_);
      cand_ = total_[static_cast<std::size_t>(r)] - slot(r, s) + work_;
      const double v = d_error_from_information(cand_, llt_);
      if (std::isinf(v)) return kInfiniteError;
      mean += (v - mean) / static_cast<double>(r + 1);
    }
    return mean;
  }

 private:
  static constexpr std::size_t kNoOverride = static_cast<std::size_t>(-1);

  Eigen::MatrixXd& slot(Eigen::Index r, std::size_t s) { return contrib_[static_cast<std::size_t>(r) * n_sets_ + s]; }

  void resum(Eigen::Index r) {
    auto& m = total_[static_cast<std::size_t>(r)];
    m.setZero();
    for (std::size_t s = 0; s < n_sets_; ++s) m += slot(r, s);
  }

  int level_of(const LevelDesign& d, std::size_t s, std::size_t j, std::size_t a, std::size_t over_j, std::size_t over_a,
               int over_level) const {
    return (j == over_j && a == over_a) ? over_level : d.at(s, j, a);
  }

  // Sum_j p_j x_j x_j' - m m' with m = Sum_j p_j x_j, exploiting that each
  // coded row has at most one 1 per attribute.
  void contribution(const LevelDesign& d, std::size_t s, Eigen::Index r, std::size_t over_j, std::size_t over_a,
                    int over_level, Eigen::MatrixXd& out) {
    const std::size_t n_alts = d.n_alts;
    const std::size_t n_attr = d.n_attributes;
    cols_.resize(n_alts * n_attr);
    util_.resize(n_alts + 1);
    double umax = opt_out_ ? 0.0 : -HUGE_VAL;
    for (std::size_t j = 0; j < n_alts; ++j) {
      double u = 0.0;
      for (std::size_t a = 0; a < n_attr; ++a) {
        const int lvl = level_of(d, s, j, a, over_j, over_a, over_level);
        const auto& attr = coding_.attributes()[a];
        const long c = lvl == 0 ? -1 : static_cast<long>(attr.first_column) + lvl - 1;
        cols_[j * n_attr + a] = c;
        if (c >= 0) u += draws_(r, c);
      }
      util_[j] = u;
      umax = std::max(umax, u);
    }
    double denom = opt_out_ ? std::exp(-umax) : 0.0;
    for (std::size_t j = 0; j < n_alts; ++j) {
      util_[j] = std::exp(util_[j] - umax);
      denom += util_[j];
    }
    out.setZero();
    centre_.setZero();
    for (std::size_t j = 0; j < n_alts; ++j) {
      const double p = util_[j] / denom;
      for (std::size_t a = 0; a < n_attr; ++a) {
        const long c1 = cols_[j * n_attr + a];
        if (c1 < 0) continue;
        centre_(c1) += p;
        for (std::size_t b = 0; b < n_attr; ++b) {
          const long c2 = cols_[j * n_attr + b];
          if (c2 >= 0) out(c1, c2) += p;
        }
      }
    }
    out.noalias() -= centre_ * centre_.transpose();
  }

  const CodingMap& coding_;
  const Eigen::MatrixXd& draws_;
  std::size_t n_sets_;
  bool opt_out_;
  Eigen::Index k_;
  std::vector<Eigen::MatrixXd> contrib_;
  std::vector<Eigen::MatrixXd> total_;
  Eigen::MatrixXd work_;
  Eigen::MatrixXd cand_;
  Eigen::VectorXd centre_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  std::vector<long> cols_;
  std::vector<double> util_;
};

struct StartOutcome {
  LevelDesign levels;
  double value = kInfiniteError;
  std::size_t passes = 0;
  std::vector<double> trace;
};

StartOutcome run_start(const DesignSettings& settings, const OptimizerConfig& config, const CodingMap& coding,
                       const Eigen::MatrixXd& draws, std::size_t start) {
  const auto counts = settings.level_counts();
  Rng rng(derive_seed(config.seed, 1000 + start));
  StartOutcome out;
  out.levels = random_initial_levels(settings, rng);
  LevelDesign& d = out.levels;

  auto exact = [&](const LevelDesign& lv) {
    return db_error_over_draws(encode_levels(lv, coding, settings.opt_out), draws);
  };

  double current = exact(d);
  out.trace.push_back(current);
  ExchangeScreen screen(coding, draws, settings.n_sets, settings.opt_out);
  screen.reset(d);

  for (std::size_t pass = 0; pass < config.max_passes; ++pass) {
    ++out.passes;
    bool changed = false;
    for (std::size_t s = 0; s < d.n_sets; ++s) {
      for (std::size_t j = 0; j < d.n_alts; ++j) {
        for (std::size_t a = 0; a < d.n_attributes; ++a) {
          const int incumbent = d.at(s, j, a);
          int best_level = incumbent;
          double best = kInfiniteError;
          for (int lvl = 0; lvl < static_cast<int>(counts[a]); ++lvl) {
            if (lvl == incumbent) continue;
            d.at(s, j, a) = lvl;
            const bool dup = duplicates_any(d, s, j);
            d.at(s, j, a) = incumbent;
            if (dup) continue;
            const double v = screen.candidate(d, s, j, a, lvl);
            if (v < best) {
              best = v;
              best_level = lvl;
            }
          }
          if (best_level == incumbent || !(best < current - config.improvement_tolerance)) continue;
          d.at(s, j, a) = best_level;
          const double confirmed = exact(d);
          if (confirmed < current - config.improvement_tolerance) {
            current = confirmed;
            out.trace.push_back(current);
            screen.refresh_set(d, s);
            changed = true;
          } else {
            d.at(s, j, a) = incumbent;
          }
        }
      }
    }
    if (!changed) break;
  }
  out.value = current;
  return out;
}

std::string join_messages(const std::vector<std::string>& msgs) {
  std::string out;
  for (const auto& m : msgs) out += (out.empty() ? "" : "; ") + m;
  return out;
}

}  // namespace

OptimResult coordinate_exchange(const DesignSettings& settings, const OptimizerConfig& config) {
  if (const auto errors = validate_settings(settings); !errors.empty()) {
    throw InvalidInput("invalid design settings: " + join_messages(errors));
  }
  if (config.n_starts < 1 || config.max_passes < 1 || !(config.improvement_tolerance > 0.0)) {
    throw InvalidInput("optimizer needs n_starts >= 1, max_passes >= 1 and a positive improvement tolerance");
  }
  const CodingMap coding = dummy_code(settings);
  const Eigen::MatrixXd draws =
      settings.bayesian ? draw_priors(settings.priors, settings.seed) : Eigen::MatrixXd(settings.priors.mean.transpose());

  OptimResult best;
  best.criterion_kind = settings.bayesian ? CriterionKind::db : CriterionKind::d;
  bool have = false;
  for (std::size_t start = 0; start < config.n_starts; ++start) {
    StartOutcome o = run_start(settings, config, coding, draws, start);
    if (!have || o.value < best.criterion_value) {
      have = true;
      best.design = encode_levels(o.levels, coding, settings.opt_out);
      best.criterion_value = o.value;
      best.passes_used = o.passes;
      best.start_index = start;
      best.error_trace = std::move(o.trace);
    }
  }
  if (std::isinf(best.criterion_value)) {
    throw DegenerateDesignSpace(
        "degenerate design space: every start produced a singular information matrix; use more sets or fewer "
        "parameters");
  }
  return best;
}

OptimResult generate_design(const DesignSettings& settings) {
  return coordinate_exchange(settings, OptimizerConfig::from_settings(settings));
}

}  // namespace dce
