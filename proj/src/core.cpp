#include "dce/core.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <set>

#include "dce/errors.hpp"
#include "dce/random.hpp"

namespace dce {

PriorSpec PriorSpec::standard(std::size_t n_parameters) {
  PriorSpec p;
  p.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_parameters));
  p.covariance = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n_parameters), static_cast<Eigen::Index>(n_parameters));
  return p;
}

std::vector<std::size_t> DesignSettings::level_counts() const {
  std::vector<std::size_t> out;
  out.reserve(attributes.size());
  for (const auto& a : attributes) out.push_back(a.levels.size());
  return out;
}

std::size_t DesignSettings::n_parameters() const {
  std::size_t k = 0;
  for (const auto& a : attributes) k += a.levels.empty() ? 0 : a.levels.size() - 1;
  return k;
}

std::vector<AttributeSpec> default_attributes(std::span<const std::size_t> level_counts) {
  std::vector<AttributeSpec> out;
  for (std::size_t a = 0; a < level_counts.size(); ++a) {
    AttributeSpec spec;
    spec.name = "A" + std::to_string(a + 1);
    for (std::size_t l = 0; l < level_counts[a]; ++l) spec.levels.push_back("L" + std::to_string(l + 1));
    out.push_back(std::move(spec));
  }
  return out;
}

DesignSettings make_settings(std::span<const std::size_t> level_counts, std::size_t n_alts, std::size_t n_sets,
                             bool opt_out, bool bayesian, std::uint64_t seed) {
  DesignSettings s;
  s.attributes = default_attributes(level_counts);
  s.n_alts = n_alts;
  s.n_sets = n_sets;
  s.opt_out = opt_out;
  s.bayesian = bayesian;
  s.seed = seed;
  s.priors = PriorSpec::standard(s.n_parameters());
  return s;
}

// ---------------------------------------------------------------------------
// Coding

CodingMap::CodingMap(std::vector<AttributeSpec> attributes) {
  std::size_t col = 0;
  for (auto& spec : attributes) {
    Attribute a;
    a.name = std::move(spec.name);
    a.levels = std::move(spec.levels);
    a.first_column = col;
    for (std::size_t l = 1; l < a.levels.size(); ++l) {
      column_names_.push_back(a.name + "." + a.levels[l]);
      ++col;
    }
    attributes_.push_back(std::move(a));
  }
}

std::optional<std::size_t> CodingMap::column_of(std::size_t attribute, std::size_t level) const {
  const auto& a = attributes_.at(attribute);
  if (level >= a.levels.size()) throw InvalidInput("level " + std::to_string(level) + " out of range for " + a.name);
  if (level == 0) return std::nullopt;
  return a.first_column + level - 1;
}

Eigen::VectorXd CodingMap::encode(std::span<const int> levels) const {
  if (levels.size() != attributes_.size()) throw InvalidInput("profile has wrong number of attributes");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_columns()));
  for (std::size_t a = 0; a < levels.size(); ++a) {
    if (levels[a] < 0) throw InvalidInput("negative level index");
    if (auto c = column_of(a, static_cast<std::size_t>(levels[a]))) x(static_cast<Eigen::Index>(*c)) = 1.0;
  }
  return x;
}

std::vector<int> CodingMap::decode(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (static_cast<std::size_t>(row.size()) != n_columns()) throw CorruptDesign("coded row has wrong length");
  std::vector<int> levels(attributes_.size(), 0);
  for (std::size_t a = 0; a < attributes_.size(); ++a) {
    const auto& attr = attributes_[a];
    int found = 0;
    for (std::size_t l = 1; l < attr.levels.size(); ++l) {
      const double v = row(static_cast<Eigen::Index>(attr.first_column + l - 1));
      if (v == 1.0) {
        if (found) throw CorruptDesign("attribute '" + attr.name + "' has more than one level set");
        found = static_cast<int>(l);
      } else if (v != 0.0) {
        throw CorruptDesign("attribute '" + attr.name + "' has a non-binary entry");
      }
    }
    levels[a] = found;
  }
  return levels;
}

CodingMap dummy_code(const DesignSettings& settings) { return CodingMap(settings.attributes); }

std::vector<std::string> check_design(const CodedDesign& design, const CodingMap& coding) {
  std::vector<std::string> problems;
  if (design.column_names != coding.column_names()) problems.push_back("column names do not match the coding");
  if (design.n_sets < 1) problems.push_back("design has no choice sets");
  if (design.n_real_alts() < 2) problems.push_back("each set needs at least 2 alternatives besides the opt-out");
  if (static_cast<std::size_t>(design.x.rows()) != design.n_rows() ||
      static_cast<std::size_t>(design.x.cols()) != design.n_columns()) {
    problems.push_back("matrix is " + std::to_string(design.x.rows()) + "x" + std::to_string(design.x.cols()) +
                       ", expected " + std::to_string(design.n_rows()) + "x" + std::to_string(design.n_columns()));
    return problems;
  }
  if (!problems.empty()) return problems;
  for (std::size_t s = 0; s < design.n_sets; ++s) {
    std::set<std::vector<int>> seen;
    for (std::size_t j = 0; j < design.alts_per_set; ++j) {
      const auto row = design.x.row(static_cast<Eigen::Index>(s * design.alts_per_set + j));
      const std::string where = "set " + std::to_string(s + 1) + " alt " + std::to_string(j + 1);
      if (design.is_opt_out_alt(j)) {
        if (!row.isZero(0.0)) problems.push_back(where + ": opt-out row is not all zero");
        continue;
      }
      try {
        if (!seen.insert(coding.decode(row)).second) problems.push_back(where + ": duplicates another alternative in the set");
      } catch (const CorruptDesign& e) {
        problems.push_back(where + ": " + e.what());
      }
    }
  }
  return problems;
}

// ---------------------------------------------------------------------------
// Combinatorics and settings

std::uint64_t count_full_factorial(std::span<const std::size_t> level_counts) {
  if (level_counts.empty()) throw InvalidInput("no attributes given");
  std::uint64_t n = 1;
  for (auto l : level_counts) {
    if (l < 2) throw InvalidInput("every attribute needs at least 2 levels");
    if (n > UINT64_MAX / l) throw InvalidInput("full factorial size overflows");
    n *= l;
  }
  return n;
}

std::uint64_t count_unordered_pairs(std::uint64_t n_profiles) {
  if (n_profiles < 2) throw InvalidInput("need at least 2 profiles to form a pair");
  return n_profiles % 2 == 0 ? (n_profiles / 2) * (n_profiles - 1) : n_profiles * ((n_profiles - 1) / 2);
}

std::vector<std::string> validate_settings(const DesignSettings& s) {
  std::vector<std::string> errors;
  if (s.attributes.empty()) errors.push_back("at least one attribute is required");
  std::set<std::string> names;
  bool levels_ok = true;
  for (std::size_t a = 0; a < s.attributes.size(); ++a) {
    const auto& attr = s.attributes[a];
    const std::string label = attr.name.empty() ? "attribute " + std::to_string(a + 1) : "attribute '" + attr.name + "'";
    if (attr.name.empty()) errors.push_back(label + " has an empty name");
    if (!names.insert(attr.name).second) errors.push_back(label + " is listed twice");
    if (attr.levels.size() < 2) {
      errors.push_back(label + " needs at least 2 levels, has " + std::to_string(attr.levels.size()));
      levels_ok = false;
    }
    std::set<std::string> seen;
    for (const auto& lvl : attr.levels) {
      if (lvl.empty()) errors.push_back(label + " has an empty level name");
      else if (!seen.insert(lvl).second) errors.push_back(label + " repeats level '" + lvl + "'");
    }
  }
  if (s.n_alts < 2) errors.push_back("at least 2 alternatives per set are required");
  if (s.n_sets < 1) errors.push_back("at least 1 choice set is required");

  const std::size_t k = s.n_parameters();
  if (levels_ok && !s.attributes.empty()) {
    const auto counts = s.level_counts();
    std::uint64_t full = UINT64_MAX;
    try {
      full = count_full_factorial(counts);
    } catch (const InvalidInput&) {
    }
    if (s.n_alts > full) {
      errors.push_back("more alternatives per set (" + std::to_string(s.n_alts) + ") than distinct profiles (" +
                       std::to_string(full) + ")");
    }
  }
  if (s.n_alts >= 1 && s.n_sets * (s.n_alts - 1) < k) {
    errors.push_back("too few sets: n_sets*(n_alts-1) = " + std::to_string(s.n_sets * (s.n_alts - 1)) +
                     " is below the number of parameters K = " + std::to_string(k));
  }

  const auto& p = s.priors;
  if (static_cast<std::size_t>(p.mean.size()) != k) {
    errors.push_back("priors have " + std::to_string(p.mean.size()) + " values, expected K = " + std::to_string(k));
  }
  if (static_cast<std::size_t>(p.covariance.rows()) != k || static_cast<std::size_t>(p.covariance.cols()) != k) {
    errors.push_back("prior covariance must be " + std::to_string(k) + "x" + std::to_string(k));
  } else if (k > 0) {
    if (!p.covariance.allFinite() || ((p.covariance - p.covariance.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance)) {
      errors.push_back("prior covariance is not symmetric");
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.covariance, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -kSymmetryTolerance) errors.push_back("prior covariance is not positive semidefinite");
    }
  }
  if (!p.mean.allFinite()) errors.push_back("priors must be finite");
  if (p.n_draws < 1) errors.push_back("at least 1 prior draw is required");
  return errors;
}

// ---------------------------------------------------------------------------
// Model

Eigen::VectorXd mnl_probabilities(const Eigen::Ref<const Eigen::MatrixXd>& rows, const Eigen::VectorXd& beta) {
  if (rows.rows() < 2) throw InvalidInput("a choice set needs at least 2 alternatives");
  if (rows.cols() != beta.size()) {
    throw InvalidInput("coded rows have " + std::to_string(rows.cols()) + " columns but beta has " +
                       std::to_string(beta.size()));
  }
  Eigen::VectorXd u = rows * beta;
  u.array() = (u.array() - u.maxCoeff()).exp();
  return u / u.sum();
}

std::vector<ChoiceProbabilities> choice_probabilities(const CodedDesign& design, const Eigen::VectorXd& beta) {
  std::vector<ChoiceProbabilities> out;
  out.reserve(design.n_sets);
  for (std::size_t s = 0; s < design.n_sets; ++s) out.push_back({s + 1, mnl_probabilities(design.set_rows(s), beta)});
  return out;
}

Eigen::MatrixXd fisher_information(const CodedDesign& design, const Eigen::VectorXd& beta) {
  const auto k = static_cast<Eigen::Index>(design.n_columns());
  if (beta.size() != k) throw InvalidInput("beta length does not match the design");
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t s = 0; s < design.n_sets; ++s) {
    const auto xs = design.set_rows(s);
    const Eigen::VectorXd p = mnl_probabilities(xs, beta);
    // X'(diag(p) - pp')X == Z' diag(p) Z with Z = X - 1 (p'X)
    const Eigen::RowVectorXd centre = p.transpose() * xs;
    const Eigen::MatrixXd z = xs.rowwise() - centre;
    info.noalias() += z.transpose() * p.asDiagonal() * z;
  }
  return info;
}

double d_error_from_information(const Eigen::MatrixXd& information) {
  Eigen::LLT<Eigen::MatrixXd> llt(information.rows());
  return d_error_from_information(information, llt);
}

double d_error_from_information(const Eigen::MatrixXd& information, Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto k = information.rows();
  if (k == 0) return kInfiniteError;
  llt.compute(information);
  if (llt.info() != Eigen::Success) return kInfiniteError;
  const double floor = kRelativePivotTolerance * information.diagonal().maxCoeff();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double d = llt.matrixLLT()(i, i);
    if (!(d > 0.0) || d * d < floor) return kInfiniteError;
    log_det += 2.0 * std::log(d);
  }
  if (!(log_det > std::log(kSingularDeterminant))) return kInfiniteError;
  return std::exp(-log_det / static_cast<double>(k));
}

double d_error(const CodedDesign& design, const Eigen::VectorXd& beta) {
  return d_error_from_information(fisher_information(design, beta));
}

namespace {

double radical_inverse(std::uint64_t base, std::uint64_t index) {
  double result = 0.0;
  double f = 1.0 / static_cast<double>(base);
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= static_cast<double>(base);
  }
  return result;
}

std::vector<std::uint64_t> first_primes(std::size_t n) {
  std::vector<std::uint64_t> primes;
  for (std::uint64_t c = 2; primes.size() < n; ++c) {
    bool prime = true;
    for (auto p : primes) {
      if (p * p > c) break;
      if (c % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(c);
  }
  return primes;
}

// Factor with L L' = covariance; eigen square root when Cholesky fails on a
// singular but PSD matrix.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov) {
  if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance) {
    throw InvalidInput("prior covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto& ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -kSymmetryTolerance * scale) throw InvalidInput("prior covariance is not positive semidefinite");
  return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace

Eigen::MatrixXd draw_priors(const PriorSpec& prior, std::uint64_t seed) {
  const auto k = prior.mean.size();
  if (prior.covariance.rows() != k || prior.covariance.cols() != k) throw InvalidInput("prior covariance has wrong shape");
  if (prior.n_draws < 1) throw InvalidInput("n_draws must be at least 1");
  const Eigen::MatrixXd factor = covariance_factor(prior.covariance);
  const auto r_count = static_cast<Eigen::Index>(prior.n_draws);

  Eigen::MatrixXd z(r_count, k);
  if (prior.scheme == DrawScheme::pseudo_random) {
    Rng rng(derive_seed(seed, prior.draw_seed_offset));
    for (Eigen::Index r = 0; r < r_count; ++r)
      for (Eigen::Index c = 0; c < k; ++c) z(r, c) = rng.normal();
  } else {
    const auto primes = first_primes(static_cast<std::size_t>(k));
    const std::uint64_t skip = derive_seed(seed, prior.draw_seed_offset) % 4096;
    const boost::math::normal_distribution<double> std_normal;
    for (Eigen::Index r = 0; r < r_count; ++r)
      for (Eigen::Index c = 0; c < k; ++c)
        z(r, c) = boost::math::quantile(std_normal, radical_inverse(primes[static_cast<std::size_t>(c)],
                                                                    skip + static_cast<std::uint64_t>(r) + 1));
  }
  Eigen::MatrixXd draws = z * factor.transpose();
  draws.rowwise() += prior.mean.transpose();
  return draws;
}

double db_error_over_draws(const CodedDesign& design, const Eigen::MatrixXd& draws) {
  // running mean: identical per-draw values average to exactly that value
  double mean = 0.0;
  for (Eigen::Index r = 0; r < draws.rows(); ++r) {
    const double v = d_error(design, draws.row(r).transpose());
    if (std::isinf(v)) return kInfiniteError;
    mean += (v - mean) / static_cast<double>(r + 1);
  }
  return mean;
}

double db_error(const CodedDesign& design, const PriorSpec& prior, std::uint64_t seed) {
  return db_error_over_draws(design, draw_priors(prior, seed));
}

ResponseDataset simulate_choices(const CodedDesign& design, const Eigen::VectorXd& true_beta, std::size_t n_respondents,
                                 std::uint64_t seed) {
  if (n_respondents == 0) throw InvalidInput("n_respondents must be positive");
  const auto probs = choice_probabilities(design, true_beta);
  ResponseDataset data;
  data.covariate_names = design.column_names;
  data.rows.reserve(n_respondents * design.n_rows());
  Rng rng(derive_seed(seed, 0x5151));
  for (std::size_t r = 0; r < n_respondents; ++r) {
    for (std::size_t s = 0; s < design.n_sets; ++s) {
      const auto& p = probs[s].probs;
      const double u = rng.uniform();
      std::size_t chosen = design.alts_per_set - 1;
      double cum = 0.0;
      for (std::size_t j = 0; j < design.alts_per_set; ++j) {
        cum += p(static_cast<Eigen::Index>(j));
        if (u < cum) {
          chosen = j;
          break;
        }
      }
      const auto gid = static_cast<std::int64_t>(r * design.n_sets + s + 1);
      for (std::size_t j = 0; j < design.alts_per_set; ++j) {
        ResponseRow row;
        row.gid = gid;
        row.respondent = static_cast<std::int64_t>(r + 1);
        row.alt = j + 1;
        row.choice = j == chosen ? 1 : 0;
        const auto x = design.x.row(static_cast<Eigen::Index>(s * design.alts_per_set + j));
        row.covariates.resize(static_cast<std::size_t>(x.size()));
        for (Eigen::Index c = 0; c < x.size(); ++c) row.covariates[static_cast<std::size_t>(c)] = x(c);
        data.rows.push_back(std::move(row));
      }
    }
  }
  return data;
}

}  // namespace dce
