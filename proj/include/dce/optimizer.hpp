#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dce/core.hpp"
#include "dce/random.hpp"

namespace dce {

struct OptimizerConfig {
  std::size_t n_starts = 5;
  std::size_t max_passes = 20;
  double improvement_tolerance = 1e-9;
  std::uint64_t seed = 0;

  static OptimizerConfig from_settings(const DesignSettings& settings);
};

enum class CriterionKind { d, db };
std::string_view to_string(CriterionKind kind);

struct OptimResult {
  CodedDesign design;
  double criterion_value = kInfiniteError;
  CriterionKind criterion_kind = CriterionKind::d;
  std::size_t passes_used = 0;
  std::size_t start_index = 0;
  /// Criterion of the initial design followed by one entry per accepted
  /// exchange.
  std::vector<double> error_trace;
};

/// Level indices for every real (non-opt-out) alternative.
struct LevelDesign {
  std::size_t n_sets = 0;
  std::size_t n_alts = 0;
  std::size_t n_attributes = 0;
  std::vector<int> levels;  // [set][alt][attribute], row-major

  int& at(std::size_t set, std::size_t alt, std::size_t attr) {
    return levels[(set * n_alts + alt) * n_attributes + attr];
  }
  int at(std::size_t set, std::size_t alt, std::size_t attr) const {
    return levels[(set * n_alts + alt) * n_attributes + attr];
  }
  std::span<const int> profile(std::size_t set, std::size_t alt) const {
    return {levels.data() + (set * n_alts + alt) * n_attributes, n_attributes};
  }
};

/// Dummy-codes a level design, appending an all-zero row per set when
/// `opt_out` is set.
CodedDesign encode_levels(const LevelDesign& levels, const CodingMap& coding, bool opt_out);

/// Uniformly random levels; a profile duplicating an earlier alternative of
/// its set is redrawn up to 1000 times, then stepped through the full
/// factorial (first attribute fastest) until unique.
LevelDesign random_initial_levels(const DesignSettings& settings, Rng& rng);
CodedDesign random_initial_design(const DesignSettings& settings, Rng& rng);

/// Multi-start coordinate exchange minimising the D-error at the prior
/// mean, or the DB-error over one fixed draw matrix when settings.bayesian.
/// Throws InvalidInput when the settings do not validate and
/// DegenerateDesignSpace when every start stays singular.
OptimResult coordinate_exchange(const DesignSettings& settings, const OptimizerConfig& config);

OptimResult generate_design(const DesignSettings& settings);

}  // namespace dce
