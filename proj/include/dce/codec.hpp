#pragma once

// Labels, plain-text decoding, and CSV/JSON import/export of designs.

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dce/core.hpp"
#include "dce/json_io.hpp"
#include "dce/optimizer.hpp"

namespace dce {

/// Settings and optimizer outcome that produced a design; JSON export only.
struct DesignProvenance {
  DesignSettings settings;
  CriterionKind criterion_kind = CriterionKind::d;
  double criterion_value = kInfiniteError;
  std::size_t passes_used = 0;
  std::size_t start_index = 0;
  std::vector<double> error_trace;

  bool operator==(const DesignProvenance&) const = default;
};

struct LabeledDesign {
  CodedDesign coded;
  std::vector<std::string> attribute_names;
  std::vector<std::vector<std::string>> level_names;  // includes the base level
  std::optional<DesignProvenance> provenance;

  std::vector<AttributeSpec> attributes() const;
  CodingMap coding() const { return CodingMap(attributes()); }

  bool operator==(const LabeledDesign&) const = default;
};

struct DecodedAlternative {
  std::string label;
  bool opt_out = false;
  std::vector<std::pair<std::string, std::string>> levels;  // attribute -> level; empty for the opt-out
};

struct DecodedChoiceSet {
  std::size_t set_index = 0;  // 1-based
  std::vector<DecodedAlternative> alternatives;
};

struct DecodeOptions {
  /// Labels for the real alternatives; "Option 1", "Option 2", ... when empty.
  std::vector<std::string> alternative_labels;
  std::string opt_out_label = "Opt-out";
};

enum class DesignFormat { csv, json };

/// Names the attributes and levels of `coded`, whose columns follow
/// `structure`. Throws InvalidInput naming the first offending attribute.
LabeledDesign label_design(const CodedDesign& coded, const CodingMap& structure, std::vector<std::string> attribute_names,
                           std::vector<std::vector<std::string>> level_names);
/// Relabels an already labeled design, keeping its provenance.
LabeledDesign label_design(const LabeledDesign& design, std::vector<std::string> attribute_names,
                           std::vector<std::vector<std::string>> level_names);
/// Labels from the settings that generated the result.
LabeledDesign labeled_from_result(const OptimResult& result, const DesignSettings& settings);

/// Throws CorruptDesign on a row that is not a valid dummy coding.
std::vector<DecodedChoiceSet> decode_design(const LabeledDesign& design, const DecodeOptions& options = {});

/// Plain-text rendering, one block per choice set.
std::string format_decoded(const std::vector<DecodedChoiceSet>& sets);

std::string export_design(const LabeledDesign& design, DesignFormat format);
/// Validates every design invariant before returning. Throws ParseError
/// (with line for CSV), SchemaError for an unknown schema_version, and
/// InvalidInput for invariant violations.
LabeledDesign import_design(std::string_view bytes, DesignFormat format);

/// The JSON document behind export_design(..., json), as a value.
Json design_to_json(const LabeledDesign& design);
LabeledDesign design_from_json(const Json& doc);

}  // namespace dce
