#include "dce/codec.hpp"

#include <map>
#include <set>

#include "dce/csv.hpp"
#include "dce/errors.hpp"
#include "dce/json_io.hpp"

namespace dce {

namespace {

constexpr int kSchemaVersion = 1;

void check_labels(const std::vector<std::size_t>& level_counts, const std::vector<std::string>& attribute_names,
                  const std::vector<std::vector<std::string>>& level_names) {
  if (attribute_names.size() != level_counts.size()) {
    throw InvalidInput("expected " + std::to_string(level_counts.size()) + " attribute names, got " +
                       std::to_string(attribute_names.size()));
  }
  if (level_names.size() != level_counts.size()) {
    throw InvalidInput("expected level names for " + std::to_string(level_counts.size()) + " attributes, got " +
                       std::to_string(level_names.size()));
  }
  std::set<std::string> seen_attrs;
  for (std::size_t a = 0; a < level_counts.size(); ++a) {
    const std::string who = "attribute " + std::to_string(a + 1) + " ('" + attribute_names[a] + "')";
    if (attribute_names[a].empty()) throw InvalidInput("attribute " + std::to_string(a + 1) + " has an empty name");
    if (!seen_attrs.insert(attribute_names[a]).second) throw InvalidInput(who + " is named twice");
    if (level_names[a].size() != level_counts[a]) {
      throw InvalidInput(who + ": expected " + std::to_string(level_counts[a]) + " level names, got " +
                         std::to_string(level_names[a].size()));
    }
    std::set<std::string> seen_levels;
    for (const auto& l : level_names[a]) {
      if (l.empty()) throw InvalidInput(who + " has an empty level name");
      if (!seen_levels.insert(l).second) throw InvalidInput(who + " repeats level '" + l + "'");
    }
  }
}

std::vector<std::size_t> counts_of(const CodingMap& coding) {
  std::vector<std::size_t> out;
  for (const auto& a : coding.attributes()) out.push_back(a.levels.size());
  return out;
}

std::string join_messages(const std::vector<std::string>& msgs) {
  std::string out;
  for (const auto& m : msgs) out += (out.empty() ? "" : "; ") + m;
  return out;
}

// Places rows given as (set, alt, x) into a complete, ordered grid.
CodedDesign assemble(const std::vector<std::string>& column_names, bool opt_out,
                     const std::vector<std::tuple<long long, long long, Eigen::RowVectorXd>>& rows) {
  if (rows.empty()) throw InvalidInput("design has no rows");
  long long max_set = 0, max_alt = 0;
  for (const auto& [s, a, x] : rows) {
    if (s < 1 || a < 1) throw InvalidInput("set and alt indices must be positive");
    max_set = std::max(max_set, s);
    max_alt = std::max(max_alt, a);
  }
  CodedDesign d;
  d.column_names = column_names;
  d.n_sets = static_cast<std::size_t>(max_set);
  d.alts_per_set = static_cast<std::size_t>(max_alt);
  d.opt_out = opt_out;
  d.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.n_rows()), static_cast<Eigen::Index>(column_names.size()));
  std::vector<char> filled(d.n_rows(), 0);
  for (const auto& [s, a, x] : rows) {
    const auto idx = static_cast<std::size_t>((s - 1) * max_alt + (a - 1));
    if (filled[idx]) {
      throw InvalidInput("duplicate row for set " + std::to_string(s) + " alt " + std::to_string(a));
    }
    filled[idx] = 1;
    d.x.row(static_cast<Eigen::Index>(idx)) = x;
  }
  for (std::size_t i = 0; i < filled.size(); ++i) {
    if (!filled[i]) {
      throw InvalidInput("missing row for set " + std::to_string(i / d.alts_per_set + 1) + " alt " +
                         std::to_string(i % d.alts_per_set + 1));
    }
  }
  return d;
}

void validate_imported(const LabeledDesign& design) {
  std::vector<std::size_t> counts;
  for (const auto& l : design.level_names) {
    if (l.size() < 2) throw InvalidInput("every attribute needs at least 2 levels");
    counts.push_back(l.size());
  }
  check_labels(counts, design.attribute_names, design.level_names);
  const auto problems = check_design(design.coded, design.coding());
  if (!problems.empty()) throw InvalidInput("invalid design: " + join_messages(problems));
}

}  // namespace

std::vector<AttributeSpec> LabeledDesign::attributes() const {
  std::vector<AttributeSpec> out;
  for (std::size_t a = 0; a < attribute_names.size(); ++a) {
    out.push_back({attribute_names[a], a < level_names.size() ? level_names[a] : std::vector<std::string>{}});
  }
  return out;
}

LabeledDesign label_design(const CodedDesign& coded, const CodingMap& structure, std::vector<std::string> attribute_names,
                           std::vector<std::vector<std::string>> level_names) {
  if (coded.n_columns() != structure.n_columns() || static_cast<std::size_t>(coded.x.cols()) != structure.n_columns()) {
    throw InvalidInput("design has " + std::to_string(coded.n_columns()) + " columns but the coding has " +
                       std::to_string(structure.n_columns()));
  }
  check_labels(counts_of(structure), attribute_names, level_names);
  LabeledDesign out;
  out.coded = coded;
  out.attribute_names = std::move(attribute_names);
  out.level_names = std::move(level_names);
  out.coded.column_names = out.coding().column_names();
  return out;
}

LabeledDesign label_design(const LabeledDesign& design, std::vector<std::string> attribute_names,
                           std::vector<std::vector<std::string>> level_names) {
  LabeledDesign out = label_design(design.coded, design.coding(), std::move(attribute_names), std::move(level_names));
  out.provenance = design.provenance;
  if (out.provenance) out.provenance->settings.attributes = out.attributes();
  return out;
}

LabeledDesign labeled_from_result(const OptimResult& result, const DesignSettings& settings) {
  LabeledDesign out;
  out.coded = result.design;
  for (const auto& a : settings.attributes) {
    out.attribute_names.push_back(a.name);
    out.level_names.push_back(a.levels);
  }
  DesignProvenance p;
  p.settings = settings;
  p.criterion_kind = result.criterion_kind;
  p.criterion_value = result.criterion_value;
  p.passes_used = result.passes_used;
  p.start_index = result.start_index;
  p.error_trace = result.error_trace;
  out.provenance = std::move(p);
  return out;
}

std::vector<DecodedChoiceSet> decode_design(const LabeledDesign& design, const DecodeOptions& options) {
  const CodingMap coding = design.coding();
  const CodedDesign& d = design.coded;
  if (static_cast<std::size_t>(d.x.cols()) != coding.n_columns() || static_cast<std::size_t>(d.x.rows()) != d.n_rows()) {
    throw CorruptDesign("design matrix shape does not match its labels");
  }
  std::vector<DecodedChoiceSet> out;
  for (std::size_t s = 0; s < d.n_sets; ++s) {
    DecodedChoiceSet set;
    set.set_index = s + 1;
    for (std::size_t j = 0; j < d.alts_per_set; ++j) {
      const auto row = d.x.row(static_cast<Eigen::Index>(s * d.alts_per_set + j));
      DecodedAlternative alt;
      if (d.is_opt_out_alt(j)) {
        if (!row.isZero(0.0)) throw CorruptDesign("set " + std::to_string(s + 1) + ": opt-out row is not all zero");
        alt.opt_out = true;
        alt.label = options.opt_out_label;
      } else {
        std::vector<int> levels;
        try {
          levels = coding.decode(row);
        } catch (const CorruptDesign& e) {
          throw CorruptDesign("set " + std::to_string(s + 1) + " alt " + std::to_string(j + 1) + ": " + e.what());
        }
        alt.label = j < options.alternative_labels.size() ? options.alternative_labels[j] : "Option " + std::to_string(j + 1);
        for (std::size_t a = 0; a < levels.size(); ++a) {
          alt.levels.emplace_back(design.attribute_names[a], design.level_names[a][static_cast<std::size_t>(levels[a])]);
        }
      }
      set.alternatives.push_back(std::move(alt));
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::string format_decoded(const std::vector<DecodedChoiceSet>& sets) {
  std::string out;
  for (const auto& set : sets) {
    if (!out.empty()) out += "\n";
    out += "Choice set " + std::to_string(set.set_index) + "\n";
    for (const auto& alt : set.alternatives) {
      out += "  " + alt.label + "\n";
      for (const auto& [attr, level] : alt.levels) out += "    " + attr + ": " + level + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

namespace {

std::string export_csv(const LabeledDesign& design) {
  std::string out = "#dce_design," + std::to_string(kSchemaVersion) + "\n";
  out += std::string("#opt_out,") + (design.coded.opt_out ? "true" : "false") + "\n";
  for (std::size_t a = 0; a < design.attribute_names.size(); ++a) {
    out += "#" + csv::join({"attribute", design.attribute_names[a], design.level_names[a].front(),
                            std::to_string(design.level_names[a].size())}) +
           "\n";
  }
  std::vector<std::string> header{"set", "alt"};
  header.insert(header.end(), design.coded.column_names.begin(), design.coded.column_names.end());
  out += csv::join(header) + "\n";
  const auto& d = design.coded;
  for (std::size_t s = 0; s < d.n_sets; ++s) {
    for (std::size_t j = 0; j < d.alts_per_set; ++j) {
      std::string line = std::to_string(s + 1) + "," + std::to_string(j + 1);
      const auto row = d.x.row(static_cast<Eigen::Index>(s * d.alts_per_set + j));
      for (Eigen::Index c = 0; c < row.size(); ++c) line += "," + csv::format_number(row(c));
      out += line + "\n";
    }
  }
  return out;
}

}  // namespace

Json design_to_json(const LabeledDesign& design) {
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["kind"] = "dce_design";
  Json attrs = Json::array();
  for (std::size_t a = 0; a < design.attribute_names.size(); ++a) {
    attrs.push_back({{"name", design.attribute_names[a]}, {"levels", design.level_names[a]}});
  }
  doc["attributes"] = attrs;
  const auto& d = design.coded;
  doc["opt_out"] = d.opt_out;
  doc["n_sets"] = d.n_sets;
  doc["alts_per_set"] = d.alts_per_set;
  doc["column_names"] = d.column_names;
  Json rows = Json::array();
  for (std::size_t s = 0; s < d.n_sets; ++s) {
    for (std::size_t j = 0; j < d.alts_per_set; ++j) {
      rows.push_back({{"set", s + 1},
                      {"alt", j + 1},
                      {"x", vector_to_json(d.x.row(static_cast<Eigen::Index>(s * d.alts_per_set + j)).transpose())}});
    }
  }
  doc["rows"] = rows;
  if (design.provenance) {
    const auto& p = *design.provenance;
    doc["settings"] = p.settings;
    Json trace = Json::array();
    for (double v : p.error_trace) trace.push_back(real_to_json(v));
    doc["optimizer"] = {{"criterion_kind", to_string(p.criterion_kind)},
                        {"criterion_value", real_to_json(p.criterion_value)},
                        {"passes_used", p.passes_used},
                        {"start_index", p.start_index},
                        {"error_trace", trace}};
  }
  return doc;
}

LabeledDesign import_csv(std::string_view bytes) {
  const auto records = csv::parse(bytes);
  bool opt_out = false;
  struct AttrLine {
    std::string name, base;
    std::size_t n_levels;
  };
  std::vector<AttrLine> attr_lines;
  std::size_t at = 0;
  for (; at < records.size() && records[at].comment; ++at) {
    const auto& rec = records[at];
    if (rec.fields.empty()) continue;
    const auto& key = rec.fields[0];
    if (key == "dce_design") {
      if (rec.fields.size() < 2 || rec.fields[1] != std::to_string(kSchemaVersion)) {
        throw SchemaError("unsupported design schema version '" + (rec.fields.size() > 1 ? rec.fields[1] : "") + "'");
      }
    } else if (key == "opt_out") {
      if (rec.fields.size() != 2 || (rec.fields[1] != "true" && rec.fields[1] != "false")) {
        throw ParseError("opt_out must be true or false", rec.line);
      }
      opt_out = rec.fields[1] == "true";
    } else if (key == "attribute") {
      if (rec.fields.size() != 4) throw ParseError("attribute line needs name, base level and level count", rec.line);
      const long long n = csv::parse_integer(rec.fields[3], rec.line);
      if (n < 2) throw ParseError("attribute needs at least 2 levels", rec.line);
      attr_lines.push_back({rec.fields[1], rec.fields[2], static_cast<std::size_t>(n)});
    }
  }
  if (at == records.size()) throw ParseError("missing header row", records.empty() ? 1 : records.back().line);
  const auto& header = records[at];
  if (header.fields.size() < 3 || header.fields[0] != "set" || header.fields[1] != "alt") {
    throw ParseError("header must start with set,alt followed by the coded columns", header.line);
  }
  const std::vector<std::string> columns(header.fields.begin() + 2, header.fields.end());

  LabeledDesign out;
  if (!attr_lines.empty()) {
    std::size_t c = 0;
    for (const auto& al : attr_lines) {
      out.attribute_names.push_back(al.name);
      std::vector<std::string> levels{al.base};
      const std::string prefix = al.name + ".";
      for (std::size_t l = 1; l < al.n_levels; ++l, ++c) {
        if (c >= columns.size() || columns[c].compare(0, prefix.size(), prefix) != 0) {
          throw ParseError("column " + std::to_string(c + 3) + " does not belong to attribute '" + al.name + "'",
                           header.line);
        }
        levels.push_back(columns[c].substr(prefix.size()));
      }
      out.level_names.push_back(std::move(levels));
    }
    if (c != columns.size()) throw ParseError("more coded columns than the attribute lines describe", header.line);
  } else {
    // no metadata: group consecutive columns by the text before the first '.'
    for (const auto& col : columns) {
      const auto dot = col.find('.');
      if (dot == std::string::npos || dot == 0) {
        throw ParseError("column '" + col + "' is not of the form attribute.level", header.line);
      }
      const std::string attr = col.substr(0, dot);
      if (out.attribute_names.empty() || out.attribute_names.back() != attr) {
        out.attribute_names.push_back(attr);
        out.level_names.push_back({"base"});
      }
      out.level_names.back().push_back(col.substr(dot + 1));
    }
  }

  std::vector<std::tuple<long long, long long, Eigen::RowVectorXd>> rows;
  for (std::size_t r = at + 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.comment) continue;
    if (rec.fields.size() != header.fields.size()) {
      throw ParseError("expected " + std::to_string(header.fields.size()) + " fields, got " +
                           std::to_string(rec.fields.size()),
                       rec.line);
    }
    Eigen::RowVectorXd x(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) x(static_cast<Eigen::Index>(c)) = csv::parse_number(rec.fields[c + 2], rec.line);
    rows.emplace_back(csv::parse_integer(rec.fields[0], rec.line), csv::parse_integer(rec.fields[1], rec.line), x);
  }
  out.coded = assemble(columns, opt_out, rows);
  validate_imported(out);
  return out;
}

LabeledDesign design_from_json(const Json& doc) {
  try {
    if (!doc.is_object()) throw ParseError("design document must be a JSON object");
    if (!doc.contains("schema_version")) throw ParseError("missing schema_version");
    if (!doc.at("schema_version").is_number_integer() || doc.at("schema_version").get<int>() != kSchemaVersion) {
      throw SchemaError("unsupported design schema_version " + doc.at("schema_version").dump());
    }
    LabeledDesign out;
    for (const auto& a : doc.at("attributes")) {
      AttributeSpec spec = a.get<AttributeSpec>();
      out.attribute_names.push_back(spec.name);
      out.level_names.push_back(spec.levels);
    }
    const bool opt_out = doc.at("opt_out").get<bool>();
    const auto column_names = doc.at("column_names").get<std::vector<std::string>>();
    std::vector<std::tuple<long long, long long, Eigen::RowVectorXd>> rows;
    for (const auto& r : doc.at("rows")) {
      const Eigen::VectorXd x = vector_from_json(r.at("x"), "row x");
      if (static_cast<std::size_t>(x.size()) != column_names.size()) throw InvalidInput("row length does not match column_names");
      rows.emplace_back(r.at("set").get<long long>(), r.at("alt").get<long long>(), x.transpose());
    }
    out.coded = assemble(column_names, opt_out, rows);
    if (doc.contains("n_sets") && doc.at("n_sets").get<std::size_t>() != out.coded.n_sets) {
      throw InvalidInput("n_sets does not match the rows");
    }
    if (doc.contains("alts_per_set") && doc.at("alts_per_set").get<std::size_t>() != out.coded.alts_per_set) {
      throw InvalidInput("alts_per_set does not match the rows");
    }
    if (doc.contains("settings") && doc.contains("optimizer")) {
      DesignProvenance p;
      p.settings = settings_from_json(doc.at("settings"));
      const auto& o = doc.at("optimizer");
      p.criterion_kind = o.at("criterion_kind").get<std::string>() == "db" ? CriterionKind::db : CriterionKind::d;
      p.criterion_value = real_from_json(o.at("criterion_value"), "criterion_value");
      p.passes_used = o.at("passes_used").get<std::size_t>();
      p.start_index = o.at("start_index").get<std::size_t>();
      for (const auto& v : o.at("error_trace")) p.error_trace.push_back(real_from_json(v, "error_trace"));
      out.provenance = std::move(p);
    }
    validate_imported(out);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad design document: ") + e.what());
  }
}

std::string export_design(const LabeledDesign& design, DesignFormat format) {
  return format == DesignFormat::csv ? export_csv(design) : design_to_json(design).dump(2) + "\n";
}

LabeledDesign import_design(std::string_view bytes, DesignFormat format) {
  return format == DesignFormat::csv ? import_csv(bytes) : design_from_json(parse_json(bytes));
}

}  // namespace dce
