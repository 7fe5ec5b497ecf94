#include "dce/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "dce/codec.hpp"
#include "dce/csv.hpp"
#include "dce/errors.hpp"
#include "dce/estimation.hpp"
#include "dce/json_io.hpp"
#include "dce/optimizer.hpp"
#include "dce/service.hpp"

namespace dce {

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << text;
  if (!out.flush()) throw InvalidInput("cannot write '" + path + "'");
}

bool has_suffix(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

DesignFormat format_for(const std::string& path) { return has_suffix(path, ".csv") ? DesignFormat::csv : DesignFormat::json; }

LabeledDesign read_design(const std::string& path) { return import_design(read_text(path), format_for(path)); }

std::string fixed(double v, int width, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%*.*f", width, precision, v);
  return buf;
}

std::string padded(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::size_t name_width(const std::vector<std::string>& names) {
  std::size_t w = 10;
  for (const auto& n : names) w = std::max(w, n.size() + 2);
  return w;
}

std::string coefficient_table(const EstimationResult& est) {
  const auto& names = est.coefficients.names;
  const std::size_t w = name_width(names);
  std::string out = padded("name", w) + "  estimate   std.err         z         p\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out += padded(names[k], w) + fixed(est.coefficients.beta(i), 10, 4) + fixed(est.std_errors(i), 10, 4) +
           fixed(est.z_values(i), 10, 3) + fixed(est.p_values(i), 10, 4) + "\n";
  }
  out += "Log-likelihood: " + fixed(est.log_likelihood, 0, 4) + " (null " + fixed(est.null_log_likelihood, 0, 4) +
         "); tasks: " + std::to_string(est.n_tasks) + "; iterations: " + std::to_string(est.iterations) +
         "; converged: " + (est.converged ? "yes" : "no") + "\n";
  return out;
}

std::string wtp_table(const WtpResult& w) {
  std::vector<std::string> names;
  for (const auto& e : w.entries) names.push_back(e.name);
  const std::size_t width = name_width(names);
  std::string out = "WTP relative to " + w.price_name + "\n";
  out += padded("name", width) + "  estimate   std.err   ci.low    ci.high\n";
  for (const auto& e : w.entries) {
    out += padded(e.name, width) + fixed(e.estimate, 10, 4) + fixed(e.std_error, 10, 4) + fixed(e.ci_low, 10, 4) +
           fixed(e.ci_high, 10, 4) + "\n";
  }
  return out;
}

struct NamesFile {
  std::vector<std::string> attribute_names;
  std::vector<std::vector<std::string>> level_names;
  std::vector<std::string> alternative_labels;
};

NamesFile read_names(const std::string& path) {
  const Json doc = parse_json(read_text(path));
  NamesFile out;
  try {
    if (doc.contains("attributes")) {
      for (const auto& a : doc.at("attributes").get<std::vector<AttributeSpec>>()) {
        out.attribute_names.push_back(a.name);
        out.level_names.push_back(a.levels);
      }
    } else {
      out.attribute_names = doc.at("attribute_names").get<std::vector<std::string>>();
      out.level_names = doc.at("level_names").get<std::vector<std::vector<std::string>>>();
    }
    out.alternative_labels = doc.value("alternative_labels", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad names file: ") + e.what());
  }
  return out;
}

struct DataOptions {
  std::string data;
  std::vector<std::string> covariates;
  std::string price_attribute;
  std::vector<double> price_levels;
  std::size_t opt_out_alt = 0;  // 0 = none
  std::string json_out;
};

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--data", o.data, "Responses CSV (gid,respondent,alt,choice,...)")->required();
  cmd->add_option("--covariates", o.covariates, "Columns to include (default: all)")->delimiter(',');
  cmd->add_option("--price-attribute", o.price_attribute, "Attribute to recode as a continuous price");
  cmd->add_option("--price-levels", o.price_levels, "Price values, base level first")->delimiter(',');
  cmd->add_option("--opt-out-alt", o.opt_out_alt, "Alternative index of the opt-out (price 0)");
  cmd->add_option("--json", o.json_out, "Also write the result as JSON to this file");
}

std::pair<ResponseDataset, std::vector<std::string>> load_data(const DataOptions& o) {
  const ResponseDataset data = read_dataset_csv(read_text(o.data));
  std::optional<PriceRecoding> price;
  if (!o.price_levels.empty() || !o.price_attribute.empty()) {
    if (o.price_attribute.empty() || o.price_levels.empty()) {
      throw InvalidInput("--price-attribute and --price-levels go together");
    }
    price = PriceRecoding{o.price_attribute, o.price_levels,
                          o.opt_out_alt ? std::optional<std::size_t>(o.opt_out_alt) : std::nullopt};
  }
  return prepare_estimation(data, o.covariates, price);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete choice experiments: design, decode, simulate, estimate, wtp, serve", "dce"};
  app.require_subcommand(1);

  // design
  std::vector<std::size_t> levels;
  std::size_t alts = 2, sets = 0, draws = 100, starts = 5;
  bool opt_out = false, bayesian = false;
  std::vector<double> priors;
  std::uint64_t seed = 0;
  std::string scheme = "pseudo_random";
  std::string design_out;
  auto* design = app.add_subcommand("design", "Generate an efficient design");
  design->add_option("--levels", levels, "Levels per attribute, e.g. 3,2,3,3")->required()->delimiter(',');
  design->add_option("--alts", alts, "Alternatives per set, opt-out excluded");
  design->add_option("--sets", sets, "Number of choice sets")->required();
  design->add_flag("--opt-out", opt_out, "Append an opt-out alternative to each set");
  design->add_flag("--bayesian", bayesian, "Minimise the DB-error over prior draws");
  design->add_option("--priors", priors, "Prior means, one per coded column")->delimiter(',');
  design->add_option("--seed", seed, "Random seed");
  design->add_option("--draws", draws, "Prior draws for the Bayesian criterion");
  design->add_option("--draw-scheme", scheme, "pseudo_random or halton")
      ->check(CLI::IsMember({"pseudo_random", "halton"}));
  design->add_option("--starts", starts, "Random starts");
  design->add_option("--out", design_out, "Output file (.json or .csv); stdout when omitted");

  // decode
  std::string decode_in, names_path, decode_out;
  auto* decode = app.add_subcommand("decode", "Print a design as readable choice sets");
  decode->add_option("--in", decode_in, "Design file (.json or .csv)")->required();
  decode->add_option("--names", names_path, "JSON file with attribute and level names");
  decode->add_option("--out", decode_out, "Output text file; stdout when omitted");

  // simulate
  std::string sim_design, sim_out;
  std::vector<double> sim_beta;
  std::size_t respondents = 100;
  std::uint64_t sim_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Simulate MNL respondents answering a design");
  simulate->add_option("--design", sim_design, "Design file (.json or .csv)")->required();
  simulate->add_option("--beta", sim_beta, "True coefficients")->required()->delimiter(',');
  simulate->add_option("--respondents", respondents, "Number of respondents");
  simulate->add_option("--seed", sim_seed, "Random seed");
  simulate->add_option("--out", sim_out, "Responses CSV; stdout when omitted");

  // estimate / wtp
  DataOptions est_opts, wtp_opts;
  auto* estimate = app.add_subcommand("estimate", "Fit a conditional logit model");
  add_data_options(estimate, est_opts);
  std::string price_name;
  std::vector<std::string> targets;
  auto* wtp_cmd = app.add_subcommand("wtp", "Willingness to pay from a conditional logit fit");
  add_data_options(wtp_cmd, wtp_opts);
  wtp_cmd->add_option("--price", price_name, "Price coefficient (default cont_price with a price recoding)");
  wtp_cmd->add_option("--targets", targets, "Coefficients to express in money (default: all others)")
      ->delimiter(',');

  // serve
  std::string data_dir = "dce-data", bind = "127.0.0.1", port_file;
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--data-dir", data_dir, "Directory for stored designs, surveys and jobs");
  serve_cmd->add_option("--bind", bind, "Address to bind (loopback by default)");
  serve_cmd->add_option("--port", port, "Port; 0 picks a free one");
  serve_cmd->add_option("--port-file", port_file, "Write the bound port to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (design->parsed()) {
      DesignSettings s = make_settings(levels, alts, sets, opt_out, bayesian, seed);
      s.priors.n_draws = draws;
      s.priors.scheme = scheme == "halton" ? DrawScheme::halton : DrawScheme::pseudo_random;
      if (!priors.empty()) s.priors.mean = Eigen::Map<const Eigen::VectorXd>(priors.data(), static_cast<Eigen::Index>(priors.size()));
      const auto problems = validate_settings(s);
      if (!problems.empty()) {
        for (const auto& p : problems) err << "error: " << p << "\n";
        return kExitUsage;
      }
      OptimizerConfig config = OptimizerConfig::from_settings(s);
      config.n_starts = starts;
      const OptimResult result = coordinate_exchange(s, config);
      const LabeledDesign labeled = labeled_from_result(result, s);
      const std::string text = export_design(labeled, format_for(design_out));
      if (design_out.empty()) {
        out << text;
      } else {
        write_text(design_out, text);
      }
      out << "K=" << s.n_parameters() << "\n"
          << (result.criterion_kind == CriterionKind::db ? "DB-error=" : "D-error=")
          << csv::format_number(result.criterion_value) << "\n";
      if (!design_out.empty()) out << "wrote " << design_out << "\n";
      return kExitOk;
    }
    if (decode->parsed()) {
      LabeledDesign d = read_design(decode_in);
      DecodeOptions opts;
      if (!names_path.empty()) {
        const NamesFile names = read_names(names_path);
        d = label_design(d, names.attribute_names, names.level_names);
        opts.alternative_labels = names.alternative_labels;
        if (d.coded.opt_out && names.alternative_labels.size() == d.coded.alts_per_set) {
          opts.opt_out_label = names.alternative_labels.back();
        }
      }
      const std::string text = format_decoded(decode_design(d, opts));
      if (decode_out.empty()) {
        out << text;
      } else {
        write_text(decode_out, text);
      }
      return kExitOk;
    }
    if (simulate->parsed()) {
      const LabeledDesign d = read_design(sim_design);
      const Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(sim_beta.data(), static_cast<Eigen::Index>(sim_beta.size()));
      if (static_cast<std::size_t>(beta.size()) != d.coded.n_columns()) {
        throw InvalidInput("--beta has " + std::to_string(beta.size()) + " values but the design has " +
                           std::to_string(d.coded.n_columns()) + " coded columns");
      }
      const std::string text = write_dataset_csv(simulate_choices(d.coded, beta, respondents, sim_seed));
      if (sim_out.empty()) {
        out << text;
      } else {
        write_text(sim_out, text);
      }
      return kExitOk;
    }
    if (estimate->parsed()) {
      const auto [data, covariates] = load_data(est_opts);
      const EstimationResult est = fit_conditional_logit(data, covariates);
      out << coefficient_table(est);
      if (!est_opts.json_out.empty()) write_text(est_opts.json_out, estimation_to_json(est).dump(2) + "\n");
      return est.converged ? kExitOk : kExitNumerical;
    }
    if (wtp_cmd->parsed()) {
      const auto [data, covariates] = load_data(wtp_opts);
      if (price_name.empty()) {
        if (wtp_opts.price_attribute.empty()) throw InvalidInput("wtp needs --price or a price recoding");
        price_name = kContinuousPriceName;
      }
      // Validate names before fitting.
      for (const auto& t : targets) {
        if (t == price_name) throw InvalidInput("'" + t + "' is the price coefficient, not a WTP target");
      }
      const EstimationResult est = fit_conditional_logit(data, covariates);
      if (targets.empty()) {
        for (const auto& n : est.coefficients.names)
          if (n != price_name) targets.push_back(n);
      }
      const WtpResult w = wtp(est, price_name, targets);
      out << coefficient_table(est) << "\n" << wtp_table(w);
      if (!wtp_opts.json_out.empty()) {
        Json doc = estimation_to_json(est);
        doc["wtp"] = wtp_to_json(w);
        write_text(wtp_opts.json_out, doc.dump(2) + "\n");
      }
      return kExitOk;
    }
    if (serve_cmd->parsed()) {
      Service service(data_dir);
      ServeOptions opts;
      opts.bind = bind;
      opts.port = port;
      if (!port_file.empty()) opts.port_file = port_file;
      err << "serving " << data_dir << " on " << bind << "\n";
      if (!serve(service, opts)) {
        err << "error: cannot bind " << bind << ":" << port << "\n";
        return kExitUsage;
      }
      return kExitOk;
    }
  } catch (const EstimationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DegenerateDesignSpace& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace dce
