#include "dce/serial.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <set>
#include <variant>

#include "dce/errors.hpp"
#include "dce/estimation.hpp"
#include "dce/optimizer.hpp"

namespace dce {

namespace {

constexpr int kSurveySchemaVersion = 1;
constexpr double kPriorRegularization = 1e-6;

std::vector<std::string> default_labels(const CodedDesign& d) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < d.alts_per_set; ++j) {
    out.push_back(d.is_opt_out_alt(j) ? "Opt-out" : "Option " + std::to_string(j + 1));
  }
  return out;
}

std::string session_name(std::size_t n) { return "s" + std::to_string(n); }

// Fits the model and builds the next design; returns the reason on a skip.
std::variant<DesignVersion, std::string> regenerate(const UpdateRequest& req) {
  const auto& data = req.responses;
  if (data.rows.empty()) return std::string("no responses yet");
  EstimationResult est;
  try {
    est = fit_conditional_logit(data, data.covariate_names);
  } catch (const Error& e) {
    return std::string("estimation failed: ") + e.what();
  }
  if (!est.converged) return std::string("estimation did not converge");
  if (!est.vcov.allFinite() || !est.coefficients.beta.allFinite()) {
    return std::string("estimation produced non-finite values");
  }
  const Eigen::Index k = est.vcov.rows();
  const Eigen::MatrixXd cov = est.vcov + kPriorRegularization * Eigen::MatrixXd::Identity(k, k);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(est.vcov, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -kPriorRegularization) {
    return std::string("estimated covariance is not positive semi-definite");
  }

  DesignSettings settings = req.settings;
  settings.bayesian = true;
  settings.priors.mean = est.coefficients.beta;
  settings.priors.covariance = 0.5 * (cov + cov.transpose());
  settings.seed = req.settings.seed + req.completed_respondents;

  OptimizerConfig config = OptimizerConfig::from_settings(settings);
  config.n_starts = req.n_starts;
  OptimResult result;
  try {
    result = coordinate_exchange(settings, config);
  } catch (const Error& e) {
    return std::string("design generation failed: ") + e.what();
  }
  DesignVersion v;
  v.respondents_at_switch = req.completed_respondents;
  v.design = label_design(result.design, req.current.coding(), req.current.attribute_names, req.current.level_names);
  v.design.provenance = labeled_from_result(result, settings).provenance;
  v.prior = settings.priors;
  v.criterion_value = result.criterion_value;
  return v;
}

}  // namespace

bool SerialMode::triggers_at(std::size_t completed) const {
  if (completed == 0) return false;
  switch (kind) {
    case Kind::none:
      return false;
    case Kind::per_respondent:
      return true;
    case Kind::per_batch:
      return batch_size > 0 && completed % batch_size == 0;
  }
  return false;
}

std::string_view to_string(SerialMode::Kind kind) {
  switch (kind) {
    case SerialMode::Kind::per_respondent:
      return "per_respondent";
    case SerialMode::Kind::per_batch:
      return "per_batch";
    default:
      return "none";
  }
}

SerialMode::Kind serial_kind_from(std::string_view name) {
  if (name == "none") return SerialMode::Kind::none;
  if (name == "per_respondent") return SerialMode::Kind::per_respondent;
  if (name == "per_batch") return SerialMode::Kind::per_batch;
  throw InvalidInput("unknown serial mode '" + std::string(name) + "'");
}

DesignSettings settings_for(const LabeledDesign& design) {
  if (design.provenance) {
    DesignSettings s = design.provenance->settings;
    s.attributes = design.attributes();
    return s;
  }
  DesignSettings s;
  s.attributes = design.attributes();
  s.n_alts = design.coded.n_real_alts();
  s.n_sets = design.coded.n_sets;
  s.opt_out = design.coded.opt_out;
  s.priors = PriorSpec::standard(s.n_parameters());
  return s;
}

// ---------------------------------------------------------------------------

Survey::Survey(SurveyDefinition definition, Updates updates)
    : Survey(std::move(definition), SurveyState{}, updates) {}

Survey::Survey(SurveyDefinition definition, SurveyState state, Updates updates)
    : definition_(std::move(definition)), state_(std::move(state)), updates_(updates) {
  const auto& d = definition_.design.coded;
  const auto problems = check_design(d, definition_.design.coding());
  if (!problems.empty()) throw InvalidInput("survey design is invalid: " + problems.front());
  if (d.n_sets == 0) throw InvalidInput("survey design has no choice sets");
  if (definition_.alternative_labels.empty()) definition_.alternative_labels = default_labels(d);
  if (definition_.alternative_labels.size() != d.alts_per_set) {
    throw InvalidInput("expected " + std::to_string(d.alts_per_set) + " alternative labels, got " +
                       std::to_string(definition_.alternative_labels.size()));
  }
  if (definition_.serial_mode.kind == SerialMode::Kind::per_batch && definition_.serial_mode.batch_size < 1) {
    throw InvalidInput("batch size must be at least 1");
  }

  if (definition_.settings.attributes.empty()) definition_.settings = settings_for(definition_.design);
  auto& s = definition_.settings;
  if (s.level_counts() != settings_for(definition_.design).level_counts() || s.n_sets != d.n_sets ||
      s.n_alts != d.n_real_alts() || s.opt_out != d.opt_out) {
    throw InvalidInput("survey settings do not describe the survey design");
  }
  s.attributes = definition_.design.attributes();
  if (definition_.serial_mode.kind != SerialMode::Kind::none) {
    const auto msgs = validate_settings(s);
    if (!msgs.empty()) throw InvalidInput("regeneration settings are invalid: " + msgs.front());
    if (definition_.regeneration_starts < 1) throw InvalidInput("regeneration needs at least one start");
  }

  if (state_.design_history.empty()) {
    DesignVersion first;
    first.version = 1;
    first.design = definition_.design;
    first.prior = s.priors;
    first.criterion_value = definition_.design.provenance ? definition_.design.provenance->criterion_value
                                                          : d_error(d, s.priors.mean);
    state_.design_history.push_back(std::move(first));
    state_.responses.covariate_names = d.column_names;
  }
  if (state_.responses.covariate_names != d.column_names) {
    throw InvalidInput("stored responses do not match the design columns");
  }
}

DecodedChoiceSet Survey::choice_set(std::size_t version, std::size_t set) const {
  const auto& design = state_.design_history.at(version - 1).design;
  DecodeOptions opts;
  const auto& labels = definition_.alternative_labels;
  opts.alternative_labels = labels;
  if (design.coded.opt_out) opts.opt_out_label = labels.back();
  auto sets = decode_design(design, opts);
  return sets.at(set);
}

Survey::SessionStart Survey::start_session() {
  std::lock_guard lock(mutex_);
  if (!state_.open) throw SurveyError(SurveyError::Kind::closed, "survey is closed");
  Session session;
  session.id = session_name(state_.next_session++);
  session.respondent_id = state_.next_respondent_id++;
  session.design_version = state_.design_history.back().version;
  state_.respondent_versions[session.respondent_id] = session.design_version;
  state_.sessions[session.id] = session;

  SessionStart out;
  out.session_id = session.id;
  out.respondent_id = session.respondent_id;
  out.design_version = session.design_version;
  out.set_number = 1;
  out.n_sets = definition_.design.coded.n_sets;
  out.choice_set = choice_set(session.design_version, 0);
  out.intro_text = definition_.intro_text;
  return out;
}

Survey::AnswerOutcome Survey::submit_answer(const std::string& session_id, std::size_t chosen_alt) {
  std::unique_lock lock(mutex_);
  if (!state_.open) throw SurveyError(SurveyError::Kind::closed, "survey is closed");
  const auto it = state_.sessions.find(session_id);
  if (it == state_.sessions.end()) {
    throw SurveyError(SurveyError::Kind::unknown_session, "unknown session '" + session_id + "'");
  }
  Session& session = it->second;
  if (session.complete) {
    throw SurveyError(SurveyError::Kind::session_complete, "session '" + session_id + "' has already finished");
  }
  const auto& design = state_.design_history.at(session.design_version - 1).design.coded;
  if (chosen_alt < 1 || chosen_alt > design.alts_per_set) {
    throw SurveyError(SurveyError::Kind::bad_choice, "choice must be between 1 and " +
                                                         std::to_string(design.alts_per_set) + ", got " +
                                                         std::to_string(chosen_alt));
  }

  const std::size_t set = session.next_set;
  const auto rows = design.set_rows(set);
  const auto gid = (session.respondent_id - 1) * static_cast<std::int64_t>(design.n_sets) +
                   static_cast<std::int64_t>(set + 1);
  for (Eigen::Index j = 0; j < rows.rows(); ++j) {
    ResponseRow r;
    r.gid = gid;
    r.respondent = session.respondent_id;
    r.alt = static_cast<std::size_t>(j + 1);
    r.choice = r.alt == chosen_alt ? 1 : 0;
    r.covariates.resize(static_cast<std::size_t>(rows.cols()));
    for (Eigen::Index c = 0; c < rows.cols(); ++c) r.covariates[static_cast<std::size_t>(c)] = rows(j, c);
    state_.responses.rows.push_back(std::move(r));
  }
  ++session.next_set;

  AnswerOutcome out;
  out.design_version = session.design_version;
  out.n_sets = design.n_sets;
  if (session.next_set < design.n_sets) {
    out.set_number = session.next_set + 1;
    out.next_set = choice_set(session.design_version, session.next_set);
    return out;
  }

  session.complete = true;
  out.finished = true;
  out.set_number = design.n_sets;
  out.final_text = definition_.final_text;
  state_.completion_order.push_back(session.respondent_id);
  const std::size_t completed = ++state_.completed_respondents;
  if (updates_ == Updates::deferred) {
    out.pending_update = update_request_locked(completed);
  } else {
    out.update = update_locked(completed);
  }
  return out;
}

std::optional<UpdateRequest> Survey::update_request_locked(std::size_t completed) const {
  if (!definition_.serial_mode.triggers_at(completed)) return std::nullopt;
  if (completed > state_.completion_order.size()) return std::nullopt;
  UpdateRequest req;
  req.completed_respondents = completed;
  const std::set<std::int64_t> finished(state_.completion_order.begin(),
                                        state_.completion_order.begin() + static_cast<std::ptrdiff_t>(completed));
  req.responses.covariate_names = state_.responses.covariate_names;
  for (const auto& row : state_.responses.rows) {
    if (finished.count(row.respondent)) req.responses.rows.push_back(row);
  }
  req.settings = definition_.settings;
  req.current = state_.design_history.back().design;
  req.n_starts = definition_.regeneration_starts;
  return req;
}

UpdateOutcome Survey::update_locked(std::size_t completed) {
  auto req = update_request_locked(completed);
  if (!req) return UpdateOutcome::unchanged;
  return apply_locked(compute_update(*req));
}

UpdateOutcome Survey::apply_locked(const UpdateResult& result) {
  for (const auto& e : state_.update_log) {
    if (e.completed_respondents == result.completed_respondents) return UpdateOutcome::unchanged;
  }
  UpdateLogEntry entry;
  entry.completed_respondents = result.completed_respondents;
  entry.reason = result.reason;
  if (result.version && result.completed_respondents >= state_.design_history.back().respondents_at_switch) {
    DesignVersion v = *result.version;
    v.version = state_.design_history.back().version + 1;
    state_.design_history.push_back(std::move(v));
    entry.regenerated = true;
  } else if (result.version) {
    entry.reason = "superseded by a later regeneration";
  }
  state_.update_log.push_back(entry);
  return entry.regenerated ? UpdateOutcome::regenerated : UpdateOutcome::unchanged;
}

UpdateOutcome Survey::maybe_update_design() {
  std::lock_guard lock(mutex_);
  return update_locked(state_.completed_respondents);
}

std::optional<UpdateRequest> Survey::update_request_for(std::size_t completed) const {
  std::lock_guard lock(mutex_);
  return update_request_locked(completed);
}

UpdateResult Survey::compute_update(const UpdateRequest& request) {
  UpdateResult out;
  out.completed_respondents = request.completed_respondents;
  auto r = regenerate(request);
  if (auto* v = std::get_if<DesignVersion>(&r)) {
    out.version = std::move(*v);
    out.reason = "regenerated from " + std::to_string(request.completed_respondents) + " respondents";
  } else {
    out.reason = std::get<std::string>(r);
  }
  return out;
}

UpdateOutcome Survey::apply_update(const UpdateResult& result) {
  std::lock_guard lock(mutex_);
  return apply_locked(result);
}

ResponseDataset Survey::close() {
  std::lock_guard lock(mutex_);
  state_.open = false;
  return state_.responses;
}

SurveyState Survey::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

std::size_t Survey::current_version() const {
  std::lock_guard lock(mutex_);
  return state_.design_history.back().version;
}

bool Survey::is_open() const {
  std::lock_guard lock(mutex_);
  return state_.open;
}

// ---------------------------------------------------------------------------
// Persistence

Json survey_to_json(const SurveyDefinition& def, const SurveyState& state) {
  Json d;
  d["design"] = design_to_json(def.design);
  d["intro_text"] = def.intro_text;
  d["final_text"] = def.final_text;
  d["alternative_labels"] = def.alternative_labels;
  d["serial_mode"] = {{"kind", to_string(def.serial_mode.kind)}, {"batch_size", def.serial_mode.batch_size}};
  d["settings"] = def.settings;
  d["regeneration_starts"] = def.regeneration_starts;

  Json history = Json::array();
  for (const auto& v : state.design_history) {
    history.push_back({{"version", v.version},
                       {"respondents_at_switch", v.respondents_at_switch},
                       {"design", design_to_json(v.design)},
                       {"prior", v.prior},
                       {"criterion_value", real_to_json(v.criterion_value)}});
  }
  Json sessions = Json::array();
  for (const auto& [id, s] : state.sessions) {
    sessions.push_back({{"id", s.id},
                        {"respondent_id", s.respondent_id},
                        {"design_version", s.design_version},
                        {"next_set", s.next_set},
                        {"complete", s.complete}});
  }
  Json versions = Json::array();
  for (const auto& [rid, v] : state.respondent_versions) versions.push_back({rid, v});
  Json log = Json::array();
  for (const auto& e : state.update_log) {
    log.push_back({{"completed_respondents", e.completed_respondents},
                   {"regenerated", e.regenerated},
                   {"reason", e.reason}});
  }
  Json s;
  s["design_history"] = history;
  s["completed_respondents"] = state.completed_respondents;
  s["completion_order"] = state.completion_order;
  s["next_respondent_id"] = state.next_respondent_id;
  s["next_session"] = state.next_session;
  s["open"] = state.open;
  s["responses_csv"] = write_dataset_csv(state.responses);
  s["sessions"] = sessions;
  s["respondent_versions"] = versions;
  s["update_log"] = log;

  return Json{{"schema_version", kSurveySchemaVersion}, {"kind", "dce_survey"}, {"definition", d}, {"state", s}};
}

std::pair<SurveyDefinition, SurveyState> survey_from_json(const Json& doc) {
  try {
    if (!doc.is_object() || !doc.contains("schema_version")) throw ParseError("survey document lacks schema_version");
    if (doc.at("schema_version") != kSurveySchemaVersion) {
      throw SchemaError("unsupported survey schema version " + doc.at("schema_version").dump());
    }
    const auto& d = doc.at("definition");
    SurveyDefinition def;
    def.design = design_from_json(d.at("design"));
    def.intro_text = d.value("intro_text", "");
    def.final_text = d.value("final_text", "");
    def.alternative_labels = d.value("alternative_labels", std::vector<std::string>{});
    const auto& mode = d.at("serial_mode");
    def.serial_mode.kind = serial_kind_from(mode.at("kind").get<std::string>());
    def.serial_mode.batch_size = mode.value("batch_size", std::size_t{5});
    def.settings = settings_from_json(d.at("settings"));
    def.regeneration_starts = d.value("regeneration_starts", std::size_t{5});

    const auto& s = doc.at("state");
    SurveyState state;
    for (const auto& v : s.at("design_history")) {
      DesignVersion dv;
      dv.version = v.at("version").get<std::size_t>();
      dv.respondents_at_switch = v.at("respondents_at_switch").get<std::size_t>();
      dv.design = design_from_json(v.at("design"));
      dv.prior = prior_from_json(v.at("prior"), dv.design.coded.n_columns());
      dv.criterion_value = real_from_json(v.at("criterion_value"), "criterion_value");
      state.design_history.push_back(std::move(dv));
    }
    if (state.design_history.empty()) throw ParseError("survey document has an empty design history");
    state.completed_respondents = s.at("completed_respondents").get<std::size_t>();
    state.completion_order = s.at("completion_order").get<std::vector<std::int64_t>>();
    state.next_respondent_id = s.at("next_respondent_id").get<std::int64_t>();
    state.next_session = s.at("next_session").get<std::size_t>();
    state.open = s.at("open").get<bool>();
    state.responses = read_dataset_csv(s.at("responses_csv").get<std::string>());
    for (const auto& e : s.at("sessions")) {
      Session session;
      session.id = e.at("id").get<std::string>();
      session.respondent_id = e.at("respondent_id").get<std::int64_t>();
      session.design_version = e.at("design_version").get<std::size_t>();
      session.next_set = e.at("next_set").get<std::size_t>();
      session.complete = e.at("complete").get<bool>();
      if (session.design_version < 1 || session.design_version > state.design_history.size()) {
        throw ParseError("session '" + session.id + "' refers to an unknown design version");
      }
      state.sessions[session.id] = session;
    }
    for (const auto& e : s.at("respondent_versions")) {
      state.respondent_versions[e.at(0).get<std::int64_t>()] = e.at(1).get<std::size_t>();
    }
    for (const auto& e : s.at("update_log")) {
      state.update_log.push_back({e.at("completed_respondents").get<std::size_t>(), e.at("regenerated").get<bool>(),
                                  e.at("reason").get<std::string>()});
    }
    return {std::move(def), std::move(state)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad survey document: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("bad survey document: ") + e.what());
  }
}

}  // namespace dce
