#include "dce/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "httplib.h"

#include "dce/errors.hpp"
#include "dce/estimation.hpp"
#include "dce/optimizer.hpp"

namespace dce {

namespace fs = std::filesystem;

namespace {

class NotFound : public Error {
 public:
  using Error::Error;
};

class MethodNotAllowed : public Error {
 public:
  using Error::Error;
};

/// 422 carrying several validation messages.
class ValidationFailed : public Error {
 public:
  explicit ValidationFailed(std::vector<std::string> messages)
      : Error(messages.empty() ? "validation failed" : messages.front()), messages_(std::move(messages)) {}
  const std::vector<std::string>& messages() const noexcept { return messages_; }

 private:
  std::vector<std::string> messages_;
};

HttpResponse json_response(int status, const Json& body) {
  HttpResponse r;
  r.status = status;
  r.body = body.dump(2) + "\n";
  return r;
}

HttpResponse error_response(int status, const std::string& message, Json extra = Json::object()) {
  extra["error"] = message;
  return json_response(status, extra);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Json parse_body(const HttpRequest& req) {
  const Json body = req.body.empty() ? Json::object() : parse_json(req.body);
  if (!body.is_object()) throw ParseError("request body must be a JSON object");
  return body;
}

// Accepts a numeric suffix after `prefix`; used to restore id counters.
std::uint64_t id_number(const std::string& id, const std::string& prefix) {
  if (id.size() <= prefix.size() || id.compare(0, prefix.size(), prefix) != 0) return 0;
  std::uint64_t n = 0;
  for (std::size_t i = prefix.size(); i < id.size(); ++i) {
    if (id[i] < '0' || id[i] > '9') return 0;
    n = n * 10 + static_cast<std::uint64_t>(id[i] - '0');
  }
  return n;
}

bool wants(const HttpRequest& req, std::string_view mime, std::string_view format) {
  const auto f = req.query.find("format");
  if (f != req.query.end()) return f->second == format;
  return req.accept.find(mime) != std::string::npos;
}

Json choice_set_to_json(const DecodedChoiceSet& set) {
  Json alts = Json::array();
  for (const auto& a : set.alternatives) {
    Json levels = Json::array();
    for (const auto& [attr, level] : a.levels) levels.push_back({{"attribute", attr}, {"level", level}});
    alts.push_back({{"label", a.label}, {"opt_out", a.opt_out}, {"levels", levels}});
  }
  return Json{{"set", set.set_index}, {"alternatives", alts}};
}

Json design_summary(const std::string& id, const LabeledDesign& d) {
  Json out{{"id", id},
           {"K", d.coded.n_columns()},
           {"S", d.coded.n_sets},
           {"J", d.coded.n_real_alts()},
           {"opt_out", d.coded.opt_out},
           {"column_names", d.coded.column_names}};
  if (d.provenance) {
    out["criterion_kind"] = to_string(d.provenance->criterion_kind);
    out["criterion_value"] = real_to_json(d.provenance->criterion_value);
    out["passes_used"] = d.provenance->passes_used;
    out["start_index"] = d.provenance->start_index;
  }
  return out;
}

std::optional<PriceRecoding> price_from_json(const Json& body) {
  if (!body.contains("price") || body.at("price").is_null()) return std::nullopt;
  const auto& p = body.at("price");
  if (!p.is_object() || !p.contains("attribute") || !p.contains("values")) {
    throw ParseError("price block needs \"attribute\" and \"values\"");
  }
  PriceRecoding out;
  out.attribute = p.at("attribute").get<std::string>();
  out.values = p.at("values").get<std::vector<double>>();
  if (p.contains("opt_out_alt") && !p.at("opt_out_alt").is_null()) {
    out.opt_out_alt = p.at("opt_out_alt").get<std::size_t>();
  }
  return out;
}

std::atomic<std::uint64_t> temp_counter{0};

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(temp_counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------

Service::Service(fs::path data_dir) : root_(std::move(data_dir)) {
  fs::create_directories(root_ / "designs");
  fs::create_directories(root_ / "surveys");
  fs::create_directories(root_ / "jobs");
  load();
  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Service::load() {
  auto json_files = [](const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  for (const auto& path : json_files(root_ / "designs")) {
    const std::string id = path.stem().string();
    designs_[id] = DesignEntry{design_from_json(parse_json(read_file(path)))};
    next_design_ = std::max(next_design_, id_number(id, "design") + 1);
  }
  for (const auto& path : json_files(root_ / "surveys")) {
    const Json doc = parse_json(read_file(path));
    auto [def, state] = survey_from_json(doc);
    auto entry = std::make_shared<SurveyEntry>();
    entry->survey = std::make_unique<Survey>(std::move(def), std::move(state), Survey::Updates::deferred);
    entry->design_id = doc.value("design_id", "");
    entry->created = doc.value("created", "");
    entry->updated = doc.value("updated", "");
    const std::string id = path.stem().string();
    surveys_[id] = entry;
    next_survey_ = std::max(next_survey_, id_number(id, "survey") + 1);
  }
  std::map<std::string, std::size_t> pending_regen;  // survey id -> respondent count
  for (const auto& path : json_files(root_ / "jobs")) {
    const Json doc = parse_json(read_file(path));
    Job job;
    job.id = path.stem().string();
    job.kind = doc.at("kind").get<std::string>();
    job.status = doc.at("status").get<std::string>();
    job.input = doc.value("input", Json::object());
    job.result = doc.value("result", Json());
    job.error = doc.value("error", "");
    next_job_ = std::max(next_job_, id_number(job.id, "job") + 1);
    if (job.status == "queued" || job.status == "running") {
      job.status = "queued";
      queue_.push_back(job.id);
      if (job.kind == "regeneration") {
        pending_regen[job.input.value("survey_id", "")] = job.input.value("completed_respondents", std::size_t{0});
      }
    }
    jobs_[job.id] = std::move(job);
  }
  // A trigger whose job was never recorded (killed between the answer and
  // the job file) is queued again.
  for (const auto& [id, entry] : surveys_) {
    const auto state = entry->survey->snapshot();
    const std::size_t n = state.completed_respondents;
    if (!entry->survey->definition().serial_mode.triggers_at(n)) continue;
    bool logged = false;
    for (const auto& e : state.update_log) logged = logged || e.completed_respondents == n;
    const auto p = pending_regen.find(id);
    if (logged || (p != pending_regen.end() && p->second == n)) continue;
    const std::string job_id = "job" + std::to_string(next_job_++);
    Job job{job_id, "regeneration", "queued", Json{{"survey_id", id}, {"completed_respondents", n}}, Json(), ""};
    persist_job(job);
    jobs_[job_id] = job;
    queue_.push_back(job_id);
  }
}

// ---------------------------------------------------------------------------
// Jobs

void Service::persist_job(const Job& job) {
  Json doc{{"id", job.id}, {"kind", job.kind}, {"status", job.status}, {"input", job.input}};
  if (!job.result.is_null()) doc["result"] = job.result;
  if (!job.error.empty()) doc["error"] = job.error;
  write_file_atomic(root_ / "jobs" / (job.id + ".json"), doc.dump(2) + "\n");
}

std::string Service::enqueue_job(const std::string& kind, Json input) {
  std::string id;
  {
    std::lock_guard lock(registry_);
    id = "job" + std::to_string(next_job_++);
    Job job{id, kind, "queued", std::move(input), Json(), ""};
    persist_job(job);
    jobs_[id] = std::move(job);
  }
  {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(id);
  }
  queue_cv_.notify_all();
  return id;
}

void Service::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      busy_ = true;
    }
    run_job(id);
    {
      std::lock_guard lock(queue_mutex_);
      busy_ = false;
    }
    idle_cv_.notify_all();
  }
}

void Service::wait_idle() {
  std::unique_lock lock(queue_mutex_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

void Service::run_job(const std::string& id) {
  Job job;
  {
    std::lock_guard lock(registry_);
    auto& j = jobs_.at(id);
    j.status = "running";
    persist_job(j);
    job = j;
  }
  Json result;
  std::string error;
  try {
    if (job.kind == "design") {
      result = run_design_job(job.input);
    } else {
      const std::string survey_id = job.input.at("survey_id").get<std::string>();
      const auto completed = job.input.at("completed_respondents").get<std::size_t>();
      auto entry = find_survey(survey_id);
      const auto request = entry->survey->update_request_for(completed);
      if (!request) {
        result = Json{{"regenerated", false}, {"reason", "no trigger at this respondent count"}};
      } else {
        const UpdateResult update = Survey::compute_update(*request);
        std::lock_guard write(entry->write);
        const auto outcome = entry->survey->apply_update(update);
        persist_survey(survey_id, *entry);
        result = Json{{"survey_id", survey_id},
                      {"completed_respondents", completed},
                      {"regenerated", outcome == UpdateOutcome::regenerated},
                      {"reason", update.reason},
                      {"design_version", entry->survey->current_version()}};
      }
    }
  } catch (const std::exception& e) {
    error = e.what();
  }
  std::lock_guard lock(registry_);
  auto& j = jobs_.at(id);
  j.status = error.empty() ? "done" : "failed";
  j.result = result;
  j.error = error;
  persist_job(j);
}

// ---------------------------------------------------------------------------
// Routing

HttpResponse Service::handle(const HttpRequest& req) {
  try {
    const auto seg = split_path(req.path);
    const bool get = req.method == "GET";
    const bool post = req.method == "POST";
    auto only = [&](bool ok) {
      if (!ok) throw MethodNotAllowed("method " + req.method + " not allowed on " + req.path);
    };
    const std::size_t n = seg.size();
    if (n == 1 && seg[0] == "health") return only(get), json_response(200, Json{{"status", "ok"}});
    if (n >= 1 && seg[0] == "designs") {
      if (n == 1) return only(post), create_design(req);
      if (n == 2 && seg[1] == "import") return only(post), import_design_endpoint(req);
      if (n == 2) return only(get), get_design(seg[1], req);
      if (n == 3 && seg[2] == "labels") return only(post), relabel_design(seg[1], req);
    }
    if (n >= 1 && seg[0] == "surveys") {
      if (n == 1) return only(post), create_survey(req);
      if (n == 2) return only(get), get_survey(seg[1]);
      if (n == 3 && seg[2] == "sessions") return only(post), start_session(seg[1]);
      if (n == 3 && seg[2] == "close") return only(post), close_survey(seg[1]);
      if (n == 3 && seg[2] == "responses") return only(get), survey_responses(seg[1]);
    }
    if (n == 3 && seg[0] == "sessions" && seg[2] == "answers") return only(post), submit_answer(seg[1], req);
    if (n == 1 && seg[0] == "estimations") return only(post), estimate(req, false);
    if (n == 1 && seg[0] == "wtp") return only(post), estimate(req, true);
    if (n == 2 && seg[0] == "jobs") return only(get), get_job(seg[1]);
    throw NotFound("no route for " + req.path);
  } catch (const NotFound& e) {
    return error_response(404, e.what());
  } catch (const MethodNotAllowed& e) {
    return error_response(405, e.what());
  } catch (const ValidationFailed& e) {
    return error_response(422, e.what(), Json{{"messages", e.messages()}});
  } catch (const ParseError& e) {
    return error_response(400, e.what());
  } catch (const SurveyError& e) {
    switch (e.kind()) {
      case SurveyError::Kind::unknown_session:
        return error_response(404, e.what());
      case SurveyError::Kind::bad_choice:
        return error_response(422, e.what());
      default:
        return error_response(409, e.what());
    }
  } catch (const EstimationError& e) {
    static const char* kinds[] = {"rank_deficient", "separation", "degenerate_price"};
    return error_response(422, e.what(), Json{{"kind", kinds[static_cast<int>(e.kind())]}});
  } catch (const DegenerateDesignSpace& e) {
    return error_response(500, e.what());
  } catch (const InvalidInput& e) {
    return error_response(422, e.what());
  } catch (const SchemaError& e) {
    return error_response(422, e.what());
  } catch (const CorruptDesign& e) {
    return error_response(422, e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, std::string("bad request body: ") + e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

// ---------------------------------------------------------------------------
// Designs

std::string Service::store_design(const LabeledDesign& design) {
  std::lock_guard lock(registry_);
  const std::string id = "design" + std::to_string(next_design_++);
  write_file_atomic(root_ / "designs" / (id + ".json"), design_to_json(design).dump(2) + "\n");
  designs_[id] = DesignEntry{design};
  return id;
}

Json Service::run_design_job(const Json& body) {
  const DesignSettings settings = settings_from_json(body);
  const auto messages = validate_settings(settings);
  if (!messages.empty()) throw ValidationFailed(messages);
  const OptimizerConfig config = optimizer_config_from_json(body.value("optimizer", Json()), settings);
  const OptimResult result = coordinate_exchange(settings, config);
  const LabeledDesign labeled = labeled_from_result(result, settings);
  return design_summary(store_design(labeled), labeled);
}

HttpResponse Service::create_design(const HttpRequest& req) {
  Json body = parse_body(req);
  const auto q = req.query.find("async");
  const bool async = (q != req.query.end() && q->second == "true") || body.value("async", false);
  body.erase("async");
  if (async) {
    // Reject invalid settings now rather than in the job.
    const auto messages = validate_settings(settings_from_json(body));
    if (!messages.empty()) throw ValidationFailed(messages);
    const std::string job = enqueue_job("design", body);
    auto r = json_response(202, Json{{"job_id", job}, {"status", "queued"}});
    r.headers["Location"] = "/jobs/" + job;
    return r;
  }
  return json_response(201, run_design_job(body));
}

HttpResponse Service::get_design(const std::string& id, const HttpRequest& req) {
  LabeledDesign design;
  {
    std::lock_guard lock(registry_);
    const auto it = designs_.find(id);
    if (it == designs_.end()) throw NotFound("unknown design '" + id + "'");
    design = it->second.design;
  }
  const auto v = req.query.find("view");
  const std::string view = v == req.query.end() ? "labeled" : v->second;
  if (view == "labeled") {
    Json doc = design_to_json(design);
    doc["id"] = id;
    return json_response(200, doc);
  }
  if (view == "coded") {
    if (wants(req, "text/csv", "csv")) {
      HttpResponse r;
      r.content_type = "text/csv";
      r.body = export_design(design, DesignFormat::csv);
      r.headers["Content-Disposition"] = "attachment; filename=\"" + id + ".csv\"";
      return r;
    }
    return json_response(200, Json{{"id", id},
                                   {"column_names", design.coded.column_names},
                                   {"n_sets", design.coded.n_sets},
                                   {"alts_per_set", design.coded.alts_per_set},
                                   {"opt_out", design.coded.opt_out},
                                   {"x", matrix_to_json(design.coded.x)}});
  }
  if (view == "decoded") {
    const auto sets = decode_design(design);
    if (wants(req, "text/plain", "text")) {
      HttpResponse r;
      r.content_type = "text/plain; charset=utf-8";
      r.body = format_decoded(sets);
      return r;
    }
    Json arr = Json::array();
    for (const auto& s : sets) arr.push_back(choice_set_to_json(s));
    return json_response(200, Json{{"id", id}, {"sets", arr}});
  }
  throw ParseError("unknown view '" + view + "'; expected coded, labeled or decoded");
}

HttpResponse Service::relabel_design(const std::string& id, const HttpRequest& req) {
  const Json body = parse_body(req);
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> levels;
  if (body.contains("attributes")) {
    for (const auto& a : body.at("attributes").get<std::vector<AttributeSpec>>()) {
      names.push_back(a.name);
      levels.push_back(a.levels);
    }
  } else {
    names = body.at("attribute_names").get<std::vector<std::string>>();
    levels = body.at("level_names").get<std::vector<std::vector<std::string>>>();
  }
  std::lock_guard lock(registry_);
  const auto it = designs_.find(id);
  if (it == designs_.end()) throw NotFound("unknown design '" + id + "'");
  LabeledDesign relabeled = label_design(it->second.design, names, levels);
  write_file_atomic(root_ / "designs" / (id + ".json"), design_to_json(relabeled).dump(2) + "\n");
  it->second.design = relabeled;
  Json doc = design_to_json(relabeled);
  doc["id"] = id;
  return json_response(200, doc);
}

HttpResponse Service::import_design_endpoint(const HttpRequest& req) {
  const auto f = req.query.find("format");
  const bool csv = f != req.query.end() ? f->second == "csv" : req.content_type.find("csv") != std::string::npos;
  const LabeledDesign design = import_design(req.body, csv ? DesignFormat::csv : DesignFormat::json);
  return json_response(201, design_summary(store_design(design), design));
}

// ---------------------------------------------------------------------------
// Surveys

std::shared_ptr<Service::SurveyEntry> Service::find_survey(const std::string& id) {
  std::lock_guard lock(registry_);
  const auto it = surveys_.find(id);
  if (it == surveys_.end()) throw NotFound("unknown survey '" + id + "'");
  return it->second;
}

void Service::persist_survey(const std::string& id, SurveyEntry& entry) {
  entry.updated = now_utc();
  Json doc = survey_to_json(entry.survey->definition(), entry.survey->snapshot());
  doc["id"] = id;
  doc["design_id"] = entry.design_id;
  doc["created"] = entry.created;
  doc["updated"] = entry.updated;
  write_file_atomic(root_ / "surveys" / (id + ".json"), doc.dump(1) + "\n");
}

HttpResponse Service::create_survey(const HttpRequest& req) {
  const Json body = parse_body(req);
  if (!body.contains("design_id")) throw ParseError("survey needs a design_id");
  const std::string design_id = body.at("design_id").get<std::string>();
  SurveyDefinition def;
  {
    std::lock_guard lock(registry_);
    const auto it = designs_.find(design_id);
    if (it == designs_.end()) throw NotFound("unknown design '" + design_id + "'");
    def.design = it->second.design;
  }
  def.intro_text = body.value("intro_text", "");
  def.final_text = body.value("final_text", "");
  def.alternative_labels = body.value("alternative_labels", std::vector<std::string>{});
  if (body.contains("serial_mode")) {
    const auto& m = body.at("serial_mode");
    if (m.is_string()) {
      def.serial_mode.kind = serial_kind_from(m.get<std::string>());
    } else {
      def.serial_mode.kind = serial_kind_from(m.at("kind").get<std::string>());
      def.serial_mode.batch_size = m.value("batch_size", std::size_t{5});
    }
  }
  if (body.contains("settings")) def.settings = settings_from_json(body.at("settings"));
  def.regeneration_starts = body.value("regeneration_starts", std::size_t{5});

  auto entry = std::make_shared<SurveyEntry>();
  entry->survey = std::make_unique<Survey>(std::move(def), Survey::Updates::deferred);
  entry->design_id = design_id;
  entry->created = now_utc();
  std::string id;
  {
    std::lock_guard lock(registry_);
    id = "survey" + std::to_string(next_survey_++);
    persist_survey(id, *entry);
    surveys_[id] = entry;
  }
  return json_response(201, Json{{"id", id},
                                 {"design_id", design_id},
                                 {"n_sets", entry->survey->definition().design.coded.n_sets},
                                 {"serial_mode", to_string(entry->survey->definition().serial_mode.kind)},
                                 {"design_version", entry->survey->current_version()}});
}

HttpResponse Service::get_survey(const std::string& id) {
  auto entry = find_survey(id);
  std::lock_guard write(entry->write);
  const auto& def = entry->survey->definition();
  const auto state = entry->survey->snapshot();
  Json history = Json::array();
  for (const auto& v : state.design_history) {
    history.push_back({{"version", v.version},
                       {"respondents_at_switch", v.respondents_at_switch},
                       {"criterion_value", real_to_json(v.criterion_value)}});
  }
  Json log = Json::array();
  for (const auto& e : state.update_log) {
    log.push_back({{"completed_respondents", e.completed_respondents},
                   {"regenerated", e.regenerated},
                   {"reason", e.reason}});
  }
  std::size_t active = 0;
  for (const auto& [sid, s] : state.sessions) active += s.complete ? 0 : 1;
  return json_response(200, Json{{"id", id},
                                 {"design_id", entry->design_id},
                                 {"open", state.open},
                                 {"created", entry->created},
                                 {"updated", entry->updated},
                                 {"intro_text", def.intro_text},
                                 {"final_text", def.final_text},
                                 {"alternative_labels", def.alternative_labels},
                                 {"serial_mode",
                                  {{"kind", to_string(def.serial_mode.kind)}, {"batch_size", def.serial_mode.batch_size}}},
                                 {"n_sets", def.design.coded.n_sets},
                                 {"completed_respondents", state.completed_respondents},
                                 {"sessions_started", state.sessions.size()},
                                 {"sessions_active", active},
                                 {"n_tasks", state.responses.n_tasks()},
                                 {"design_version", state.design_history.back().version},
                                 {"design_history", history},
                                 {"update_log", log}});
}

HttpResponse Service::start_session(const std::string& id) {
  auto entry = find_survey(id);
  std::lock_guard write(entry->write);
  const auto start = entry->survey->start_session();
  persist_survey(id, *entry);
  return json_response(201, Json{{"session_id", id + "." + start.session_id},
                                 {"survey_id", id},
                                 {"respondent_id", start.respondent_id},
                                 {"design_version", start.design_version},
                                 {"set_number", start.set_number},
                                 {"n_sets", start.n_sets},
                                 {"choice_set", choice_set_to_json(start.choice_set)},
                                 {"intro_text", start.intro_text}});
}

HttpResponse Service::submit_answer(const std::string& sid, const HttpRequest& req) {
  const auto dot = sid.rfind('.');
  if (dot == std::string::npos) throw NotFound("unknown session '" + sid + "'");
  const std::string survey_id = sid.substr(0, dot);
  const std::string local = sid.substr(dot + 1);
  const Json body = parse_body(req);
  const char* key = body.contains("choice") ? "choice" : "alternative";
  if (!body.contains(key) || !body.at(key).is_number_integer()) {
    throw ParseError("answer needs an integer \"choice\" (1-based alternative index)");
  }
  const long long choice = body.at(key).get<long long>();
  std::shared_ptr<SurveyEntry> entry;
  try {
    entry = find_survey(survey_id);
  } catch (const NotFound&) {
    throw NotFound("unknown session '" + sid + "'");
  }
  std::lock_guard write(entry->write);
  const auto out = entry->survey->submit_answer(local, choice < 1 ? 0 : static_cast<std::size_t>(choice));
  Json resp{{"session_id", sid},
            {"finished", out.finished},
            {"design_version", out.design_version},
            {"set_number", out.set_number},
            {"n_sets", out.n_sets}};
  if (out.next_set) resp["choice_set"] = choice_set_to_json(*out.next_set);
  if (out.finished) resp["final_text"] = out.final_text;
  if (out.pending_update) {
    resp["regeneration_job"] = enqueue_job(
        "regeneration", Json{{"survey_id", survey_id}, {"completed_respondents", out.pending_update->completed_respondents}});
  }
  persist_survey(survey_id, *entry);
  return json_response(200, resp);
}

HttpResponse Service::close_survey(const std::string& id) {
  auto entry = find_survey(id);
  std::lock_guard write(entry->write);
  const auto data = entry->survey->close();
  persist_survey(id, *entry);
  return json_response(200, Json{{"id", id}, {"open", false}, {"n_tasks", data.n_tasks()}, {"n_rows", data.rows.size()}});
}

HttpResponse Service::survey_responses(const std::string& id) {
  auto entry = find_survey(id);
  HttpResponse r;
  r.content_type = "text/csv";
  r.body = write_dataset_csv(entry->survey->snapshot().responses);
  r.headers["Content-Disposition"] = "attachment; filename=\"" + id + "-responses.csv\"";
  return r;
}

// ---------------------------------------------------------------------------
// Estimation

HttpResponse Service::estimate(const HttpRequest& req, bool with_wtp) {
  const Json body = parse_body(req);
  ResponseDataset data;
  if (body.contains("dataset_csv")) {
    data = read_dataset_csv(body.at("dataset_csv").get<std::string>());
  } else if (body.contains("survey_id")) {
    data = find_survey(body.at("survey_id").get<std::string>())->survey->snapshot().responses;
  } else {
    throw ParseError("request needs \"dataset_csv\" or \"survey_id\"");
  }
  const auto price = price_from_json(body);
  auto [prepared, covariates] =
      prepare_estimation(data, body.value("covariates", std::vector<std::string>{}), price);
  const EstimationResult est = fit_conditional_logit(prepared, covariates);
  Json out = estimation_to_json(est);
  if (with_wtp) {
    std::string price_name = body.value("price_name", price ? std::string(kContinuousPriceName) : std::string());
    if (price_name.empty()) throw ParseError("wtp needs a price block or a \"price_name\"");
    std::vector<std::string> targets = body.value("targets", std::vector<std::string>{});
    if (targets.empty()) {
      for (const auto& n : est.coefficients.names)
        if (n != price_name) targets.push_back(n);
    }
    out["wtp"] = wtp_to_json(wtp(est, price_name, targets));
  }
  return json_response(200, out);
}

HttpResponse Service::get_job(const std::string& id) {
  std::lock_guard lock(registry_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFound("unknown job '" + id + "'");
  const Job& j = it->second;
  Json out{{"id", j.id}, {"kind", j.kind}, {"status", j.status}};
  if (!j.result.is_null()) out["result"] = j.result;
  if (!j.error.empty()) out["error"] = j.error;
  return json_response(200, out);
}

// ---------------------------------------------------------------------------
// HTTP binding

bool serve(Service& service, const ServeOptions& options) {
  httplib::Server server;
  auto adapt = [&service](const httplib::Request& in, httplib::Response& out) {
    HttpRequest req;
    req.method = in.method;
    req.path = in.path;
    for (const auto& [k, v] : in.params) req.query.emplace(k, v);
    req.body = in.body;
    req.content_type = in.get_header_value("Content-Type");
    req.accept = in.get_header_value("Accept");
    const HttpResponse r = service.handle(req);
    out.status = r.status;
    for (const auto& [k, v] : r.headers) out.set_header(k, v);
    out.set_content(r.body, r.content_type);
  };
  server.Get(".*", adapt);
  server.Post(".*", adapt);
  server.Put(".*", adapt);
  server.Delete(".*", adapt);

  int port = options.port;
  if (port == 0) {
    port = server.bind_to_any_port(options.bind);
    if (port < 0) return false;
  } else if (!server.bind_to_port(options.bind, port)) {
    return false;
  }
  if (options.port_file) write_file_atomic(*options.port_file, std::to_string(port) + "\n");
  return server.listen_after_bind();
}

}  // namespace dce
