#pragma once

// HTTP/JSON facade with file-backed persistence. Requests go through
// Service::handle, which is transport independent; serve() binds it to an
// HTTP listener.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "dce/codec.hpp"
#include "dce/json_io.hpp"
#include "dce/serial.hpp"

namespace dce {

struct HttpRequest {
  std::string method;  // "GET" / "POST"
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string content_type;
  std::string accept;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

class Service {
 public:
  /// Loads every stored design, survey and job under `data_dir`, creating
  /// the directory if needed. Interrupted jobs are queued again.
  explicit Service(std::filesystem::path data_dir);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  HttpResponse handle(const HttpRequest& request);

  /// Blocks until the background queue is empty and idle.
  void wait_idle();

 private:
  struct DesignEntry {
    LabeledDesign design;
  };
  struct SurveyEntry {
    std::unique_ptr<Survey> survey;
    std::string design_id;
    std::mutex write;  // serializes mutation + persistence
    std::string created;
    std::string updated;
  };
  struct Job {
    std::string id;
    std::string kind;  // "design" or "regeneration"
    std::string status = "queued";
    Json input;
    Json result;
    std::string error;
  };

  HttpResponse create_design(const HttpRequest& req);
  HttpResponse get_design(const std::string& id, const HttpRequest& req);
  HttpResponse relabel_design(const std::string& id, const HttpRequest& req);
  HttpResponse import_design_endpoint(const HttpRequest& req);
  HttpResponse create_survey(const HttpRequest& req);
  HttpResponse get_survey(const std::string& id);
  HttpResponse start_session(const std::string& id);
  HttpResponse submit_answer(const std::string& sid, const HttpRequest& req);
  HttpResponse close_survey(const std::string& id);
  HttpResponse survey_responses(const std::string& id);
  HttpResponse estimate(const HttpRequest& req, bool with_wtp);
  HttpResponse get_job(const std::string& id);

  std::string store_design(const LabeledDesign& design);
  Json run_design_job(const Json& body);
  std::shared_ptr<SurveyEntry> find_survey(const std::string& id);
  void persist_survey(const std::string& id, SurveyEntry& entry);
  std::string enqueue_job(const std::string& kind, Json input);
  void run_job(const std::string& id);
  void persist_job(const Job& job);
  void load();
  void worker_loop();

  std::filesystem::path root_;
  std::mutex registry_;  // guards the maps and counters below
  std::map<std::string, DesignEntry> designs_;
  std::map<std::string, std::shared_ptr<SurveyEntry>> surveys_;
  std::map<std::string, Job> jobs_;
  std::uint64_t next_design_ = 1, next_survey_ = 1, next_job_ = 1;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::string> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

struct ServeOptions {
  std::string bind = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> port_file;
};

/// Runs an HTTP server until the process ends. Writes the bound port to
/// `port_file` once listening. Returns false when binding fails.
bool serve(Service& service, const ServeOptions& options);

/// Writes via a temporary file and rename, so readers never see a partial
/// file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace dce
