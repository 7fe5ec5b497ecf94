#pragma once

// Live surveys: per-respondent sessions over a labeled design, with optional
// serial regeneration of the design as responses arrive.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dce/codec.hpp"
#include "dce/core.hpp"
#include "dce/dataset.hpp"
#include "dce/json_io.hpp"

namespace dce {

struct SerialMode {
  enum class Kind { none, per_respondent, per_batch };
  Kind kind = Kind::none;
  std::size_t batch_size = 5;  // per_batch only

  /// True when a regeneration is due after `completed` respondents.
  bool triggers_at(std::size_t completed) const;

  bool operator==(const SerialMode&) const = default;
};

std::string_view to_string(SerialMode::Kind kind);
SerialMode::Kind serial_kind_from(std::string_view name);

struct SurveyDefinition {
  LabeledDesign design;
  std::string intro_text;  // markdown, passed through verbatim
  std::string final_text;
  /// One label per alternative including the opt-out; defaults to
  /// "Option 1", "Option 2", ..., "Opt-out" when empty.
  std::vector<std::string> alternative_labels;
  SerialMode serial_mode;
  DesignSettings settings;  // used for regeneration
  std::size_t regeneration_starts = 5;
};

/// Settings equivalent to a labeled design: its provenance settings when
/// present, otherwise its labels with default priors.
DesignSettings settings_for(const LabeledDesign& design);

struct DesignVersion {
  std::size_t version = 0;
  std::size_t respondents_at_switch = 0;
  LabeledDesign design;
  PriorSpec prior;
  double criterion_value = kInfiniteError;
};

struct UpdateLogEntry {
  std::size_t completed_respondents = 0;
  bool regenerated = false;
  std::string reason;
};

struct Session {
  std::string id;
  std::int64_t respondent_id = 0;
  std::size_t design_version = 0;
  std::size_t next_set = 0;  // 0-based
  bool complete = false;
};

struct SurveyState {
  std::vector<DesignVersion> design_history;
  std::size_t completed_respondents = 0;
  std::vector<std::int64_t> completion_order;  // respondent ids
  std::int64_t next_respondent_id = 1;
  std::size_t next_session = 1;
  bool open = true;
  ResponseDataset responses;
  std::map<std::string, Session> sessions;
  std::map<std::int64_t, std::size_t> respondent_versions;
  std::vector<UpdateLogEntry> update_log;
};

/// Snapshot handed to a regeneration run: the responses of the first
/// `completed_respondents` respondents to finish.
struct UpdateRequest {
  std::size_t completed_respondents = 0;
  ResponseDataset responses;
  DesignSettings settings;
  LabeledDesign current;
  std::size_t n_starts = 5;
};

struct UpdateResult {
  std::size_t completed_respondents = 0;
  std::optional<DesignVersion> version;  // set when a new design was built
  std::string reason;
};

enum class UpdateOutcome { unchanged, regenerated };

class Survey {
 public:
  enum class Updates { synchronous, deferred };

  /// Throws InvalidInput when the labels do not match the design.
  explicit Survey(SurveyDefinition definition, Updates updates = Updates::synchronous);
  Survey(SurveyDefinition definition, SurveyState state, Updates updates = Updates::synchronous);

  struct SessionStart {
    std::string session_id;
    std::int64_t respondent_id = 0;
    std::size_t design_version = 0;
    std::size_t set_number = 1;  // 1-based
    std::size_t n_sets = 0;
    DecodedChoiceSet choice_set;
    std::string intro_text;
  };

  struct AnswerOutcome {
    bool finished = false;
    std::size_t design_version = 0;
    std::size_t set_number = 0;  // of the next set when not finished
    std::size_t n_sets = 0;
    std::optional<DecodedChoiceSet> next_set;
    std::string final_text;
    std::optional<UpdateOutcome> update;           // synchronous mode
    std::optional<UpdateRequest> pending_update;   // deferred mode
  };

  /// Throws SurveyError(closed) once the survey is closed.
  SessionStart start_session();
  /// `chosen_alt` is 1-based. Throws SurveyError for an unknown or finished
  /// session, a closed survey, or an out-of-range choice.
  AnswerOutcome submit_answer(const std::string& session_id, std::size_t chosen_alt);
  /// Runs the serial rule for the current respondent count synchronously.
  UpdateOutcome maybe_update_design();
  /// Stops accepting sessions and answers; returns the collected responses.
  ResponseDataset close();

  /// Regeneration split into its locked and unlocked parts. A result for a
  /// respondent count that already has a log entry is ignored.
  std::optional<UpdateRequest> update_request_for(std::size_t completed) const;
  static UpdateResult compute_update(const UpdateRequest& request);
  UpdateOutcome apply_update(const UpdateResult& result);

  const SurveyDefinition& definition() const noexcept { return definition_; }
  SurveyState snapshot() const;
  std::size_t current_version() const;
  bool is_open() const;

 private:
  // Callers hold mutex_.
  DecodedChoiceSet choice_set(std::size_t version, std::size_t set) const;
  std::optional<UpdateRequest> update_request_locked(std::size_t completed) const;
  UpdateOutcome update_locked(std::size_t completed);
  UpdateOutcome apply_locked(const UpdateResult& result);

  SurveyDefinition definition_;
  SurveyState state_;
  Updates updates_;
  mutable std::mutex mutex_;
};

Json survey_to_json(const SurveyDefinition& definition, const SurveyState& state);
/// Throws ParseError / SchemaError on a malformed document.
std::pair<SurveyDefinition, SurveyState> survey_from_json(const Json& doc);

}  // namespace dce
