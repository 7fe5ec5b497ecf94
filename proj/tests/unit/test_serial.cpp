#include <gtest/gtest.h>

#include <cmath>

#include "dce/errors.hpp"
#include "dce/random.hpp"
#include "dce/serial.hpp"

using namespace dce;

namespace {

SurveyDefinition small_definition(SerialMode mode, bool opt_out = true) {
  auto s = make_settings(std::vector<std::size_t>{3, 2, 2}, 2, 8, opt_out, false, 5);
  s.attributes = {{"price", {"low", "mid", "high"}}, {"brand", {"a", "b"}}, {"eco", {"no", "yes"}}};
  SurveyDefinition def;
  def.design = labeled_from_result(generate_design(s), s);
  def.intro_text = "# Welcome";
  def.final_text = "Thanks";
  def.serial_mode = mode;
  def.settings = s;
  def.regeneration_starts = 2;
  return def;
}

SerialMode batch(std::size_t b) { return {SerialMode::Kind::per_batch, b}; }

// Answers every set of one session with a logit draw from `beta`.
Survey::AnswerOutcome respond(Survey& survey, const Eigen::VectorXd& beta, Rng& rng) {
  auto start = survey.start_session();
  const CodedDesign design = survey.snapshot().design_history.at(start.design_version - 1).design.coded;
  Survey::AnswerOutcome out;
  for (std::size_t set = 0; set < design.n_sets; ++set) {
    const Eigen::VectorXd p = mnl_probabilities(design.set_rows(set), beta);
    double u = rng.uniform(), acc = 0;
    std::size_t pick = static_cast<std::size_t>(p.size());
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      acc += p(j);
      if (u < acc) {
        pick = static_cast<std::size_t>(j + 1);
        break;
      }
    }
    out = survey.submit_answer(start.session_id, pick);
  }
  return out;
}

Eigen::VectorXd beta4() {
  Eigen::VectorXd b(4);
  b << -0.5, -1.0, 0.6, 0.8;
  return b;
}

}  // namespace

TEST(SerialMode, Triggers) {
  const SerialMode none{};
  const SerialMode each{SerialMode::Kind::per_respondent, 5};
  for (std::size_t n = 0; n < 20; ++n) {
    EXPECT_FALSE(none.triggers_at(n));
    EXPECT_EQ(each.triggers_at(n), n > 0);
    EXPECT_EQ(batch(5).triggers_at(n), n > 0 && n % 5 == 0);
  }
  EXPECT_EQ(serial_kind_from("per_batch"), SerialMode::Kind::per_batch);
  EXPECT_THROW(serial_kind_from("sometimes"), InvalidInput);
}

TEST(Survey, SessionWalkthrough) {
  Survey survey(small_definition({}));
  const auto start = survey.start_session();
  EXPECT_EQ(start.respondent_id, 1);
  EXPECT_EQ(start.set_number, 1u);
  EXPECT_EQ(start.n_sets, 8u);
  EXPECT_EQ(start.intro_text, "# Welcome");
  ASSERT_EQ(start.choice_set.alternatives.size(), 3u);
  EXPECT_EQ(start.choice_set.alternatives[0].label, "Option 1");
  EXPECT_EQ(start.choice_set.alternatives[2].label, "Opt-out");
  for (std::size_t s = 1; s <= 8; ++s) {
    const auto out = survey.submit_answer(start.session_id, 3);  // always opt out
    EXPECT_EQ(out.finished, s == 8);
    if (s < 8) {
      EXPECT_EQ(out.set_number, s + 1);
      ASSERT_TRUE(out.next_set.has_value());
      EXPECT_EQ(out.next_set->set_index, s + 1);
    } else {
      EXPECT_EQ(out.final_text, "Thanks");
      EXPECT_EQ(out.update, UpdateOutcome::unchanged);
    }
  }
  const auto state = survey.snapshot();
  EXPECT_EQ(state.completed_respondents, 1u);
  EXPECT_EQ(state.responses.rows.size(), 8u * 3u);
  EXPECT_TRUE(check_dataset(state.responses).empty());
  // The opt-out row is recorded as an all-zero alternative 3.
  for (const auto& r : state.responses.rows) {
    EXPECT_EQ(r.choice, r.alt == 3 ? 1 : 0);
    if (r.alt == 3) {
      for (double v : r.covariates) EXPECT_EQ(v, 0.0);
    }
  }
  EXPECT_EQ(state.responses.covariate_names.front(), "price.mid");
}

TEST(Survey, GidsFollowRespondentAndSet) {
  Survey survey(small_definition({}));
  Rng rng(1);
  const auto a = survey.start_session();
  const auto b = survey.start_session();
  survey.submit_answer(b.session_id, 1);
  survey.submit_answer(a.session_id, 2);
  const auto rows = survey.snapshot().responses.rows;
  EXPECT_EQ(rows.front().gid, 8 + 1);  // respondent 2, set 1
  EXPECT_EQ(rows.back().gid, 1);
}

TEST(Survey, Errors) {
  Survey survey(small_definition({}));
  const auto s = survey.start_session();
  auto kind_of = [&](auto&& f) {
    try {
      f();
    } catch (const SurveyError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  EXPECT_EQ(kind_of([&] { survey.submit_answer("nope", 1); }), static_cast<int>(SurveyError::Kind::unknown_session));
  EXPECT_EQ(kind_of([&] { survey.submit_answer(s.session_id, 0); }), static_cast<int>(SurveyError::Kind::bad_choice));
  EXPECT_EQ(kind_of([&] { survey.submit_answer(s.session_id, 4); }), static_cast<int>(SurveyError::Kind::bad_choice));
  for (int i = 0; i < 8; ++i) survey.submit_answer(s.session_id, 1);
  EXPECT_EQ(kind_of([&] { survey.submit_answer(s.session_id, 1); }),
            static_cast<int>(SurveyError::Kind::session_complete));
  const auto t = survey.start_session();
  const auto data = survey.close();
  EXPECT_EQ(data.rows.size(), 24u);
  EXPECT_FALSE(survey.is_open());
  EXPECT_EQ(kind_of([&] { survey.start_session(); }), static_cast<int>(SurveyError::Kind::closed));
  EXPECT_EQ(kind_of([&] { survey.submit_answer(t.session_id, 1); }), static_cast<int>(SurveyError::Kind::closed));
}

TEST(Survey, DefinitionIsValidated) {
  auto def = small_definition({});
  def.alternative_labels = {"only one"};
  EXPECT_THROW(Survey{def}, InvalidInput);
  def = small_definition(batch(0));
  EXPECT_THROW(Survey{def}, InvalidInput);
  def = small_definition(batch(2));
  def.regeneration_starts = 0;
  EXPECT_THROW(Survey{def}, InvalidInput);
  def = small_definition({});
  def.settings.n_sets = 3;
  EXPECT_THROW(Survey{def}, InvalidInput);
}

TEST(Survey, NoneModeNeverRegenerates) {
  Survey survey(small_definition({}));
  Rng rng(2);
  for (int r = 0; r < 6; ++r) respond(survey, beta4(), rng);
  const auto st = survey.snapshot();
  EXPECT_EQ(st.design_history.size(), 1u);
  EXPECT_TRUE(st.update_log.empty());
}

TEST(Survey, BatchModeRegeneratesAtMultiples) {
  Survey survey(small_definition(batch(5)));
  Rng rng(3);
  for (int r = 1; r <= 12; ++r) {
    const auto out = respond(survey, beta4(), rng);
    ASSERT_TRUE(out.update.has_value());
    if (r % 5 != 0) EXPECT_EQ(*out.update, UpdateOutcome::unchanged);
  }
  const auto st = survey.snapshot();
  ASSERT_EQ(st.update_log.size(), 2u);
  EXPECT_EQ(st.update_log[0].completed_respondents, 5u);
  EXPECT_EQ(st.update_log[1].completed_respondents, 10u);
  for (std::size_t i = 1; i < st.design_history.size(); ++i) {
    const auto& v = st.design_history[i];
    EXPECT_EQ(v.version, i + 1);
    EXPECT_TRUE(v.respondents_at_switch == 5 || v.respondents_at_switch == 10);
    // The new design's criterion is its DB-error under the fitted prior.
    const double db = db_error(v.design.coded, v.prior, 5 + v.respondents_at_switch);
    EXPECT_NEAR(v.criterion_value, db, 1e-12 * db);
    EXPECT_EQ(v.prior.mean.size(), 4);
  }
  // Respondents who started after a switch got the new version.
  for (const auto& [rid, version] : st.respondent_versions) {
    std::size_t expected = 1;
    for (const auto& v : st.design_history)
      if (v.respondents_at_switch > 0 && static_cast<std::size_t>(rid) > v.respondents_at_switch) expected = v.version;
    EXPECT_EQ(version, expected) << rid;
  }
}

TEST(Survey, SkippedRegenerationIsLogged) {
  // One respondent who always opts out cannot identify anything.
  Survey survey(small_definition({SerialMode::Kind::per_respondent, 1}));
  const auto s = survey.start_session();
  Survey::AnswerOutcome out;
  for (int i = 0; i < 8; ++i) out = survey.submit_answer(s.session_id, 3);
  EXPECT_EQ(out.update, UpdateOutcome::unchanged);
  const auto st = survey.snapshot();
  ASSERT_EQ(st.update_log.size(), 1u);
  EXPECT_FALSE(st.update_log[0].regenerated);
  EXPECT_FALSE(st.update_log[0].reason.empty());
  EXPECT_EQ(st.design_history.size(), 1u);
}

TEST(Survey, DeferredUpdatesMatchSynchronousOnes) {
  Survey sync(small_definition(batch(5)));
  Survey deferred(small_definition(batch(5)), Survey::Updates::deferred);
  Rng r1(9), r2(9);
  for (int r = 1; r <= 5; ++r) {
    respond(sync, beta4(), r1);
    const auto out = respond(deferred, beta4(), r2);
    EXPECT_FALSE(out.update.has_value());
    if (r == 5) {
      ASSERT_TRUE(out.pending_update.has_value());
      const auto result = Survey::compute_update(*out.pending_update);
      deferred.apply_update(result);
      // A second application of the same count is ignored.
      EXPECT_EQ(deferred.apply_update(result), UpdateOutcome::unchanged);
    } else {
      EXPECT_FALSE(out.pending_update.has_value());
    }
  }
  const auto a = sync.snapshot(), b = deferred.snapshot();
  ASSERT_EQ(a.design_history.size(), b.design_history.size());
  EXPECT_EQ(a.design_history.back().design, b.design_history.back().design);
  EXPECT_EQ(a.update_log.size(), b.update_log.size());
}

TEST(Survey, JsonRoundTrip) {
  Survey survey(small_definition(batch(5)));
  Rng rng(4);
  for (int r = 0; r < 6; ++r) respond(survey, beta4(), rng);
  survey.start_session();
  const auto doc = survey_to_json(survey.definition(), survey.snapshot());
  const auto [def, state] = survey_from_json(Json::parse(doc.dump()));
  EXPECT_EQ(survey_to_json(def, state), doc);
  Survey back(def, state);
  EXPECT_EQ(back.current_version(), survey.current_version());
  EXPECT_EQ(back.snapshot().responses, survey.snapshot().responses);
  // The restored survey continues numbering where the original stopped.
  EXPECT_EQ(back.start_session().respondent_id, 8);
}

TEST(Survey, JsonErrors) {
  Survey survey(small_definition({}));
  auto doc = survey_to_json(survey.definition(), survey.snapshot());
  auto bad = doc;
  bad["schema_version"] = 2;
  EXPECT_THROW(survey_from_json(bad), SchemaError);
  bad = doc;
  bad["state"]["design_history"] = Json::array();
  EXPECT_THROW(survey_from_json(bad), ParseError);
  bad = doc;
  bad.erase("definition");
  EXPECT_THROW(survey_from_json(bad), ParseError);
}
