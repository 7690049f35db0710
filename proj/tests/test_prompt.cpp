#include "medts/backbone/backbone.hpp"
#include "medts/prompt/prompt.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace medts;
using namespace medts::prompt;

TEST(PatientJson, SortedKeysAndSeparators) {
  EXPECT_EQ(encode_patient_json({{"sex", "F"}, {"age", 64}}), R"({"age": 64, "sex": "F"})");
  EXPECT_EQ(encode_patient_json(nlohmann::json::object()), "{}");
  EXPECT_EQ(encode_patient_json({{"meds", {"propofol", "fentanyl"}}, {"age", 7}}),
            R"({"age": 7, "meds": ["propofol", "fentanyl"]})");
}

TEST(PatientJson, OutputIsValidJson) {
  const nlohmann::json p = {{"weight", 71.25}, {"note", "said \"ok\"\n"}, {"flags", {true, nullptr, 3}}};
  const auto text = encode_patient_json(p);
  EXPECT_EQ(nlohmann::json::parse(text), p);
}

TEST(PatientJson, RejectsNesting) {
  EXPECT_THROW(encode_patient_json({{"a", {{"b", 1}}}}), std::invalid_argument);
  EXPECT_THROW(encode_patient_json({{"a", {{1, 2}, {3}}}}), std::invalid_argument);
  EXPECT_THROW(encode_patient_json(nlohmann::json::array()), std::invalid_argument);
}

TEST(LowFreqStats, Examples) {
  const auto c = summarize_signal("x", {5, 5, 5, 5});
  EXPECT_EQ(c.min, 5);
  EXPECT_EQ(c.max, 5);
  EXPECT_EQ(c.mean, 5);
  EXPECT_EQ(c.trend, Trend::flat);
  EXPECT_EQ(summarize_signal("x", {1, 2, 3, 4}).trend, Trend::rising);
  const auto hr = summarize_signal("heart_rate", {70, 69, 68});
  EXPECT_EQ(hr.min, 68);
  EXPECT_DOUBLE_EQ(hr.slope, -1.0);
  EXPECT_EQ(hr.trend, Trend::falling);
  EXPECT_EQ(hr.render(), "heart_rate: min=68, max=70, mean=69, trend=falling");
}

TEST(LowFreqStats, RateAndEmptyChecks) {
  EXPECT_THROW(summarize_low_freq({{"x", 2.0, {1, 2}}}), std::invalid_argument);
  EXPECT_THROW(summarize_low_freq({{"x", 0.5, {}}}), std::invalid_argument);
  EXPECT_EQ(summarize_low_freq({{"x", 0.5, {1, 2}}, {"y", 0.2, {3}}}).size(), 2u);
}

TEST(LowFreqStats, SixSignificantDigits) {
  EXPECT_EQ(format_number(1.0 / 3.0), "0.333333");
  EXPECT_EQ(format_number(123456789.0), "1.23457e+08");
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(render_stats({summarize_signal("a", {1, 2}), summarize_signal("b", {2.5})}),
            "a: min=1, max=2, mean=1.5, trend=rising; b: min=2.5, max=2.5, mean=2.5, trend=flat");
}

namespace {

PromptContext sample_context() {
  PromptContext ctx;
  ctx.dataset_desc = "DATASET";
  ctx.patient_info = {{"age", 50}};
  ctx.stats = {summarize_signal("hr", {60, 61})};
  ctx.task_instruction = task_instruction(TaskKind::boundary, 256);
  return ctx;
}

}  // namespace

TEST(BuildPrompt, AllComponentsInOrder) {
  const auto ctx = sample_context();
  const auto text = build_prompt(ctx);
  const auto d = text.find("DATASET"), p = text.find("{\"age\": 50}"), s = text.find("hr: min="),
             t = text.find(ctx.task_instruction);
  ASSERT_NE(d, std::string::npos);
  ASSERT_NE(t, std::string::npos);
  EXPECT_LT(d, p);
  EXPECT_LT(p, s);
  EXPECT_LT(s, t);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST(BuildPrompt, SingleAndEmpty) {
  auto ctx = sample_context();
  ctx.enabled = PromptFlags::only(Component::task);
  EXPECT_EQ(build_prompt(ctx), ctx.task_instruction);
  ctx.enabled = PromptFlags::none();
  EXPECT_EQ(build_prompt(ctx), "");
}

TEST(BuildPrompt, InjectiveOverSubsets) {
  auto ctx = sample_context();
  std::set<std::string> seen;
  for (int mask = 0; mask < 16; ++mask) {
    for (int c = 0; c < 4; ++c) ctx.enabled.set(component_order()[c], (mask >> c) & 1);
    EXPECT_TRUE(seen.insert(build_prompt(ctx)).second) << mask;
  }
}

TEST(BuildPrompt, ByteStable) {
  const auto ctx = sample_context();
  EXPECT_EQ(build_prompt(ctx), build_prompt(ctx));
  EXPECT_EQ(build_prompt(ctx),
            "DATASET\n{\"age\": 50}\nhr: min=60, max=61, mean=60.5, trend=rising\n" + task_instruction(TaskKind::boundary, 256));
}

TEST(PromptArms, SixArmsAndTextPrefixOnly) {
  const auto arms = prompt_arms();
  ASSERT_EQ(arms.size(), 6u);
  EXPECT_EQ(arms.front().name, "none");
  EXPECT_EQ(arms.back().name, "all");
  const auto b = backbone::FrozenBackbone::toy({.n_ctx = 1024}, 0);
  auto ctx = sample_context();
  for (const auto& arm : arms) {
    ctx.enabled = arm.flags;
    const auto text = build_prompt(ctx);
    EXPECT_EQ(b.embed_text(text).n_text(), static_cast<Index>(text.size()));
  }
}

TEST(Descriptions, BuiltinsPresent) {
  for (const char* d : {"ventilator", "ludb", "bidmc", "mitbih", "synthetic_semseg"}) EXPECT_FALSE(dataset_description(d).empty());
  EXPECT_TRUE(dataset_description("unknown").empty());
}
