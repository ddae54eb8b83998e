#include <gtest/gtest.h>

#include <thread>

#include "httplib.h"
#include "streameval/streameval.hpp"

namespace se = streameval;

TEST(OracleJudge, Examples) {
  se::OracleJudge j;
  const auto exact = j.judge("stir the soup", "stir the soup", "q");
  EXPECT_TRUE(exact.pred);
  EXPECT_EQ(exact.rubric, 3);
  const auto partial = j.judge("bowl of rice", "rice", "q");
  EXPECT_DOUBLE_EQ(se::token_overlap("bowl of rice", "rice"), 0.5);
  EXPECT_TRUE(partial.pred);
  EXPECT_EQ(partial.rubric, 2);
  const auto weak = j.judge("add black beans to the pot", "add corn", "q");
  EXPECT_FALSE(weak.pred);
  EXPECT_EQ(weak.rubric, 1);
  const auto none = j.judge("stir the soup", "open the door", "q");
  EXPECT_FALSE(none.pred);
  EXPECT_EQ(none.rubric, 0);
}

TEST(OracleJudge, NormalizationAndEmpty) {
  se::OracleJudge j;
  EXPECT_EQ(j.judge("Stir the soup.", "stir  THE soup", "q").rubric, 3);
  EXPECT_EQ(j.judge("", "", "q").rubric, 3);
  EXPECT_EQ(j.judge("", "something", "q").rubric, 0);
  EXPECT_EQ(j.judge("STOP", "", "q").rubric, 0);
}

TEST(OracleJudge, AlwaysCoupled) {
  se::OracleJudge j;
  const std::vector<std::string> texts = {"", "a", "red car", "the red car", "a blue car parked", "car", "x y z"};
  for (const auto& g : texts)
    for (const auto& r : texts) EXPECT_TRUE(j.judge(g, r, "q").coupled()) << g << " / " << r;
}

TEST(ParseVerdict, AcceptsPromptStyle) {
  const auto v = se::parse_verdict("Here you go: {'pred': 'yes', 'score': 3}");
  EXPECT_TRUE(v.pred);
  EXPECT_EQ(v.rubric, 3);
  const auto w = se::parse_verdict(R"({"pred": "no", "score": 2})");
  EXPECT_FALSE(w.pred);
  EXPECT_EQ(w.rubric, 2);
}

TEST(ParseVerdict, RejectsIncoherentReplies) {
  EXPECT_THROW(se::parse_verdict("{'pred':'yes','score':1}"), se::MalformedVerdict);
  EXPECT_THROW(se::parse_verdict("{'pred':'no','score':3}"), se::MalformedVerdict);
  EXPECT_THROW(se::parse_verdict("{'pred':'maybe','score':2}"), se::MalformedVerdict);
  EXPECT_THROW(se::parse_verdict("{'pred':'yes','score':7}"), se::MalformedVerdict);
  EXPECT_THROW(se::parse_verdict("yes, tier 3"), se::MalformedVerdict);
}

TEST(JudgePrompt, Render) {
  const auto p = se::render_judge_prompt(se::kJudgePromptTemplate, "What is cooking?", "soup", "a stew");
  EXPECT_NE(p.find("What is cooking?"), std::string::npos);
  EXPECT_NE(p.find("soup"), std::string::npos);
  EXPECT_NE(p.find("a stew"), std::string::npos);
  EXPECT_EQ(p.find("<question>"), std::string::npos);
  EXPECT_EQ(p.find("<gt_answer>"), std::string::npos);
  EXPECT_EQ(p.find("<model_response>"), std::string::npos);
  // Placeholder-looking text inside a response is left alone.
  const auto q = se::render_judge_prompt("Q <question> G <gt_answer> R <model_response>", "q", "g", "<question>");
  EXPECT_EQ(q, "Q q G g R <question>");
  EXPECT_THROW(se::render_judge_prompt("no slots", "q", "g", "r"), se::ConfigError);
}

namespace {

class CountingJudge final : public se::Judge {
 public:
  std::string id() const override { return "counting"; }
  se::JudgeVerdict judge(const std::string& g, const std::string& r, const std::string&) override {
    ++calls;
    return {g == r, g == r ? 3 : 0};
  }
  int calls = 0;
};

}  // namespace

TEST(CachingJudge, MemoizesByTriple) {
  auto inner = std::make_unique<CountingJudge>();
  auto* probe = inner.get();
  se::CachingJudge j(std::move(inner));
  j.judge("a", "a", "q");
  j.judge("a", "a", "q");
  j.judge("a", "a", "other question");
  EXPECT_EQ(probe->calls, 2);
  EXPECT_EQ(j.hits(), 1u);
}

TEST(RemoteJudge, ParsesReplyAndMapsErrors) {
  httplib::Server server;
  std::string last_body;
  int mode = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = req.body;
    const std::string content = mode == 0 ? "{'pred': 'yes', 'score': 2}" : "{'pred': 'yes', 'score': 0}";
    if (mode == 2) {
      res.status = 500;
      return;
    }
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", content}}}}}}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  se::RemoteConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.model = "judge";
  cfg.timeout_s = 5.0;
  se::RemoteJudge j(cfg, std::string(se::kJudgePromptTemplate), [](double) {});
  const auto v = j.judge("bowl of rice", "rice", "What is served?");
  EXPECT_TRUE(v.pred);
  EXPECT_EQ(v.rubric, 2);
  const auto prompt = nlohmann::json::parse(last_body)["messages"][0]["content"].get<std::string>();
  EXPECT_NE(prompt.find("What is served?"), std::string::npos);
  mode = 1;
  EXPECT_THROW(j.judge("a", "b", "q"), se::MalformedVerdict);
  mode = 2;
  EXPECT_THROW(j.judge("a", "c", "q"), se::JudgeUnavailable);
  server.stop();
  t.join();
}
