#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "httplib.h"
#include "streameval/streameval.hpp"

namespace se = streameval;

namespace {

se::InferenceRequest request(std::int64_t t, std::size_t frames = 1) {
  se::InferenceRequest r;
  r.prompt = "What is happening?";
  for (std::size_t i = 0; i < frames; ++i) {
    const auto ts = t - static_cast<std::int64_t>(frames - 1 - i);
    r.context.push_back({ts, static_cast<double>(ts), se::make_payload("f" + std::to_string(ts))});
  }
  r.timestep = t;
  return r;
}

se::MockScript stirring() {
  se::MockScript s;
  s.rules = {{0, 4, "stirring the pot", std::nullopt}};
  s.latency = se::LatencyModel::constant(1.5);
  return s;
}

// Local chat-completions endpoint with a scripted sequence of replies.
class FakeServer {
 public:
  struct Reply {
    int status;
    std::string body;
  };

  explicit FakeServer(std::vector<Reply> replies) : replies_(std::move(replies)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const std::size_t i = hits_++;
      {
        std::lock_guard lock(mu_);
        bodies_.push_back(req.body);
        auth_ = req.get_header_value("Authorization");
      }
      const auto& r = replies_[std::min(i, replies_.size() - 1)];
      res.status = r.status;
      res.set_content(r.body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  se::RemoteConfig config() const {
    se::RemoteConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    c.model = "test-model";
    c.api_key_env = "STREAMEVAL_TEST_KEY";
    c.timeout_s = 5.0;
    return c;
  }
  std::size_t hits() const { return hits_; }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::string auth() {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::vector<Reply> replies_;
  std::atomic<std::size_t> hits_{0};
  std::mutex mu_;
  std::vector<std::string> bodies_;
  std::string auth_;
  int port_ = 0;
  std::thread thread_;
};

std::string ok_reply(const std::string& text) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump();
}

}  // namespace

TEST(MockBackend, ScriptedRule) {
  se::MockBackend b(stirring());
  const auto r = b.generate(request(2));
  EXPECT_EQ(r.text, "stirring the pot");
  EXPECT_DOUBLE_EQ(r.latency, 1.5);
  EXPECT_FALSE(r.is_pause);
  EXPECT_TRUE(r.simulated);
  EXPECT_EQ(b.generate(request(9)).text, "");
}

TEST(MockBackend, PauseStep) {
  auto s = stirring();
  s.pause_steps = {3};
  se::MockBackend b(s);
  const auto r = b.generate(request(3));
  EXPECT_TRUE(r.is_pause);
  EXPECT_TRUE(r.text.empty());
  EXPECT_DOUBLE_EQ(r.latency, 1.5);
}

TEST(MockBackend, LinearLatencyAndRuleOverride) {
  se::MockScript s;
  s.rules = {{0, 0, "a", 0.25}, {1, 1, "b", std::nullopt}};
  s.latency = se::LatencyModel::linear(0.5, 0.1);
  se::MockBackend b(s);
  EXPECT_DOUBLE_EQ(b.generate(request(0)).latency, 0.25);
  EXPECT_NEAR(b.generate(request(1, 4)).latency, 0.9, 1e-12);
}

TEST(MockBackend, Deterministic) {
  auto run = [] {
    se::MockBackend b(stirring());
    std::vector<std::string> out;
    for (int t = 0; t < 6; ++t) out.push_back(b.generate(request(t)).text);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(MockScript, JsonRoundTripAndValidation) {
  auto s = stirring();
  s.pause_steps = {1, 3};
  s.verify_latency = 0.2;
  const auto j = s.to_json();
  EXPECT_EQ(se::MockScript::from_json(j).to_json(), j);
  se::MockScript overlap;
  overlap.rules = {{0, 4, "a", std::nullopt}, {3, 6, "b", std::nullopt}};
  EXPECT_THROW(overlap.validate(), se::ConfigError);
}

TEST(Infer, VirtualClockDoesNotSleepAndTimeoutApplies) {
  se::MockBackend b(stirring());
  se::VirtualClock clock;
  EXPECT_DOUBLE_EQ(se::infer(b, request(0), clock).latency, 1.5);
  EXPECT_THROW(se::infer(b, request(0), clock, 1.0), se::BackendTimeout);
}

TEST(Infer, WallClockMeasuresLatency) {
  se::MockScript s = stirring();
  s.latency = se::LatencyModel::constant(0.05);
  se::MockBackend b(s);
  se::WallClock clock;
  const auto r = se::infer(b, request(0), clock);
  EXPECT_GE(r.latency, 0.05);
  EXPECT_LT(r.latency, 0.5);
}

TEST(Remote, RequestShape) {
  FakeServer server({{200, ok_reply("a dog runs")}});
  ::setenv("STREAMEVAL_TEST_KEY", "secret", 1);
  se::RemoteBackend b(server.config());
  const auto r = b.generate(request(4, 2));
  EXPECT_EQ(r.text, "a dog runs");
  EXPECT_FALSE(r.simulated);
  EXPECT_EQ(server.auth(), "Bearer secret");
  const auto body = nlohmann::json::parse(server.bodies().at(0));
  EXPECT_EQ(body["model"], "test-model");
  const auto& content = body["messages"][0]["content"];
  ASSERT_EQ(content.size(), 3u);
  EXPECT_EQ(content[0]["text"], "What is happening?");
  // "f3" base64 encoded, sniffed as opaque bytes.
  EXPECT_EQ(content[1]["image_url"]["url"], "data:application/octet-stream;base64,ZjM=");
  ::unsetenv("STREAMEVAL_TEST_KEY");
}

TEST(Remote, EmptyChoicesIsMalformed) {
  FakeServer server({{200, R"({"choices":[]})"}});
  se::RemoteBackend b(server.config());
  EXPECT_THROW(b.generate(request(0)), se::MalformedReply);
}

TEST(Remote, RetriesServerErrorsWithBackoff) {
  FakeServer server({{503, "busy"}, {429, "slow down"}, {200, ok_reply("ok")}});
  std::vector<double> waits;
  se::RemoteBackend b(server.config(), [&](double s) { waits.push_back(s); });
  EXPECT_EQ(b.generate(request(0)).text, "ok");
  EXPECT_EQ(server.hits(), 3u);
  EXPECT_EQ(waits, (std::vector<double>{0.5, 1.0}));
}

TEST(Remote, GivesUpAfterRetries) {
  FakeServer server({{500, "down"}});
  se::RemoteBackend b(server.config(), [](double) {});
  EXPECT_THROW(b.generate(request(0)), se::BackendUnavailable);
  EXPECT_EQ(server.hits(), 3u);
}

TEST(Remote, ClientErrorsAreNotRetried) {
  FakeServer server({{400, "bad"}});
  se::RemoteBackend b(server.config(), [](double) {});
  EXPECT_THROW(b.generate(request(0)), se::BackendUnavailable);
  EXPECT_EQ(server.hits(), 1u);
}

TEST(Remote, UnreachableHost) {
  se::RemoteConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.model = "m";
  c.timeout_s = 1.0;
  se::RemoteBackend b(c, [](double) {});
  EXPECT_THROW(b.generate(request(0)), se::BackendUnavailable);
  EXPECT_EQ(b.client().attempts(), 3u);
}

TEST(Remote, PngPayloadIsSniffed) {
  const se::Bytes png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  EXPECT_EQ(se::detail::sniff_mime(png), "image/png");
  const se::Bytes jpg = {0xff, 0xd8, 0xff, 0xe0};
  EXPECT_EQ(se::detail::sniff_mime(jpg), "image/jpeg");
}
