#pragma once

// Model-backend contract plus the scripted mock backend.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "streameval/clock.hpp"
#include "streameval/core.hpp"
#include "streameval/errors.hpp"
#include "streameval/stream.hpp"

namespace streameval {

struct InferenceRequest {
  std::string prompt;
  std::vector<Frame> context;  // capture order
  double request_time = 0.0;
  /// Annotation second of the newest context frame.
  std::int64_t timestep = 0;

  const Frame& newest() const { return context.back(); }

  void validate() const {
    if (context.empty()) throw ConfigError("inference request with empty context");
    for (std::size_t i = 1; i < context.size(); ++i) {
      if (context[i].timestep <= context[i - 1].timestep)
        throw ConfigError("inference context not in capture order");
    }
  }
};

struct InferenceResult {
  std::string text;
  bool is_pause = false;
  double latency = 0.0;  // t_m for this call
  std::size_t token_count = 0;
  /// Latency comes from a model rather than a measurement; wall-clock runs
  /// sleep for it so simulated backends pace like real ones.
  bool simulated = false;
};

inline std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual bool is_remote() const { return false; }
  virtual InferenceResult generate(const InferenceRequest& req) = 0;
  /// Cost of checking a draft against `req`, when the backend can report it.
  virtual std::optional<double> verify_latency(const InferenceRequest&) { return std::nullopt; }
};

/// Runs one inference. In wall mode the latency is the elapsed clock time
/// (simulated backends are slept for their modelled latency first); in
/// virtual mode it is the backend's value and the caller advances the clock.
inline InferenceResult infer(Backend& backend, const InferenceRequest& req, Clock& clock,
                             std::optional<double> timeout = std::nullopt) {
  req.validate();
  const double start = clock.now();
  InferenceResult result = backend.generate(req);
  if (clock.mode() == ClockMode::Wall) {
    if (result.simulated) clock.sleep_until(start + result.latency);
    result.latency = clock.now() - start;
  }
  if (result.latency < 0.0) throw MalformedReply("backend reported negative latency");
  if (result.is_pause) result.text.clear();
  if (timeout && *timeout > 0.0 && result.latency > *timeout)
    throw BackendTimeout(backend.id() + ": inference took " + std::to_string(result.latency) +
                         " s, ceiling is " + std::to_string(*timeout) + " s");
  return result;
}

// ---------------------------------------------------------------------------
// Mock backend

struct LatencyModel {
  enum class Kind { Constant, Linear } kind = Kind::Constant;
  double c = 0.0;
  double a = 0.0;
  double b = 0.0;

  static LatencyModel constant(double c) { return {Kind::Constant, c, 0.0, 0.0}; }
  static LatencyModel linear(double a, double b) { return {Kind::Linear, 0.0, a, b}; }

  double evaluate(std::size_t context_frames) const {
    return kind == Kind::Constant ? c : a + b * static_cast<double>(context_frames);
  }
};

struct MockRule {
  std::int64_t from = 0;
  std::int64_t to = 0;  // inclusive
  std::string text;
  std::optional<double> latency;
};

struct MockScript {
  std::vector<MockRule> rules;
  LatencyModel latency;
  std::set<std::int64_t> pause_steps;
  std::optional<double> verify_latency;

  void validate() const {
    auto sorted = rules;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& x, const auto& y) { return x.from < y.from; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i].to < sorted[i].from)
        throw ConfigError("mock rule range [" + std::to_string(sorted[i].from) + "," +
                          std::to_string(sorted[i].to) + "] is empty");
      if (i > 0 && sorted[i].from <= sorted[i - 1].to)
        throw ConfigError("mock rules overlap at timestep " + std::to_string(sorted[i].from));
      if (sorted[i].latency && *sorted[i].latency < 0.0)
        throw ConfigError("mock rule latency must be >= 0");
    }
    const bool bad = latency.kind == LatencyModel::Kind::Constant
                         ? latency.c < 0.0
                         : (latency.a < 0.0 || latency.b < 0.0);
    if (bad) throw ConfigError("mock latency model must be non-negative");
    if (verify_latency && *verify_latency < 0.0) throw ConfigError("verify_latency must be >= 0");
  }

  const MockRule* rule_for(std::int64_t t) const {
    for (const auto& r : rules)
      if (t >= r.from && t <= r.to) return &r;
    return nullptr;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rules"] = nlohmann::json::array();
    for (const auto& r : rules) {
      nlohmann::json rule = {{"from", r.from}, {"to", r.to}, {"text", r.text}};
      if (r.latency) rule["latency"] = *r.latency;
      j["rules"].push_back(rule);
    }
    if (latency.kind == LatencyModel::Kind::Constant)
      j["latency"] = {{"kind", "constant"}, {"c", latency.c}};
    else
      j["latency"] = {{"kind", "linear"}, {"a", latency.a}, {"b", latency.b}};
    j["pause_steps"] = pause_steps;
    if (verify_latency) j["verify_latency"] = *verify_latency;
    return j;
  }

  static MockScript from_json(const nlohmann::json& j) {
    MockScript s;
    try {
      for (const auto& r : j.value("rules", nlohmann::json::array())) {
        MockRule rule{r.at("from").get<std::int64_t>(), r.at("to").get<std::int64_t>(),
                      r.at("text").get<std::string>(), std::nullopt};
        if (r.contains("latency") && !r["latency"].is_null())
          rule.latency = r["latency"].get<double>();
        s.rules.push_back(std::move(rule));
      }
      if (j.contains("latency")) {
        const auto& l = j["latency"];
        const auto kind = l.value("kind", std::string("constant"));
        if (kind == "constant")
          s.latency = LatencyModel::constant(l.value("c", 0.0));
        else if (kind == "linear")
          s.latency = LatencyModel::linear(l.value("a", 0.0), l.value("b", 0.0));
        else
          throw ConfigError("unknown latency kind '" + kind + "'");
      }
      for (const auto& p : j.value("pause_steps", nlohmann::json::array()))
        s.pause_steps.insert(p.get<std::int64_t>());
      if (j.contains("verify_latency")) s.verify_latency = j["verify_latency"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed mock script: ") + e.what());
    }
    s.validate();
    return s;
  }
};

inline MockScript load_mock_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read mock script: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return MockScript::from_json(nlohmann::json::parse(ss.str()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("mock script " + path.string() + ": " + e.what());
  }
}

/// Script that answers every timestep with its ground-truth caption.
inline MockScript make_echo_script(const AnnotationTrack& track, LatencyModel latency = {}) {
  MockScript s;
  s.latency = latency;
  for (const auto& e : track.entries) {
    if (!s.rules.empty() && s.rules.back().text == e.caption && s.rules.back().to + 1 == e.timestep)
      s.rules.back().to = e.timestep;
    else
      s.rules.push_back({e.timestep, e.timestep, e.caption, std::nullopt});
  }
  return s;
}

/// Deterministic scripted backend: text is chosen by the request's timestep,
/// latency by the latency model or a per-rule override.
class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockScript script, std::string name = "mock")
      : script_(std::move(script)), name_(std::move(name)) {
    script_.validate();
  }

  std::string id() const override { return name_; }

  InferenceResult generate(const InferenceRequest& req) override {
    ++calls_;
    InferenceResult r;
    r.simulated = true;
    const MockRule* rule = script_.rule_for(req.timestep);
    r.latency = rule && rule->latency ? *rule->latency : script_.latency.evaluate(req.context.size());
    if (script_.pause_steps.contains(req.timestep)) {
      r.is_pause = true;
    } else if (rule) {
      r.text = rule->text;
    }
    r.token_count = count_tokens(r.text);
    return r;
  }

  std::optional<double> verify_latency(const InferenceRequest&) override {
    return script_.verify_latency;
  }

  std::size_t generate_calls() const { return calls_.load(); }
  const MockScript& script() const { return script_; }

 private:
  MockScript script_;
  std::string name_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace streameval
