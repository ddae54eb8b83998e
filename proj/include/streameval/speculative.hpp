#pragma once

// Self-speculative wrapper: the previous response is the draft. When the
// change detector finds the scene unchanged, the draft is returned at the
// cost of a verification pass; otherwise the wrapped backend generates.

#include <algorithm>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "json.hpp"
#include "streameval/backend.hpp"
#include "streameval/errors.hpp"

namespace streameval {

enum class DetectorStrategy { ExactPayload, Scripted, Threshold };

inline std::string_view to_string(DetectorStrategy s) {
  switch (s) {
    case DetectorStrategy::ExactPayload: return "exact_payload";
    case DetectorStrategy::Scripted: return "scripted";
    case DetectorStrategy::Threshold: return "threshold";
  }
  return "?";
}

inline std::optional<DetectorStrategy> parse_detector_strategy(std::string_view s) {
  if (s == "exact_payload") return DetectorStrategy::ExactPayload;
  if (s == "scripted") return DetectorStrategy::Scripted;
  if (s == "threshold") return DetectorStrategy::Threshold;
  return std::nullopt;
}

/// Fraction of positions at which two byte strings agree, over the longer
/// length. Two empty payloads overlap fully.
inline double payload_overlap(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(longest);
}

struct ChangeDetector {
  DetectorStrategy strategy = DetectorStrategy::ExactPayload;
  double threshold = 1.0;
  /// Scripted: timesteps at which the scene changes.
  std::set<std::int64_t> change_steps;

  void validate() const {
    if (strategy == DetectorStrategy::Threshold && !(threshold >= 0.0 && threshold <= 1.0))
      throw ConfigError("change detector threshold must lie in [0,1]");
  }

  /// True when the draft produced for `prior` is still valid for `current`.
  bool accepts(const Frame& prior, std::int64_t prior_timestep, const Frame& current,
               std::int64_t current_timestep) const {
    switch (strategy) {
      case DetectorStrategy::ExactPayload:
        return prior.payload_view() == current.payload_view();
      case DetectorStrategy::Scripted: {
        auto it = change_steps.upper_bound(prior_timestep);
        return it == change_steps.end() || *it > current_timestep;
      }
      case DetectorStrategy::Threshold:
        return payload_overlap(prior.payload_view(), current.payload_view()) >= threshold;
    }
    return false;
  }
};

struct SpeculativeConfig {
  ChangeDetector detector;
  /// Constant verify cost in seconds; when absent the wrapped backend's
  /// verify timing is used.
  std::optional<double> verify_cost;

  void validate() const {
    detector.validate();
    if (verify_cost && *verify_cost < 0.0) throw ConfigError("verify_cost must be >= 0");
  }

  static SpeculativeConfig from_json(const nlohmann::json& j) {
    SpeculativeConfig c;
    try {
      const auto name = j.value("detector", std::string("exact_payload"));
      const auto strategy = parse_detector_strategy(name);
      if (!strategy) throw ConfigError("unknown change detector '" + name + "'");
      c.detector.strategy = *strategy;
      c.detector.threshold = j.value("threshold", 1.0);
      for (const auto& s : j.value("change_steps", nlohmann::json::array()))
        c.detector.change_steps.insert(s.get<std::int64_t>());
      if (j.contains("verify_cost") && !j["verify_cost"].is_null())
        c.verify_cost = j["verify_cost"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed speculative config: ") + e.what());
    }
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"detector", to_string(detector.strategy)}};
    if (detector.strategy == DetectorStrategy::Threshold) j["threshold"] = detector.threshold;
    if (detector.strategy == DetectorStrategy::Scripted) j["change_steps"] = detector.change_steps;
    if (verify_cost) j["verify_cost"] = *verify_cost;
    return j;
  }
};

/// Previous step's output plus the frame it was produced for.
struct SpeculativePrior {
  InferenceResult result;
  Frame newest;
  std::int64_t timestep = 0;
};

struct SpeculativeOutcome {
  InferenceResult result;
  bool accepted = false;
};

class SpeculativeBackend final : public Backend {
 public:
  SpeculativeBackend(std::unique_ptr<Backend> inner, SpeculativeConfig cfg)
      : inner_(std::move(inner)), cfg_(std::move(cfg)) {
    if (!inner_) throw ConfigError("speculative wrapper needs a backend");
    cfg_.validate();
  }

  std::string id() const override { return "speculative(" + inner_->id() + ")"; }
  bool is_remote() const override { return inner_->is_remote(); }

  SpeculativeOutcome infer_speculative(const InferenceRequest& req,
                                       const std::optional<SpeculativePrior>& prior) {
    if (prior && cfg_.detector.accepts(prior->newest, prior->timestep, req.newest(), req.timestep)) {
      InferenceResult r = prior->result;
      r.latency = verify_cost(req);
      r.simulated = true;
      ++accepts_;
      return {r, true};
    }
    ++generate_calls_;
    return {inner_->generate(req), false};
  }

  /// Stateful form used by the protocol runners: the prior is this
  /// wrapper's previous output.
  InferenceResult generate(const InferenceRequest& req) override {
    auto outcome = infer_speculative(req, prior_);
    prior_ = SpeculativePrior{outcome.result, req.newest(), req.timestep};
    last_accepted_ = outcome.accepted;
    return outcome.result;
  }

  void reset() {
    prior_.reset();
    last_accepted_ = false;
  }

  std::size_t generate_calls() const { return generate_calls_; }
  std::size_t accepts() const { return accepts_; }
  bool last_accepted() const { return last_accepted_; }
  Backend& inner() { return *inner_; }
  const SpeculativeConfig& config() const { return cfg_; }

 private:
  double verify_cost(const InferenceRequest& req) {
    if (cfg_.verify_cost) return *cfg_.verify_cost;
    if (auto v = inner_->verify_latency(req)) return *v;
    throw ConfigError(inner_->id() + " reports no verify cost; set speculative.verify_cost");
  }

  std::unique_ptr<Backend> inner_;
  SpeculativeConfig cfg_;
  std::optional<SpeculativePrior> prior_;
  std::size_t generate_calls_ = 0;
  std::size_t accepts_ = 0;
  bool last_accepted_ = false;
};

}  // namespace streameval
