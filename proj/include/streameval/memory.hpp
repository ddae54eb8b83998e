#pragma once

// Model-side memory buffer and working-context selection policies:
//   SW  - keep the latest k frames, use all of them
//   U   - keep everything, sample k frames evenly (endpoints included)
//   SWU - keep everything, use the newest ceil(k/2) frames plus floor(k/2)
//         evenly sampled from the older remainder

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "streameval/errors.hpp"
#include "streameval/stream.hpp"

namespace streameval {

enum class MemoryPolicy { SW, U, SWU };

inline std::string_view to_string(MemoryPolicy p) {
  switch (p) {
    case MemoryPolicy::SW: return "sw";
    case MemoryPolicy::U: return "u";
    case MemoryPolicy::SWU: return "sw+u";
  }
  return "?";
}

inline std::optional<MemoryPolicy> parse_memory_policy(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "sw") return MemoryPolicy::SW;
  if (lower == "u") return MemoryPolicy::U;
  if (lower == "sw+u" || lower == "swu") return MemoryPolicy::SWU;
  return std::nullopt;
}

struct MemoryConfig {
  std::size_t context_size = 64;
  MemoryPolicy policy = MemoryPolicy::SW;

  void validate() const {
    if (context_size < 1) throw ConfigError("context_size must be >= 1");
  }
};

/// Positions round(j*(n-1)/(m-1)), j = 0..m-1, over [0, n). Returns all
/// positions when m >= n and {0} when m == 1.
inline std::vector<std::size_t> uniform_positions(std::size_t n, std::size_t m) {
  std::vector<std::size_t> out;
  if (n == 0 || m == 0) return out;
  if (m >= n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  if (m == 1) return {0};
  const std::size_t span = n - 1;
  const std::size_t steps = m - 1;
  for (std::size_t j = 0; j < m; ++j) {
    // round-half-up in integer arithmetic
    const std::size_t idx = (2 * j * span + steps) / (2 * steps);
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

/// Indices into a retained list of size n that a policy selects.
inline std::vector<std::size_t> select_indices(std::size_t n, const MemoryConfig& cfg) {
  const std::size_t k = cfg.context_size;
  std::vector<std::size_t> out;
  if (n <= k) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  switch (cfg.policy) {
    case MemoryPolicy::SW:
      for (std::size_t i = n - k; i < n; ++i) out.push_back(i);
      break;
    case MemoryPolicy::U:
      if (k == 1) return {n - 1};
      out = uniform_positions(n, k);
      break;
    case MemoryPolicy::SWU: {
      const std::size_t tail = (k + 1) / 2;
      const std::size_t pool = n - tail;
      out = uniform_positions(pool, k / 2);
      for (std::size_t i = pool; i < n; ++i) out.push_back(i);
      break;
    }
  }
  return out;
}

class MemoryBuffer {
 public:
  explicit MemoryBuffer(MemoryConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const MemoryConfig& config() const { return cfg_; }
  /// SW retains the last k frames; U and SWU retain everything.
  bool keeps_all() const { return cfg_.policy != MemoryPolicy::SW; }

  const std::vector<Frame>& retained() const { return retained_; }
  bool empty() const { return retained_.empty(); }
  std::size_t size() const { return retained_.size(); }

  void ingest(const std::vector<Frame>& frames) {
    std::int64_t last = retained_.empty() ? -1 : retained_.back().timestep;
    for (const auto& f : frames) {
      if (f.timestep <= last)
        throw OrderError("frame " + std::to_string(f.timestep) +
                         " is not newer than retained frame " + std::to_string(last));
      last = f.timestep;
    }
    retained_.insert(retained_.end(), frames.begin(), frames.end());
    if (!keeps_all() && retained_.size() > cfg_.context_size) {
      retained_.erase(retained_.begin(),
                      retained_.end() - static_cast<std::ptrdiff_t>(cfg_.context_size));
    }
  }

  std::vector<Frame> select_context() const {
    if (retained_.empty()) throw EmptyMemory("cannot select context from an empty memory buffer");
    std::vector<Frame> out;
    for (auto i : select_indices(retained_.size(), cfg_)) out.push_back(retained_[i]);
    return out;
  }

 private:
  MemoryConfig cfg_;
  std::vector<Frame> retained_;
};

inline MemoryBuffer& ingest(MemoryBuffer& buffer, const std::vector<Frame>& frames) {
  buffer.ingest(frames);
  return buffer;
}

inline std::vector<Frame> select_context(const MemoryBuffer& buffer) {
  return buffer.select_context();
}

}  // namespace streameval
