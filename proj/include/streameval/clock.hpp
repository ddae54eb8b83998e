#pragma once

#include <atomic>
#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "streameval/errors.hpp"

namespace streameval {

enum class ClockMode { Wall, Virtual };

inline std::string_view to_string(ClockMode m) { return m == ClockMode::Wall ? "wall" : "virtual"; }

inline std::optional<ClockMode> parse_clock_mode(std::string_view s) {
  if (s == "wall") return ClockMode::Wall;
  if (s == "virtual") return ClockMode::Virtual;
  return std::nullopt;
}

/// Seconds since the start of a run. Reads are safe from any thread.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual ClockMode mode() const = 0;
  virtual double now() const = 0;
  /// Wall: blocks until `t`. Virtual: advances to `t` (never backwards).
  virtual void sleep_until(double t) = 0;
};

class WallClock final : public Clock {
 public:
  using steady = std::chrono::steady_clock;

  WallClock() : start_(steady::now()) {}

  ClockMode mode() const override { return ClockMode::Wall; }

  double now() const override {
    const double t = std::chrono::duration<double>(steady::now() - start_).count();
    double prev = last_.load(std::memory_order_relaxed);
    if (t < prev) throw ClockError("wall clock went backwards");
    while (prev < t && !last_.compare_exchange_weak(prev, t, std::memory_order_relaxed)) {
    }
    return t;
  }

  void sleep_until(double t) override {
    std::this_thread::sleep_until(start_ + std::chrono::duration_cast<steady::duration>(
                                               std::chrono::duration<double>(t)));
  }

 private:
  steady::time_point start_;
  mutable std::atomic<double> last_{0.0};
};

/// Discrete-event clock: time moves only through explicit advances, so an
/// identical schedule of advances yields identical timestamps.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(double start = 0.0) : now_(start) {}

  ClockMode mode() const override { return ClockMode::Virtual; }
  double now() const override { return now_.load(std::memory_order_acquire); }

  void sleep_until(double t) override { advance_to(t); }

  void advance_to(double t) {
    const double cur = now();
    if (t < cur)
      throw ClockError("virtual clock cannot move backwards (" + std::to_string(cur) + " -> " +
                       std::to_string(t) + ")");
    now_.store(t, std::memory_order_release);
  }

  void advance_by(double dt) { advance_to(now() + dt); }

 private:
  std::atomic<double> now_;
};

}  // namespace streameval
