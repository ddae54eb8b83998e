#pragma once

// Frame sources, the bounded drop-oldest camera buffer, and the camera
// (producer) process of the asynchronous protocol.

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "streameval/clock.hpp"
#include "streameval/errors.hpp"

namespace streameval {

using Bytes = std::vector<std::uint8_t>;
/// Shared, immutable frame bytes. Frames are copied by reference only.
using Payload = std::shared_ptr<const Bytes>;

inline Payload make_payload(std::string_view s) {
  return std::make_shared<const Bytes>(s.begin(), s.end());
}

struct Frame {
  std::int64_t timestep = 0;  // frame index at the camera rate
  double capture_time = 0.0;
  Payload payload;

  std::string_view payload_view() const {
    if (!payload) return {};
    return {reinterpret_cast<const char*>(payload->data()), payload->size()};
  }
};

/// Annotation second a frame belongs to (annotations are 1 FPS).
inline std::int64_t annotation_second(const Frame& f, double camera_fps) {
  return static_cast<std::int64_t>(std::floor(static_cast<double>(f.timestep) / camera_fps + 1e-9));
}

struct StreamConfig {
  double camera_fps = 1.0;
  std::size_t camera_buffer_size = 600;
  ClockMode clock_mode = ClockMode::Virtual;

  void validate() const {
    if (!(camera_fps > 0.0) || !std::isfinite(camera_fps))
      throw ConfigError("camera_fps must be > 0");
    if (camera_buffer_size < 1) throw ConfigError("camera_buffer_size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Frame sources

/// An ordered, finite sequence of frame payloads with timesteps 0..N-1.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual Payload read(std::size_t index) = 0;
  virtual std::string descriptor() const = 0;

  /// Cursor-style iteration; yields (timestep, payload) until exhausted.
  std::optional<std::pair<std::int64_t, Payload>> next() {
    if (cursor_ >= size()) return std::nullopt;
    const auto i = cursor_++;
    return std::pair{static_cast<std::int64_t>(i), read(i)};
  }
  void rewind() { cursor_ = 0; }

 private:
  std::size_t cursor_ = 0;
};

class SyntheticSource final : public FrameSource {
 public:
  /// `pattern` may contain "{i}", replaced by the frame index.
  explicit SyntheticSource(std::size_t count, std::string pattern = "f{i}")
      : count_(count), pattern_(std::move(pattern)) {
    if (count_ == 0) throw EmptySource("synthetic source with zero frames");
  }

  std::size_t size() const override { return count_; }

  Payload read(std::size_t index) override {
    std::string label = pattern_;
    const auto pos = label.find("{i}");
    if (pos != std::string::npos) label.replace(pos, 3, std::to_string(index));
    return make_payload(label);
  }

  std::string descriptor() const override {
    return "synthetic:" + std::to_string(count_) + (pattern_ == "f{i}" ? "" : ":" + pattern_);
  }

 private:
  std::size_t count_;
  std::string pattern_;
};

/// Regular files of a directory in lexicographic order; bytes are read lazily.
class DirectorySource final : public FrameSource {
 public:
  explicit DirectorySource(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir_, ec))
      throw SourceNotFound("frame directory not found: " + dir_.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      if (entry.is_regular_file()) files_.push_back(entry.path());
    }
    if (files_.empty()) throw EmptySource("frame directory is empty: " + dir_.string());
    std::sort(files_.begin(), files_.end(),
              [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  }

  std::size_t size() const override { return files_.size(); }

  Payload read(std::size_t index) override {
    std::ifstream in(files_.at(index), std::ios::binary);
    if (!in) throw SourceNotFound("cannot read frame file: " + files_[index].string());
    return std::make_shared<const Bytes>(std::istreambuf_iterator<char>(in),
                                         std::istreambuf_iterator<char>());
  }

  std::string descriptor() const override { return "dir:" + dir_.string(); }

  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> files_;
};

/// Parses "dir:<path>" or "synthetic:<count>[:<pattern>]".
inline std::unique_ptr<FrameSource> open_frame_source(std::string_view spec) {
  if (spec.starts_with("dir:")) return std::make_unique<DirectorySource>(std::string(spec.substr(4)));
  if (spec.starts_with("synthetic:")) {
    auto rest = spec.substr(10);
    std::string pattern = "f{i}";
    if (const auto colon = rest.find(':'); colon != std::string_view::npos) {
      pattern = std::string(rest.substr(colon + 1));
      rest = rest.substr(0, colon);
    }
    std::size_t count = 0;
    try {
      std::size_t used = 0;
      const long long n = std::stoll(std::string(rest), &used);
      if (used != rest.size() || n < 0) throw std::invalid_argument("count");
      count = static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ConfigError("invalid synthetic frame count in '" + std::string(spec) + "'");
    }
    return std::make_unique<SyntheticSource>(count, pattern);
  }
  throw ConfigError("unknown source descriptor '" + std::string(spec) +
                    "' (expected dir:<path> or synthetic:<count>)");
}

// ---------------------------------------------------------------------------
// Camera buffer

struct BufferTraceEvent {
  enum class Kind { Insert, Drop, Drain } kind;
  double t;
  std::int64_t timestep;

  friend bool operator==(const BufferTraceEvent&, const BufferTraceEvent&) = default;
};

inline std::string_view to_string(BufferTraceEvent::Kind k) {
  switch (k) {
    case BufferTraceEvent::Kind::Insert: return "insert";
    case BufferTraceEvent::Kind::Drop: return "drop";
    case BufferTraceEvent::Kind::Drain: return "drain";
  }
  return "?";
}

/// Bounded FIFO between the camera and the model. When full, inserting
/// discards the oldest frame. One producer and one consumer may use it
/// concurrently; insert and drain are each atomic.
class CameraBuffer {
 public:
  explicit CameraBuffer(std::size_t capacity, bool trace = false)
      : capacity_(capacity), tracing_(trace) {
    if (capacity_ < 1) throw ConfigError("camera buffer capacity must be >= 1");
  }

  CameraBuffer(const CameraBuffer&) = delete;
  CameraBuffer& operator=(const CameraBuffer&) = delete;

  /// Returns true if an older frame was discarded to make room.
  bool insert(Frame frame) {
    bool dropped = false;
    {
      std::lock_guard lock(mu_);
      record(BufferTraceEvent::Kind::Insert, frame.capture_time, frame.timestep);
      const double t = frame.capture_time;
      frames_.push_back(std::move(frame));
      ++inserted_;
      if (frames_.size() > capacity_) {
        record(BufferTraceEvent::Kind::Drop, t, frames_.front().timestep);
        frames_.pop_front();
        ++dropped_;
        dropped = true;
      }
    }
    cv_.notify_all();
    return dropped;
  }

  /// Removes and returns every buffered frame, oldest first.
  std::vector<Frame> drain(double t = 0.0) {
    std::lock_guard lock(mu_);
    return take_locked(frames_.size(), t);
  }

  /// Drains frames captured before `cutoff`; if none qualify, drains all.
  std::vector<Frame> drain_before(double cutoff, double t) {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    while (n < frames_.size() && frames_[n].capture_time < cutoff) ++n;
    return take_locked(n == 0 ? frames_.size() : n, t);
  }

  /// Blocks until a frame is buffered or the stream has ended. Returns
  /// false only when the buffer is empty and closed (or stop requested).
  bool wait_for_frames(std::stop_token stop = {}) {
    std::unique_lock lock(mu_);
    while (frames_.empty() && !closed_ && !stop.stop_requested()) {
      cv_.wait_for(lock, std::chrono::milliseconds(20));
    }
    return !frames_.empty();
  }

  /// Signals end-of-stream to the consumer.
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }
  bool empty() const {
    std::lock_guard lock(mu_);
    return frames_.empty();
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return frames_.size();
  }
  std::size_t capacity() const { return capacity_; }
  std::size_t dropped_count() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }
  std::size_t inserted_count() const {
    std::lock_guard lock(mu_);
    return inserted_;
  }
  std::size_t drained_count() const {
    std::lock_guard lock(mu_);
    return drained_;
  }
  std::vector<Frame> snapshot() const {
    std::lock_guard lock(mu_);
    return {frames_.begin(), frames_.end()};
  }

  std::vector<BufferTraceEvent> trace() const {
    std::lock_guard lock(mu_);
    return trace_;
  }

  /// JSON lines: {"event":..., "t":..., "timestep":...}
  std::string trace_jsonl() const {
    std::string out;
    for (const auto& e : trace()) {
      out += nlohmann::json{{"event", to_string(e.kind)}, {"t", e.t}, {"timestep", e.timestep}}
                 .dump();
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<Frame> take_locked(std::size_t n, double t) {
    std::vector<Frame> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      record(BufferTraceEvent::Kind::Drain, t, frames_.front().timestep);
      out.push_back(std::move(frames_.front()));
      frames_.pop_front();
    }
    drained_ += n;
    return out;
  }

  void record(BufferTraceEvent::Kind kind, double t, std::int64_t timestep) {
    if (tracing_) trace_.push_back({kind, t, timestep});
  }

  const std::size_t capacity_;
  const bool tracing_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Frame> frames_;
  std::size_t dropped_ = 0;
  std::size_t inserted_ = 0;
  std::size_t drained_ = 0;
  bool closed_ = false;
  std::vector<BufferTraceEvent> trace_;
};

// ---------------------------------------------------------------------------
// Camera process

struct StreamSummary {
  std::size_t frames_emitted = 0;
  std::size_t frames_dropped = 0;
  double end_time = 0.0;
  std::size_t cadence_violations = 0;
  double max_cadence_deviation = 0.0;

  friend bool operator==(const StreamSummary&, const StreamSummary&) = default;
};

inline nlohmann::json to_json(const StreamSummary& s) {
  return {{"frames_emitted", s.frames_emitted},
          {"frames_dropped", s.frames_dropped},
          {"end_time", s.end_time},
          {"cadence_violations", s.cadence_violations},
          {"max_cadence_deviation", s.max_cadence_deviation}};
}

/// Wall-clock frames captured further than this from their nominal time are
/// counted as cadence violations (reported, never fatal).
inline constexpr double kCadenceTolerance = 0.050;

/// Produces frames into a CameraBuffer at the configured rate. Capture times
/// follow an absolute schedule i/f_c, and the next frame is read ahead of its
/// slot, so read and insert overhead does not accumulate as drift.
class CameraProcess {
 public:
  CameraProcess(FrameSource& source, const StreamConfig& cfg, CameraBuffer& buffer, Clock& clock)
      : source_(source), cfg_(cfg), buffer_(buffer), clock_(clock), total_(source.size()) {
    cfg_.validate();
    if (total_ == 0) throw EmptySource("frame source is empty: " + source_.descriptor());
  }

  bool done() const { return emitted_ >= total_; }
  std::size_t total() const { return total_; }

  double nominal_time(std::size_t index) const {
    return static_cast<double>(index) / cfg_.camera_fps;
  }
  double next_capture_time() const { return nominal_time(emitted_); }

  /// Reads the next frame and inserts it stamped with the current clock time.
  void capture_next() {
    Payload payload = pending_ ? std::move(pending_) : source_.read(emitted_);
    pending_.reset();
    const double target = next_capture_time();
    const double now = clock_.now();
    if (now + 1e-12 < last_capture_) throw ClockError("camera clock went backwards");
    const double deviation = std::abs(now - target);
    summary_.max_cadence_deviation = std::max(summary_.max_cadence_deviation, deviation);
    if (deviation > kCadenceTolerance) ++summary_.cadence_violations;
    last_capture_ = now;
    buffer_.insert(Frame{static_cast<std::int64_t>(emitted_), now, std::move(payload)});
    ++emitted_;
    summary_.frames_emitted = emitted_;
    summary_.end_time = now;
  }

  /// Runs until the last frame has been captured, then closes the buffer.
  StreamSummary run(std::stop_token stop = {}) {
    try {
      while (!done() && !stop.stop_requested()) {
        pending_ = source_.read(emitted_);
        clock_.sleep_until(next_capture_time());
        capture_next();
      }
    } catch (...) {
      buffer_.close();
      throw;
    }
    buffer_.close();
    return summary();
  }

  StreamSummary summary() const {
    StreamSummary s = summary_;
    s.frames_dropped = buffer_.dropped_count();
    return s;
  }

 private:
  FrameSource& source_;
  StreamConfig cfg_;
  CameraBuffer& buffer_;
  Clock& clock_;
  std::size_t total_;
  std::size_t emitted_ = 0;
  double last_capture_ = 0.0;
  Payload pending_;
  StreamSummary summary_;
};

inline StreamSummary run_camera_process(FrameSource& source, const StreamConfig& cfg,
                                        CameraBuffer& buffer, Clock& clock,
                                        std::stop_token stop = {}) {
  return CameraProcess(source, cfg, buffer, clock).run(stop);
}

/// Removes all pending frames, oldest first.
inline std::vector<Frame> drain_pending(CameraBuffer& buffer, double t = 0.0) {
  return buffer.drain(t);
}

}  // namespace streameval
