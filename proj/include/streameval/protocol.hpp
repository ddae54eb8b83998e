#pragma once

// Synchronous and asynchronous protocol runners.
//
// Sync: every annotated second is fed to the model in lockstep; latency is
// recorded but never changes which frames the model sees.
//
// Async: a camera process writes frames into a bounded drop-oldest buffer at
// f_c while a single model process repeatedly drains every pending frame,
// updates memory, selects context and runs one inference. Under the virtual
// clock this is a discrete-event simulation. When an inference completes at
// the same instant a frame is captured, the model drains first; the new frame
// is picked up by the following drain.

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "streameval/backend.hpp"
#include "streameval/clock.hpp"
#include "streameval/core.hpp"
#include "streameval/errors.hpp"
#include "streameval/memory.hpp"
#include "streameval/speculative.hpp"
#include "streameval/stream.hpp"

namespace streameval {

struct TaskSelection {
  enum class Mode { All, Ids, Types } mode = Mode::All;
  std::vector<std::string> ids;
  std::vector<TaskType> types;

  bool matches(const AnnotationTrack& t) const {
    switch (mode) {
      case Mode::All: return true;
      case Mode::Ids: return std::find(ids.begin(), ids.end(), t.task_id) != ids.end();
      case Mode::Types: return std::find(types.begin(), types.end(), t.task_type) != types.end();
    }
    return false;
  }

  nlohmann::json to_json() const {
    switch (mode) {
      case Mode::All: return "all";
      case Mode::Ids: return ids;
      case Mode::Types: {
        nlohmann::json names = nlohmann::json::array();
        for (auto t : types) names.push_back(to_string(t));
        return {{"types", names}};
      }
    }
    return "all";
  }

  static TaskSelection from_json(const nlohmann::json& j) {
    TaskSelection s;
    if (j.is_null() || (j.is_string() && j.get<std::string>() == "all")) return s;
    if (j.is_array()) {
      s.mode = Mode::Ids;
      for (const auto& id : j) s.ids.push_back(id.get<std::string>());
      return s;
    }
    if (j.is_object() && j.contains("types")) {
      s.mode = Mode::Types;
      for (const auto& name : j["types"]) {
        const auto t = parse_task_type(name.get<std::string>());
        if (!t) throw ConfigError("unknown task type in selection: " + name.get<std::string>());
        s.types.push_back(*t);
      }
      return s;
    }
    throw ConfigError("task selection must be \"all\", a list of ids, or {\"types\": [...]}");
  }
};

struct RunConfig {
  Protocol protocol = Protocol::Async;
  StreamConfig stream;
  MemoryConfig memory;
  std::string backend = "echo";
  TaskSelection tasks;
  std::optional<SpeculativeConfig> speculative;
  /// Per-inference ceiling in seconds; 0 disables it.
  double backend_timeout = 0.0;
  bool trace_buffer = false;

  void validate(bool remote_backend) const {
    stream.validate();
    memory.validate();
    if (speculative) speculative->validate();
    if (backend_timeout < 0.0) throw ConfigError("backend_timeout must be >= 0");
    if (remote_backend && stream.clock_mode == ClockMode::Virtual)
      throw ConfigError("remote backends cannot run under the virtual clock");
  }

  nlohmann::json echo() const {
    nlohmann::json j = {{"protocol", to_string(protocol)},
                        {"camera_fps", stream.camera_fps},
                        {"camera_buffer_size", stream.camera_buffer_size},
                        {"clock", to_string(stream.clock_mode)},
                        {"context_size", memory.context_size},
                        {"policy", to_string(memory.policy)},
                        {"backend", backend},
                        {"backend_timeout", backend_timeout},
                        {"tasks", tasks.to_json()}};
    if (speculative) j["speculative"] = speculative->to_json();
    return j;
  }
};

/// Frames captured within this window before an inference completes are left
/// for the next drain in wall-clock runs (mirrors the virtual tie rule).
inline constexpr double kWallTieWindow = 0.010;

namespace detail {

inline std::optional<double> timeout_of(const RunConfig& cfg) {
  if (cfg.backend_timeout > 0.0) return cfg.backend_timeout;
  return std::nullopt;
}

inline void fail_log(ResponseLog& log, const std::exception& e) {
  log.run_metadata["incomplete"] = true;
  log.run_metadata["error"] = e.what();
  if (const auto* err = dynamic_cast<const Error*>(&e)) log.run_metadata["error_kind"] = err->kind();
}

inline void append_response(ResponseLog& log, const InferenceResult& r, double emit_time,
                            std::int64_t covered) {
  if (!log.responses.empty() && emit_time <= log.responses.back().emit_time)
    emit_time = std::nextafter(log.responses.back().emit_time, INFINITY);
  log.responses.push_back({emit_time, covered, r.is_pause ? std::string() : r.text, r.is_pause,
                           r.latency});
}

inline void record_backend_stats(ResponseLog& log, Backend& backend) {
  if (auto* spec = dynamic_cast<SpeculativeBackend*>(&backend)) {
    log.run_metadata["speculative_accepts"] = spec->accepts();
    log.run_metadata["speculative_generate_calls"] = spec->generate_calls();
  }
}

/// Frames making up an N_t-second video at the camera rate.
inline std::size_t frames_for(const AnnotationTrack& track, const StreamConfig& s,
                              const FrameSource& source) {
  const auto wanted = static_cast<std::size_t>(
      std::ceil(static_cast<double>(track.length()) * s.camera_fps - 1e-9));
  return std::min(wanted, source.size());
}

/// Limits a source to its first `limit` frames.
class PrefixSource final : public FrameSource {
 public:
  PrefixSource(FrameSource& inner, std::size_t limit) : inner_(inner), limit_(limit) {}
  std::size_t size() const override { return limit_; }
  Payload read(std::size_t i) override { return inner_.read(i); }
  std::string descriptor() const override { return inner_.descriptor(); }

 private:
  FrameSource& inner_;
  std::size_t limit_;
};

}  // namespace detail

inline ResponseLog make_log(const AnnotationTrack& track, const RunConfig& cfg, Backend& backend) {
  ResponseLog log;
  log.task_id = track.task_id;
  log.protocol = cfg.protocol;
  log.run_metadata = cfg.echo();
  log.run_metadata["backend_id"] = backend.id();
  log.run_metadata["incomplete"] = false;
  return log;
}

/// Lockstep evaluation: one inference per annotated second.
inline ResponseLog run_sync(const AnnotationTrack& track, FrameSource& source, const RunConfig& cfg,
                            Backend& backend) {
  if (cfg.protocol != Protocol::Sync) throw ConfigError("run_sync needs protocol=sync");
  cfg.validate(backend.is_remote());
  ResponseLog log = make_log(track, cfg, backend);
  std::unique_ptr<Clock> clock;
  if (cfg.stream.clock_mode == ClockMode::Wall)
    clock = std::make_unique<WallClock>();
  else
    clock = std::make_unique<VirtualClock>();
  MemoryBuffer memory(cfg.memory);
  std::size_t frames_seen = 0;
  try {
    for (std::size_t i = 0; i < track.length(); ++i) {
      const auto index = static_cast<std::size_t>(std::llround(static_cast<double>(i) * cfg.stream.camera_fps));
      if (index >= source.size())
        throw SourceNotFound("source " + source.descriptor() + " has no frame for second " +
                             std::to_string(i));
      const double nominal = static_cast<double>(i);
      if (clock->mode() == ClockMode::Virtual) {
        const double start =
            std::max(nominal, log.responses.empty() ? 0.0 : log.responses.back().emit_time);
        clock->sleep_until(start);
      }
      memory.ingest({Frame{static_cast<std::int64_t>(index), nominal, source.read(index)}});
      ++frames_seen;
      InferenceRequest req{track.prompt, memory.select_context(), clock->now(),
                           static_cast<std::int64_t>(i)};
      const InferenceResult r = infer(backend, req, *clock, detail::timeout_of(cfg));
      if (clock->mode() == ClockMode::Virtual) clock->sleep_until(clock->now() + r.latency);
      detail::append_response(log, r, clock->now(), static_cast<std::int64_t>(i));
    }
  } catch (const Error& e) {
    detail::fail_log(log, e);
  }
  log.run_metadata["frames_emitted"] = frames_seen;
  log.run_metadata["frames_dropped"] = 0;
  detail::record_backend_stats(log, backend);
  return log;
}

namespace detail {

struct AsyncState {
  ResponseLog log;
  MemoryBuffer memory;
  std::int64_t last_covered = -1;
};

inline void model_step(AsyncState& st, const AnnotationTrack& track, const RunConfig& cfg,
                       Backend& backend, Clock& clock, const std::vector<Frame>& frames,
                       double start) {
  st.memory.ingest(frames);
  const std::int64_t covered = annotation_second(frames.back(), cfg.stream.camera_fps);
  InferenceRequest req{track.prompt, st.memory.select_context(), start, covered};
  const InferenceResult r = infer(backend, req, clock, timeout_of(cfg));
  const double emit = clock.mode() == ClockMode::Virtual ? start + r.latency : clock.now();
  append_response(st.log, r, emit, std::max(covered, st.last_covered));
  st.last_covered = std::max(covered, st.last_covered);
}

inline void finish_async(AsyncState& st, const StreamSummary& s, const CameraBuffer& buffer,
                         Backend& backend) {
  auto& md = st.log.run_metadata;
  md["frames_emitted"] = s.frames_emitted;
  md["frames_dropped"] = buffer.dropped_count();
  md["frames_drained"] = buffer.drained_count();
  md["frames_residual"] = buffer.size();
  md["stream_end_time"] = s.end_time;
  md["cadence_violations"] = s.cadence_violations;
  md["cadence_flagged"] = s.cadence_violations > 0;
  md["max_cadence_deviation"] = s.max_cadence_deviation;
  record_backend_stats(st.log, backend);
}

}  // namespace detail

/// Optional probe into an async run, for tests and debug output.
struct AsyncObserver {
  std::function<void(const std::vector<Frame>& drained, double t, std::size_t dropped_so_far)>
      on_drain;
  std::string* buffer_trace = nullptr;  // receives JSON lines when set
};

inline ResponseLog run_async(const AnnotationTrack& track, FrameSource& source, const RunConfig& cfg,
                             Backend& backend, const AsyncObserver& observer = {}) {
  if (cfg.protocol != Protocol::Async) throw ConfigError("run_async needs protocol=async");
  cfg.validate(backend.is_remote());
  detail::AsyncState st{make_log(track, cfg, backend), MemoryBuffer(cfg.memory)};
  detail::PrefixSource video(source, detail::frames_for(track, cfg.stream, source));
  CameraBuffer buffer(cfg.stream.camera_buffer_size, cfg.trace_buffer || observer.buffer_trace);

  auto notify = [&](const std::vector<Frame>& frames, double t) {
    if (observer.on_drain) observer.on_drain(frames, t, buffer.dropped_count());
  };

  if (cfg.stream.clock_mode == ClockMode::Virtual) {
    VirtualClock clock;
    CameraProcess camera(video, cfg.stream, buffer, clock);
    double model_free = 0.0;
    try {
      for (;;) {
        // Captures strictly before the model frees up happen first.
        while (!camera.done() && camera.next_capture_time() < model_free) {
          clock.advance_to(camera.next_capture_time());
          camera.capture_next();
        }
        if (camera.done()) buffer.close();
        clock.advance_to(model_free);
        if (buffer.empty()) {
          if (camera.done()) break;
          // Idle: wait for the next frame.
          model_free = camera.next_capture_time();
          clock.advance_to(model_free);
          camera.capture_next();
        }
        auto frames = buffer.drain(model_free);
        notify(frames, model_free);
        detail::model_step(st, track, cfg, backend, clock, frames, model_free);
        model_free = st.log.responses.back().emit_time;
      }
    } catch (const Error& e) {
      detail::fail_log(st.log, e);
    }
    detail::finish_async(st, camera.summary(), buffer, backend);
  } else {
    WallClock clock;
    CameraProcess camera(video, cfg.stream, buffer, clock);
    std::exception_ptr camera_error;
    std::jthread producer([&](std::stop_token stop) {
      try {
        camera.run(stop);
      } catch (...) {
        camera_error = std::current_exception();
      }
    });
    try {
      while (buffer.wait_for_frames()) {
        const double now = clock.now();
        auto frames = buffer.drain_before(now - kWallTieWindow, now);
        notify(frames, now);
        detail::model_step(st, track, cfg, backend, clock, frames, now);
      }
    } catch (const Error& e) {
      detail::fail_log(st.log, e);
      producer.request_stop();
    }
    producer.join();
    if (camera_error && !st.log.incomplete()) {
      try {
        std::rethrow_exception(camera_error);
      } catch (const std::exception& e) {
        detail::fail_log(st.log, e);
      }
    }
    detail::finish_async(st, camera.summary(), buffer, backend);
  }
  if (observer.buffer_trace) *observer.buffer_trace = buffer.trace_jsonl();
  return st.log;
}

inline ResponseLog run_task(const AnnotationTrack& track, FrameSource& source, const RunConfig& cfg,
                            Backend& backend) {
  return cfg.protocol == Protocol::Sync ? run_sync(track, source, cfg, backend)
                                        : run_async(track, source, cfg, backend);
}

using BackendFactory = std::function<std::unique_ptr<Backend>(const AnnotationTrack&)>;

/// Runs the selected tasks one after another, ordered by task_id. A task
/// that fails yields a log flagged incomplete; the suite continues.
inline std::vector<ResponseLog> run_suite(
    std::vector<AnnotationTrack> tracks, const std::map<std::string, std::string>& sources,
    const RunConfig& cfg, const BackendFactory& make_backend,
    const std::function<void(const ResponseLog&)>& on_complete = {}) {
  std::erase_if(tracks, [&](const auto& t) { return !cfg.tasks.matches(t); });
  std::sort(tracks.begin(), tracks.end(),
            [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
  for (const auto& t : tracks) {
    if (!sources.contains(t.video_id))
      throw ConfigError("no frame source for video '" + t.video_id + "' (task " + t.task_id + ")");
  }
  std::vector<ResponseLog> logs;
  for (const auto& track : tracks) {
    ResponseLog log;
    try {
      auto backend = make_backend(track);
      if (cfg.speculative)
        backend = std::make_unique<SpeculativeBackend>(std::move(backend), *cfg.speculative);
      auto source = open_frame_source(sources.at(track.video_id));
      log = run_task(track, *source, cfg, *backend);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      log.task_id = track.task_id;
      log.protocol = cfg.protocol;
      log.run_metadata = cfg.echo();
      detail::fail_log(log, e);
    }
    if (on_complete) on_complete(log);
    logs.push_back(std::move(log));
  }
  return logs;
}

}  // namespace streameval
