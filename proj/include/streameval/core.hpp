#pragma once

// Domain types shared by every module: annotation tracks, timed responses,
// response logs, and their JSON schemas.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "streameval/errors.hpp"

namespace streameval {

using json = nlohmann::json;

enum class TaskType { Present, Cumulative, Future };

inline constexpr TaskType kAllTaskTypes[] = {TaskType::Present, TaskType::Cumulative,
                                             TaskType::Future};

inline std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::Present: return "Present";
    case TaskType::Cumulative: return "Cumulative";
    case TaskType::Future: return "Future";
  }
  return "?";
}

inline std::optional<TaskType> parse_task_type(std::string_view s) {
  for (auto t : kAllTaskTypes)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

enum class Protocol { Sync, Async };

inline std::string_view to_string(Protocol p) { return p == Protocol::Sync ? "sync" : "async"; }

inline std::optional<Protocol> parse_protocol(std::string_view s) {
  if (s == "sync") return Protocol::Sync;
  if (s == "async") return Protocol::Async;
  return std::nullopt;
}

struct AnnotationEntry {
  std::int64_t timestep = 0;
  std::string caption;  // empty means "nothing to report"

  friend bool operator==(const AnnotationEntry&, const AnnotationEntry&) = default;
};

struct AnnotationTrack {
  std::string task_id;
  std::string video_id;
  TaskType task_type = TaskType::Present;
  std::string category;
  std::string prompt;
  std::vector<AnnotationEntry> entries;

  /// N_t: the video length in annotated seconds.
  std::size_t length() const { return entries.size(); }
  const std::string& caption_at(std::size_t t) const { return entries.at(t).caption; }

  friend bool operator==(const AnnotationTrack&, const AnnotationTrack&) = default;
};

struct TimedResponse {
  double emit_time = 0.0;
  std::int64_t covered_timestep = 0;
  std::string text;
  bool is_pause = false;
  double latency = 0.0;

  friend bool operator==(const TimedResponse&, const TimedResponse&) = default;
};

struct ResponseLog {
  std::string task_id;
  Protocol protocol = Protocol::Sync;
  std::vector<TimedResponse> responses;
  json run_metadata = json::object();

  bool incomplete() const { return run_metadata.value("incomplete", false); }

  friend bool operator==(const ResponseLog& a, const ResponseLog& b) {
    return a.task_id == b.task_id && a.protocol == b.protocol && a.responses == b.responses &&
           a.run_metadata == b.run_metadata;
  }
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_track(const AnnotationTrack& track) {
  auto fail = [&](const std::string& field, const std::string& what) {
    throw SchemaError("track '" + track.task_id + "': " + field + ": " + what);
  };
  if (track.task_id.empty()) fail("task_id", "empty identifier");
  if (track.prompt.empty()) fail("prompt", "empty prompt");
  if (track.entries.empty()) fail("entries", "no entries");
  for (std::size_t i = 0; i < track.entries.size(); ++i) {
    const auto t = track.entries[i].timestep;
    if (t < 0) fail("entries", "negative timestep " + std::to_string(t));
    const auto expected = static_cast<std::int64_t>(i);
    if (t < expected) fail("entries", "duplicate timestep " + std::to_string(t));
    if (t > expected) fail("entries", "gap at timestep " + std::to_string(expected));
  }
}

inline void validate_response(const TimedResponse& r, std::size_t index) {
  auto fail = [&](const std::string& what) {
    throw SchemaError("response " + std::to_string(index) + ": " + what);
  };
  if (!(r.emit_time >= 0.0) || !std::isfinite(r.emit_time)) fail("emit_time must be >= 0");
  if (!(r.latency >= 0.0) || !std::isfinite(r.latency)) fail("latency must be >= 0");
  if (r.covered_timestep < 0) fail("covered_timestep must be >= 0");
  if (r.is_pause && !r.text.empty()) fail("pause entry with non-empty text");
}

inline void validate_log(const ResponseLog& log) {
  for (std::size_t i = 0; i < log.responses.size(); ++i) {
    validate_response(log.responses[i], i);
    if (i == 0) continue;
    const auto& prev = log.responses[i - 1];
    const auto& cur = log.responses[i];
    if (!(cur.emit_time > prev.emit_time))
      throw SchemaError("response " + std::to_string(i) + ": emit_time not increasing");
    if (cur.covered_timestep < prev.covered_timestep)
      throw SchemaError("response " + std::to_string(i) + ": covered_timestep decreasing");
  }
}

// ---------------------------------------------------------------------------
// JSON schemas

namespace detail {

inline json parse_document(std::string_view document) {
  try {
    return json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw SchemaError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline json to_json(const AnnotationTrack& track) {
  json entries = json::array();
  for (const auto& e : track.entries) entries.push_back({{"t", e.timestep}, {"caption", e.caption}});
  return {{"task_id", track.task_id},   {"video_id", track.video_id},
          {"task_type", to_string(track.task_type)},
          {"category", track.category}, {"prompt", track.prompt},
          {"entries", std::move(entries)}};
}

inline std::string serialize_annotations(const std::vector<AnnotationTrack>& tracks) {
  json doc = {{"tracks", json::array()}};
  for (const auto& t : tracks) doc["tracks"].push_back(to_json(t));
  return doc.dump(2) + "\n";
}

inline AnnotationTrack track_from_json(const json& j) {
  using detail::require;
  AnnotationTrack track;
  const std::string where =
      "track '" + (j.is_object() ? j.value("task_id", std::string("?")) : std::string("?")) + "'";
  track.task_id = require<std::string>(j, "task_id", where);
  track.video_id = require<std::string>(j, "video_id", where);
  const auto type_name = require<std::string>(j, "task_type", where);
  const auto type = parse_task_type(type_name);
  if (!type) throw SchemaError(where + ": task_type: unknown task_type '" + type_name + "'");
  track.task_type = *type;
  track.category = require<std::string>(j, "category", where);
  track.prompt = require<std::string>(j, "prompt", where);
  const auto& entries = j.contains("entries") ? j.at("entries") : json();
  if (!entries.is_array()) throw SchemaError(where + ": entries: must be an array");
  for (const auto& e : entries) {
    track.entries.push_back(
        {require<std::int64_t>(e, "t", where), require<std::string>(e, "caption", where)});
  }
  validate_track(track);
  return track;
}

/// Parses an annotation document and validates every track in it.
inline std::vector<AnnotationTrack> validate_annotation_file(std::string_view document) {
  const json doc = detail::parse_document(document);
  if (!doc.is_object() || !doc.contains("tracks") || !doc["tracks"].is_array())
    throw SchemaError("annotation file: top-level 'tracks' array missing");
  std::vector<AnnotationTrack> tracks;
  for (const auto& t : doc["tracks"]) tracks.push_back(track_from_json(t));
  return tracks;
}

inline json to_json(const ResponseLog& log) {
  json responses = json::array();
  for (const auto& r : log.responses) {
    responses.push_back({{"emit_time", r.emit_time},
                         {"covered_timestep", r.covered_timestep},
                         {"text", r.text},
                         {"is_pause", r.is_pause},
                         {"latency", r.latency}});
  }
  return {{"task_id", log.task_id},
          {"protocol", to_string(log.protocol)},
          {"run_metadata", log.run_metadata},
          {"responses", std::move(responses)}};
}

inline std::string serialize_response_log(const ResponseLog& log) {
  return to_json(log).dump(2) + "\n";
}

inline ResponseLog response_log_from_json(const json& doc) {
  using detail::require;
  ResponseLog log;
  const std::string where = "response log";
  log.task_id = require<std::string>(doc, "task_id", where);
  const auto proto = parse_protocol(require<std::string>(doc, "protocol", where));
  if (!proto) throw SchemaError(where + ": protocol must be 'sync' or 'async'");
  log.protocol = *proto;
  if (doc.contains("run_metadata")) {
    if (!doc["run_metadata"].is_object())
      throw SchemaError(where + ": run_metadata must be an object");
    log.run_metadata = doc["run_metadata"];
  }
  if (!doc.contains("responses") || !doc["responses"].is_array())
    throw SchemaError(where + ": responses must be an array");
  std::size_t i = 0;
  for (const auto& r : doc["responses"]) {
    const std::string at = "response " + std::to_string(i++);
    log.responses.push_back({require<double>(r, "emit_time", at),
                             require<std::int64_t>(r, "covered_timestep", at),
                             require<std::string>(r, "text", at),
                             require<bool>(r, "is_pause", at), require<double>(r, "latency", at)});
  }
  validate_log(log);
  return log;
}

inline ResponseLog load_response_log(std::string_view document) {
  return response_log_from_json(detail::parse_document(document));
}

}  // namespace streameval
