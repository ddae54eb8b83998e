#pragma once

// Command implementations behind the `streameval` CLI: manifest loading,
// backend/judge descriptors, synthetic fixtures, and the run / score /
// fixtures / validate commands. Each command returns its process exit code.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "streameval/backend.hpp"
#include "streameval/core.hpp"
#include "streameval/errors.hpp"
#include "streameval/judge.hpp"
#include "streameval/metrics.hpp"
#include "streameval/protocol.hpp"
#include "streameval/remote.hpp"
#include "streameval/speculative.hpp"

namespace streameval {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

/// 64-bit FNV-1a, hex encoded. Identifies manifests in run metadata.
inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Manifest

struct SuiteManifest {
  fs::path path;
  fs::path base_dir;
  std::string digest;
  std::vector<fs::path> annotation_paths;
  std::map<std::string, std::string> sources;  // video_id -> descriptor
  fs::path out_dir;
  RunConfig run;
};

/// Command-line values that take precedence over the manifest.
struct RunOverrides {
  std::optional<std::string> out;
  std::optional<std::string> protocol;
  std::optional<std::string> policy;
  std::optional<std::size_t> context_size;
  std::optional<std::size_t> camera_buffer_size;
  std::optional<double> camera_fps;
  std::optional<std::string> clock;
  std::optional<std::string> backend;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    if (out) j["out"] = *out;
    if (protocol) j["protocol"] = *protocol;
    if (policy) j["policy"] = *policy;
    if (context_size) j["context_size"] = *context_size;
    if (camera_buffer_size) j["camera_buffer_size"] = *camera_buffer_size;
    if (camera_fps) j["camera_fps"] = *camera_fps;
    if (clock) j["clock"] = *clock;
    if (backend) j["backend"] = *backend;
    return j;
  }
};

inline Protocol require_protocol(std::string_view s) {
  if (auto p = parse_protocol(s)) return *p;
  throw ConfigError("unknown protocol '" + std::string(s) + "' (sync|async)");
}
inline MemoryPolicy require_policy(std::string_view s) {
  if (auto p = parse_memory_policy(s)) return *p;
  throw ConfigError("unknown memory policy '" + std::string(s) + "' (sw|u|sw+u)");
}
inline ClockMode require_clock(std::string_view s) {
  if (auto c = parse_clock_mode(s)) return *c;
  throw ConfigError("unknown clock mode '" + std::string(s) + "' (wall|virtual)");
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("protocol")) c.protocol = require_protocol(j["protocol"].get<std::string>());
    c.stream.camera_fps = j.value("camera_fps", c.stream.camera_fps);
    c.stream.camera_buffer_size = j.value("camera_buffer_size", c.stream.camera_buffer_size);
    if (j.contains("clock")) c.stream.clock_mode = require_clock(j["clock"].get<std::string>());
    c.memory.context_size = j.value("context_size", c.memory.context_size);
    if (j.contains("policy")) c.memory.policy = require_policy(j["policy"].get<std::string>());
    c.backend = j.value("backend", c.backend);
    c.backend_timeout = j.value("backend_timeout", c.backend_timeout);
    if (j.contains("tasks")) c.tasks = TaskSelection::from_json(j["tasks"]);
    if (j.contains("speculative") && !j["speculative"].is_null())
      c.speculative = SpeculativeConfig::from_json(j["speculative"]);
    c.trace_buffer = j.value("trace_buffer", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

inline SuiteManifest load_manifest(const fs::path& path) {
  SuiteManifest m;
  m.path = path;
  m.base_dir = fs::absolute(path).parent_path();
  const std::string text = read_file(path);
  m.digest = fnv1a_hex(text);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  try {
    for (const auto& a : j.at("annotations")) {
      fs::path p = a.get<std::string>();
      if (p.is_relative()) p = m.base_dir / p;
      if (!fs::exists(p)) throw ConfigError("annotation file not found: " + p.string());
      m.annotation_paths.push_back(p);
    }
    for (const auto& [video, desc] : j.at("sources").items()) {
      std::string d = desc.get<std::string>();
      if (d.starts_with("dir:")) {
        fs::path p = d.substr(4);
        if (p.is_relative()) p = m.base_dir / p;
        if (!fs::is_directory(p)) throw ConfigError("frame directory not found: " + p.string());
        d = "dir:" + p.string();
      }
      m.sources[video] = d;
    }
    fs::path out = j.value("out_dir", std::string("runs"));
    m.out_dir = out.is_relative() ? m.base_dir / out : out;
    m.run = run_config_from_json(j.value("run", nlohmann::json::object()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

inline void apply_overrides(SuiteManifest& m, const RunOverrides& o) {
  if (o.out) m.out_dir = *o.out;
  if (o.protocol) m.run.protocol = require_protocol(*o.protocol);
  if (o.policy) m.run.memory.policy = require_policy(*o.policy);
  if (o.context_size) m.run.memory.context_size = *o.context_size;
  if (o.camera_buffer_size) m.run.stream.camera_buffer_size = *o.camera_buffer_size;
  if (o.camera_fps) m.run.stream.camera_fps = *o.camera_fps;
  if (o.clock) m.run.stream.clock_mode = require_clock(*o.clock);
  if (o.backend) m.run.backend = *o.backend;
}

inline std::vector<AnnotationTrack> load_annotations(const std::vector<fs::path>& paths) {
  std::vector<AnnotationTrack> tracks;
  std::set<std::string> ids;
  for (const auto& p : paths) {
    for (auto& t : validate_annotation_file(read_file(p))) {
      if (!ids.insert(t.task_id).second) throw SchemaError("duplicate task_id '" + t.task_id + "'");
      tracks.push_back(std::move(t));
    }
  }
  return tracks;
}

// ---------------------------------------------------------------------------
// Descriptors

struct BackendSpec {
  BackendFactory factory;
  bool remote = false;
};

/// "echo[:<latency>]", "mock:<script.json | dir of <task_id>.json>", or
/// "remote:<config.json>". Relative paths resolve against `base`.
inline BackendSpec make_backend_spec(const std::string& descriptor, const fs::path& base = {}) {
  auto resolve = [&](std::string p) {
    fs::path path = p;
    return path.is_relative() && !base.empty() ? base / path : path;
  };
  if (descriptor == "echo" || descriptor.starts_with("echo:")) {
    double latency = 0.0;
    if (descriptor.size() > 5) {
      try {
        latency = std::stod(descriptor.substr(5));
      } catch (const std::exception&) {
        throw ConfigError("bad echo latency in '" + descriptor + "'");
      }
    }
    if (latency < 0.0) throw ConfigError("echo latency must be >= 0");
    return {[latency](const AnnotationTrack& t) -> std::unique_ptr<Backend> {
              return std::make_unique<MockBackend>(make_echo_script(t, LatencyModel::constant(latency)),
                                                   "echo");
            },
            false};
  }
  if (descriptor.starts_with("mock:")) {
    const fs::path path = resolve(descriptor.substr(5));
    if (fs::is_directory(path)) {
      return {[path](const AnnotationTrack& t) -> std::unique_ptr<Backend> {
                return std::make_unique<MockBackend>(load_mock_script(path / (t.task_id + ".json")));
              },
              false};
    }
    auto script = load_mock_script(path);
    return {[script](const AnnotationTrack&) -> std::unique_ptr<Backend> {
              return std::make_unique<MockBackend>(script);
            },
            false};
  }
  if (descriptor.starts_with("remote:")) {
    auto cfg = RemoteConfig::load(resolve(descriptor.substr(7)));
    return {[cfg](const AnnotationTrack&) -> std::unique_ptr<Backend> {
              return std::make_unique<RemoteBackend>(cfg);
            },
            true};
  }
  throw ConfigError("unknown backend descriptor '" + descriptor + "' (echo[:L], mock:<path>, remote:<path>)");
}

struct JudgeSpec {
  std::unique_ptr<Judge> judge;
  std::size_t parallelism = 1;
};

/// "oracle" or "remote:<config.json>" (config may add "prompt_file" and
/// "parallelism"). Verdicts are cached per (G, R, question).
inline JudgeSpec make_judge(const std::string& descriptor, const fs::path& base = {}) {
  if (descriptor == "oracle") return {std::make_unique<CachingJudge>(std::make_unique<OracleJudge>()), 1};
  if (descriptor.starts_with("remote:")) {
    fs::path path = descriptor.substr(7);
    if (path.is_relative() && !base.empty()) path = base / path;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("judge config " + path.string() + ": " + e.what());
    }
    std::string tmpl(kJudgePromptTemplate);
    if (j.contains("prompt_file")) {
      fs::path p = j["prompt_file"].get<std::string>();
      tmpl = load_prompt_template(p.is_relative() ? path.parent_path() / p : p);
    }
    const std::size_t par = j.value("parallelism", std::size_t{1});
    return {std::make_unique<CachingJudge>(
                std::make_unique<RemoteJudge>(RemoteConfig::from_json(j), std::move(tmpl))),
            std::max<std::size_t>(par, 1)};
  }
  throw ConfigError("unknown judge descriptor '" + descriptor + "' (oracle | remote:<path>)");
}

// ---------------------------------------------------------------------------
// Fixtures

inline AnnotationTrack make_track(std::string task_id, std::string video_id, TaskType type,
                                  std::string category, std::string prompt,
                                  const std::vector<std::string>& captions) {
  AnnotationTrack t{std::move(task_id), std::move(video_id), type, std::move(category),
                    std::move(prompt), {}};
  for (std::size_t i = 0; i < captions.size(); ++i)
    t.entries.push_back({static_cast<std::int64_t>(i), captions[i]});
  return t;
}

/// Three 10-second tasks, one per task type.
inline std::vector<AnnotationTrack> smoke_tracks() {
  std::vector<std::string> present, cumulative, future;
  for (int i = 0; i < 10; ++i) {
    present.push_back(i < 4 ? "chop the onions" : i < 7 ? "stir the soup" : "pour the soup into a bowl");
    cumulative.push_back(i < 3 ? "" : i < 6 ? "STOP" : "STOP, ONE WAY");
    future.push_back(i < 5 ? "the pedestrian will cross the street" : "the car will turn left");
  }
  return {
      make_track("smoke-cumulative", "video-ocr", TaskType::Cumulative, "ocr",
                 "List every sign text seen so far.", cumulative),
      make_track("smoke-future", "video-street", TaskType::Future, "navigation",
                 "What will happen next?", future),
      make_track("smoke-present", "video-kitchen", TaskType::Present, "cooking",
                 "What is the current cooking step?", present),
  };
}

/// One 60-second task whose caption changes every 5 seconds. Captions share
/// no content words, so a stale answer never earns partial credit.
inline AnnotationTrack tradeoff_track() {
  static const char* const scenes[] = {"red kite",     "blue bicycle", "green lamp",   "orange boat",
                                       "purple tent",  "yellow truck", "silver piano", "brown horse",
                                       "white clock",  "black guitar", "pink umbrella", "gray bridge"};
  std::vector<std::string> captions;
  for (int i = 0; i < 60; ++i) captions.push_back(scenes[i / 5]);
  return make_track("tradeoff", "video-tradeoff", TaskType::Present, "synthetic",
                    "Describe the current scene.", captions);
}

inline AnnotationTrack buffer_drop_track() {
  std::vector<std::string> captions;
  for (int i = 0; i < 10; ++i) captions.push_back("step " + std::to_string(i));
  return make_track("buffer-drop", "video-buffer", TaskType::Present, "synthetic",
                    "What is happening right now?", captions);
}

inline std::map<std::string, std::string> synthetic_sources(const std::vector<AnnotationTrack>& tracks) {
  std::map<std::string, std::string> out;
  for (const auto& t : tracks) out[t.video_id] = "synthetic:" + std::to_string(t.length());
  return out;
}

inline const std::vector<std::string>& fixture_kinds() {
  static const std::vector<std::string> kinds = {"smoke", "tradeoff", "buffer-drop"};
  return kinds;
}

inline int cmd_fixtures(const std::string& kind, const fs::path& out_dir, bool force, std::ostream& out,
                        std::ostream& err) {
  try {
    if (std::find(fixture_kinds().begin(), fixture_kinds().end(), kind) == fixture_kinds().end())
      throw ConfigError("unknown fixture kind '" + kind + "' (smoke|tradeoff|buffer-drop)");
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
      throw ConfigError(out_dir.string() + " is not empty (use --force to overwrite)");
    fs::create_directories(out_dir / "mocks");

    std::vector<AnnotationTrack> tracks;
    nlohmann::json run = {{"protocol", "async"}, {"clock", "virtual"}, {"camera_fps", 1.0},
                          {"camera_buffer_size", 600}, {"context_size", 64}, {"policy", "sw"},
                          {"backend", "echo"}};
    std::vector<std::pair<std::string, MockScript>> scripts;
    if (kind == "smoke") {
      tracks = smoke_tracks();
      for (const auto& t : tracks) scripts.emplace_back("mocks/" + t.task_id + ".json", make_echo_script(t));
    } else if (kind == "tradeoff") {
      tracks = {tradeoff_track()};
      run["backend"] = "echo:0.5";
      for (const char* l : {"0.5", "2", "5", "10"})
        scripts.emplace_back(std::string("mocks/latency_") + l + "/tradeoff.json",
                             make_echo_script(tracks[0], LatencyModel::constant(std::stod(l))));
    } else {
      tracks = {buffer_drop_track()};
      run["camera_buffer_size"] = 2;
      run["backend"] = "mock:mocks";
      scripts.emplace_back("mocks/buffer-drop.json",
                           make_echo_script(tracks[0], LatencyModel::constant(5.0)));
    }
    for (const auto& [rel, script] : scripts) write_file(out_dir / rel, script.to_json().dump(2) + "\n");
    write_file(out_dir / "annotations.json", serialize_annotations(tracks));
    nlohmann::json manifest = {{"annotations", {"annotations.json"}},
                               {"sources", synthetic_sources(tracks)},
                               {"out_dir", "runs"},
                               {"run", run}};
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    out << "wrote " << kind << " fixture (" << tracks.size() << " tracks) to " << out_dir.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// run

inline int cmd_run(const fs::path& manifest_path, const RunOverrides& overrides, std::ostream& out,
                   std::ostream& err) {
  SuiteManifest m;
  std::vector<AnnotationTrack> tracks;
  BackendSpec backend;
  try {
    m = load_manifest(manifest_path);
    apply_overrides(m, overrides);
    tracks = load_annotations(m.annotation_paths);
    backend = make_backend_spec(m.run.backend, m.base_dir);
    m.run.validate(backend.remote);
    for (const auto& t : tracks) {
      if (m.run.tasks.matches(t) && !m.sources.contains(t.video_id))
        throw ConfigError("no frame source for video '" + t.video_id + "'");
    }
    fs::create_directories(m.out_dir);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  }

  // Where logs land is not part of the run's identity; keep it out of the logs.
  nlohmann::json echoed = overrides.to_json();
  echoed.erase("out");
  const nlohmann::json echo = {{"manifest_digest", m.digest}, {"overrides", echoed}};
  nlohmann::json summary = {{"manifest", m.path.string()},
                            {"manifest_digest", m.digest},
                            {"overrides", overrides.to_json()},
                            {"config", m.run.echo()},
                            {"tasks", nlohmann::json::array()}};
  const auto started = std::chrono::steady_clock::now();
  std::size_t failed = 0;
  std::vector<ResponseLog> logs;
  try {
    logs = run_suite(tracks, m.sources, m.run, backend.factory, [&](const ResponseLog& log) {
      ResponseLog stamped = log;
      stamped.run_metadata["config_echo"] = echo;
      write_file(m.out_dir / (log.task_id + ".responses.json"), serialize_response_log(stamped));
      const bool bad = log.incomplete();
      failed += bad;
      nlohmann::json row = {{"task_id", log.task_id},
                            {"status", bad ? "incomplete" : "complete"},
                            {"responses", log.responses.size()},
                            {"frames_dropped", log.run_metadata.value("frames_dropped", 0)},
                            {"frames_emitted", log.run_metadata.value("frames_emitted", 0)},
                            {"cadence_violations", log.run_metadata.value("cadence_violations", 0)},
                            {"mean_latency", mean_latency(log)}};
      if (bad) row["error"] = log.run_metadata.value("error", std::string());
      summary["tasks"].push_back(row);
      out << (bad ? "FAIL " : "ok   ") << log.task_id << "  responses=" << log.responses.size()
          << "  dropped=" << log.run_metadata.value("frames_dropped", 0) << "\n";
    });
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  }
  summary["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  summary["failed_tasks"] = failed;
  write_file(m.out_dir / "run_summary.json", summary.dump(2) + "\n");
  out << logs.size() << " task(s), " << failed << " incomplete; logs in " << m.out_dir.string() << "\n";
  return failed ? 2 : 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  fs::path logs_dir;
  std::vector<fs::path> annotations;
  std::string judge = "oracle";
  std::string weighting = "uniform";
  std::string denominator = "as_paper";
  std::optional<fs::path> out_dir;
};

inline std::map<std::string, ResponseLog> load_log_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("log directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.ends_with(".responses.json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, ResponseLog> logs;
  for (const auto& f : files) {
    try {
      auto log = load_response_log(read_file(f));
      logs[log.task_id] = std::move(log);
    } catch (const Error& e) {
      throw SchemaError(f.string() + ": " + e.what());
    }
  }
  return logs;
}

inline int cmd_score(const ScoreArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const auto weighting = parse_weighting(args.weighting);
    if (!weighting) throw ConfigError("unknown weighting '" + args.weighting + "'");
    const auto denom = parse_consistency_denominator(args.denominator);
    if (!denom) throw ConfigError("unknown consistency denominator '" + args.denominator + "'");
    if (args.annotations.empty()) throw ConfigError("no annotation files given");
    const auto tracks = load_annotations(args.annotations);
    const auto logs = load_log_dir(args.logs_dir);

    std::vector<std::string> missing;
    std::set<std::string> annotated;
    for (const auto& t : tracks) {
      annotated.insert(t.task_id);
      if (!logs.contains(t.task_id)) missing.push_back(t.task_id);
    }
    if (!missing.empty()) {
      std::string ids;
      for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
      throw MissingLog("no response log for annotated task(s): " + ids);
    }
    for (const auto& [id, _] : logs)
      if (!annotated.contains(id)) err << "warning: orphan log for unannotated task '" << id << "'\n";

    auto judge = make_judge(args.judge, fs::current_path());
    const ScoringOptions opts{*weighting, *denom, judge.parallelism};
    const auto report = score_suite(tracks, logs, *judge.judge, opts);
    if (report.scoring_failures)
      err << "warning: " << report.scoring_failures << " timestep(s) could not be scored\n";

    const fs::path dir = args.out_dir.value_or(args.logs_dir);
    write_file(dir / "report.json", to_json(report).dump(2) + "\n");
    const std::string table = render_table(report);
    write_file(dir / "report.md", table);
    out << table;
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// validate

inline int cmd_validate(const std::vector<fs::path>& paths, std::ostream& out, std::ostream& err) {
  int status = 0;
  for (const auto& p : paths) {
    try {
      std::ifstream probe(p, std::ios::binary);
      if (!probe || fs::is_directory(p)) throw ConfigError("cannot read file (I/O error)");
      const std::string text = read_file(p);
      const auto doc = nlohmann::json::parse(text, nullptr, false);
      if (!doc.is_discarded() && doc.is_object() && doc.contains("responses")) {
        const auto log = load_response_log(text);
        out << "ok      " << p.string() << ": response log, " << log.responses.size()
            << " responses\n";
      } else {
        const auto tracks = validate_annotation_file(text);
        out << "ok      " << p.string() << ": " << tracks.size() << " annotation track(s)\n";
      }
    } catch (const std::exception& e) {
      err << "invalid " << p.string() << ": " << e.what() << "\n";
      status = 1;
    }
  }
  return status;
}

}  // namespace streameval
