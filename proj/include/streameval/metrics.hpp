#pragma once

// Time-aware metrics over response logs.
//
//   A_t = (1/N_t) * sum_i Judge(G_i, R_i)                    per-task accuracy
//   A   = mean_t A_t                                         mean average accuracy
//   C_t = (1/N_t) * sum_{i=1}^{N_t-1} (1 - D(R_i,R_{i+1}) + D(G_i,G_{i+1}))
//   C   = mean_t clip(C_t, 0, 1)                             mean average consistency
//
// D is one minus the longest common contiguous substring length over the
// longer string's length. C_t keeps the 1/N_t prefactor over N_t-1 terms
// unless ConsistencyDenominator::NMinusOne is selected.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "streameval/core.hpp"
#include "streameval/errors.hpp"
#include "streameval/judge.hpp"

namespace streameval {

// ---------------------------------------------------------------------------
// Extrapolation

enum class Origin { Direct, Carried, Empty };

inline std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::Direct: return "direct";
    case Origin::Carried: return "carried";
    case Origin::Empty: return "empty";
  }
  return "?";
}

struct Timeline {
  std::string task_id;
  std::vector<std::string> texts;
  std::vector<Origin> origin;

  std::size_t size() const { return texts.size(); }
};

/// R_i = latest non-pause response covering a timestep <= i, or "" if none.
inline Timeline extrapolate(const ResponseLog& log, std::size_t n) {
  std::vector<std::optional<std::string>> direct(n);
  for (const auto& r : log.responses) {
    if (r.is_pause || r.covered_timestep < 0) continue;
    const auto t = static_cast<std::size_t>(r.covered_timestep);
    if (t < n) direct[t] = r.text;  // later responses for the same second win
  }
  Timeline tl{log.task_id, {}, {}};
  tl.texts.reserve(n);
  std::optional<std::string> carry;
  for (std::size_t i = 0; i < n; ++i) {
    if (direct[i]) {
      carry = direct[i];
      tl.texts.push_back(*carry);
      tl.origin.push_back(Origin::Direct);
    } else if (carry) {
      tl.texts.push_back(*carry);
      tl.origin.push_back(Origin::Carried);
    } else {
      tl.texts.emplace_back();
      tl.origin.push_back(Origin::Empty);
    }
  }
  return tl;
}

/// One response per timestep carrying the timeline's text.
inline ResponseLog timeline_as_log(const Timeline& tl) {
  ResponseLog log;
  log.task_id = tl.task_id;
  for (std::size_t i = 0; i < tl.size(); ++i)
    log.responses.push_back({static_cast<double>(i), static_cast<std::int64_t>(i), tl.texts[i], false, 0.0});
  return log;
}

// ---------------------------------------------------------------------------
// Text distance

/// Decodes UTF-8 into code points; invalid bytes map to themselves.
inline std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t extra = lead >= 0xF0 ? 3 : lead >= 0xE0 ? 2 : lead >= 0xC0 ? 1 : 0;
    char32_t cp = lead;
    if (extra > 0 && i + extra < s.size()) {
      char32_t acc = lead & (0x3F >> extra);
      for (std::size_t k = 1; k <= extra; ++k) {
        const auto cont = static_cast<unsigned char>(s[i + k]);
        if ((cont & 0xC0) != 0x80) {
          extra = 0;
          break;
        }
        acc = (acc << 6) | (cont & 0x3F);
      }
      if (extra > 0) cp = acc;
    } else {
      extra = 0;
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

/// Length of the longest common contiguous substring, in code points.
inline std::size_t longest_common_substring(std::string_view a, std::string_view b) {
  const auto x = decode_utf8(a);
  const auto y = decode_utf8(b);
  std::vector<std::size_t> prev(y.size() + 1, 0), cur(y.size() + 1, 0);
  std::size_t best = 0;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j) {
      cur[j] = x[i - 1] == y[j - 1] ? prev[j - 1] + 1 : 0;
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

/// D(a,b) = 1 - LCSubstr(a,b) / max(|a|,|b|); D("","") = 0.
inline double lcs_distance(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(decode_utf8(a).size(), decode_utf8(b).size());
  if (longest == 0) return 0.0;
  return 1.0 - static_cast<double>(longest_common_substring(a, b)) / static_cast<double>(longest);
}

// ---------------------------------------------------------------------------
// Consistency

enum class ConsistencyDenominator { AsPaper, NMinusOne };

inline std::string_view to_string(ConsistencyDenominator d) {
  return d == ConsistencyDenominator::AsPaper ? "as_paper" : "n_minus_1";
}

inline std::optional<ConsistencyDenominator> parse_consistency_denominator(std::string_view s) {
  if (s == "as_paper") return ConsistencyDenominator::AsPaper;
  if (s == "n_minus_1") return ConsistencyDenominator::NMinusOne;
  return std::nullopt;
}

struct Consistency {
  double raw = 0.0;
  double clipped = 0.0;
};

inline Consistency consistency(const Timeline& tl, const AnnotationTrack& track,
                               ConsistencyDenominator denom = ConsistencyDenominator::AsPaper) {
  const std::size_t n = track.length();
  if (n < 2) throw DegenerateTrack("track '" + track.task_id + "' has fewer than 2 timesteps");
  if (tl.size() != n) throw DegenerateTrack("timeline length does not match track '" + track.task_id + "'");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    sum += 1.0 - lcs_distance(tl.texts[i], tl.texts[i + 1]) +
           lcs_distance(track.caption_at(i), track.caption_at(i + 1));
  }
  const double d = denom == ConsistencyDenominator::AsPaper ? static_cast<double>(n)
                                                            : static_cast<double>(n - 1);
  const double raw = sum / d;
  return {raw, std::clamp(raw, 0.0, 1.0)};
}

// ---------------------------------------------------------------------------
// Accuracy

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t scored = 0;
  std::size_t failures = 0;  // timesteps whose verdict stayed malformed
  std::vector<std::optional<JudgeVerdict>> verdicts;
  std::array<std::size_t, 4> rubric_histogram{};
};

namespace detail {

inline std::optional<JudgeVerdict> judge_with_retry(Judge& judge, const std::string& gt,
                                                    const std::string& r, const std::string& q) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      const JudgeVerdict v = judge.judge(gt, r, q);
      if (!v.coupled()) throw MalformedVerdict("verdict violates rubric/pred coupling");
      return v;
    } catch (const MalformedVerdict&) {
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Mean binary verdict over the scored timesteps. Judge calls may run on up
/// to `parallelism` threads; results are collected in timestep order.
inline AccuracyResult accuracy(const Timeline& tl, const AnnotationTrack& track, Judge& judge,
                               std::size_t parallelism = 1) {
  const std::size_t n = track.length();
  if (n == 0) throw DegenerateTrack("track '" + track.task_id + "' is empty");
  if (tl.size() != n) throw DegenerateTrack("timeline length does not match track '" + track.task_id + "'");
  AccuracyResult out;
  out.verdicts.resize(n);
  auto score = [&](std::size_t i) {
    return detail::judge_with_retry(judge, track.caption_at(i), tl.texts[i], track.prompt);
  };
  if (parallelism <= 1) {
    for (std::size_t i = 0; i < n; ++i) out.verdicts[i] = score(i);
  } else {
    for (std::size_t base = 0; base < n; base += parallelism) {
      std::vector<std::future<std::optional<JudgeVerdict>>> batch;
      for (std::size_t i = base; i < std::min(n, base + parallelism); ++i)
        batch.push_back(std::async(std::launch::async, score, i));
      for (std::size_t k = 0; k < batch.size(); ++k) out.verdicts[base + k] = batch[k].get();
    }
  }
  std::size_t yes = 0;
  for (const auto& v : out.verdicts) {
    if (!v) {
      ++out.failures;
      continue;
    }
    ++out.scored;
    yes += v->pred;
    ++out.rubric_histogram[static_cast<std::size_t>(v->rubric)];
  }
  out.accuracy = out.scored ? static_cast<double>(yes) / static_cast<double>(out.scored) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Latency

inline double mean_latency(const ResponseLog& log) {
  if (log.responses.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : log.responses) sum += r.latency;  // pauses count
  return sum / static_cast<double>(log.responses.size());
}

struct LatencyStats {
  std::map<std::string, double> per_task;
  std::map<TaskType, double> per_type;  // uniform mean of per-task means
};

inline LatencyStats latency_stats(const std::vector<ResponseLog>& logs,
                                  const std::map<std::string, TaskType>& types = {}) {
  if (logs.empty()) throw ConfigError("latency_stats needs at least one log");
  LatencyStats out;
  std::map<TaskType, std::pair<double, std::size_t>> acc;
  for (const auto& log : logs) {
    const double m = mean_latency(log);
    out.per_task[log.task_id] = m;
    if (auto it = types.find(log.task_id); it != types.end()) {
      acc[it->second].first += m;
      ++acc[it->second].second;
    }
  }
  for (const auto& [t, sn] : acc) out.per_type[t] = sn.first / static_cast<double>(sn.second);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Weighting { Uniform, InverseCategory, InverseTask, InverseBoth };

inline constexpr Weighting kAllWeightings[] = {Weighting::Uniform, Weighting::InverseCategory,
                                               Weighting::InverseTask, Weighting::InverseBoth};

inline std::string_view to_string(Weighting w) {
  switch (w) {
    case Weighting::Uniform: return "uniform";
    case Weighting::InverseCategory: return "inverse_category";
    case Weighting::InverseTask: return "inverse_task";
    case Weighting::InverseBoth: return "inverse_both";
  }
  return "?";
}

inline std::optional<Weighting> parse_weighting(std::string_view s) {
  for (auto w : kAllWeightings)
    if (to_string(w) == s) return w;
  return std::nullopt;
}

struct TaskMeta {
  TaskType task_type = TaskType::Present;
  std::string category;
};

struct TaskScores {
  std::string task_id;
  std::size_t timesteps = 0;
  double accuracy = 0.0;
  double consistency_raw = 0.0;
  double consistency = 0.0;  // clipped
  double mean_latency = 0.0;
  std::size_t responses = 0;
  std::size_t scoring_failures = 0;
  std::array<std::size_t, 4> rubric_histogram{};
  bool incomplete = false;
};

struct MetricsReport {
  struct TaskRow {
    TaskScores scores;
    TaskMeta meta;
  };
  std::vector<TaskRow> per_task;  // sorted by task_id
  std::size_t K = 0;
  double accuracy = 0.0;     // uniform mean of A_t
  double consistency = 0.0;  // uniform mean of clipped C_t
  std::map<TaskType, std::optional<double>> accuracy_by_type;
  std::map<TaskType, std::optional<double>> consistency_by_type;
  std::map<TaskType, std::optional<double>> latency_by_type;
  std::map<Weighting, double> weighted_accuracy;
  Weighting weighting = Weighting::Uniform;
  ConsistencyDenominator denominator = ConsistencyDenominator::AsPaper;
  std::string judge;
  std::size_t scoring_failures = 0;
};

/// Normalized per-task weights for a weighting scheme.
inline std::vector<double> task_weights(const std::vector<TaskMeta>& meta, Weighting w) {
  std::map<std::string, std::size_t> per_category;
  std::map<TaskType, std::size_t> per_type;
  for (const auto& m : meta) {
    ++per_category[m.category];
    ++per_type[m.task_type];
  }
  std::vector<double> weights;
  double total = 0.0;
  for (const auto& m : meta) {
    double x = 1.0;
    if (w == Weighting::InverseCategory || w == Weighting::InverseBoth)
      x /= static_cast<double>(per_category[m.category]);
    if (w == Weighting::InverseTask || w == Weighting::InverseBoth)
      x /= static_cast<double>(per_type[m.task_type]);
    weights.push_back(x);
    total += x;
  }
  for (auto& x : weights) x /= total;
  return weights;
}

inline MetricsReport aggregate(std::vector<TaskScores> scores,
                               const std::map<std::string, TaskMeta>& meta,
                               Weighting weighting = Weighting::Uniform) {
  std::sort(scores.begin(), scores.end(),
            [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
  MetricsReport rep;
  rep.weighting = weighting;
  rep.K = scores.size();
  std::vector<TaskMeta> metas;
  for (auto& s : scores) {
    const auto it = meta.find(s.task_id);
    if (it == meta.end()) throw MissingMetadata("no task metadata for '" + s.task_id + "'");
    metas.push_back(it->second);
    rep.scoring_failures += s.scoring_failures;
    rep.per_task.push_back({std::move(s), it->second});
  }
  for (auto t : kAllTaskTypes) {
    rep.accuracy_by_type[t] = std::nullopt;
    rep.consistency_by_type[t] = std::nullopt;
    rep.latency_by_type[t] = std::nullopt;
  }
  if (rep.per_task.empty()) {
    for (auto w : kAllWeightings) rep.weighted_accuracy[w] = 0.0;
    return rep;
  }
  double a = 0.0, c = 0.0;
  for (const auto& row : rep.per_task) {
    a += row.scores.accuracy;
    c += row.scores.consistency;
  }
  rep.accuracy = a / static_cast<double>(rep.K);
  rep.consistency = c / static_cast<double>(rep.K);
  for (auto t : kAllTaskTypes) {
    double sa = 0.0, sc = 0.0, sl = 0.0;
    std::size_t n = 0;
    for (const auto& row : rep.per_task) {
      if (row.meta.task_type != t) continue;
      sa += row.scores.accuracy;
      sc += row.scores.consistency;
      sl += row.scores.mean_latency;
      ++n;
    }
    if (n == 0) continue;
    rep.accuracy_by_type[t] = sa / static_cast<double>(n);
    rep.consistency_by_type[t] = sc / static_cast<double>(n);
    rep.latency_by_type[t] = sl / static_cast<double>(n);
  }
  for (auto w : kAllWeightings) {
    if (w == Weighting::Uniform) {
      rep.weighted_accuracy[w] = rep.accuracy;
      continue;
    }
    const auto weights = task_weights(metas, w);
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) sum += weights[i] * rep.per_task[i].scores.accuracy;
    rep.weighted_accuracy[w] = sum;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Scoring a run

struct ScoringOptions {
  Weighting weighting = Weighting::Uniform;
  ConsistencyDenominator denominator = ConsistencyDenominator::AsPaper;
  std::size_t judge_parallelism = 1;
};

inline TaskScores score_task(const AnnotationTrack& track, const ResponseLog& log, Judge& judge,
                             const ScoringOptions& opts = {}) {
  const Timeline tl = extrapolate(log, track.length());
  const AccuracyResult acc = accuracy(tl, track, judge, opts.judge_parallelism);
  TaskScores s;
  s.task_id = track.task_id;
  s.timesteps = track.length();
  s.accuracy = acc.accuracy;
  s.scoring_failures = acc.failures;
  s.rubric_histogram = acc.rubric_histogram;
  if (track.length() >= 2) {
    const auto c = consistency(tl, track, opts.denominator);
    s.consistency_raw = c.raw;
    s.consistency = c.clipped;
  } else {
    s.consistency_raw = s.consistency = 1.0;  // nothing can change within one second
  }
  s.mean_latency = mean_latency(log);
  s.responses = log.responses.size();
  s.incomplete = log.incomplete();
  return s;
}

/// Scores every track against its log (matched by task_id).
inline MetricsReport score_suite(const std::vector<AnnotationTrack>& tracks,
                                 const std::map<std::string, ResponseLog>& logs, Judge& judge,
                                 const ScoringOptions& opts = {}) {
  std::vector<TaskScores> scores;
  std::map<std::string, TaskMeta> meta;
  for (const auto& t : tracks) {
    const auto it = logs.find(t.task_id);
    if (it == logs.end()) continue;
    scores.push_back(score_task(t, it->second, judge, opts));
    meta[t.task_id] = {t.task_type, t.category};
  }
  auto rep = aggregate(std::move(scores), meta, opts.weighting);
  rep.denominator = opts.denominator;
  rep.judge = judge.id();
  return rep;
}

// ---------------------------------------------------------------------------
// Rendering

/// Percent with one decimal, e.g. 0.9417 -> "94.2".
inline std::string percent(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << fraction * 100.0;
  return os.str();
}

inline std::string fixed3(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << x;
  return os.str();
}

inline nlohmann::json to_json(const MetricsReport& rep) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) -> json { return v ? json(*v) : json(nullptr); };
  auto opt_pct = [](const std::optional<double>& v) -> json {
    return v ? json(percent(*v)) : json(nullptr);
  };
  json tasks = json::array();
  for (const auto& row : rep.per_task) {
    const auto& s = row.scores;
    tasks.push_back({{"task_id", s.task_id},
                     {"task_type", to_string(row.meta.task_type)},
                     {"category", row.meta.category},
                     {"timesteps", s.timesteps},
                     {"responses", s.responses},
                     {"accuracy", s.accuracy},
                     {"accuracy_pct", percent(s.accuracy)},
                     {"consistency_raw", s.consistency_raw},
                     {"consistency", s.consistency},
                     {"consistency_pct", percent(s.consistency)},
                     {"mean_latency", s.mean_latency},
                     {"scoring_failures", s.scoring_failures},
                     {"rubric_histogram", s.rubric_histogram},
                     {"incomplete", s.incomplete}});
  }
  json by_type = json::object();
  for (auto t : kAllTaskTypes) {
    by_type[std::string(to_string(t))] = {{"accuracy", opt(rep.accuracy_by_type.at(t))},
                                          {"accuracy_pct", opt_pct(rep.accuracy_by_type.at(t))},
                                          {"consistency", opt(rep.consistency_by_type.at(t))},
                                          {"mean_latency", opt(rep.latency_by_type.at(t))}};
  }
  json weighted = json::object();
  for (const auto& [w, v] : rep.weighted_accuracy) weighted[std::string(to_string(w))] = v;
  return {{"K", rep.K},
          {"judge", rep.judge},
          {"weighting", to_string(rep.weighting)},
          {"consistency_denominator", to_string(rep.denominator)},
          {"overall",
           {{"accuracy", rep.accuracy},
            {"accuracy_pct", percent(rep.accuracy)},
            {"consistency", rep.consistency},
            {"consistency_pct", percent(rep.consistency)},
            {"weighted_accuracy", rep.weighted_accuracy.count(rep.weighting)
                                      ? json(rep.weighted_accuracy.at(rep.weighting))
                                      : json(rep.accuracy)}}},
          {"by_task_type", by_type},
          {"reweighted_accuracy", weighted},
          {"scoring_failures", rep.scoring_failures},
          {"tasks", tasks}};
}

/// Markdown tables: a summary row in Present / Cumulative / Future / Overall /
/// Consistency layout, then one row per task.
inline std::string render_table(const MetricsReport& rep) {
  std::ostringstream os;
  auto cell = [](const std::optional<double>& v) { return v ? percent(*v) : std::string("-"); };
  os << "| Weighting | Present | Cumulative | Future | Overall | Consistency |\n";
  os << "|---|---:|---:|---:|---:|---:|\n";
  os << "| uniform | " << cell(rep.accuracy_by_type.at(TaskType::Present)) << " | "
     << cell(rep.accuracy_by_type.at(TaskType::Cumulative)) << " | "
     << cell(rep.accuracy_by_type.at(TaskType::Future)) << " | " << percent(rep.accuracy) << " | "
     << percent(rep.consistency) << " |\n";
  if (rep.weighting != Weighting::Uniform) {
    os << "| " << to_string(rep.weighting) << " | - | - | - | "
       << percent(rep.weighted_accuracy.at(rep.weighting)) << " | - |\n";
  }
  os << "\n";
  os << "| Task | Type | Category | Accuracy | Consistency | Latency (s) |\n";
  os << "|---|---|---|---:|---:|---:|\n";
  for (const auto& row : rep.per_task) {
    os << "| " << row.scores.task_id << (row.scores.incomplete ? " (incomplete)" : "") << " | "
       << to_string(row.meta.task_type) << " | " << row.meta.category << " | "
       << percent(row.scores.accuracy) << " | " << percent(row.scores.consistency) << " | "
       << fixed3(row.scores.mean_latency) << " |\n";
  }
  os << "\nK = " << rep.K << ", judge = " << rep.judge
     << ", consistency denominator = " << to_string(rep.denominator);
  if (rep.scoring_failures) os << ", scoring failures = " << rep.scoring_failures;
  os << "\n";
  return os.str();
}

}  // namespace streameval
