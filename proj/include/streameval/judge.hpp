#pragma once

// Judges compare a ground-truth caption with a model response and return a
// binary match plus a 0-3 rubric tier. The remote judge fills the evaluator
// prompt and parses the model's JSON verdict; the oracle judge is a
// deterministic token-overlap stand-in for tests and offline scoring.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "streameval/errors.hpp"
#include "streameval/remote.hpp"

namespace streameval {

struct JudgeVerdict {
  bool pred = false;
  int rubric = 0;

  /// Tier 3 implies "yes"; tiers 0 and 1 imply "no"; tier 2 may be either.
  bool coupled() const {
    if (rubric < 0 || rubric > 3) return false;
    if (rubric == 3) return pred;
    if (rubric <= 1) return !pred;
    return true;
  }

  friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string id() const = 0;
  virtual JudgeVerdict judge(const std::string& ground_truth, const std::string& response,
                             const std::string& question) = 0;
};

// ---------------------------------------------------------------------------
// Prompt template

inline constexpr std::string_view kJudgePromptTemplate =
    R"(You are the evaluator.
You will receive:
1) A user question
2) A model predicted response
3) A ground truth answer
Your task is to compare the model’s response with the ground truth and decide if they match meaningfully.

########### Instruction on how to evaluate ###########

###
Your Output Format:

Return only a JSON dictionary with the following keys:

*  'pred': "yes" if the model response meaningfully matches the ground truth, "no" otherwise.
* 'score': an integer (not a string) between 0 and 3, based on how correct the model response is.

Do not provide any explanation, notes, or text outside the JSON output.
Example output:
{'pred': 'yes', 'score': 2}


###
Evaluation Rules:

Binary Match (pred key)

* Focus on meaningful equivalence between model response and ground truth.
* Accept synonyms, paraphrases, or reworded answers if meaning is preserved.
* Lists are acceptable if items are semantically aligned or paraphrased.
* All responses that qualify for Tier 3 (perfect match) are automatically labeled 'yes'.
* All responses that qualify for Tier 0 or 1 are automatically labeled 'no'.



Rubric Score (score key)

* Tier 0: No meaningful match.
* Tier 1: Some overlap, but major errors or missing key parts.
* Tier 2: Mostly correct with small mistakes or omissions.
* Tier 3: Perfect or near-perfect match for key elements in the question.


###

Specific Grading Guidelines

* A response is considered a match if it includes the key elements asked in the question. For named entities, different spellings are acceptable.
    * Example: "Valley Tavern" is an acceptable match for ground truth "A beer garden named ‘The Valley Tavern’."
    * For general objects, synonyms are acceptable. Example: "shorts" is acceptable for "a pair of gray shorts" when the question only asks "what object."
* If the model response is conceptually related to the ground truth, give partial credit.
    * Example: "backpack" instead of "handbag," "bottle of green tea" instead of "bottle of beer," or "cloth" instead of "t-shirt."
* When the question gives specific choices (e.g., "Crosswalk," "Sidewalk," or "Motorway"), the model response must exactly match one of the choices for a tier 3 score.
    * Minor spelling differences are fine.
    * A synonym not in the list (e.g., "Pavement" for "Sidewalk") gets tier 2.
    * Irrelevant responses get tier 0.
* For questions asking about an activity or cooking step (without choices):
    * Include all key elements : tier 3.
    * Miss some elements : tier 2.
    * Only vaguely capture a key element : tier 1.
    * Identify key elements based on the question.
        * Example: If the question asks for the latest cooking step and ground truth is "Gather the ingredients and lay them out on the counter", then:
            * Response "Collect the ingredients" : tier 3.
            * Response "The person stops pointing at the ingredients and turns to speak to the camera" : tier 1.
        * Example: If the question asks for the latest cooking step and ground truth is "Mix beans and olive oil well.", then:
            * Response "Add corn into the mixture." : tier 0.
            * Response "Add black beans into the mixture." : tier 1.
            * Response "Combine well." : tier 2.
            * Response "Blend black beans and oil thoroughly." : tier 3.
* When the question asks about a step from a given list of steps (e.g., for cooking or for computer tasks):
    * Model response exactly match ground truth or is its paraphrase capturing key element: tier 3.
    * Model response match ground truth but miss one important element: tier 2.
    * Irrelevant responses get tier 0.
    * For these cases do not assign score 1.
    * Example: Ground truth "Click the Safari icon in the Dock to open Safari."
        * Response "Open Safari." : tier 3.
        * Response "Click on the icon in the Dock." : tier 2.
        * Response "Click on the button." : tier 0.
* If the model response misses an important part of the ground truth, give partial credit.
    * Example: Ground truth "bowl of rice."
        * Response "bowl." : tier 1.
        * Response "rice." : tier 2.
* Empty strings, "None," or "NA" (and similar responses) are considered a match.
* When the ground truth is a list and order is not important, grade based on the intersection-over-union (IOU) of items:
    * All items match : tier 3.
    * Most items match (1>IOU>0.8) : tier 2.
    * Few items match (0<IOU<0.8) : tier 1.
    * No match : tier 0.
    * Lists can be comma-separated, space-separated, or multiline.
    * Example: Ground truth "Bowl of rice, beer bottle." and response "bowl, carrot" : tier 1.
* When the ground truth is a list and order is important (e.g., question asks for chronological order):
    * All items match with the same order as ground truth : tier 3.
    * All items match with the ground truth but order is different : tier 2.
    * Some items match with the ground truth : tier 1.
    * No match : tier 0.
* For transcription questions:
    * Tier 3: Exact match (minor character-level differences acceptable).
    * Tier 2: Mostly correct; less than 20% of words missing or changed.
    * Tier 1: Partially correct; more than 20% of words missing, changed, or added.
    * Tier 0: Not following the ground truth.
* For counting questions:
    * Exact number match : tier 3 (numeric or word form both acceptable).
    * Format matches but count is wrong : tier 1.
    * Format also incorrect : tier 0.

########### Data for evaluation ###########

Please evaluate the following video-based question-answer pair:

Question:
<question>

Ground truth answer:
<gt_answer>

Model predicted response:
<model_response>
)";

inline std::string render_judge_prompt(std::string_view tmpl, std::string_view question,
                                       std::string_view ground_truth, std::string_view response) {
  std::string out(tmpl);
  auto replace = [&](std::string_view slot, std::string_view value) {
    const auto pos = out.find(slot);
    if (pos == std::string::npos) throw ConfigError("judge prompt template lacks " + std::string(slot));
    out.replace(pos, slot.size(), value);
  };
  // Substitute in order so text inserted earlier is never rescanned.
  replace("<model_response>", response);
  replace("<gt_answer>", ground_truth);
  replace("<question>", question);
  return out;
}

/// Parses {'pred': 'yes'|'no', 'score': 0..3} from a judge reply. Single
/// quotes (as in the prompt's own example) are accepted.
inline JudgeVerdict parse_verdict(std::string_view reply) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open)
    throw MalformedVerdict("no JSON object in judge reply");
  std::string body(reply.substr(open, close - open + 1));
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) {
    std::replace(body.begin(), body.end(), '\'', '"');
    j = nlohmann::json::parse(body, nullptr, false);
  }
  if (j.is_discarded() || !j.is_object()) throw MalformedVerdict("judge reply is not a JSON object");
  if (!j.contains("pred") || !j["pred"].is_string())
    throw MalformedVerdict("judge reply lacks a string 'pred'");
  if (!j.contains("score") || !j["score"].is_number_integer())
    throw MalformedVerdict("judge reply lacks an integer 'score'");
  std::string pred = j["pred"].get<std::string>();
  std::transform(pred.begin(), pred.end(), pred.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (pred != "yes" && pred != "no") throw MalformedVerdict("pred must be 'yes' or 'no'");
  JudgeVerdict v{pred == "yes", j["score"].get<int>()};
  if (v.rubric < 0 || v.rubric > 3) throw MalformedVerdict("score outside 0..3");
  if (!v.coupled())
    throw MalformedVerdict("pred '" + pred + "' contradicts score " + std::to_string(v.rubric));
  return v;
}

// ---------------------------------------------------------------------------
// Oracle judge

/// Lowercase, strip punctuation, split on whitespace.
inline std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline bool is_stopword(std::string_view w) {
  static const std::set<std::string_view> kStopwords = {
      "a",  "an", "the", "of",   "and", "or",   "to", "in",  "on",   "at",  "for",
      "with", "by", "from", "is", "are", "was", "were", "be", "it", "its", "this",
      "that", "into", "as"};
  return kStopwords.contains(w);
}

inline std::set<std::string> content_tokens(std::string_view text) {
  std::set<std::string> out;
  for (auto& t : normalize_tokens(text))
    if (!is_stopword(t)) out.insert(std::move(t));
  return out;
}

/// |G ∩ R| / max(|G|, |R|) over content-token sets; 0 when both are empty.
inline double token_overlap(std::string_view ground_truth, std::string_view response) {
  const auto g = content_tokens(ground_truth);
  const auto r = content_tokens(response);
  const std::size_t denom = std::max(g.size(), r.size());
  if (denom == 0) return 0.0;
  std::size_t common = 0;
  for (const auto& t : r) common += g.contains(t);
  return static_cast<double>(common) / static_cast<double>(denom);
}

class OracleJudge final : public Judge {
 public:
  std::string id() const override { return "oracle"; }

  JudgeVerdict judge(const std::string& ground_truth, const std::string& response,
                     const std::string&) override {
    const auto g = normalize_tokens(ground_truth);
    const auto r = normalize_tokens(response);
    if (g == r) return {true, 3};  // includes both empty
    const double overlap = token_overlap(ground_truth, response);
    if (overlap >= 0.5) return {true, 2};
    if (overlap > 0.0) return {false, 1};
    return {false, 0};
  }
};

// ---------------------------------------------------------------------------
// Remote judge

class RemoteJudge final : public Judge {
 public:
  explicit RemoteJudge(RemoteConfig cfg, std::string prompt_template = std::string(kJudgePromptTemplate),
                       ChatClient::Sleeper sleeper = {})
      : client_(std::move(cfg), std::move(sleeper)), template_(std::move(prompt_template)) {}

  std::string id() const override { return "remote:" + client_.config().model; }

  JudgeVerdict judge(const std::string& ground_truth, const std::string& response,
                     const std::string& question) override {
    const auto prompt = render_judge_prompt(template_, question, ground_truth, response);
    std::string reply;
    try {
      reply = client_.complete(build_text_request(client_.config(), prompt));
    } catch (const MalformedReply& e) {
      throw MalformedVerdict(e.what());
    } catch (const Error& e) {
      throw JudgeUnavailable(e.what());
    }
    return parse_verdict(reply);
  }

 private:
  ChatClient client_;
  std::string template_;
};

/// Memoizes verdicts by (ground truth, response, question).
class CachingJudge final : public Judge {
 public:
  explicit CachingJudge(std::unique_ptr<Judge> inner) : inner_(std::move(inner)) {}

  std::string id() const override { return inner_->id(); }

  JudgeVerdict judge(const std::string& ground_truth, const std::string& response,
                     const std::string& question) override {
    auto key = std::make_tuple(ground_truth, response, question);
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) {
        ++hits_;
        return it->second;
      }
    }
    const JudgeVerdict v = inner_->judge(ground_truth, response, question);
    std::lock_guard lock(mu_);
    cache_.emplace(std::move(key), v);
    return v;
  }

  std::size_t hits() const {
    std::lock_guard lock(mu_);
    return hits_;
  }

 private:
  std::unique_ptr<Judge> inner_;
  mutable std::mutex mu_;
  std::map<std::tuple<std::string, std::string, std::string>, JudgeVerdict> cache_;
  std::size_t hits_ = 0;
};

inline std::string load_prompt_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read judge prompt template: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace streameval
