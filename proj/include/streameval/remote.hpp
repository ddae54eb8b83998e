#pragma once

// OpenAI-style chat-completions client, used by the remote model backend and
// the remote judge.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "streameval/backend.hpp"
#include "streameval/errors.hpp"

namespace streameval {

struct RemoteConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 2;
  double backoff_initial_s = 0.5;
  double backoff_factor = 2.0;
  std::size_t max_tokens = 256;

  static RemoteConfig from_json(const nlohmann::json& j) {
    RemoteConfig c;
    try {
      c.base_url = j.at("base_url").get<std::string>();
      c.model = j.at("model").get<std::string>();
      c.api_key_env = j.value("api_key_env", c.api_key_env);
      c.timeout_s = j.value("timeout_s", c.timeout_s);
      c.max_retries = j.value("max_retries", c.max_retries);
      c.backoff_initial_s = j.value("backoff_initial_s", c.backoff_initial_s);
      c.backoff_factor = j.value("backoff_factor", c.backoff_factor);
      c.max_tokens = j.value("max_tokens", c.max_tokens);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed remote config: ") + e.what());
    }
    if (c.timeout_s <= 0.0) throw ConfigError("remote timeout_s must be > 0");
    if (c.max_retries < 0) throw ConfigError("remote max_retries must be >= 0");
    return c;
  }

  static RemoteConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read remote config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      return from_json(nlohmann::json::parse(ss.str()));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("remote config " + path.string() + ": " + e.what());
    }
  }
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

inline SplitUrl split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw ConfigError("base_url needs a scheme: " + std::string(url));
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) out.path = std::string(url.substr(path_start));
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

inline std::string sniff_mime(const Bytes& b) {
  if (b.size() >= 8 && b[0] == 0x89 && b[1] == 'P' && b[2] == 'N' && b[3] == 'G') return "image/png";
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return "image/jpeg";
  return "application/octet-stream";
}

inline std::string data_url(const Frame& f) {
  static const Bytes kEmpty;
  const Bytes& bytes = f.payload ? *f.payload : kEmpty;
  return "data:" + sniff_mime(bytes) + ";base64," +
         httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

}  // namespace detail

/// Request body for one inference: the task prompt followed by the context
/// frames as image attachments, in capture order.
inline nlohmann::json build_chat_request(const RemoteConfig& cfg, std::string_view prompt,
                                         const std::vector<Frame>& frames) {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", prompt}});
  for (const auto& f : frames)
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", detail::data_url(f)}}}});
  return {{"model", cfg.model},
          {"max_tokens", cfg.max_tokens},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
}

inline nlohmann::json build_text_request(const RemoteConfig& cfg, std::string_view text) {
  return {{"model", cfg.model},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", text}}})}};
}

/// Extracts choices[0].message.content (string or array of text parts).
inline std::string extract_reply_text(std::string_view body) {
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw MalformedReply("reply is not JSON");
  }
  if (!reply.is_object() || !reply.contains("choices") || !reply["choices"].is_array() ||
      reply["choices"].empty())
    throw MalformedReply("reply has no choices");
  const auto& msg = reply["choices"][0].value("message", nlohmann::json::object());
  if (!msg.contains("content")) throw MalformedReply("reply choice has no message content");
  const auto& content = msg["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string text;
    bool any = false;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" && part.contains("text")) {
        text += part["text"].get<std::string>();
        any = true;
      }
    }
    if (any) return text;
  }
  throw MalformedReply("reply content has no text");
}

class ChatClient {
 public:
  using Sleeper = std::function<void(double)>;

  explicit ChatClient(RemoteConfig cfg, Sleeper sleeper = {})
      : cfg_(std::move(cfg)), url_(detail::split_url(cfg_.base_url)), sleeper_(std::move(sleeper)) {
    if (!sleeper_)
      sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }

  const RemoteConfig& config() const { return cfg_; }
  std::size_t attempts() const { return attempts_; }

  /// POSTs a chat-completions body and returns the reply text. Connection
  /// failures, 429 and 5xx are retried with exponential backoff.
  std::string complete(const nlohmann::json& body) {
    httplib::Client client(url_.origin);
    const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    const std::string payload = body.dump();
    const std::string path = url_.path + "/chat/completions";
    double backoff = cfg_.backoff_initial_s;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        sleeper_(backoff);
        backoff *= cfg_.backoff_factor;
      }
      ++attempts_;
      const auto started = std::chrono::steady_clock::now();
      auto res = client.Post(path, headers, payload, "application/json");
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      if (!res) {
        if (res.error() == httplib::Error::Read && elapsed >= cfg_.timeout_s * 0.99)
          throw BackendTimeout("no reply from " + cfg_.base_url + " within " +
                               std::to_string(cfg_.timeout_s) + " s");
        last_error = "connection error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 200 && res->status < 300) return extract_reply_text(res->body);
      last_error = "HTTP " + std::to_string(res->status);
      if (res->status != 429 && res->status < 500) break;
    }
    throw BackendUnavailable(cfg_.base_url + ": " + last_error);
  }

 private:
  RemoteConfig cfg_;
  detail::SplitUrl url_;
  Sleeper sleeper_;
  std::size_t attempts_ = 0;
};

class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig cfg, ChatClient::Sleeper sleeper = {})
      : client_(std::move(cfg), std::move(sleeper)) {}

  std::string id() const override { return "remote:" + client_.config().model; }
  bool is_remote() const override { return true; }

  InferenceResult generate(const InferenceRequest& req) override {
    const auto started = std::chrono::steady_clock::now();
    InferenceResult r;
    r.text = client_.complete(build_chat_request(client_.config(), req.prompt, req.context));
    r.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    r.token_count = count_tokens(r.text);
    return r;
  }

  ChatClient& client() { return client_; }

 private:
  ChatClient client_;
};

}  // namespace streameval
