#pragma once

// HTTP client for a remote generation/similarity server speaking the JSON
// records in wire.hpp. Requests are idempotent (the derivation fields pin the
// sampled output), so transport failures and 5xx/429 replies are retried with
// exponential backoff. 4xx replies, malformed bodies and contract violations
// are reported immediately.

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "cgd/backend.hpp"
#include "cgd/detail/parallel.hpp"
#include "cgd/wire.hpp"

namespace cgd {

inline constexpr const char* kBackendUrlEnv = "CGD_BACKEND_URL";

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
};

struct RemoteOptions {
  std::string bearer_token;  // sent as "Authorization: Bearer <token>" when set
  RetryPolicy retry;
  std::chrono::milliseconds connect_timeout{2000};
  std::chrono::milliseconds read_timeout{120000};
  std::size_t similarity_fanout = 8;
};

class RemoteBackend final : public Generator, public Guide {
 public:
  explicit RemoteBackend(std::string_view base_url, RemoteOptions options = {})
      : options_(std::move(options)) {
    const auto scheme = base_url.find("://");
    if (scheme == std::string_view::npos)
      throw InvalidInput("backend url must look like http://host:port, got '" +
                         std::string(base_url) + "'");
    const auto slash = base_url.find('/', scheme + 3);
    host_ = std::string(base_url.substr(0, slash));
    if (slash != std::string_view::npos) {
      prefix_ = std::string(base_url.substr(slash));
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
  }

  /// Reads the base address from CGD_BACKEND_URL.
  static RemoteBackend from_env(RemoteOptions options = {}) {
    const char* url = std::getenv(kBackendUrlEnv);
    if (url == nullptr || *url == '\0')
      throw InvalidInput(std::string(kBackendUrlEnv) + " is not set");
    return RemoteBackend(url, std::move(options));
  }

  GenerationReply generate_next_sentence(const GenerationRequest& request) const override {
    validate(request);
    try {
      auto reply = post<GenerationReply>("/v1/generate", json(request).dump());
      check_reply(request, reply);
      return reply;
    } catch (const BackendError& e) {
      throw e.with_derivation(request.derivation);
    }
  }

  double similarity(const ImageRef& image, std::string_view text) const override {
    if (detail::trim(text).empty()) throw InvalidInput("similarity: empty text");
    const SimilarityRequest request{image, std::string(text)};
    const auto reply = post<SimilarityReply>("/v1/similarity", json(request).dump());
    check_score(reply.score);
    return reply.score;
  }

  std::vector<double> batch_similarity(const ImageRef& image,
                                       std::span<const std::string> texts) const override {
    if (texts.empty()) throw InvalidInput("batch_similarity: empty batch");
    std::vector<double> out(texts.size());
    detail::bounded_parallel_for(texts.size(), options_.similarity_fanout,
                                 [&](std::size_t i) { out[i] = similarity(image, texts[i]); });
    return out;
  }

  const std::string& host() const noexcept { return host_; }

 private:
  static bool retryable_status(int status) {
    return status >= 500 || status == 429 || status == 408;
  }

  template <typename Reply>
  Reply post(const std::string& path, const std::string& body) const {
    const int attempts = std::max(1, options_.retry.max_attempts);
    auto backoff = options_.retry.initial_backoff;
    std::optional<BackendError> last;

    for (int attempt = 1; attempt <= attempts; ++attempt) {
      if (attempt > 1) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Client client(host_);
      client.set_connection_timeout(options_.connect_timeout);
      client.set_read_timeout(options_.read_timeout);
      if (!options_.bearer_token.empty()) client.set_bearer_token_auth(options_.bearer_token);

      auto res = client.Post(prefix_ + path, body, "application/json");
      if (!res) {
        last.emplace(BackendErrorKind::transport,
                     host_ + prefix_ + path + ": " + httplib::to_string(res.error()), attempt);
        continue;
      }
      if (res->status >= 200 && res->status < 300) {
        try {
          return parse_reply<Reply>(res->body);
        } catch (const BackendError& e) {
          throw BackendError(e.kind(), e.detail(), attempt, res->status);
        }
      }
      std::string code = "http_" + std::to_string(res->status);
      std::string message = res->body;
      try {
        const auto err = json::parse(res->body).at("error");
        code = err.value("code", code);
        message = err.value("message", message);
      } catch (const json::exception&) {
        // non-JSON error body: keep the raw text
      }
      BackendError error(BackendErrorKind::server_status,
                         "HTTP " + std::to_string(res->status) + " [" + code + "] " + message,
                         attempt, res->status, code);
      if (!retryable_status(res->status)) throw error;
      last = std::move(error);
    }
    throw *last;
  }

  RemoteOptions options_;
  std::string host_;
  std::string prefix_;
};

}  // namespace cgd
