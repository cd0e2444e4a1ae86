#pragma once

// Capability interfaces the engine consumes: next-sentence generation from
// the vision-language model and image-text similarity from the guide model.
// Implementations must be safe to call from several threads at once.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cgd/core.hpp"

namespace cgd {

struct SamplingParams {
  double temperature = 0.2;
  int top_k = 5;
  double top_p = 1.0;
  bool greedy = false;

  friend bool operator==(const SamplingParams&, const SamplingParams&) = default;
};

struct GenerationRequest {
  PromptInput prompt;
  std::vector<std::string> prefix_sentences;
  SamplingParams sampling;
  bool stop_at_sentence_end = true;
  int remaining_token_budget = 1;
  Derivation derivation;

  friend bool operator==(const GenerationRequest&, const GenerationRequest&) = default;
};

struct GenerationReply {
  std::string sentence_text;
  std::vector<std::string> tokens;
  std::vector<double> token_logprobs;
  bool end_of_response = false;
  int tokens_consumed = 0;
  Derivation derivation;  // echoed from the request

  friend bool operator==(const GenerationReply&, const GenerationReply&) = default;
};

struct SimilarityRequest {
  ImageRef image;
  std::string text;

  friend bool operator==(const SimilarityRequest&, const SimilarityRequest&) = default;
};

struct SimilarityReply {
  double score = 0.0;

  friend bool operator==(const SimilarityReply&, const SimilarityReply&) = default;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual GenerationReply generate_next_sentence(const GenerationRequest& request) const = 0;
};

class Guide {
 public:
  virtual ~Guide() = default;
  virtual double similarity(const ImageRef& image, std::string_view text) const = 0;

  /// Element i equals similarity(image, texts[i]). Any failure fails the batch.
  virtual std::vector<double> batch_similarity(const ImageRef& image,
                                               std::span<const std::string> texts) const {
    if (texts.empty()) throw InvalidInput("batch_similarity: empty batch");
    std::vector<double> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(similarity(image, t));
    return out;
  }
};

inline void validate(const GenerationRequest& r) {
  validate(r.prompt);
  if (r.remaining_token_budget < 1) throw InvalidInput("remaining_token_budget must be >= 1");
  const auto& d = r.derivation;
  if (d.step < 0 || d.parent_slot < 0 || d.sample_slot < 0)
    throw InvalidInput("derivation fields must be >= 0");
}

/// Contract checks on a reply, shared by every client. Violations are the
/// server's fault, so they surface as protocol errors rather than input errors.
inline void check_reply(const GenerationRequest& request, const GenerationReply& reply) {
  auto fail = [](const std::string& what) {
    throw BackendError(BackendErrorKind::protocol_violation, what);
  };
  if (reply.tokens.size() != reply.token_logprobs.size())
    fail("tokens and token_logprobs differ in length");
  if (reply.tokens_consumed < static_cast<int>(reply.tokens.size()))
    fail("tokens_consumed smaller than token count");
  if (reply.tokens_consumed > request.remaining_token_budget)
    fail("reply consumed more tokens than the remaining budget");
  for (double lp : reply.token_logprobs)
    if (!(lp <= 0.0)) fail("token log-probability > 0");
  if (reply.derivation != request.derivation)
    fail("derivation fields not echoed (" + to_string(reply.derivation) + ")");
}

inline void check_score(double score) {
  if (!(score >= -1.0 && score <= 1.0))
    throw BackendError(BackendErrorKind::protocol_violation,
                       "similarity score " + std::to_string(score) + " outside [-1, 1]");
}

}  // namespace cgd
