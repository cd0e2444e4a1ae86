#pragma once

// JSON encoding of the backend records. Field names match the record
// definitions one to one; both the HTTP client and any conforming server
// use exactly these shapes.
//
//   POST /v1/generate    GenerationRequest  -> GenerationReply
//   POST /v1/similarity  SimilarityRequest  -> SimilarityReply
//   non-2xx              {"error": {"code": "...", "message": "..."}}

#include <nlohmann/json.hpp>

#include "cgd/backend.hpp"

namespace cgd {

using json = nlohmann::ordered_json;

inline void to_json(json& j, const ImageRef& r) {
  j = json{{"id", r.id}};
  if (r.uri) j["uri"] = *r.uri;
  if (r.bytes_digest) j["bytes_digest"] = *r.bytes_digest;
}

inline void from_json(const json& j, ImageRef& r) {
  j.at("id").get_to(r.id);
  r.uri = j.contains("uri") && !j["uri"].is_null() ? std::optional(j["uri"].get<std::string>())
                                                   : std::nullopt;
  r.bytes_digest = j.contains("bytes_digest") && !j["bytes_digest"].is_null()
                       ? std::optional(j["bytes_digest"].get<std::string>())
                       : std::nullopt;
}

inline void to_json(json& j, const PromptInput& p) { j = json{{"image", p.image}, {"text", p.text}}; }

inline void from_json(const json& j, PromptInput& p) {
  j.at("image").get_to(p.image);
  j.at("text").get_to(p.text);
}

inline void to_json(json& j, const Derivation& d) {
  j = json{{"seed", d.seed}, {"step", d.step}, {"parent_slot", d.parent_slot},
           {"sample_slot", d.sample_slot}};
}

inline void from_json(const json& j, Derivation& d) {
  j.at("seed").get_to(d.seed);
  j.at("step").get_to(d.step);
  j.at("parent_slot").get_to(d.parent_slot);
  j.at("sample_slot").get_to(d.sample_slot);
}

inline void to_json(json& j, const SamplingParams& s) {
  j = json{{"temperature", s.temperature}, {"top_k", s.top_k}, {"top_p", s.top_p},
           {"greedy", s.greedy}};
}

inline void from_json(const json& j, SamplingParams& s) {
  j.at("temperature").get_to(s.temperature);
  j.at("top_k").get_to(s.top_k);
  j.at("top_p").get_to(s.top_p);
  j.at("greedy").get_to(s.greedy);
}

inline void to_json(json& j, const GenerationRequest& r) {
  j = json{{"prompt", r.prompt},
           {"prefix_sentences", r.prefix_sentences},
           {"sampling", r.sampling},
           {"stop_at_sentence_end", r.stop_at_sentence_end},
           {"remaining_token_budget", r.remaining_token_budget},
           {"derivation", r.derivation}};
}

inline void from_json(const json& j, GenerationRequest& r) {
  j.at("prompt").get_to(r.prompt);
  j.at("prefix_sentences").get_to(r.prefix_sentences);
  j.at("sampling").get_to(r.sampling);
  j.at("stop_at_sentence_end").get_to(r.stop_at_sentence_end);
  j.at("remaining_token_budget").get_to(r.remaining_token_budget);
  j.at("derivation").get_to(r.derivation);
}

inline void to_json(json& j, const GenerationReply& r) {
  j = json{{"sentence_text", r.sentence_text},
           {"tokens", r.tokens},
           {"token_logprobs", r.token_logprobs},
           {"end_of_response", r.end_of_response},
           {"tokens_consumed", r.tokens_consumed},
           {"derivation", r.derivation}};
}

inline void from_json(const json& j, GenerationReply& r) {
  j.at("sentence_text").get_to(r.sentence_text);
  j.at("tokens").get_to(r.tokens);
  j.at("token_logprobs").get_to(r.token_logprobs);
  j.at("end_of_response").get_to(r.end_of_response);
  j.at("tokens_consumed").get_to(r.tokens_consumed);
  j.at("derivation").get_to(r.derivation);
}

inline void to_json(json& j, const SimilarityRequest& r) {
  j = json{{"image", r.image}, {"text", r.text}};
}

inline void from_json(const json& j, SimilarityRequest& r) {
  j.at("image").get_to(r.image);
  j.at("text").get_to(r.text);
}

inline void to_json(json& j, const SimilarityReply& r) { j = json{{"score", r.score}}; }

inline void from_json(const json& j, SimilarityReply& r) { j.at("score").get_to(r.score); }

inline json error_body(std::string_view code, std::string_view message) {
  return json{{"error", json{{"code", code}, {"message", message}}}};
}

/// Parses a reply body, mapping any syntax or schema failure to
/// BackendErrorKind::malformed_reply.
template <typename Reply>
Reply parse_reply(std::string_view body) {
  try {
    return json::parse(body).get<Reply>();
  } catch (const json::exception& e) {
    throw BackendError(BackendErrorKind::malformed_reply, e.what());
  }
}

}  // namespace cgd
