#pragma once

// JSON views of decode results, used by the CLI output records and by
// byte-level determinism checks.

#include "cgd/engine.hpp"
#include "cgd/wire.hpp"

namespace cgd {

inline void to_json(json& j, const LineageStep& s) { j = json::array({s.parent_slot, s.sample_slot}); }

inline void to_json(json& j, const Sentence& s) {
  j = json{{"index", s.index}, {"text", s.text}, {"tokens", s.tokens},
           {"token_logprobs", s.token_logprobs}};
  if (s.similarity) j["similarity"] = *s.similarity;
}

inline void to_json(json& j, const Candidate& c) {
  j = json{{"sentences", c.sentences}, {"finished", c.finished},
           {"lineage_key", c.lineage_key}, {"tokens_spent", c.tokens_spent}};
}

inline void to_json(json& j, const ResponseScores& s) {
  j = json::object();
  if (s.f_value) j["f_value"] = *s.f_value;
  if (s.f_theta) j["f_theta"] = *s.f_theta;
  if (s.mean_sim) j["mean_sim"] = *s.mean_sim;
}

inline void to_json(json& j, const Response& r) {
  j = json{{"full_text", r.full_text}, {"scores", r.scores}, {"candidate", r.candidate}};
}

inline void to_json(json& j, const TraceMember& m) {
  j = json{{"lineage_key", m.candidate.lineage_key}, {"finished", m.candidate.finished}};
  j["last_sentence"] = m.candidate.empty() ? json(nullptr) : json(m.candidate.sentences.back().text);
  j["f_value"] = m.f_value ? json(*m.f_value) : json(nullptr);
  j["derivation"] = m.derivation ? json(*m.derivation) : json(nullptr);
}

inline void to_json(json& j, const TraceStep& s) {
  j = json{{"step", s.step}, {"expanded", s.expanded}, {"kept", s.kept}};
}

inline void to_json(json& j, const DecodeTrace& t) { j = json{{"steps", t.steps}}; }

inline void to_json(json& j, const DecodeConfig& c) {
  j = json{{"n_candidates", c.n_candidates}, {"m_samples", c.m_samples},
           {"alpha", c.alpha},               {"temperature", c.temperature},
           {"top_k", c.top_k},               {"top_p", c.top_p},
           {"max_new_tokens", c.max_new_tokens}, {"max_sentences", c.max_sentences},
           {"seed", c.seed},                 {"mode", to_string(c.mode)}};
}

/// Canonical byte string of a decode result.
inline std::string canonical_bytes(const DecodeResult& r) {
  return json{{"response", r.response}, {"trace", r.trace}}.dump();
}

}  // namespace cgd
