#pragma once

// Sentence-level guided decoding.
//
// The frontier starts as a single empty candidate. Each step samples M next
// sentences for every unfinished candidate, scores every member of the
// expanded set with F (see scoring.hpp) and keeps the best N. Finished
// candidates are carried into the expanded set unchanged and compete with
// the new children. The loop ends when every frontier member is finished or
// max_sentences steps have run; the best-scoring member is returned.
//
// Ordering is total: descending F, then lexicographically smaller lineage
// key. Children are assembled in (parent_slot, sample_slot) order no matter
// which backend call completes first, so results do not depend on thread
// scheduling.

#include <limits>
#include <map>

#include "cgd/backend.hpp"
#include "cgd/detail/parallel.hpp"
#include "cgd/scoring.hpp"

namespace cgd {

struct EngineOptions {
  std::size_t max_in_flight = 0;  // 0: N * M
};

struct FrontierState {
  int step = 0;
  std::vector<Candidate> candidates;

  std::vector<int> tokens_spent() const {
    std::vector<int> out;
    for (const auto& c : candidates) out.push_back(c.tokens_spent);
    return out;
  }
};

/// Expanded set for one step, in canonical (parent_slot, sample_slot) order.
struct Expansion {
  std::vector<Candidate> members;
  std::vector<std::optional<Derivation>> derivations;  // empty for pass-throughs
};

struct TraceMember {
  Candidate candidate;
  std::optional<double> f_value;  // empty only for a candidate with no sentences
  std::optional<Derivation> derivation;
};

struct TraceStep {
  int step = 0;
  std::vector<TraceMember> expanded;
  std::vector<std::size_t> kept;  // indices into expanded, best first
};

struct DecodeTrace {
  std::vector<TraceStep> steps;
};

struct DecodeResult {
  Response response;
  DecodeTrace trace;
};

/// A decode aborted by a backend failure. The trace holds every completed step.
class DecodeError : public Error {
 public:
  DecodeError(BackendError cause, DecodeTrace partial)
      : Error("decode aborted: " + std::string(cause.what()) +
              (cause.derivation() ? " (" + to_string(*cause.derivation()) + ")" : "")),
        cause_(std::move(cause)),
        partial_(std::move(partial)) {}

  const BackendError& cause() const noexcept { return cause_; }
  const DecodeTrace& partial_trace() const noexcept { return partial_; }

 private:
  BackendError cause_;
  DecodeTrace partial_;
};

/// F of a candidate for ranking purposes; a candidate with no sentences
/// ranks below everything.
inline double ranking_score(const Candidate& c, double alpha) {
  if (c.empty()) return -std::numeric_limits<double>::infinity();
  return mix_scores(response_likelihood(c), mean_similarity(c), alpha);
}

struct RankedMember {
  std::size_t index = 0;
  double f_value = 0.0;
};

inline std::vector<RankedMember> rank_candidates(std::span<const Candidate> members, double alpha) {
  std::vector<RankedMember> ranked;
  ranked.reserve(members.size());
  for (std::size_t i = 0; i < members.size(); ++i)
    ranked.push_back({i, ranking_score(members[i], alpha)});
  std::sort(ranked.begin(), ranked.end(), [&](const RankedMember& a, const RankedMember& b) {
    if (a.f_value != b.f_value) return a.f_value > b.f_value;
    return members[a.index].lineage_key < members[b.index].lineage_key;
  });
  return ranked;
}

inline std::vector<Candidate> prune(std::span<const Candidate> expanded, int n, double alpha) {
  if (n < 1) throw InvalidInput("prune: n must be >= 1");
  const auto ranked = rank_candidates(expanded, alpha);
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(n); ++i)
    out.push_back(expanded[ranked[i].index]);
  return out;
}

/// Per-call cache of guide scores keyed by (image id, sentence text).
using SimilarityCache = std::map<std::pair<std::string, std::string>, double>;

class Decoder {
 public:
  explicit Decoder(const Generator& generator, EngineOptions options = {})
      : generator_(&generator), options_(options) {}
  Decoder(const Generator& generator, const Guide& guide, EngineOptions options = {})
      : generator_(&generator), guide_(&guide), options_(options) {}

  Expansion expand(const PromptInput& prompt, const FrontierState& state,
                   const DecodeConfig& config, SimilarityCache& cache) const;

  DecodeResult decode(const PromptInput& prompt, const DecodeConfig& config) const;

  /// Single-path greedy or sampled generation without guide calls.
  Response decode_baseline(const PromptInput& prompt, const DecodeConfig& config) const;

 private:
  struct Child {
    Candidate candidate;
    Derivation derivation;
    bool appended = false;
  };

  Child sample_child(const PromptInput& prompt, const Candidate& parent, int parent_slot,
                     int sample_slot, int step, const DecodeConfig& config) const;

  const Generator* generator_;
  const Guide* guide_ = nullptr;
  EngineOptions options_;
};

inline Response decode_baseline(const PromptInput& prompt, const DecodeConfig& config,
                                const Generator& generator) {
  return Decoder(generator).decode_baseline(prompt, config);
}

// --- implementation --------------------------------------------------------

namespace detail {

inline SamplingParams sampling_for(const DecodeConfig& config) {
  return SamplingParams{config.temperature, config.top_k, config.top_p,
                        config.mode == DecodeMode::greedy};
}

inline Response make_response(Candidate best, double alpha) {
  std::vector<std::string> texts;
  for (const auto& s : best.sentences) texts.push_back(s.text);
  Response r;
  r.full_text = join_sentences(texts);
  r.scores = response_scores(best, alpha);
  r.candidate = std::move(best);
  return r;
}

}  // namespace detail

inline Decoder::Child Decoder::sample_child(const PromptInput& prompt, const Candidate& parent,
                                            int parent_slot, int sample_slot, int step,
                                            const DecodeConfig& config) const {
  GenerationRequest request;
  request.prompt = prompt;
  for (const auto& s : parent.sentences) request.prefix_sentences.push_back(s.text);
  request.sampling = detail::sampling_for(config);
  request.stop_at_sentence_end = true;
  request.remaining_token_budget = config.max_new_tokens - parent.tokens_spent;
  request.derivation = Derivation{config.seed, step, parent_slot, sample_slot};

  int consumed = 0;
  // A whitespace-only sentence is resampled once from slot + M; a second
  // empty reply ends the path.
  for (int attempt = 0; attempt < 2; ++attempt) {
    request.derivation.sample_slot = sample_slot + attempt * config.m_samples;
    request.remaining_token_budget = config.max_new_tokens - parent.tokens_spent - consumed;
    if (request.remaining_token_budget < 1) break;

    GenerationReply reply;
    try {
      reply = generator_->generate_next_sentence(request);
      check_reply(request, reply);
    } catch (const BackendError& e) {
      throw e.with_derivation(request.derivation);
    }
    consumed += reply.tokens_consumed;

    std::string text(detail::trim(reply.sentence_text));
    if (!text.empty()) {
      if (reply.tokens.empty())
        throw BackendError(BackendErrorKind::protocol_violation,
                           "non-empty sentence without tokens")
            .with_derivation(request.derivation);
      const bool finish = reply.end_of_response ||
                          parent.tokens_spent + consumed >= config.max_new_tokens;
      Sentence sentence{std::move(text), std::move(reply.tokens), std::move(reply.token_logprobs),
                        std::nullopt, 0};
      return Child{parent.extended(std::move(sentence),
                                   LineageStep{parent_slot, request.derivation.sample_slot},
                                   consumed, finish),
                   request.derivation, true};
    }
    if (reply.end_of_response) break;
  }

  Child ended{parent, request.derivation, false};
  ended.candidate.finished = true;
  ended.candidate.tokens_spent += consumed;
  return ended;
}

inline Expansion Decoder::expand(const PromptInput& prompt, const FrontierState& state,
                                 const DecodeConfig& config, SimilarityCache& cache) const {
  if (guide_ == nullptr) throw InvalidState("expand: decoder has no guide backend");
  const int m = config.m_samples;

  struct Job {
    int parent_slot;
    int sample_slot;
  };
  std::vector<Job> jobs;
  for (std::size_t j = 0; j < state.candidates.size(); ++j)
    if (!state.candidates[j].finished)
      for (int s = 0; s < m; ++s) jobs.push_back({static_cast<int>(j), s});
  if (jobs.empty()) throw InvalidInput("expand: no unfinished candidate");

  std::vector<std::optional<Child>> children(jobs.size());
  const std::size_t limit = options_.max_in_flight != 0
                                ? options_.max_in_flight
                                : static_cast<std::size_t>(config.n_candidates) *
                                      static_cast<std::size_t>(m);
  detail::bounded_parallel_for(jobs.size(), limit, [&](std::size_t i) {
    const Job& job = jobs[i];
    children[i] = sample_child(prompt, state.candidates[static_cast<std::size_t>(job.parent_slot)],
                               job.parent_slot, job.sample_slot, state.step, config);
  });

  Expansion out;
  std::size_t next_job = 0;
  for (std::size_t j = 0; j < state.candidates.size(); ++j) {
    if (state.candidates[j].finished) {
      out.members.push_back(state.candidates[j]);
      out.derivations.emplace_back(std::nullopt);
      continue;
    }
    bool ended_copy = false;
    for (int s = 0; s < m; ++s, ++next_job) {
      Child& child = *children[next_job];
      if (!child.appended) {
        // Every path that ended without a new sentence is the same candidate.
        if (ended_copy) continue;
        ended_copy = true;
      }
      out.members.push_back(std::move(child.candidate));
      out.derivations.emplace_back(child.derivation);
    }
  }

  // Guide scores for new sentences, one batch per step.
  std::vector<std::string> pending;
  for (std::size_t i = 0; i < out.members.size(); ++i) {
    if (!out.derivations[i] || out.members[i].empty()) continue;
    const Sentence& last = out.members[i].sentences.back();
    if (last.similarity) continue;
    const auto key = std::make_pair(prompt.image.id, last.text);
    if (!cache.contains(key) &&
        std::find(pending.begin(), pending.end(), last.text) == pending.end())
      pending.push_back(last.text);
  }
  if (!pending.empty()) {
    const auto scores = guide_->batch_similarity(prompt.image, pending);
    if (scores.size() != pending.size())
      throw BackendError(BackendErrorKind::protocol_violation,
                         "batch_similarity returned " + std::to_string(scores.size()) +
                             " scores for " + std::to_string(pending.size()) + " texts");
    for (std::size_t i = 0; i < pending.size(); ++i) {
      check_score(scores[i]);
      cache[{prompt.image.id, pending[i]}] = scores[i];
    }
  }
  for (std::size_t i = 0; i < out.members.size(); ++i) {
    if (!out.derivations[i] || out.members[i].empty()) continue;
    Sentence& last = out.members[i].sentences.back();
    if (!last.similarity) last.similarity = cache.at({prompt.image.id, last.text});
  }
  return out;
}

inline DecodeResult Decoder::decode(const PromptInput& prompt, const DecodeConfig& config) const {
  validate(prompt);
  const DecodeConfig cfg = config.normalized();
  validate(cfg);

  FrontierState state{0, {Candidate{}}};
  DecodeTrace trace;
  SimilarityCache cache;

  try {
    while (state.step < cfg.max_sentences &&
           std::any_of(state.candidates.begin(), state.candidates.end(),
                       [](const Candidate& c) { return !c.finished; })) {
      Expansion expansion = expand(prompt, state, cfg, cache);
      const auto ranked = rank_candidates(expansion.members, cfg.alpha);

      TraceStep record;
      record.step = state.step;
      for (std::size_t i = 0; i < expansion.members.size(); ++i) {
        std::optional<double> f;
        if (!expansion.members[i].empty()) f = ranking_score(expansion.members[i], cfg.alpha);
        record.expanded.push_back({expansion.members[i], f, expansion.derivations[i]});
      }

      std::vector<Candidate> next;
      for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(cfg.n_candidates);
           ++i) {
        record.kept.push_back(ranked[i].index);
        next.push_back(std::move(expansion.members[ranked[i].index]));
      }
      trace.steps.push_back(std::move(record));
      state.candidates = std::move(next);
      ++state.step;
    }
  } catch (const BackendError& e) {
    throw DecodeError(e, std::move(trace));
  }

  for (auto& c : state.candidates) c.finished = true;
  return DecodeResult{detail::make_response(std::move(state.candidates.front()), cfg.alpha),
                      std::move(trace)};
}

inline Response Decoder::decode_baseline(const PromptInput& prompt,
                                         const DecodeConfig& config) const {
  validate(prompt);
  if (config.mode == DecodeMode::cgd)
    throw InvalidInput("decode_baseline: mode must be greedy or sample");
  const DecodeConfig cfg = config.normalized();
  validate(cfg);

  Candidate path;
  try {
    for (int step = 0; step < cfg.max_sentences && !path.finished; ++step)
      path = sample_child(prompt, path, 0, 0, step, cfg).candidate;
  } catch (const BackendError& e) {
    throw DecodeError(e, DecodeTrace{});
  }
  path.finished = true;
  return detail::make_response(std::move(path), cfg.alpha);
}

}  // namespace cgd
