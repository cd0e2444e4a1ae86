#pragma once

// Likelihood and guidance scores used to rank candidate responses.
//
//   g(s_i) = (1/l_i) * sum_j log p(z_j)                 per sentence
//   f(c)   = sum_i sum_j log p(z_ij) / sum_i l_i        per response
//   F(c)   = (1 - alpha) * f(c) + alpha * mean_i sim(s_i)
//
// Likelihoods are in nats/token and similarities are raw cosines; the two
// terms are mixed without rescaling.

#include <span>
#include <vector>

#include "cgd/core.hpp"

namespace cgd {

struct ScoreBreakdown {
  double f_theta = 0.0;
  std::vector<double> g_theta;
  double mean_sim = 0.0;
  double f_value = 0.0;
};

inline double sentence_likelihood(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw InvalidInput("sentence_likelihood: no tokens");
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!(lp <= 0.0)) throw InvalidInput("sentence_likelihood: log-probability > 0");
    sum += lp;
  }
  return sum / static_cast<double>(token_logprobs.size());
}

inline double response_likelihood(const Candidate& candidate) {
  if (candidate.empty()) throw InvalidInput("response_likelihood: empty candidate");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : candidate.sentences) {
    if (s.token_logprobs.empty())
      throw InvalidInput("response_likelihood: sentence without log-probabilities");
    for (double lp : s.token_logprobs) {
      if (!(lp <= 0.0)) throw InvalidInput("response_likelihood: log-probability > 0");
      sum += lp;
    }
    count += s.token_logprobs.size();
  }
  return sum / static_cast<double>(count);
}

inline double mean_similarity(const Candidate& candidate) {
  if (candidate.empty()) throw InvalidState("mean_similarity: empty candidate");
  double sum = 0.0;
  for (const auto& s : candidate.sentences) {
    if (!s.similarity) throw InvalidState("mean_similarity: sentence without similarity");
    sum += *s.similarity;
  }
  return sum / static_cast<double>(candidate.size());
}

inline double mix_scores(double f_theta, double mean_sim, double alpha) {
  return (1.0 - alpha) * f_theta + alpha * mean_sim;
}

inline ScoreBreakdown reliability_score(const Candidate& candidate, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("alpha must lie in [0, 1]");
  ScoreBreakdown out;
  out.f_theta = response_likelihood(candidate);
  out.g_theta.reserve(candidate.size());
  for (const auto& s : candidate.sentences) out.g_theta.push_back(sentence_likelihood(s.token_logprobs));
  out.mean_sim = mean_similarity(candidate);
  out.f_value = mix_scores(out.f_theta, out.mean_sim, alpha);
  return out;
}

/// Scores attached to a final response. Fields the candidate cannot support
/// (no sentences, or no similarities for baseline decodes) stay empty.
inline ResponseScores response_scores(const Candidate& candidate, double alpha) {
  ResponseScores scores;
  if (candidate.empty()) return scores;
  scores.f_theta = response_likelihood(candidate);
  const bool have_sim = std::all_of(candidate.sentences.begin(), candidate.sentences.end(),
                                    [](const Sentence& s) { return s.similarity.has_value(); });
  if (have_sim) {
    scores.mean_sim = mean_similarity(candidate);
    scores.f_value = mix_scores(*scores.f_theta, *scores.mean_sim, alpha);
  }
  return scores;
}

}  // namespace cgd
