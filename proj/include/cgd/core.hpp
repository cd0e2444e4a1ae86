#pragma once

// Domain types shared by the engine, the backends and the evaluation code,
// plus the rule-based sentence segmenter used everywhere text is split.

#include <algorithm>
#include <array>
#include <cctype>
#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cgd/error.hpp"

namespace cgd {

inline constexpr std::string_view kDefaultPrompt = "Describe this image in detail";

struct ImageRef {
  std::string id;
  std::optional<std::string> uri;
  std::optional<std::string> bytes_digest;  // sha-256, lowercase hex

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct PromptInput {
  ImageRef image;
  std::string text{kDefaultPrompt};

  friend bool operator==(const PromptInput&, const PromptInput&) = default;
};

struct Sentence {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<double> token_logprobs;  // natural log
  std::optional<double> similarity;
  int index = 1;  // 1-based position in the response

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// One hop of a sampling path: which frontier slot the parent occupied and
/// which sample slot produced the child.
struct LineageStep {
  int parent_slot = 0;
  int sample_slot = 0;

  friend auto operator<=>(const LineageStep&, const LineageStep&) = default;
};

using LineageKey = std::vector<LineageStep>;

struct Candidate {
  std::vector<Sentence> sentences;
  bool finished = false;
  LineageKey lineage_key;
  int tokens_spent = 0;  // tokens charged to this path so far

  std::size_t size() const noexcept { return sentences.size(); }
  bool empty() const noexcept { return sentences.empty(); }

  /// Copy of this candidate extended by one sentence. The sentence index is
  /// assigned here so indices stay 1..t without gaps.
  Candidate extended(Sentence next, LineageStep hop, int tokens, bool finish) const;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct ResponseScores {
  std::optional<double> f_value;
  std::optional<double> f_theta;
  std::optional<double> mean_sim;

  friend bool operator==(const ResponseScores&, const ResponseScores&) = default;
};

struct Response {
  Candidate candidate;
  std::string full_text;
  ResponseScores scores;

  friend bool operator==(const Response&, const Response&) = default;
};

enum class DecodeMode { cgd, greedy, sample };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view text);

struct DecodeConfig {
  int n_candidates = 3;
  int m_samples = 3;
  double alpha = 0.99;
  double temperature = 0.2;
  int top_k = 5;       // 0 disables
  double top_p = 1.0;  // 1.0 disables
  int max_new_tokens = 500;
  int max_sentences = 32;
  std::uint64_t seed = 0;
  DecodeMode mode = DecodeMode::cgd;

  /// Greedy and plain sampling are single-path: N = M = 1.
  DecodeConfig normalized() const;

  friend bool operator==(const DecodeConfig&, const DecodeConfig&) = default;
};

struct AnnotatedResponse {
  std::string response_text;
  std::vector<std::string> sentences;
  std::vector<int> labels;  // 1 = hallucinated
  std::set<std::string> gold_objects;
  std::vector<std::set<std::string>> mentioned_objects;
};

void validate(const ImageRef& image);
void validate(const PromptInput& prompt);
void validate(const Sentence& sentence);
void validate(const Candidate& candidate);
void validate(const DecodeConfig& config);
void validate(const AnnotatedResponse& annotated);

std::vector<std::string> segment_sentences(std::string_view text);
std::string join_sentences(std::span<const std::string> sentences);

// --- implementation --------------------------------------------------------

namespace detail {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

inline bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

inline constexpr std::array<std::string_view, 7> kAbbreviations = {
    "mr.", "mrs.", "dr.", "st.", "e.g.", "i.e.", "etc."};

// The word ending at `end` (exclusive), stripped of leading openers.
inline bool ends_with_abbreviation(std::string_view text, std::size_t end) {
  std::size_t begin = end;
  while (begin > 0 && !is_space(text[begin - 1])) --begin;
  std::string_view word = text.substr(begin, end - begin);
  while (!word.empty() && (word.front() == '(' || word.front() == '"' || word.front() == '\'' ||
                           word.front() == '['))
    word.remove_prefix(1);
  const std::string lowered = to_lower(word);
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), lowered) != kAbbreviations.end();
}

}  // namespace detail

inline std::vector<std::string> segment_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();

  auto flush = [&](std::size_t end) {
    std::string_view piece = detail::trim(text.substr(start, end - start));
    if (!piece.empty()) out.emplace_back(piece);
    start = end;
  };

  while (i < n) {
    if (!detail::is_terminal(text[i])) {
      ++i;
      continue;
    }
    // A period between two digits is a decimal point.
    if (text[i] == '.' && i > 0 && i + 1 < n &&
        std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
        std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && detail::is_terminal(text[j])) ++j;
    while (j < n && detail::is_closer(text[j])) ++j;
    const bool at_gap = (j == n) || detail::is_space(text[j]);
    if (!at_gap) {
      i = j;
      continue;
    }
    if (j < n && text[j - 1] == '.' && detail::ends_with_abbreviation(text, j)) {
      i = j;
      continue;
    }
    flush(j);
    i = j;
  }
  flush(n);
  return out;
}

inline std::string join_sentences(std::span<const std::string> sentences) {
  std::string out;
  for (const auto& s : sentences) {
    if (detail::trim(s).empty()) throw InvalidInput("join_sentences: empty sentence");
    if (!out.empty()) out.push_back(' ');
    out += s;
  }
  return out;
}

inline Candidate Candidate::extended(Sentence next, LineageStep hop, int tokens,
                                     bool finish) const {
  if (finished) throw InvalidState("cannot append to a finished candidate");
  Candidate child = *this;
  next.index = static_cast<int>(sentences.size()) + 1;
  child.sentences.push_back(std::move(next));
  child.lineage_key.push_back(hop);
  child.tokens_spent += tokens;
  child.finished = finish;
  return child;
}

inline std::string_view to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::cgd: return "cgd";
    case DecodeMode::greedy: return "greedy";
    case DecodeMode::sample: return "sample";
  }
  return "cgd";
}

inline DecodeMode parse_decode_mode(std::string_view text) {
  if (text == "cgd") return DecodeMode::cgd;
  if (text == "greedy") return DecodeMode::greedy;
  if (text == "sample") return DecodeMode::sample;
  throw InvalidInput("unknown decode mode '" + std::string(text) + "'");
}

inline DecodeConfig DecodeConfig::normalized() const {
  DecodeConfig c = *this;
  if (c.mode != DecodeMode::cgd) {
    c.n_candidates = 1;
    c.m_samples = 1;
  }
  return c;
}

inline void validate(const ImageRef& image) {
  if (image.id.empty()) throw InvalidInput("image id must be non-empty");
  if (image.bytes_digest) {
    const auto& d = *image.bytes_digest;
    const bool ok = d.size() == 64 && std::all_of(d.begin(), d.end(), [](char c) {
                      return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
                    });
    if (!ok) throw InvalidInput("bytes_digest must be 64 lowercase hex characters");
  }
}

inline void validate(const PromptInput& prompt) {
  validate(prompt.image);
  if (prompt.text.empty()) throw InvalidInput("prompt text must be non-empty");
}

inline void validate(const Sentence& sentence) {
  if (sentence.tokens.empty() || sentence.tokens.size() != sentence.token_logprobs.size())
    throw InvalidInput("sentence needs >= 1 token and one logprob per token");
  for (double lp : sentence.token_logprobs)
    if (!(lp <= 0.0)) throw InvalidInput("token log-probability must be <= 0");
  if (sentence.similarity && (*sentence.similarity < -1.0 || *sentence.similarity > 1.0))
    throw InvalidInput("similarity outside [-1, 1]");
  if (sentence.index < 1) throw InvalidInput("sentence index must be >= 1");
}

inline void validate(const Candidate& candidate) {
  if (candidate.lineage_key.size() != candidate.sentences.size())
    throw InvalidInput("lineage_key length must equal sentence count");
  for (std::size_t i = 0; i < candidate.sentences.size(); ++i) {
    validate(candidate.sentences[i]);
    if (candidate.sentences[i].index != static_cast<int>(i) + 1)
      throw InvalidInput("sentence indices must run 1..t without gaps");
  }
}

inline void validate(const DecodeConfig& c) {
  if (c.n_candidates < 1) throw InvalidInput("n_candidates must be >= 1");
  if (c.m_samples < 1) throw InvalidInput("m_samples must be >= 1");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw InvalidInput("alpha must lie in [0, 1]");
  if (!(c.temperature > 0.0)) throw InvalidInput("temperature must be > 0");
  if (c.top_k < 0) throw InvalidInput("top_k must be >= 0");
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) throw InvalidInput("top_p must lie in (0, 1]");
  if (c.max_new_tokens < 1) throw InvalidInput("max_new_tokens must be >= 1");
  if (c.max_sentences < 1) throw InvalidInput("max_sentences must be >= 1");
  if (c.mode != DecodeMode::cgd && (c.n_candidates != 1 || c.m_samples != 1))
    throw InvalidInput("greedy and sample modes require N = M = 1; call normalized()");
}

inline void validate(const AnnotatedResponse& a) {
  if (a.labels.size() != a.sentences.size())
    throw InvalidInput("one label per sentence required");
  if (a.mentioned_objects.size() != a.sentences.size())
    throw InvalidInput("one mention set per sentence required");
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool outside = !std::includes(a.gold_objects.begin(), a.gold_objects.end(),
                                        a.mentioned_objects[i].begin(),
                                        a.mentioned_objects[i].end());
    if (a.labels[i] != (outside ? 1 : 0))
      throw InvalidInput("label must be 1 iff mentions are not a subset of gold objects");
  }
}

}  // namespace cgd
