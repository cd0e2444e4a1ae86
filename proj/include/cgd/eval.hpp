#pragma once

// Object-hallucination measurement: vocabulary-based object extraction,
// per-sentence hallucination labels, corpus CHAIR scores, coverage, the
// positional hallucination curves R(i) / R_first(i), and rank-based AUROC.
//
// Corpus statistics are accumulated as integers and divided once, so the
// result does not depend on response order.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cgd/core.hpp"
#include "cgd/scoring.hpp"

namespace cgd {

// --- vocabulary ------------------------------------------------------------

namespace detail {

// Lowercased word tokens. Letters, digits, hyphens, apostrophes and any
// non-ASCII byte form words; possessive 's is dropped.
inline std::vector<std::string> object_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && (cur.back() == '-' || cur.back() == '\'')) cur.pop_back();
    std::size_t lead = 0;
    while (lead < cur.size() && (cur[lead] == '-' || cur[lead] == '\'')) ++lead;
    cur.erase(0, lead);
    if (cur.size() > 2 && cur.ends_with("'s")) cur.resize(cur.size() - 2);
    if (!cur.empty()) words.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80 || c == '-' || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

inline std::string join_words(const std::vector<std::string>& words, std::size_t from,
                              std::size_t count) {
  std::string out;
  for (std::size_t i = from; i < from + count; ++i) {
    if (i > from) out.push_back(' ');
    out += words[i];
  }
  return out;
}

inline const std::map<std::string, std::string>& irregular_plurals() {
  static const std::map<std::string, std::string> table = {
      {"person", "people"}, {"man", "men"},       {"woman", "women"},   {"child", "children"},
      {"mouse", "mice"},    {"goose", "geese"},   {"foot", "feet"},     {"tooth", "teeth"},
      {"ox", "oxen"},       {"knife", "knives"},  {"leaf", "leaves"},   {"wolf", "wolves"},
      {"shelf", "shelves"}, {"loaf", "loaves"},   {"calf", "calves"},   {"half", "halves"},
      {"cactus", "cacti"},  {"fungus", "fungi"},  {"policeman", "policemen"},
  };
  return table;
}

// Surface spellings that reduce to `word` once a plural suffix is stripped.
inline std::vector<std::string> plural_variants(const std::string& word) {
  std::vector<std::string> out{word, word + "s", word + "es"};
  if (word.size() > 1 && word.back() == 'y' &&
      std::string_view("aeiou").find(word[word.size() - 2]) == std::string_view::npos)
    out.push_back(word.substr(0, word.size() - 1) + "ies");
  if (auto it = irregular_plurals().find(word); it != irregular_plurals().end())
    out.push_back(it->second);
  return out;
}

}  // namespace detail

class ObjectVocabulary {
 public:
  void add_canonical(std::string_view name) {
    const auto key = normalize(name);
    canonical_.insert(key);
    index(key, key);
  }

  void add_synonym(std::string_view surface, std::string_view canonical) {
    const auto s = normalize(surface);
    const auto c = normalize(canonical);
    synonyms_[s] = c;
    index(s, c);
  }

  /// Maps a fine-grained class onto a coarse canonical category. The fine
  /// name is matched in text like a synonym.
  void add_category(std::string_view fine, std::string_view coarse) {
    const auto f = normalize(fine);
    categories_[f] = normalize(coarse);
    if (!surface_index_.contains(f)) index(f, f);
  }

  const std::set<std::string>& canonical_names() const noexcept { return canonical_; }
  const std::map<std::string, std::string>& synonym_map() const noexcept { return synonyms_; }
  const std::map<std::string, std::string>& category_map() const noexcept { return categories_; }
  bool empty() const noexcept { return canonical_.empty(); }
  std::size_t max_words() const noexcept { return max_words_; }

  void validate() const {
    for (const auto& [surface, target] : synonyms_)
      if (!canonical_.contains(target) && !categories_.contains(target))
        throw InvalidInput("synonym '" + surface + "' targets unknown object '" + target + "'");
    for (const auto& [fine, coarse] : categories_)
      if (!canonical_.contains(coarse))
        throw InvalidInput("category '" + fine + "' maps to unknown object '" + coarse + "'");
  }

  /// Canonical (category-mapped) name for a phrase whose words exactly form
  /// a known surface form, plural spellings included.
  std::optional<std::string> lookup(std::string_view phrase) const {
    const auto words = detail::object_words(phrase);
    if (words.empty()) return std::nullopt;
    return lookup_key(detail::join_words(words, 0, words.size()));
  }

  std::optional<std::string> lookup_key(const std::string& key) const {
    auto it = surface_index_.find(key);
    if (it == surface_index_.end()) return std::nullopt;
    if (auto cat = categories_.find(it->second); cat != categories_.end()) return cat->second;
    return it->second;
  }

  /// Text format, one record per line, comma-separated, '#' starts a comment:
  ///   canonical,<name>
  ///   synonym,<surface>,<canonical>
  ///   category,<fine name>,<coarse canonical>
  static ObjectVocabulary parse(std::istream& in, const std::string& origin = "<stream>") {
    ObjectVocabulary v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      if (detail::trim(line).empty()) continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      for (std::string f; std::getline(ss, f, ',');) fields.emplace_back(detail::trim(f));
      auto bad = [&] {
        throw InvalidInput(origin + ":" + std::to_string(lineno) + ": malformed record '" + line +
                           "'");
      };
      if (fields.empty()) bad();
      if (fields[0] == "canonical" && fields.size() == 2 && !fields[1].empty())
        v.add_canonical(fields[1]);
      else if (fields[0] == "synonym" && fields.size() == 3 && !fields[1].empty())
        v.add_synonym(fields[1], fields[2]);
      else if (fields[0] == "category" && fields.size() == 3 && !fields[1].empty())
        v.add_category(fields[1], fields[2]);
      else
        bad();
    }
    v.validate();
    if (v.empty()) throw InvalidInput(origin + ": vocabulary has no canonical names");
    return v;
  }

  static ObjectVocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open vocabulary file " + path.string());
    return parse(in, path.string());
  }

 private:
  static std::string normalize(std::string_view name) {
    const auto words = detail::object_words(name);
    if (words.empty()) throw InvalidInput("empty object name");
    return detail::join_words(words, 0, words.size());
  }

  void index(const std::string& key, const std::string& target) {
    auto words = detail::object_words(key);
    max_words_ = std::max(max_words_, words.size());
    const std::string last = words.back();
    for (const auto& variant : detail::plural_variants(last)) {
      words.back() = variant;
      // Exact forms take precedence over plural spellings of other entries.
      const auto k = detail::join_words(words, 0, words.size());
      if (variant == last || !surface_index_.contains(k)) surface_index_[k] = target;
    }
  }

  std::set<std::string> canonical_;
  std::map<std::string, std::string> synonyms_;
  std::map<std::string, std::string> categories_;
  std::map<std::string, std::string> surface_index_;
  std::size_t max_words_ = 0;
};

// --- extraction and labels -------------------------------------------------

inline std::set<std::string> extract_objects(std::string_view sentence,
                                             const ObjectVocabulary& vocab) {
  if (vocab.empty()) throw InvalidInput("extract_objects: empty vocabulary");
  const auto words = detail::object_words(sentence);
  std::set<std::string> found;
  std::size_t i = 0;
  while (i < words.size()) {
    std::size_t matched = 0;
    for (std::size_t n = std::min(vocab.max_words(), words.size() - i); n >= 1; --n) {
      if (auto hit = vocab.lookup_key(detail::join_words(words, i, n))) {
        found.insert(*hit);
        matched = n;
        break;
      }
    }
    i += matched == 0 ? 1 : matched;
  }
  return found;
}

/// Gold object names mapped into the vocabulary; names it does not know are
/// dropped, so gold and mentions live in the same object space.
inline std::set<std::string> canonical_gold(const std::set<std::string>& gold,
                                            const ObjectVocabulary& vocab) {
  std::set<std::string> out;
  for (const auto& g : gold)
    if (auto c = vocab.lookup(g)) out.insert(*c);
  return out;
}

inline AnnotatedResponse label_response(const std::vector<std::string>& sentences,
                                        const std::set<std::string>& gold_objects,
                                        const ObjectVocabulary& vocab) {
  AnnotatedResponse out;
  out.gold_objects = canonical_gold(gold_objects, vocab);
  for (const auto& s : sentences) {
    if (detail::trim(s).empty()) continue;
    if (!out.response_text.empty()) out.response_text.push_back(' ');
    out.response_text += s;
    auto mentioned = extract_objects(s, vocab);
    const bool outside = !std::includes(out.gold_objects.begin(), out.gold_objects.end(),
                                        mentioned.begin(), mentioned.end());
    out.sentences.push_back(s);
    out.labels.push_back(outside ? 1 : 0);
    out.mentioned_objects.push_back(std::move(mentioned));
  }
  return out;
}

// --- corpus metrics --------------------------------------------------------

struct CorpusMetrics {
  double chair_s = 0.0;
  double chair_i = 0.0;
  bool chair_i_zero_denominator = false;  // no object was mentioned anywhere
  double avg_len = 0.0;                   // whitespace-delimited words per response
  std::optional<double> avg_coverage;     // over responses with a non-empty gold set
  std::size_t n_responses = 0;
  std::size_t hallucinated_responses = 0;
  std::size_t hallucinated_objects = 0;
  std::size_t mentioned_objects = 0;
};

inline std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = detail::is_space(c);
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

/// Objects mentioned anywhere in the response, each counted once.
inline std::set<std::string> response_mentions(const AnnotatedResponse& r) {
  std::set<std::string> all;
  for (const auto& m : r.mentioned_objects) all.insert(m.begin(), m.end());
  return all;
}

inline CorpusMetrics chair(std::span<const AnnotatedResponse> corpus) {
  if (corpus.empty()) throw InvalidInput("chair: empty corpus");
  CorpusMetrics m;
  m.n_responses = corpus.size();
  std::size_t words = 0;
  std::size_t coverage_support = 0;
  double coverage_sum = 0.0;

  for (const auto& r : corpus) {
    const auto mentioned = response_mentions(r);
    std::size_t hallucinated = 0;
    std::size_t correct = 0;
    for (const auto& obj : mentioned) (r.gold_objects.contains(obj) ? correct : hallucinated)++;
    m.mentioned_objects += mentioned.size();
    m.hallucinated_objects += hallucinated;
    if (hallucinated > 0) ++m.hallucinated_responses;
    words += word_count(r.response_text);
    if (!r.gold_objects.empty()) {
      ++coverage_support;
      coverage_sum += static_cast<double>(correct) / static_cast<double>(r.gold_objects.size());
    }
  }

  const auto n = static_cast<double>(m.n_responses);
  m.chair_s = static_cast<double>(m.hallucinated_responses) / n;
  if (m.mentioned_objects == 0) {
    m.chair_i = 0.0;
    m.chair_i_zero_denominator = true;
  } else {
    m.chair_i = static_cast<double>(m.hallucinated_objects) /
                static_cast<double>(m.mentioned_objects);
  }
  m.avg_len = static_cast<double>(words) / n;
  if (coverage_support > 0) m.avg_coverage = coverage_sum / static_cast<double>(coverage_support);
  return m;
}

struct PositionalCurves {
  std::map<int, double> r;
  std::map<int, double> r_first;
  std::map<int, std::size_t> support;     // |Y_i|
  std::map<int, std::size_t> hallucinated;  // responses whose i-th sentence is hallucinated
  std::map<int, std::size_t> first;         // responses whose first hallucination is at i
};

/// Positional curves from per-response label sequences.
inline PositionalCurves positional_curves_from_labels(std::span<const std::vector<int>> labels) {
  if (labels.empty()) throw InvalidInput("positional_curves: empty corpus");
  PositionalCurves c;
  for (const auto& seq : labels) {
    bool seen = false;
    for (std::size_t k = 0; k < seq.size(); ++k) {
      const int i = static_cast<int>(k) + 1;
      if (seq[k] != 0 && seq[k] != 1) throw InvalidInput("positional_curves: labels must be 0 or 1");
      ++c.support[i];
      auto& hallucinated = c.hallucinated[i];
      auto& first = c.first[i];
      if (seq[k] == 1) {
        ++hallucinated;
        if (!seen) ++first;
        seen = true;
      }
    }
  }
  for (const auto& [i, n] : c.support) {
    c.r[i] = static_cast<double>(c.hallucinated[i]) / static_cast<double>(n);
    c.r_first[i] = static_cast<double>(c.first[i]) / static_cast<double>(n);
  }
  return c;
}

inline PositionalCurves positional_curves(std::span<const AnnotatedResponse> corpus) {
  std::vector<std::vector<int>> labels;
  labels.reserve(corpus.size());
  for (const auto& r : corpus) labels.push_back(r.labels);
  return positional_curves_from_labels(labels);
}

// --- detection metrics -----------------------------------------------------

/// Probability that a random non-hallucinated item (label 0) scores above a
/// random hallucinated one (label 1), ties counted as one half. Computed from
/// midranks (Mann-Whitney U).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidInput("auroc: length mismatch");
  std::size_t n0 = 0;
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) ++n0;
    else if (labels[i] == 1) ++n1;
    else throw InvalidInput("auroc: labels must be 0 or 1");
    if (std::isnan(scores[i])) throw InvalidInput("auroc: NaN score");
  }
  if (n0 == 0 || n1 == 0) throw UndefinedMetric("auroc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum0 = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 0) rank_sum0 += midrank;
    i = j;
  }
  const double a = static_cast<double>(n0);
  const double u0 = rank_sum0 - a * (a + 1.0) / 2.0;
  return u0 / (a * static_cast<double>(n1));
}

struct SentenceScores {
  double g_theta = 0.0;
  double similarity = 0.0;
};

inline std::vector<SentenceScores> per_sentence_scores(const Response& response) {
  const auto& sentences = response.candidate.sentences;
  if (sentences.empty()) throw InvalidState("per_sentence_scores: empty response");
  std::vector<SentenceScores> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    if (s.token_logprobs.empty())
      throw InvalidState("per_sentence_scores: sentence without log-probabilities");
    if (!s.similarity) throw InvalidState("per_sentence_scores: sentence without similarity");
    out.push_back({sentence_likelihood(s.token_logprobs), *s.similarity});
  }
  return out;
}

struct SampleSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased; 0 when n < 2
};

inline SampleSummary summarize(std::span<const double> xs) {
  SampleSummary s;
  s.n = xs.size();
  if (s.n == 0) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    for (double x : xs) s.variance += (x - s.mean) * (x - s.mean);
    s.variance /= static_cast<double>(s.n - 1);
  }
  return s;
}

/// |mean_a - mean_b| over the pooled standard deviation of the two samples.
/// Absent when either sample is empty or the pooled deviation is zero.
inline std::optional<double> normalized_gap(std::span<const double> a, std::span<const double> b) {
  const auto sa = summarize(a);
  const auto sb = summarize(b);
  if (sa.n == 0 || sb.n == 0 || sa.n + sb.n < 3) return std::nullopt;
  const double pooled_var =
      (static_cast<double>(sa.n - 1) * sa.variance + static_cast<double>(sb.n - 1) * sb.variance) /
      static_cast<double>(sa.n + sb.n - 2);
  if (!(pooled_var > 0.0)) return std::nullopt;
  return std::abs(sa.mean - sb.mean) / std::sqrt(pooled_var);
}

}  // namespace cgd
