#pragma once

// Deterministic in-process backend. A MockWorld scripts, for each
// (image, prefix) node, an ordered list of next-sentence alternatives and a
// table of sentence similarities. Every reply is a pure function of the
// request, so concurrent or retried calls always agree.
//
// Selection of the alternative for a request:
//   greedy flag set   -> highest total log-probability (lowest index on ties)
//   Selection::slot   -> alternatives[sample_slot]
//   Selection::sample -> categorical draw over alternatives, weights
//                        exp(total_logprob / temperature) after top-k / top-p
//                        filtering, RNG seeded from the derivation fields

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>

#include "cgd/backend.hpp"
#include "cgd/detail/hash.hpp"
#include "cgd/wire.hpp"

namespace cgd {

struct MockAlternative {
  std::string text;
  std::vector<std::string> tokens;  // derived from text when empty
  std::vector<double> logprobs;
  bool end = false;

  double total_logprob() const { return std::accumulate(logprobs.begin(), logprobs.end(), 0.0); }
};

/// Splits text into word tokens that concatenate back to the text:
/// "A dog runs." -> {"A", " dog", " runs."}.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    while (j < text.size() && detail::is_space(text[j])) ++j;
    if (j == text.size()) break;
    while (j < text.size() && !detail::is_space(text[j])) ++j;
    std::string tok(text.substr(i, j - i));
    if (out.empty()) tok = std::string(detail::trim(tok));
    out.push_back(std::move(tok));
    i = j;
  }
  return out;
}

struct MockWorld {
  enum class Selection { slot, sample };

  struct Key {
    std::string image;  // empty matches any image
    std::vector<std::string> prefix;
    friend auto operator<=>(const Key&, const Key&) = default;
  };

  Selection selection = Selection::slot;
  std::map<Key, std::vector<MockAlternative>> script;
  std::map<std::pair<std::string, std::string>, double> sim_table;  // (image, text)
  double default_sim = 0.0;

  void add_entry(std::vector<std::string> prefix, std::vector<MockAlternative> alternatives,
                 std::string image = {});
  void set_similarity(std::string text, double score, std::string image = {});

  const std::vector<MockAlternative>* find(std::string_view image,
                                           const std::vector<std::string>& prefix) const;
  double similarity(std::string_view image, std::string_view text) const;
  std::size_t choose(const GenerationRequest& request,
                     const std::vector<MockAlternative>& alternatives) const;
  GenerationReply reply(const GenerationRequest& request) const;

  static MockWorld from_json(const json& j);
  static MockWorld load(const std::filesystem::path& path);
  json to_json() const;
};

class MockBackend final : public Generator, public Guide {
 public:
  explicit MockBackend(MockWorld world)
      : world_(std::make_shared<const MockWorld>(std::move(world))) {}
  explicit MockBackend(std::shared_ptr<const MockWorld> world) : world_(std::move(world)) {}

  GenerationReply generate_next_sentence(const GenerationRequest& request) const override {
    return world_->reply(request);
  }

  double similarity(const ImageRef& image, std::string_view text) const override {
    if (detail::trim(text).empty()) throw InvalidInput("similarity: empty text");
    return world_->similarity(image.id, text);
  }

  const MockWorld& world() const noexcept { return *world_; }

 private:
  std::shared_ptr<const MockWorld> world_;
};

// --- implementation --------------------------------------------------------

inline void MockWorld::add_entry(std::vector<std::string> prefix,
                                 std::vector<MockAlternative> alternatives, std::string image) {
  if (alternatives.empty()) throw InvalidInput("mock script entry without alternatives");
  for (auto& alt : alternatives) {
    if (alt.tokens.empty()) alt.tokens = word_tokens(alt.text);
    if (alt.tokens.size() != alt.logprobs.size())
      throw InvalidInput("mock alternative '" + alt.text + "': " +
                         std::to_string(alt.tokens.size()) + " tokens but " +
                         std::to_string(alt.logprobs.size()) + " logprobs");
    for (double lp : alt.logprobs)
      if (!(lp <= 0.0)) throw InvalidInput("mock alternative '" + alt.text + "': logprob > 0");
  }
  script[Key{std::move(image), std::move(prefix)}] = std::move(alternatives);
}

inline void MockWorld::set_similarity(std::string text, double score, std::string image) {
  if (!(score >= -1.0 && score <= 1.0)) throw InvalidInput("mock similarity outside [-1, 1]");
  sim_table[{std::move(image), std::move(text)}] = score;
}

inline const std::vector<MockAlternative>* MockWorld::find(
    std::string_view image, const std::vector<std::string>& prefix) const {
  if (auto it = script.find(Key{std::string(image), prefix}); it != script.end())
    return &it->second;
  if (!image.empty())
    if (auto it = script.find(Key{{}, prefix}); it != script.end()) return &it->second;
  return nullptr;
}

inline double MockWorld::similarity(std::string_view image, std::string_view text) const {
  const std::string t(text);
  if (auto it = sim_table.find({std::string(image), t}); it != sim_table.end()) return it->second;
  if (auto it = sim_table.find({std::string(), t}); it != sim_table.end()) return it->second;
  return default_sim;
}

inline std::size_t MockWorld::choose(const GenerationRequest& request,
                                     const std::vector<MockAlternative>& alts) const {
  if (request.sampling.greedy) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < alts.size(); ++i)
      if (alts[i].total_logprob() > alts[best].total_logprob()) best = i;
    return best;
  }
  if (selection == Selection::slot) {
    const auto slot = static_cast<std::size_t>(request.derivation.sample_slot);
    if (slot >= alts.size())
      throw BackendError(BackendErrorKind::world_miss,
                         "no scripted alternative for sample_slot " + std::to_string(slot));
    return slot;
  }

  std::vector<std::size_t> order(alts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return alts[a].total_logprob() > alts[b].total_logprob();
  });
  if (request.sampling.top_k > 0 && static_cast<std::size_t>(request.sampling.top_k) < order.size())
    order.resize(static_cast<std::size_t>(request.sampling.top_k));

  const double top = alts[order.front()].total_logprob();
  std::vector<double> weights;
  weights.reserve(order.size());
  for (std::size_t i : order)
    weights.push_back(std::exp((alts[i].total_logprob() - top) / request.sampling.temperature));

  if (request.sampling.top_p < 1.0) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double cumulative = 0.0;
    std::size_t keep = 0;
    while (keep < weights.size()) {
      cumulative += weights[keep] / total;
      ++keep;
      if (cumulative >= request.sampling.top_p) break;
    }
    weights.resize(keep);
    order.resize(keep);
  }

  std::mt19937_64 rng(detail::derivation_seed(request.derivation));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return order[pick(rng)];
}

inline GenerationReply MockWorld::reply(const GenerationRequest& request) const {
  validate(request);
  const auto* alts = find(request.prompt.image.id, request.prefix_sentences);
  if (alts == nullptr)
    throw BackendError(BackendErrorKind::world_miss,
                       "no script entry for image '" + request.prompt.image.id + "' after " +
                           std::to_string(request.prefix_sentences.size()) + " sentences");
  const MockAlternative& alt = (*alts)[choose(request, *alts)];

  GenerationReply out;
  out.derivation = request.derivation;
  const auto budget = static_cast<std::size_t>(request.remaining_token_budget);
  if (alt.tokens.size() > budget) {
    out.tokens.assign(alt.tokens.begin(), alt.tokens.begin() + static_cast<std::ptrdiff_t>(budget));
    out.token_logprobs.assign(alt.logprobs.begin(),
                              alt.logprobs.begin() + static_cast<std::ptrdiff_t>(budget));
    std::string text;
    for (const auto& t : out.tokens) text += t;
    out.sentence_text = std::string(detail::trim(text));
    out.end_of_response = true;
    out.tokens_consumed = request.remaining_token_budget;
  } else {
    out.tokens = alt.tokens;
    out.token_logprobs = alt.logprobs;
    out.sentence_text = std::string(detail::trim(alt.text));
    out.end_of_response = alt.end;
    out.tokens_consumed = static_cast<int>(alt.tokens.size());
  }
  return out;
}

inline MockWorld MockWorld::from_json(const json& j) {
  MockWorld w;
  try {
    const auto sel = j.value("selection", std::string("slot"));
    if (sel == "slot") w.selection = Selection::slot;
    else if (sel == "sample") w.selection = Selection::sample;
    else throw InvalidInput("mock world: unknown selection '" + sel + "'");
    w.default_sim = j.value("default_sim", 0.0);
    if (!(w.default_sim >= -1.0 && w.default_sim <= 1.0))
      throw InvalidInput("mock world: default_sim outside [-1, 1]");
    for (const auto& e : j.value("script", json::array())) {
      std::vector<MockAlternative> alts;
      for (const auto& a : e.at("alternatives")) {
        MockAlternative alt;
        a.at("text").get_to(alt.text);
        a.at("logprobs").get_to(alt.logprobs);
        if (a.contains("tokens")) a.at("tokens").get_to(alt.tokens);
        alt.end = a.value("end", false);
        alts.push_back(std::move(alt));
      }
      w.add_entry(e.at("prefix").get<std::vector<std::string>>(), std::move(alts),
                  e.value("image", std::string()));
    }
    for (const auto& s : j.value("sim_table", json::array()))
      w.set_similarity(s.at("text").get<std::string>(), s.at("score").get<double>(),
                       s.value("image", std::string()));
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("mock world: ") + e.what());
  }
  return w;
}

inline MockWorld MockWorld::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open mock world file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw InvalidInput("mock world " + path.string() + ": " + e.what());
  }
}

inline json MockWorld::to_json() const {
  json j;
  j["selection"] = selection == Selection::slot ? "slot" : "sample";
  j["default_sim"] = default_sim;
  json entries = json::array();
  for (const auto& [key, alts] : script) {
    json e;
    if (!key.image.empty()) e["image"] = key.image;
    e["prefix"] = key.prefix;
    json arr = json::array();
    for (const auto& a : alts)
      arr.push_back(json{{"text", a.text}, {"tokens", a.tokens}, {"logprobs", a.logprobs},
                         {"end", a.end}});
    e["alternatives"] = std::move(arr);
    entries.push_back(std::move(e));
  }
  j["script"] = std::move(entries);
  json sims = json::array();
  for (const auto& [key, score] : sim_table) {
    json s;
    if (!key.first.empty()) s["image"] = key.first;
    s["text"] = key.second;
    s["score"] = score;
    sims.push_back(std::move(s));
  }
  j["sim_table"] = std::move(sims);
  return j;
}

}  // namespace cgd
