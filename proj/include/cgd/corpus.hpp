#pragma once

// Line-oriented JSON record files used by the command-line tools.
//
// decode input     {"image_id", "uri"?, "bytes_digest"?, "prompt"?}
// decoded corpus   {"image_id", "response", "sentences": [{"index", "text",
//                   "g_theta", "similarity"?, ...}], "scores", "trace", ...}
// annotations      {"image_id", "gold_objects": [...], "dataset"?}
//
// Corpus records may also carry "gold_objects", "dataset" and per-sentence
// "label" values directly, and may give only "response" text, which is then
// segmented into sentences.

#include <filesystem>
#include <fstream>
#include <map>

#include "cgd/core.hpp"
#include "cgd/wire.hpp"

namespace cgd {

struct JsonLine {
  int line = 0;
  std::optional<json> value;
  std::string error;  // set when the line is not valid JSON
};

inline std::vector<JsonLine> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::vector<JsonLine> out;
  std::string text;
  int lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (detail::trim(text).empty()) continue;
    JsonLine line;
    line.line = lineno;
    try {
      line.value = json::parse(text);
      if (!line.value->is_object()) {
        line.value.reset();
        line.error = "record is not a JSON object";
      }
    } catch (const json::parse_error& e) {
      line.error = e.what();
    }
    out.push_back(std::move(line));
  }
  return out;
}

struct CorpusSentence {
  std::string text;
  std::optional<double> g_theta;
  std::optional<double> similarity;
  std::optional<int> label;
};

struct CorpusEntry {
  std::string image_id;
  std::optional<std::string> dataset;
  std::vector<CorpusSentence> sentences;
  std::optional<std::set<std::string>> gold_objects;

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.push_back(s.text);
    return out;
  }
};

inline CorpusEntry parse_corpus_entry(const json& j) {
  CorpusEntry e;
  try {
    j.at("image_id").get_to(e.image_id);
    if (e.image_id.empty()) throw InvalidInput("empty image_id");
    if (j.contains("dataset") && !j["dataset"].is_null()) e.dataset = j["dataset"].get<std::string>();
    if (j.contains("gold_objects")) e.gold_objects = j["gold_objects"].get<std::set<std::string>>();
    if (j.contains("sentences")) {
      for (const auto& s : j["sentences"]) {
        CorpusSentence cs;
        s.at("text").get_to(cs.text);
        if (s.contains("g_theta") && !s["g_theta"].is_null()) cs.g_theta = s["g_theta"].get<double>();
        if (s.contains("similarity") && !s["similarity"].is_null())
          cs.similarity = s["similarity"].get<double>();
        if (s.contains("label") && !s["label"].is_null()) {
          cs.label = s["label"].get<int>();
          if (*cs.label != 0 && *cs.label != 1) throw InvalidInput("label must be 0 or 1");
        }
        e.sentences.push_back(std::move(cs));
      }
    } else {
      for (auto& text : segment_sentences(j.at("response").get<std::string>()))
        e.sentences.push_back(CorpusSentence{std::move(text), {}, {}, {}});
    }
  } catch (const json::exception& ex) {
    throw InvalidInput(ex.what());
  }
  return e;
}

struct Annotation {
  std::set<std::string> gold_objects;
  std::optional<std::string> dataset;
};

inline std::map<std::string, Annotation> load_annotations(const std::filesystem::path& path) {
  std::map<std::string, Annotation> out;
  for (const auto& line : read_json_lines(path)) {
    if (!line.value)
      throw InvalidInput(path.string() + ":" + std::to_string(line.line) + ": " + line.error);
    try {
      const auto& j = *line.value;
      Annotation a;
      j.at("gold_objects").get_to(a.gold_objects);
      if (j.contains("dataset") && !j["dataset"].is_null()) a.dataset = j["dataset"].get<std::string>();
      out[j.at("image_id").get<std::string>()] = std::move(a);
    } catch (const json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line.line) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace cgd
