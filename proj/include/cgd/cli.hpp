#pragma once

// Batch commands behind the `cgd` executable. Each command takes a plain
// options struct and returns a process exit code:
//   0  success
//   2  some records failed (each failure is written as an error record)
//   3  backend unreachable after retries
//   4  unusable input (missing file, bad vocabulary, id mismatch)

#include <chrono>
#include <iomanip>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>

#include "cgd/corpus.hpp"
#include "cgd/detail/hash.hpp"
#include "cgd/engine.hpp"
#include "cgd/eval.hpp"
#include "cgd/mock_backend.hpp"
#include "cgd/remote_backend.hpp"
#include "cgd/serialize.hpp"

namespace cgd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitUnreachable = 3;
inline constexpr int kExitInput = 4;

struct DecodeOptions {
  DecodeConfig config;
  std::string input;
  std::string output;
  std::string backend_url;  // falls back to --mock-world, then CGD_BACKEND_URL
  std::string mock_world;
  std::string backend_token;
  std::string manifest;     // default: <output>.manifest.json
  std::size_t jobs = 1;
  bool timing = true;
  RetryPolicy retry;
};

struct EvaluateOptions {
  std::string corpus;
  std::string annotations;
  std::string vocab;
  std::string output;  // JSON report; stdout when empty
  std::string detail;  // optional per-response detail file
  bool curves = false;
};

struct AnalyzeOptions {
  std::string corpus;
  std::string annotations;
  std::string vocab;
  std::string output;
};

/// Seed of one input record: the run seed mixed with a stable hash of the
/// image id, so records decode independently of their position and of --jobs.
inline std::uint64_t record_seed(std::uint64_t seed, std::string_view image_id) {
  return seed ^ detail::fnv1a64(image_id);
}

namespace detail {

inline std::string new_run_id() {
  std::random_device rd;
  const auto now = std::chrono::system_clock::now().time_since_epoch().count();
  std::uint64_t h = cgd::detail::mix64((static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
                                       static_cast<std::uint64_t>(now));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str().substr(0, 12);
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json error_json(const std::exception& e) {
  json err{{"kind", "error"}, {"message", e.what()}};
  const BackendError* be = dynamic_cast<const BackendError*>(&e);
  if (const auto* de = dynamic_cast<const DecodeError*>(&e)) be = &de->cause();
  if (be != nullptr) {
    err["kind"] = to_string(be->kind());
    err["attempts"] = be->attempts();
    if (be->http_status() != 0) err["http_status"] = be->http_status();
    if (!be->code().empty()) err["code"] = be->code();
    if (be->derivation()) err["derivation"] = *be->derivation();
  } else if (dynamic_cast<const InvalidInput*>(&e) != nullptr) {
    err["kind"] = "invalid_input";
  }
  return err;
}

inline bool is_transport_failure(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const DecodeError& e) {
    return e.cause().kind() == BackendErrorKind::transport;
  } catch (const BackendError& e) {
    return e.kind() == BackendErrorKind::transport;
  } catch (...) {
    return false;
  }
}

inline json sentences_json(const Candidate& c) {
  json arr = json::array();
  for (const auto& s : c.sentences) {
    json js{{"index", s.index}, {"text", s.text}, {"g_theta", sentence_likelihood(s.token_logprobs)}};
    if (s.similarity) js["similarity"] = *s.similarity;
    js["n_tokens"] = s.tokens.size();
    arr.push_back(std::move(js));
  }
  return arr;
}

inline json trace_summary(const DecodeTrace& trace) {
  json expanded = json::array();
  json kept = json::array();
  for (const auto& s : trace.steps) {
    expanded.push_back(s.expanded.size());
    kept.push_back(s.kept.size());
  }
  return json{{"steps", trace.steps.size()}, {"expanded", expanded}, {"kept", kept}};
}

inline json curves_json(const PositionalCurves& c) {
  json rows = json::array();
  for (const auto& [i, n] : c.support)
    rows.push_back(json{{"index", i}, {"support", n}, {"r", c.r.at(i)}, {"r_first", c.r_first.at(i)}});
  return rows;
}

inline bool write_text(const std::string& path, const std::string& text, std::ostream& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    log << "error: cannot write " << path << "\n";
    return false;
  }
  out << text;
  return true;
}

struct Backends {
  std::unique_ptr<Generator> generator_owner;
  const Generator* generator = nullptr;
  const Guide* guide = nullptr;
  std::string address;
};

inline Backends open_backends(const DecodeOptions& opt) {
  Backends b;
  RemoteOptions remote;
  remote.bearer_token = opt.backend_token;
  remote.retry = opt.retry;
  std::string url = opt.backend_url;
  if (url.empty() && opt.mock_world.empty())
    if (const char* env = std::getenv(kBackendUrlEnv); env != nullptr) url = env;

  if (!url.empty()) {
    auto r = std::make_unique<RemoteBackend>(url, remote);
    b.guide = r.get();
    b.generator = r.get();
    b.generator_owner = std::move(r);
    b.address = url;
  } else if (!opt.mock_world.empty()) {
    auto m = std::make_unique<MockBackend>(MockWorld::load(opt.mock_world));
    b.guide = m.get();
    b.generator = m.get();
    b.generator_owner = std::move(m);
    b.address = "mock:" + opt.mock_world;
  } else {
    throw InvalidInput("no backend: pass --backend-url, --mock-world or set CGD_BACKEND_URL");
  }
  return b;
}

}  // namespace detail

inline int cmd_decode(const DecodeOptions& opt, std::ostream& log = std::cerr) {
  const auto run_started = std::chrono::steady_clock::now();
  DecodeConfig config = opt.config.normalized();
  detail::Backends backends;
  std::vector<JsonLine> lines;
  try {
    validate(config);
    backends = detail::open_backends(opt);
    lines = read_json_lines(opt.input);
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kExitInput;
  }
  if (lines.empty()) log << "warning: " << opt.input << " has no records\n";

  const Decoder decoder(*backends.generator, *backends.guide);
  std::vector<json> records(lines.size());
  std::vector<std::exception_ptr> failures(lines.size());
  std::vector<double> seconds(lines.size(), 0.0);

  cgd::detail::bounded_parallel_for(lines.size(), std::max<std::size_t>(opt.jobs, 1), [&](std::size_t i) {
    const JsonLine& line = lines[i];
    json rec;
    if (!line.value) {
      rec = json{{"line", line.line}, {"error", {{"kind", "malformed_input"}, {"message", line.error}}}};
      records[i] = std::move(rec);
      failures[i] = std::make_exception_ptr(InvalidInput(line.error));
      return;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      const json& j = *line.value;
      PromptInput prompt;
      prompt.image.id = j.at("image_id").get<std::string>();
      if (j.contains("uri")) prompt.image.uri = j["uri"].get<std::string>();
      if (j.contains("bytes_digest")) prompt.image.bytes_digest = j["bytes_digest"].get<std::string>();
      prompt.text = j.value("prompt", std::string(kDefaultPrompt));
      rec["image_id"] = prompt.image.id;

      DecodeConfig cfg = config;
      cfg.seed = record_seed(config.seed, prompt.image.id);
      rec["mode"] = to_string(cfg.mode);
      rec["seed"] = cfg.seed;

      if (cfg.mode == DecodeMode::cgd) {
        const auto result = decoder.decode(prompt, cfg);
        rec["response"] = result.response.full_text;
        rec["sentences"] = detail::sentences_json(result.response.candidate);
        rec["scores"] = result.response.scores;
        rec["trace"] = detail::trace_summary(result.trace);
      } else {
        const auto response = decoder.decode_baseline(prompt, cfg);
        rec["response"] = response.full_text;
        rec["sentences"] = detail::sentences_json(response.candidate);
        rec["scores"] = response.scores;
        rec["trace"] = nullptr;
      }
    } catch (const std::exception& e) {
      if (!rec.contains("image_id")) rec["line"] = line.line;
      rec["error"] = detail::error_json(e);
      if (dynamic_cast<const json::exception*>(&e) != nullptr) rec["error"]["kind"] = "malformed_input";
      failures[i] = std::current_exception();
    }
    seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (opt.timing) rec["elapsed_s"] = seconds[i];
    records[i] = std::move(rec);
  });

  std::string body;
  for (const auto& r : records) body += r.dump() + "\n";
  if (!detail::write_text(opt.output, body, log)) return kExitInput;

  bool unreachable = false;
  std::size_t failed = 0;
  for (const auto& f : failures) {
    if (!f) continue;
    ++failed;
    unreachable = unreachable || detail::is_transport_failure(f);
  }

  json manifest{{"run_id", detail::new_run_id()},
                {"config", config},
                {"backend", backends.address},
                {"vocabulary", nullptr},
                {"input", opt.input},
                {"output", opt.output},
                {"records", records.size()},
                {"failed", failed}};
  json per_sample = json::array();
  for (std::size_t i = 0; i < records.size(); ++i)
    per_sample.push_back(json{{"image_id", records[i].value("image_id", std::string())},
                              {"seconds", seconds[i]}});
  manifest["timing"] = json{
      {"total_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - run_started).count()},
      {"per_sample", per_sample}};
  const std::string manifest_path = opt.manifest.empty() ? opt.output + ".manifest.json" : opt.manifest;
  detail::write_text(manifest_path, manifest.dump(2) + "\n", log);

  log << "decoded " << (records.size() - failed) << "/" << records.size() << " records\n";
  if (unreachable) {
    log << "error: backend unreachable after retries\n";
    return kExitUnreachable;
  }
  return failed == 0 ? kExitOk : kExitPartial;
}

namespace detail {

struct LoadedCorpus {
  std::vector<CorpusEntry> entries;
  std::size_t skipped = 0;
};

inline LoadedCorpus load_corpus(const std::string& path, std::ostream& log) {
  LoadedCorpus c;
  for (const auto& line : read_json_lines(path)) {
    if (!line.value) {
      log << "warning: " << path << ":" << line.line << ": " << line.error << "\n";
      ++c.skipped;
      continue;
    }
    if (line.value->contains("error")) {
      ++c.skipped;
      continue;
    }
    try {
      c.entries.push_back(parse_corpus_entry(*line.value));
    } catch (const InvalidInput& e) {
      log << "warning: " << path << ":" << line.line << ": " << e.what() << "\n";
      ++c.skipped;
    }
  }
  return c;
}

/// Gold sets and dataset names resolved from the annotation file or from the
/// records themselves. A corpus id without gold objects is an error listing
/// every such id; annotations for images absent from the corpus only warn.
inline void attach_annotations(std::vector<CorpusEntry>& entries, const std::string& path,
                               std::ostream& log) {
  std::vector<std::string> unmatched;
  if (!path.empty()) {
    const auto annotations = load_annotations(path);
    std::set<std::string> seen;
    for (auto& e : entries) {
      auto it = annotations.find(e.image_id);
      if (it == annotations.end()) {
        unmatched.push_back(e.image_id);
        continue;
      }
      seen.insert(e.image_id);
      e.gold_objects = it->second.gold_objects;
      if (!e.dataset) e.dataset = it->second.dataset;
    }
    std::size_t extra = 0;
    for (const auto& [id, a] : annotations) extra += seen.contains(id) ? 0 : 1;
    if (extra > 0) log << "warning: " << extra << " annotated images are not in the corpus\n";
  } else {
    for (const auto& e : entries)
      if (!e.gold_objects) unmatched.push_back(e.image_id);
  }
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& id : unmatched) list += (list.empty() ? "" : ", ") + id;
    throw InvalidInput("corpus ids without gold objects: " + list);
  }
}

}  // namespace detail

inline int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out = std::cout,
                        std::ostream& log = std::cerr) {
  std::vector<AnnotatedResponse> annotated;
  std::vector<CorpusEntry> entries;
  try {
    const auto vocab = ObjectVocabulary::load(opt.vocab);
    auto corpus = detail::load_corpus(opt.corpus, log);
    entries = std::move(corpus.entries);
    if (entries.empty()) throw InvalidInput("corpus " + opt.corpus + " has no usable records");
    detail::attach_annotations(entries, opt.annotations, log);
    for (const auto& e : entries) annotated.push_back(label_response(e.texts(), *e.gold_objects, vocab));
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kExitInput;
  }

  const auto metrics = chair(annotated);
  json report;
  report["n_responses"] = metrics.n_responses;
  report["chair_s"] = metrics.chair_s;
  report["chair_i"] = metrics.chair_i;
  report["chair_i_zero_denominator"] = metrics.chair_i_zero_denominator;
  report["avg_len"] = metrics.avg_len;
  report["avg_coverage"] = detail::optional_number(metrics.avg_coverage);
  report["counts"] = json{{"hallucinated_responses", metrics.hallucinated_responses},
                          {"hallucinated_objects", metrics.hallucinated_objects},
                          {"mentioned_objects", metrics.mentioned_objects}};
  PositionalCurves curves;
  if (opt.curves) {
    curves = positional_curves(annotated);
    report["curves"] = detail::curves_json(curves);
  }

  out << "responses      " << metrics.n_responses << "\n"
      << "CHAIR_s        " << detail::fmt(metrics.chair_s) << "\n"
      << "CHAIR_i        " << detail::fmt(metrics.chair_i)
      << (metrics.chair_i_zero_denominator ? "  (no objects mentioned)" : "") << "\n"
      << "avg_len        " << detail::fmt(metrics.avg_len, 2) << "\n"
      << "avg_coverage   " << (metrics.avg_coverage ? detail::fmt(*metrics.avg_coverage) : "n/a")
      << "\n";
  if (opt.curves) {
    out << "index\tsupport\tR\tR_first\n";
    for (const auto& [i, n] : curves.support)
      out << i << "\t" << n << "\t" << detail::fmt(curves.r.at(i)) << "\t"
          << detail::fmt(curves.r_first.at(i)) << "\n";
  }

  if (opt.output.empty()) {
    out << report.dump(2) << "\n";
  } else if (!detail::write_text(opt.output, report.dump(2) + "\n", log)) {
    return kExitInput;
  }

  if (!opt.detail.empty()) {
    std::string body;
    for (std::size_t i = 0; i < annotated.size(); ++i) {
      const auto& a = annotated[i];
      const auto mentioned = response_mentions(a);
      std::set<std::string> hallucinated;
      for (const auto& o : mentioned)
        if (!a.gold_objects.contains(o)) hallucinated.insert(o);
      json d{{"image_id", entries[i].image_id},
             {"sentences", a.sentences},
             {"labels", a.labels},
             {"mentioned", a.mentioned_objects},
             {"gold", a.gold_objects},
             {"hallucinated", hallucinated},
             {"words", word_count(a.response_text)}};
      body += d.dump() + "\n";
    }
    if (!detail::write_text(opt.detail, body, log)) return kExitInput;
  }
  return kExitOk;
}

inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out = std::cout,
                       std::ostream& log = std::cerr) {
  std::vector<CorpusEntry> entries;
  std::vector<std::vector<int>> labels;
  try {
    entries = detail::load_corpus(opt.corpus, log).entries;
    if (entries.empty()) throw InvalidInput("corpus " + opt.corpus + " has no usable records");
    const bool labelled = std::all_of(entries.begin(), entries.end(), [](const CorpusEntry& e) {
      return std::all_of(e.sentences.begin(), e.sentences.end(),
                         [](const CorpusSentence& s) { return s.label.has_value(); });
    });
    if (labelled) {
      for (const auto& e : entries) {
        std::vector<int> l;
        for (const auto& s : e.sentences) l.push_back(*s.label);
        labels.push_back(std::move(l));
      }
      if (!opt.annotations.empty()) detail::attach_annotations(entries, opt.annotations, log);
    } else {
      if (opt.vocab.empty())
        throw InvalidInput("corpus lacks per-sentence labels; pass --vocab and gold objects");
      const auto vocab = ObjectVocabulary::load(opt.vocab);
      detail::attach_annotations(entries, opt.annotations, log);
      for (const auto& e : entries) labels.push_back(label_response(e.texts(), *e.gold_objects, vocab).labels);
    }
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kExitInput;
  }

  json report;
  report["n_responses"] = entries.size();
  std::size_t n_sentences = 0;
  for (const auto& e : entries) n_sentences += e.sentences.size();
  report["n_sentences"] = n_sentences;

  const auto curves = positional_curves_from_labels(labels);
  report["curves"] = detail::curves_json(curves);

  using Getter = std::optional<double> CorpusSentence::*;
  const std::vector<std::pair<std::string, Getter>> score_types = {
      {"g_theta", &CorpusSentence::g_theta}, {"similarity", &CorpusSentence::similarity}};

  auto auroc_or_null = [](const std::vector<double>& s, const std::vector<int>& l) -> json {
    try {
      return auroc(s, l);
    } catch (const UndefinedMetric&) {
      return nullptr;
    }
  };

  json auroc_report = json::object();
  const int max_index = curves.support.empty() ? 0 : curves.support.rbegin()->first;
  for (const auto& [name, field] : score_types) {
    std::vector<double> all_s;
    std::vector<int> all_l;
    std::map<int, std::pair<std::vector<double>, std::vector<int>>> by_index;
    for (std::size_t r = 0; r < entries.size(); ++r) {
      for (std::size_t k = 0; k < entries[r].sentences.size(); ++k) {
        const auto& v = entries[r].sentences[k].*field;
        if (!v) continue;
        all_s.push_back(*v);
        all_l.push_back(labels[r][k]);
        auto& slot = by_index[static_cast<int>(k) + 1];
        slot.first.push_back(*v);
        slot.second.push_back(labels[r][k]);
      }
    }
    if (all_s.empty()) continue;
    json rows = json::array();
    for (int i = 1; i <= max_index; ++i) {
      auto it = by_index.find(i);
      if (it == by_index.end()) continue;
      rows.push_back(json{{"index", i},
                          {"support", it->second.first.size()},
                          {"auroc", auroc_or_null(it->second.first, it->second.second)}});
    }
    auroc_report[name] = json{{"overall", auroc_or_null(all_s, all_l)},
                              {"support", all_s.size()},
                              {"by_index", rows}};
  }
  report["auroc"] = auroc_report;

  // Per-dataset score means and normalized gaps between every dataset pair.
  std::vector<std::string> datasets;
  std::map<std::string, std::map<std::string, std::vector<double>>> samples;
  for (const auto& e : entries) {
    const std::string ds = e.dataset.value_or("default");
    if (std::find(datasets.begin(), datasets.end(), ds) == datasets.end()) datasets.push_back(ds);
    for (const auto& s : e.sentences)
      for (const auto& [name, field] : score_types)
        if (const auto& v = s.*field) samples[ds][name].push_back(*v);
  }
  json ds_rows = json::array();
  for (const auto& ds : datasets) {
    json row{{"dataset", ds}};
    for (const auto& [name, field] : score_types) {
      const auto summary = summarize(samples[ds][name]);
      row[name] = summary.n == 0 ? json(nullptr)
                                 : json{{"n", summary.n}, {"mean", summary.mean},
                                        {"std", std::sqrt(summary.variance)}};
    }
    ds_rows.push_back(std::move(row));
  }
  report["datasets"] = ds_rows;
  json gaps = json::array();
  for (std::size_t a = 0; a < datasets.size(); ++a) {
    for (std::size_t b = a + 1; b < datasets.size(); ++b) {
      json row{{"a", datasets[a]}, {"b", datasets[b]}};
      for (const auto& [name, field] : score_types) {
        const auto& xa = samples[datasets[a]][name];
        const auto& xb = samples[datasets[b]][name];
        row[name] = xa.empty() || xb.empty()
                        ? json(nullptr)
                        : json{{"mean_gap", summarize(xa).mean - summarize(xb).mean},
                               {"normalized_gap", detail::optional_number(normalized_gap(xa, xb))}};
      }
      gaps.push_back(std::move(row));
    }
  }
  report["gaps"] = gaps;

  out << "responses " << entries.size() << ", sentences " << n_sentences << "\n";
  out << "index\tsupport\tR\tR_first";
  for (const auto& [name, field] : score_types)
    if (auroc_report.contains(name)) out << "\tAUROC_" << name;
  out << "\n";
  for (const auto& [i, n] : curves.support) {
    out << i << "\t" << n << "\t" << detail::fmt(curves.r.at(i)) << "\t"
        << detail::fmt(curves.r_first.at(i));
    for (const auto& [name, field] : score_types) {
      if (!auroc_report.contains(name)) continue;
      std::string cell = "n/a";
      for (const auto& row : auroc_report[name]["by_index"])
        if (row["index"] == i && !row["auroc"].is_null()) cell = detail::fmt(row["auroc"].get<double>());
      out << "\t" << cell;
    }
    out << "\n";
  }

  if (opt.output.empty()) {
    out << report.dump(2) << "\n";
  } else if (!detail::write_text(opt.output, report.dump(2) + "\n", log)) {
    return kExitInput;
  }
  return kExitOk;
}

}  // namespace cgd::cli
