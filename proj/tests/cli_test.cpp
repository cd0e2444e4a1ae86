#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cgd/cli.hpp"
#include "chair_fixture.hpp"
#include "test_worlds.hpp"

namespace {

using cgd::json;
using cgd::testing::alt;
using cgd::testing::TempDir;
namespace cli = cgd::cli;

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_records(const std::filesystem::path& p) {
  std::vector<json> out;
  std::istringstream in(read(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

// Per-image worlds: every image gets its own two-step script.
cgd::MockWorld image_world(const std::vector<std::string>& images) {
  cgd::MockWorld w;
  w.selection = cgd::MockWorld::Selection::sample;
  for (const auto& id : images) {
    w.add_entry({}, {alt("A dog on grass.", {-0.2, -0.2, -0.2, -0.2}),
                     alt("A cat on grass.", {-0.3, -0.2, -0.2, -0.2}),
                     alt("A car on grass.", {-0.25, -0.2, -0.2, -0.2})},
                id);
    for (const char* first : {"A dog on grass.", "A cat on grass.", "A car on grass."})
      w.add_entry({first}, {alt("It is sunny.", {-0.1, -0.1, -0.1}, true),
                            alt("A bench stands nearby.", {-0.2, -0.1, -0.1, -0.1}, true)},
                  id);
    w.set_similarity("A dog on grass.", 0.8, id);
    w.set_similarity("A cat on grass.", 0.1, id);
    w.set_similarity("A car on grass.", 0.05, id);
  }
  w.set_similarity("It is sunny.", 0.5);
  w.set_similarity("A bench stands nearby.", 0.2);
  return w;
}

struct DecodeFixture {
  TempDir dir;
  cli::DecodeOptions opt;
  std::ostringstream log;

  explicit DecodeFixture(const std::vector<std::string>& images, std::string extra_lines = {}) {
    write(dir / "world.json", image_world(images).to_json().dump());
    std::string input;
    for (const auto& id : images) input += json{{"image_id", id}}.dump() + "\n";
    write(dir / "in.jsonl", input + extra_lines);
    opt.input = (dir / "in.jsonl").string();
    opt.output = (dir / "out.jsonl").string();
    opt.mock_world = (dir / "world.json").string();
    opt.timing = false;
  }
  int run() { return cli::cmd_decode(opt, log); }
};

TEST(RecordSeed, XorWithFnv1a) {
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(cli::record_seed(0, ""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(cli::record_seed(0, "a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(cli::record_seed(5, "a"), 0xaf63dc4c8601ec8cULL ^ 5ULL);
}

TEST(CmdDecode, WritesOneRecordPerInputInOrder) {
  DecodeFixture f({"img-3", "img-1", "img-2"});
  ASSERT_EQ(f.run(), cli::kExitOk) << f.log.str();
  const auto recs = read_records(f.opt.output);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0]["image_id"], "img-3");
  EXPECT_EQ(recs[2]["image_id"], "img-2");
  for (const auto& r : recs) {
    EXPECT_EQ(r["mode"], "cgd");
    EXPECT_TRUE(r["response"].is_string());
    EXPECT_FALSE(r["sentences"].empty());
    EXPECT_TRUE(r["sentences"][0].contains("g_theta"));
    EXPECT_TRUE(r["sentences"][0].contains("similarity"));
    EXPECT_TRUE(r["scores"]["f_value"].is_number());
    EXPECT_GE(r["trace"]["steps"].get<int>(), 1);
    EXPECT_FALSE(r.contains("elapsed_s"));
    EXPECT_EQ(r["seed"].get<std::uint64_t>(), cli::record_seed(0, r["image_id"].get<std::string>()));
  }
  const auto manifest = json::parse(read(f.opt.output + ".manifest.json"));
  EXPECT_EQ(manifest["config"]["n_candidates"], 3);
  EXPECT_EQ(manifest["config"]["m_samples"], 3);
  EXPECT_EQ(manifest["config"]["alpha"], 0.99);
  EXPECT_EQ(manifest["records"], 3);
  EXPECT_EQ(manifest["run_id"].get<std::string>().size(), 12u);
  EXPECT_GE(manifest["timing"]["total_seconds"].get<double>(), 0.0);
}

TEST(CmdDecode, TimingIsRecordedByDefault) {
  DecodeFixture f({"img-1"});
  f.opt.timing = true;
  ASSERT_EQ(f.run(), cli::kExitOk);
  EXPECT_GE(read_records(f.opt.output)[0]["elapsed_s"].get<double>(), 0.0);
}

TEST(CmdDecode, DeterministicAcrossRunsAndJobs) {
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) ids.push_back("img-" + std::to_string(i));
  DecodeFixture f(ids);
  f.opt.config.seed = 17;
  ASSERT_EQ(f.run(), cli::kExitOk);
  const auto first = read(f.opt.output);
  f.opt.jobs = 6;
  ASSERT_EQ(f.run(), cli::kExitOk);
  EXPECT_EQ(read(f.opt.output), first);
  f.opt.config.seed = 18;
  ASSERT_EQ(f.run(), cli::kExitOk);
  EXPECT_NE(read(f.opt.output), first);
}

TEST(CmdDecode, GreedyModeIsSinglePath) {
  DecodeFixture f({"img-1"});
  f.opt.config.mode = cgd::DecodeMode::greedy;
  ASSERT_EQ(f.run(), cli::kExitOk);
  const auto rec = read_records(f.opt.output)[0];
  EXPECT_EQ(rec["mode"], "greedy");
  EXPECT_TRUE(rec["trace"].is_null());
  EXPECT_EQ(rec["response"], "A dog on grass. It is sunny.");
  const auto manifest = json::parse(read(f.opt.output + ".manifest.json"));
  EXPECT_EQ(manifest["config"]["n_candidates"], 1);
  EXPECT_EQ(manifest["config"]["m_samples"], 1);
}

TEST(CmdDecode, EmptyInputWarnsAndSucceeds) {
  DecodeFixture f({});
  ASSERT_EQ(f.run(), cli::kExitOk);
  EXPECT_EQ(read(f.opt.output), "");
  EXPECT_NE(f.log.str().find("warning"), std::string::npos);
}

TEST(CmdDecode, MalformedLineAndWorldMissArePartialFailures) {
  DecodeFixture f({"img-1"}, "{not json\n{\"image_id\": \"unscripted\"}\n{\"uri\": \"x\"}\n");
  ASSERT_EQ(f.run(), cli::kExitPartial);
  const auto recs = read_records(f.opt.output);
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_FALSE(recs[0].contains("error"));
  EXPECT_EQ(recs[1]["error"]["kind"], "malformed_input");
  EXPECT_EQ(recs[1]["line"], 2);
  EXPECT_EQ(recs[2]["image_id"], "unscripted");
  EXPECT_EQ(recs[2]["error"]["kind"], "world_miss");
  EXPECT_EQ(recs[2]["error"]["derivation"]["step"], 0);
  EXPECT_EQ(recs[3]["error"]["kind"], "malformed_input");
}

TEST(CmdDecode, UnreachableBackendExitsThree) {
  DecodeFixture f({"img-1", "img-2"});
  f.opt.mock_world.clear();
  f.opt.backend_url = "http://127.0.0.1:1";
  f.opt.retry.initial_backoff = std::chrono::milliseconds(1);
  ASSERT_EQ(f.run(), cli::kExitUnreachable);
  const auto recs = read_records(f.opt.output);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0]["error"]["kind"], "transport");
  EXPECT_EQ(recs[0]["error"]["attempts"], 3);
}

TEST(CmdDecode, InputErrorsExitFour) {
  DecodeFixture f({"img-1"});
  f.opt.mock_world = (f.dir / "missing.json").string();
  EXPECT_EQ(f.run(), cli::kExitInput);

  DecodeFixture g({"img-1"});
  g.opt.input = (g.dir / "missing.jsonl").string();
  EXPECT_EQ(g.run(), cli::kExitInput);

  DecodeFixture h({"img-1"});
  h.opt.mock_world.clear();
  ::unsetenv(cgd::kBackendUrlEnv);
  EXPECT_EQ(h.run(), cli::kExitInput);

  DecodeFixture k({"img-1"});
  k.opt.config.alpha = 2.0;
  EXPECT_EQ(k.run(), cli::kExitInput);
}

// --- evaluate --------------------------------------------------------------

struct EvalFixture {
  TempDir dir;
  cli::EvaluateOptions opt;
  std::ostringstream out, log;

  EvalFixture() {
    std::string corpus, gold;
    for (const auto& r : cgd::testing::chair_fixture()) {
      corpus += json{{"image_id", r.image_id}, {"response", r.text}}.dump() + "\n";
      gold += json{{"image_id", r.image_id}, {"gold_objects", r.gold}}.dump() + "\n";
    }
    write(dir / "corpus.jsonl", corpus);
    write(dir / "gold.jsonl", gold);
    write(dir / "vocab.txt", cgd::testing::kFixtureVocab);
    opt.corpus = (dir / "corpus.jsonl").string();
    opt.annotations = (dir / "gold.jsonl").string();
    opt.vocab = (dir / "vocab.txt").string();
    opt.output = (dir / "report.json").string();
  }
  int run() { return cli::cmd_evaluate(opt, out, log); }
};

TEST(CmdEvaluate, FourResponseFixture) {
  EvalFixture f;
  f.opt.detail = (f.dir / "detail.jsonl").string();
  ASSERT_EQ(f.run(), cli::kExitOk) << f.log.str();
  const auto report = json::parse(read(f.opt.output));
  EXPECT_EQ(report["chair_s"].get<double>(), cgd::testing::kFixtureChairS);
  EXPECT_EQ(report["chair_i"].get<double>(), cgd::testing::kFixtureChairI);
  EXPECT_EQ(report["avg_len"].get<double>(), cgd::testing::kFixtureAvgLen);
  EXPECT_DOUBLE_EQ(report["avg_coverage"].get<double>(), cgd::testing::kFixtureCoverage);
  EXPECT_FALSE(report.contains("curves"));
  EXPECT_NE(f.out.str().find("CHAIR_s        0.5000"), std::string::npos);

  // The report is reproducible from the detail file alone.
  const auto detail = read_records(f.opt.detail);
  ASSERT_EQ(detail.size(), 4u);
  std::size_t hallucinated = 0, mentioned = 0, bad_responses = 0;
  for (const auto& d : detail) {
    std::set<std::string> all;
    for (const auto& s : d["mentioned"]) for (const auto& o : s) all.insert(o.get<std::string>());
    mentioned += all.size();
    hallucinated += d["hallucinated"].size();
    bad_responses += d["hallucinated"].empty() ? 0 : 1;
  }
  EXPECT_EQ(double(hallucinated) / double(mentioned), report["chair_i"].get<double>());
  EXPECT_EQ(double(bad_responses) / 4.0, report["chair_s"].get<double>());
}

TEST(CmdEvaluate, CurvesFlagAddsTable) {
  EvalFixture f;
  f.opt.curves = true;
  ASSERT_EQ(f.run(), cli::kExitOk);
  const auto curves = json::parse(read(f.opt.output))["curves"];
  ASSERT_EQ(curves.size(), 3u);
  // Labels [0,1], [0], [0,1,0], [0].
  EXPECT_EQ(curves[0]["r"].get<double>(), 0.0);
  EXPECT_EQ(curves[1]["r"].get<double>(), 1.0);
  EXPECT_EQ(curves[1]["support"], 2);
  EXPECT_EQ(curves[2]["r_first"].get<double>(), 0.0);
  EXPECT_NE(f.out.str().find("R_first"), std::string::npos);
}

TEST(CmdEvaluate, ReportIsByteStable) {
  EvalFixture f;
  f.opt.curves = true;
  ASSERT_EQ(f.run(), cli::kExitOk);
  const auto first = read(f.opt.output);
  ASSERT_EQ(f.run(), cli::kExitOk);
  EXPECT_EQ(read(f.opt.output), first);
}

TEST(CmdEvaluate, InputErrorsExitFour) {
  EvalFixture f;
  f.opt.vocab = (f.dir / "missing.txt").string();
  EXPECT_EQ(f.run(), cli::kExitInput);

  EvalFixture g;
  write(g.dir / "gold.jsonl", json{{"image_id", "r1"}, {"gold_objects", {"dog"}}}.dump() + "\n");
  EXPECT_EQ(g.run(), cli::kExitInput);
  EXPECT_NE(g.log.str().find("r2, r3, r4"), std::string::npos);
}

TEST(CmdEvaluate, ExtraAnnotationsOnlyWarn) {
  EvalFixture f;
  std::ofstream(f.dir / "gold.jsonl", std::ios::app)
      << json{{"image_id", "r9"}, {"gold_objects", {"cat"}}}.dump() << "\n";
  EXPECT_EQ(f.run(), cli::kExitOk);
  EXPECT_NE(f.log.str().find("warning"), std::string::npos);
}

TEST(CmdEvaluate, ConsumesDecodeOutput) {
  DecodeFixture dec({"img-1", "img-2"}, "{\"image_id\": \"unscripted\"}\n");
  ASSERT_EQ(dec.run(), cli::kExitPartial);
  write(dec.dir / "gold.jsonl", json{{"image_id", "img-1"}, {"gold_objects", {"dog", "bench"}}}.dump() +
                                    "\n" +
                                    json{{"image_id", "img-2"}, {"gold_objects", {"dog"}}}.dump() + "\n");
  cli::EvaluateOptions opt;
  opt.corpus = dec.opt.output;
  opt.annotations = (dec.dir / "gold.jsonl").string();
  opt.vocab = CGD_DATA_DIR "/vocab/coco80.txt";
  opt.output = (dec.dir / "report.json").string();
  std::ostringstream out, log;
  ASSERT_EQ(cli::cmd_evaluate(opt, out, log), cli::kExitOk) << log.str();
  EXPECT_EQ(json::parse(read(opt.output))["n_responses"], 2);
}

// --- analyze ---------------------------------------------------------------

json sentence(double g, double sim, int label) {
  return json{{"text", "s."}, {"g_theta", g}, {"similarity", sim}, {"label", label}};
}

TEST(CmdAnalyze, SeparatingScoresGiveUnitAuroc) {
  TempDir dir;
  std::string corpus;
  // Hallucinated sentences always score lower; response lengths 1..3.
  for (int r = 0; r < 6; ++r) {
    json sentences = json::array();
    for (int k = 0; k <= r % 3; ++k) {
      const int label = (r + k) % 2;
      sentences.push_back(sentence(label ? -2.0 - k : -0.5 - 0.1 * k, label ? 0.1 : 0.3 + 0.01 * r, label));
    }
    corpus += json{{"image_id", "i" + std::to_string(r)}, {"sentences", sentences}}.dump() + "\n";
  }
  write(dir / "corpus.jsonl", corpus);
  cli::AnalyzeOptions opt;
  opt.corpus = (dir / "corpus.jsonl").string();
  opt.output = (dir / "report.json").string();
  std::ostringstream out, log;
  ASSERT_EQ(cli::cmd_analyze(opt, out, log), cli::kExitOk) << log.str();
  const auto report = json::parse(read(opt.output));
  for (const char* name : {"g_theta", "similarity"}) {
    EXPECT_EQ(report["auroc"][name]["overall"].get<double>(), 1.0);
    for (const auto& row : report["auroc"][name]["by_index"])
      if (!row["auroc"].is_null()) {
        EXPECT_EQ(row["auroc"].get<double>(), 1.0);
      }
  }
  // Index 3 is reached by responses 2 and 5 only.
  const auto& rows = report["auroc"]["g_theta"]["by_index"];
  EXPECT_EQ(rows[2]["index"], 3);
  EXPECT_EQ(rows[2]["support"], 2);
  EXPECT_EQ(report["curves"][2]["support"], 2);
}

TEST(CmdAnalyze, SingleClassSliceIsNull) {
  TempDir dir;
  std::string corpus;
  corpus += json{{"image_id", "a"}, {"sentences", {sentence(-1, 0.3, 0), sentence(-2, 0.1, 1)}}}.dump() + "\n";
  corpus += json{{"image_id", "b"}, {"sentences", {sentence(-1.5, 0.2, 0), sentence(-2.5, 0.0, 1)}}}.dump() + "\n";
  write(dir / "corpus.jsonl", corpus);
  cli::AnalyzeOptions opt;
  opt.corpus = (dir / "corpus.jsonl").string();
  opt.output = (dir / "report.json").string();
  std::ostringstream out, log;
  ASSERT_EQ(cli::cmd_analyze(opt, out, log), cli::kExitOk);
  const auto rows = json::parse(read(opt.output))["auroc"]["similarity"]["by_index"];
  EXPECT_TRUE(rows[0]["auroc"].is_null());  // index 1: only label 0
  EXPECT_TRUE(rows[1]["auroc"].is_null());  // index 2: only label 1
}

TEST(CmdAnalyze, DatasetGapMatchesHandComputation) {
  TempDir dir;
  std::string corpus, gold;
  // coco similarities {0.3, 0.4, 0.5}; ood {0.1, 0.2, 0.3}. Means 0.4 and 0.2,
  // both variances 0.01, pooled sd 0.1, normalized gap 2.
  const std::vector<std::pair<std::string, std::vector<double>>> sets{{"coco", {0.3, 0.4, 0.5}},
                                                                      {"ood", {0.1, 0.2, 0.3}}};
  for (const auto& [ds, sims] : sets) {
    for (std::size_t i = 0; i < sims.size(); ++i) {
      const std::string id = ds + std::to_string(i);
      corpus += json{{"image_id", id}, {"sentences", {sentence(-1.0, sims[i], int(i % 2))}}}.dump() + "\n";
      gold += json{{"image_id", id}, {"gold_objects", json::array()}, {"dataset", ds}}.dump() + "\n";
    }
  }
  write(dir / "corpus.jsonl", corpus);
  write(dir / "gold.jsonl", gold);
  cli::AnalyzeOptions opt;
  opt.corpus = (dir / "corpus.jsonl").string();
  opt.annotations = (dir / "gold.jsonl").string();
  opt.output = (dir / "report.json").string();
  std::ostringstream out, log;
  ASSERT_EQ(cli::cmd_analyze(opt, out, log), cli::kExitOk) << log.str();
  const auto report = json::parse(read(opt.output));
  const auto& gap = report["gaps"][0];
  EXPECT_EQ(gap["a"], "coco");
  EXPECT_EQ(gap["b"], "ood");
  EXPECT_NEAR(gap["similarity"]["mean_gap"].get<double>(), 0.2, 1e-12);
  EXPECT_NEAR(gap["similarity"]["normalized_gap"].get<double>(), 2.0, 1e-9);
  EXPECT_TRUE(gap["g_theta"]["normalized_gap"].is_null());  // zero pooled deviation
}

TEST(CmdAnalyze, UnlabelledCorpusNeedsVocabulary) {
  EvalFixture f;
  cli::AnalyzeOptions opt;
  opt.corpus = f.opt.corpus;
  opt.annotations = f.opt.annotations;
  std::ostringstream out, log;
  EXPECT_EQ(cli::cmd_analyze(opt, out, log), cli::kExitInput);
  opt.vocab = f.opt.vocab;
  opt.output = (f.dir / "analysis.json").string();
  ASSERT_EQ(cli::cmd_analyze(opt, out, log), cli::kExitOk) << log.str();
  // The fixture responses carry no scores, so only curves are reported.
  const auto report = json::parse(read(opt.output));
  EXPECT_TRUE(report["auroc"].empty());
  EXPECT_EQ(report["curves"][1]["r"].get<double>(), 1.0);
}

// --- the executable --------------------------------------------------------

TEST(Executable, ConfigFileAndFlags) {
  DecodeFixture f({"img-1"});
  write(f.dir / "run.cfg", "n = 2\nm = 2\nalpha = 0.5\nseed = 9\n");
  const std::string cmd = std::string(CGD_EXE) + " decode --config " + (f.dir / "run.cfg").string() +
                          " --m 3 --input " + f.opt.input + " --output " + f.opt.output +
                          " --mock-world " + f.opt.mock_world + " --no-timing 2>/dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  const auto manifest = json::parse(read(f.opt.output + ".manifest.json"));
  EXPECT_EQ(manifest["config"]["n_candidates"], 2);
  EXPECT_EQ(manifest["config"]["m_samples"], 3);  // flag beats file
  EXPECT_EQ(manifest["config"]["alpha"], 0.5);
  EXPECT_EQ(manifest["config"]["seed"], 9);
  EXPECT_FALSE(read_records(f.opt.output)[0].contains("elapsed_s"));
}

TEST(Executable, ExitCodes) {
  DecodeFixture f({"img-1"});
  auto run = [](const std::string& args) {
    const int status = std::system((std::string(CGD_EXE) + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("decode --input " + f.opt.input + " --output " + f.opt.output + " --mock-world /nonexistent"),
            cli::kExitInput);
  EXPECT_EQ(run("evaluate --corpus " + f.opt.input + " --vocab /nonexistent"), cli::kExitInput);
  EXPECT_NE(run("decode"), 0);  // missing required options
}

}  // namespace
