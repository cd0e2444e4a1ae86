// cgd: guided decoding and hallucination evaluation from the command line.
//
//   cgd decode   --input images.jsonl --output decoded.jsonl --mock-world world.json
//   cgd evaluate --corpus decoded.jsonl --annotations gold.jsonl --vocab coco80.txt --curves
//   cgd analyze  --corpus scored.jsonl --vocab coco80.txt --annotations gold.jsonl
//   cgd serve-mock --world world.json --port 8088

#include <algorithm>

#include <CLI11.hpp>

#include "cgd/backend_server.hpp"
#include "cgd/cli.hpp"

namespace {

// CLI11 only reads config files attached to the root app, so decode applies its
// own: every key names a decode option and loses to the same flag on the command line.
void apply_config_file(CLI::App& sub, const std::string& path) {
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    if (!item.parents.empty() || name == "config")
      throw cgd::InvalidInput("unsupported config key: " + item.fullname());
    CLI::Option* opt = sub.get_option_no_throw("--" + name);
    if (opt == nullptr) throw cgd::InvalidInput("unknown config key: " + item.name);
    if (opt->count() > 0) continue;
    for (const auto& v : item.inputs)
      opt->add_result(opt->get_expected_min() == 0 ? opt->get_flag_value(name, v) : v);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sentence-level image-guided decoding and object-hallucination metrics"};
  app.require_subcommand(1);

  cgd::cli::DecodeOptions dec;
  std::string mode = "cgd";
  int retry_ms = 200;
  auto* decode = app.add_subcommand("decode", "Decode every input record against a backend");
  std::string config_path;
  decode->add_option("--config", config_path, "Flat key=value file with option defaults");
  decode->add_option("--input", dec.input, "JSONL records with image_id (and optional prompt)")
      ->required();
  decode->add_option("--output", dec.output, "Output JSONL, one record per input")->required();
  decode->add_option("--n", dec.config.n_candidates, "Maximum frontier size N")
      ->capture_default_str();
  decode->add_option("--m", dec.config.m_samples, "Samples per candidate per step M")
      ->capture_default_str();
  decode->add_option("--alpha", dec.config.alpha, "Weight of image-text similarity in F")
      ->capture_default_str();
  decode->add_option("--mode", mode, "cgd, greedy or sample")
      ->check(CLI::IsMember({"cgd", "greedy", "sample"}))
      ->capture_default_str();
  decode->add_option("--seed", dec.config.seed, "Run seed")->capture_default_str();
  decode->add_option("--temperature", dec.config.temperature)->capture_default_str();
  decode->add_option("--top-k", dec.config.top_k, "0 disables")->capture_default_str();
  decode->add_option("--top-p", dec.config.top_p, "1.0 disables")->capture_default_str();
  decode->add_option("--max-new-tokens", dec.config.max_new_tokens)->capture_default_str();
  decode->add_option("--max-sentences", dec.config.max_sentences)->capture_default_str();
  decode->add_option("--backend-url", dec.backend_url,
                     "Remote backend base URL (default: $CGD_BACKEND_URL)");
  decode->add_option("--backend-token", dec.backend_token, "Bearer token for the remote backend");
  decode->add_option("--mock-world", dec.mock_world, "Serve generation from a mock world file");
  decode->add_option("--manifest", dec.manifest, "Run manifest path (default: <output>.manifest.json)");
  decode->add_option("--jobs", dec.jobs, "Records decoded concurrently")->capture_default_str();
  decode->add_option("--retry-backoff-ms", retry_ms, "Initial retry backoff")->capture_default_str();
  decode->add_flag("!--no-timing", dec.timing, "Omit elapsed_s from output records");

  cgd::cli::EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "CHAIR, coverage and length over a decoded corpus");
  evaluate->add_option("--corpus", ev.corpus, "Decoded JSONL corpus")->required();
  evaluate->add_option("--annotations", ev.annotations, "JSONL gold objects per image_id");
  evaluate->add_option("--vocab", ev.vocab, "Object vocabulary file")->required();
  evaluate->add_option("--output", ev.output, "JSON report path (stdout when omitted)");
  evaluate->add_option("--detail", ev.detail, "Per-response detail JSONL");
  evaluate->add_flag("--curves", ev.curves, "Add the R(i) / R_first(i) table");

  cgd::cli::AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "Hallucination-detection AUROC and positional curves");
  analyze->add_option("--corpus", an.corpus, "JSONL corpus with per-sentence scores")->required();
  analyze->add_option("--annotations", an.annotations, "JSONL gold objects per image_id");
  analyze->add_option("--vocab", an.vocab, "Object vocabulary (needed when records carry no labels)");
  analyze->add_option("--output", an.output, "JSON report path (stdout when omitted)");

  std::string world_path;
  std::string host = "127.0.0.1";
  int port = 8088;
  auto* serve = app.add_subcommand("serve-mock", "Serve a mock world over the HTTP backend protocol");
  serve->add_option("--world", world_path, "Mock world file")->required();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*decode) {
      if (!config_path.empty()) {
        try {
          apply_config_file(*decode, config_path);
        } catch (const CLI::Error& e) {
          throw cgd::InvalidInput("config " + config_path + ": " + e.what());
        }
      }
      dec.config.mode = cgd::parse_decode_mode(mode);
      dec.retry.initial_backoff = std::chrono::milliseconds(retry_ms);
      return cgd::cli::cmd_decode(dec);
    }
    if (*evaluate) return cgd::cli::cmd_evaluate(ev);
    if (*analyze) return cgd::cli::cmd_analyze(an);
    if (*serve) {
      const cgd::MockBackend backend(cgd::MockWorld::load(world_path));
      cgd::BackendServer server(backend, backend, "mock:" + world_path);
      std::cerr << "serving " << world_path << " on http://" << host << ":" << port << "\n";
      return server.listen(host, port) ? 0 : 1;
    }
  } catch (const cgd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cgd::cli::kExitInput;
  }
  return 0;
}
