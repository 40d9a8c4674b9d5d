// Command surface: synth | train | recognize | verify | bench.
// Exit codes: 0 success, 1 usage, 2 data error, 3 verification failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "master/bench.hpp"
#include "master/data.hpp"
#include "master/inference.hpp"
#include "master/training.hpp"
#include "master/verification.hpp"

namespace fs = std::filesystem;
using namespace master;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* v = std::getenv("MASTER_SEED");
  if (!v || !*v) return fallback;
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("MASTER_SEED must be an unsigned integer, got '" + std::string(v) + "'");
  }
}

void check_known_keys(const KvMap& kv) {
  for (const auto& [key, value] : kv) {
    (void)value;
    if (!is_model_config_key(key) && !is_train_config_key(key)) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
}

int cmd_synth(const std::string& out_dir, std::int64_t count, int min_len, int max_len,
              const std::string& charset, std::uint64_t seed, double noise) {
  fs::create_directories(out_dir);
  SynthSpec spec;
  spec.count = count;
  spec.min_len = min_len;
  spec.max_len = max_len;
  spec.charset = charset;
  spec.seed = seed;
  spec.style.noise_sigma = noise;
  const auto samples = synth_corpus(spec);
  std::vector<ManifestEntry> manifest;
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    save_pgm((fs::path(out_dir) / name).string(), samples[i].image);
    manifest.push_back({name, samples[i].transcription});
  }
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), manifest);
  std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& manifest, const std::string& config_file,
              const std::string& out_checkpoint, std::int64_t epochs_flag,
              const std::string& resume) {
  Model model;
  TrainConfig tcfg;
  std::int64_t start_epoch = 0;
  std::string rng_state;
  AdamState adam;
  bool resumed = false;

  if (!resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume);
    if (!ck.has_train_state) throw ConfigError("resume: checkpoint has no optimizer state");
    model = std::move(ck.model);
    tcfg = ck.train_cfg;
    start_epoch = ck.epoch;
    rng_state = ck.rng_state;
    adam = std::move(ck.adam);
    resumed = true;
  } else {
    const KvMap kv = config_file.empty() ? KvMap{} : read_kv_file(config_file);
    check_known_keys(kv);
    const ModelConfig cfg = model_config_from(kv);
    tcfg = train_config_from(kv);
    tcfg.seed = env_seed(tcfg.seed);
    model = build_model(cfg, tcfg.seed);
  }
  if (epochs_flag >= 0) tcfg.epochs = epochs_flag;

  Trainer trainer(model, tcfg);
  if (resumed) {
    trainer.adam_state() = std::move(adam);
    trainer.restore(start_epoch, rng_state);
  }

  const auto corpus = load_corpus(manifest);
  std::cout << "epoch\tloss\ttoken_acc\tseq_acc\tseconds\n";
  if (tcfg.epochs == 0) save_checkpoint(out_checkpoint, model, &trainer);
  for (std::int64_t e = 0; e < tcfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochMetrics m = trainer.train_epoch(corpus);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << trainer.epoch() << '\t' << m.mean_loss << '\t' << m.token_accuracy << '\t'
              << m.sequence_accuracy << '\t' << secs << "\n"
              << std::flush;
    save_checkpoint(out_checkpoint, model, &trainer);
  }
  return kExitOk;
}

int cmd_recognize(const std::string& checkpoint, const std::vector<std::string>& images,
                  bool rotate) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const Vocabulary vocab = ck.model.cfg.make_vocab();
  bool any_failed = false;
  for (const auto& path : images) {
    try {
      const Tensor img = load_pgm(path);
      DecodeResult r;
      if (rotate) {
        r = recognize_with_rotation(img, ck.model).decode;
      } else {
        r = recognize(img, ck.model);
      }
      std::cout << path << '\t' << decode_tokens(r.tokens, vocab) << '\t' << r.mean_logprob()
                << "\n";
    } catch (const std::exception& e) {
      std::cout << path << "\tERROR\t" << e.what() << "\n";
      any_failed = true;
    }
  }
  return any_failed ? kExitData : kExitOk;
}

int cmd_verify(std::int64_t trials, std::uint64_t seed) {
  EquivalenceOptions opts;
  opts.head_choices = {1, 2, 4, 8};
  const EquivalenceReport eq = verify_equivalence(trials, seed, opts);
  std::cout << eq.summary() << "\n";
  if (!eq.passed()) {
    for (const auto& t : eq.detail) {
      if (t.tokens_equal && t.max_logit_dev <= eq.tolerance) continue;
      std::cout << "mismatch\tseed=" << t.seed << "\tN=" << t.blocks << "\tH=" << t.heads
                << "\td=" << t.d_model << "\tdev=" << t.max_logit_dev << "\n";
    }
  }
  const GradCheckReport gc = run_gradient_checks(seed + 1);
  std::cout << gc.summary() << "\n";
  if (!gc.passed()) {
    for (const auto& item : gc.items) {
      std::cout << "gradcheck\t" << item.name << "\t" << item.max_rel_err << "\n";
    }
  }
  const ShapeReport sh = run_shape_conformance();
  std::cout << sh.summary() << "\n";
  const bool ok = eq.passed() && gc.passed() && sh.passed;
  std::cout << "overall\t" << (ok ? "pass" : "FAIL") << "\n";
  return ok ? kExitOk : kExitVerify;
}

int cmd_bench(const BenchConfig& cfg, const std::string& csv_path) {
  const BenchReport report = run_bench(cfg);
  std::cout << report.table();
  if (csv_path.empty()) {
    std::cout << report.csv();
  } else {
    std::ofstream f(csv_path);
    if (!f) throw IoError("bench: cannot open " + csv_path + " for writing");
    f << report.csv();
    std::cout << "csv written to " << csv_path << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MASTER scene-text recognition at desk scale"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic glyph-string corpus");
  std::string synth_out;
  std::int64_t synth_count = 100;
  int synth_min = 3, synth_max = 8;
  std::string synth_charset = "0123456789";
  std::uint64_t synth_seed = 0;
  double synth_noise = 0.02;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of samples");
  synth->add_option("--min-len", synth_min, "Minimum string length");
  synth->add_option("--max-len", synth_max, "Maximum string length");
  synth->add_option("--charset", synth_charset, "Symbols to draw from");
  synth->add_option("--seed", synth_seed, "Corpus seed (MASTER_SEED fallback)");
  synth->add_option("--noise", synth_noise, "Gaussian pixel noise sigma");

  auto* train = app.add_subcommand("train", "Train from a manifest");
  std::string train_manifest, train_config, train_out = "model.ckpt", train_resume;
  std::int64_t train_epochs = -1;
  train->add_option("--manifest", train_manifest, "TSV manifest of training images");
  train->add_option("--config", train_config,
                    "key=value config file (model + train settings; see README)");
  train->add_option("--out", train_out, "Checkpoint path, rewritten after every epoch");
  train->add_option("--epochs", train_epochs, "Override the configured epoch count");
  train->add_option("--resume", train_resume, "Continue from this checkpoint");

  auto* recognize_cmd = app.add_subcommand("recognize", "Transcribe PGM images");
  std::string rec_checkpoint;
  std::vector<std::string> rec_images;
  bool rec_rotate = false;
  recognize_cmd->add_option("--checkpoint", rec_checkpoint, "Trained checkpoint")->required();
  recognize_cmd->add_option("images", rec_images, "PGM image paths")->required();
  recognize_cmd->add_flag("--rotate", rec_rotate,
                          "Try 90-degree rotations for tall images, keep the best score");

  auto* verify = app.add_subcommand("verify",
                                    "Cache equivalence + gradient checks + shape conformance");
  std::int64_t verify_trials = 100;
  std::uint64_t verify_seed = 42;
  verify->add_option("--trials", verify_trials, "Equivalence trials");
  verify->add_option("--seed", verify_seed, "Trial seed (MASTER_SEED fallback)");

  auto* bench = app.add_subcommand("bench", "Naive vs cached decode latency");
  BenchConfig bench_cfg;
  std::string bench_csv;
  bench->add_option("--d-model", bench_cfg.d_model, "Model width");
  bench->add_option("--heads", bench_cfg.heads, "Attention heads");
  bench->add_option("--blocks", bench_cfg.blocks, "Decoder blocks");
  bench->add_option("--d-ff", bench_cfg.d_ff, "FFN width");
  bench->add_option("--memory-len", bench_cfg.memory_len, "Memory rows");
  bench->add_option("--lengths", bench_cfg.lengths, "Sequence lengths to time (comma-separated)")
      ->delimiter(',');
  bench->add_option("--trials", bench_cfg.trials, "Timed trials per length (>= 20)");
  bench->add_option("--warmup", bench_cfg.warmup, "Warmup runs per length (>= 3)");
  bench->add_option("--seed", bench_cfg.seed, "Params/memory seed");
  bench->add_option("--csv", bench_csv, "Write the CSV report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      if (!synth->count("--seed")) synth_seed = env_seed(synth_seed);
      return cmd_synth(synth_out, synth_count, synth_min, synth_max, synth_charset, synth_seed,
                       synth_noise);
    }
    if (train->parsed()) {
      if (train_manifest.empty()) {
        std::cerr << "train: --manifest is required\n";
        return kExitUsage;
      }
      return cmd_train(train_manifest, train_config, train_out, train_epochs, train_resume);
    }
    if (recognize_cmd->parsed()) {
      return cmd_recognize(rec_checkpoint, rec_images, rec_rotate);
    }
    if (verify->parsed()) {
      if (!verify->count("--seed")) verify_seed = env_seed(verify_seed);
      return cmd_verify(verify_trials, verify_seed);
    }
    if (bench->parsed()) {
      if (!bench->count("--seed")) bench_cfg.seed = env_seed(bench_cfg.seed);
      return cmd_bench(bench_cfg, bench_csv);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
