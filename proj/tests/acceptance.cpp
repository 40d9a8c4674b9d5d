// Acceptance suite: one pass/fail line per criterion. Run with no arguments
// for the full gate, or name criteria to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "master/bench.hpp"
#include "master/context_blocks.hpp"
#include "master/inference.hpp"
#include "master/init.hpp"
#include "master/ops.hpp"
#include "master/training.hpp"
#include "master/verification.hpp"

using namespace master;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Criterion {
  std::string name;
  std::function<bool(std::string&)> run;  // fills a detail string
};

// Desk-scale toy configuration: eighth-width encoder (final stage 64
// channels, hence d_model 64), H=4, N=2, h=4, digits-only vocabulary.
ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.encoder.channel_divisor = 8;
  cfg.encoder.magc_heads = 4;
  cfg.encoder.bottleneck_ratio = 16;
  cfg.decoder.d_model = 64;
  cfg.decoder.heads = 4;
  cfg.decoder.blocks = 2;
  cfg.decoder.d_ff = 256;
  cfg.decoder.dropout = 0.1;
  cfg.decoder.max_len = 12;
  cfg.charset_override = "0123456789";
  cfg.decoder.vocab_size = 14;
  return cfg;
}

bool check_cache_equivalence(std::string& detail) {
  const auto t0 = Clock::now();
  EquivalenceOptions opts;
  opts.block_choices = {1, 2, 3};
  opts.head_choices = {1, 2, 4, 8};
  opts.tolerance = 1e-9;
  const EquivalenceReport report = verify_equivalence(100, 20240817, opts);
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << (report.trials - report.mismatches) << "/" << report.trials
     << " trials token-identical, max logit dev " << report.max_deviation << ", " << secs << "s";
  detail = os.str();
  return report.passed() && report.max_deviation <= 1e-9 && secs < 120.0;
}

bool check_speedup(std::string& detail) {
  BenchConfig cfg;
  cfg.d_model = 256;
  cfg.heads = 8;
  cfg.blocks = 3;
  cfg.d_ff = 1024;
  cfg.memory_len = 240;
  cfg.lengths = {25};
  cfg.trials = 20;
  cfg.warmup = 3;
  cfg.seed = 99;
  const BenchReport report = run_bench(cfg);
  const BenchRow& row = report.rows.front();
  std::ostringstream os;
  os << "length 25: naive " << row.naive_mean_ms << "ms, cached " << row.cached_mean_ms
     << "ms, speedup " << row.speedup << "x (need >= 1.5x)";
  detail = os.str();
  return row.cached_mean_ms <= row.naive_mean_ms / 1.5;
}

bool check_gradients(std::string& detail) {
  const auto t0 = Clock::now();
  const GradCheckReport report = run_gradient_checks(4242);
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << report.items.size() << " blocks, max rel err " << report.worst << " (< 1e-4), " << secs
     << "s";
  detail = os.str();
  if (!report.passed()) {
    for (const auto& item : report.items) {
      if (item.max_rel_err >= report.threshold) detail += " FAILED:" + item.name;
    }
  }
  return report.passed() && secs < 300.0;
}

bool check_table1_shapes(std::string& detail) {
  const ShapeReport report = run_shape_conformance();
  detail = report.summary();
  return report.passed;
}

bool check_causality(std::string& detail) {
  std::mt19937_64 seeds(31337);
  int pairs = 0;
  double worst = 0.0;
  for (int model_i = 0; model_i < 3; ++model_i) {
    DecoderConfig cfg;
    cfg.d_model = 16;
    cfg.heads = model_i % 2 ? 2 : 4;
    cfg.blocks = 1 + model_i;
    cfg.d_ff = 24;
    cfg.vocab_size = 11;
    cfg.max_len = 16;
    cfg.dropout = 0.0;
    const DecoderParams params = build_decoder(cfg, seeds());
    std::mt19937_64 rng(seeds());
    const Tensor memory = rand_normal({9, cfg.d_model}, 1.0, rng);
    std::vector<int> tokens{Vocabulary::kSos};
    std::uniform_int_distribution<int> tok(4, 10);
    for (int i = 0; i < 12; ++i) tokens.push_back(tok(rng));
    const Tensor base = decode_train(memory, tokens, params, cfg);
    for (std::size_t j = 1; j < tokens.size(); ++j) {
      auto perturbed = tokens;
      perturbed[j] = perturbed[j] == 4 ? 10 : 4;
      const Tensor out = decode_train(memory, perturbed, params, cfg);
      for (std::size_t i = 0; i < j; ++i) {
        for (std::int64_t c = 0; c < cfg.vocab_size; ++c) {
          const auto idx = static_cast<std::int64_t>(i) * cfg.vocab_size + c;
          worst = std::max(worst, std::abs(out[idx] - base[idx]));
        }
        ++pairs;
      }
    }
  }
  std::ostringstream os;
  os << pairs << " (i, j>i) pairs over 3 models, max drift " << worst << " (<= 1e-9)";
  detail = os.str();
  return worst <= 1e-9;
}

bool check_magc_properties(std::string& detail) {
  std::mt19937_64 rng(555);
  bool ok = true;
  std::ostringstream os;

  // per-group weights sum to 1
  MagcParams p = MagcParams::init(16, 4, 4, rng);
  Tensor x = rand_normal({16, 3, 5}, 2.0, rng);
  double worst_sum = 0.0;
  for (const auto& alpha : magc_attention_weights(x, p)) {
    double s = 0.0;
    for (std::int64_t j = 0; j < alpha.size(); ++j) s += alpha[j];
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  ok = ok && worst_sum <= 1e-9;
  os << "weight-sum drift " << worst_sum;

  // permutation equivariance
  const std::int64_t l = 15;
  std::vector<std::int64_t> perm(static_cast<std::size_t>(l));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor xp({16, 3, 5});
  for (std::int64_t c = 0; c < 16; ++c) {
    for (std::int64_t j = 0; j < l; ++j) {
      xp[c * l + j] = x[c * l + perm[static_cast<std::size_t>(j)]];
    }
  }
  const Tensor y = magc_block(x, p);
  const Tensor yp = magc_block(xp, p);
  double worst_perm = 0.0;
  for (std::int64_t c = 0; c < 16; ++c) {
    for (std::int64_t j = 0; j < l; ++j) {
      worst_perm = std::max(
          worst_perm, std::abs(yp[c * l + j] - y[c * l + perm[static_cast<std::size_t>(j)]]));
    }
  }
  ok = ok && worst_perm <= 1e-9;
  os << ", permutation drift " << worst_perm;

  // h=0 is the exact identity
  MagcParams disabled = MagcParams::init(16, 0, 4, rng);
  const Tensor same = magc_block(x, disabled);
  const bool identity = same.storage() == x.storage();
  ok = ok && identity;
  os << ", h=0 identity " << (identity ? "exact" : "BROKEN");

  detail = os.str();
  return ok;
}

bool check_vocabulary(std::string& detail) {
  const Vocabulary v = build_vocab();
  bool ok = v.size() == 66;
  std::string everything;
  for (const auto& s : v.printable_symbols()) everything += s;
  ok = ok && decode_tokens(encode_text(everything, v), v) == everything;
  ok = ok && decode_tokens(encode_text("", v), v).empty();
  std::ostringstream os;
  os << "size " << v.size() << " (need 66), encode/decode round trip "
     << (ok ? "identity" : "BROKEN");
  detail = os.str();
  return ok;
}

bool check_checkpoint_roundtrip(std::string& detail) {
  const auto dir = fs::temp_directory_path() / "master_acceptance_ckpt";
  fs::create_directories(dir);
  ModelConfig cfg = toy_config();
  cfg.encoder.channels = {8, 8, 16, 16, 16, 16};
  cfg.encoder.channel_divisor = 1;
  cfg.encoder.residual_blocks = {1, 1, 1, 1};
  cfg.encoder.magc_heads = 2;
  cfg.encoder.bottleneck_ratio = 4;
  cfg.decoder.d_model = 16;
  cfg.decoder.heads = 2;
  cfg.decoder.blocks = 1;
  cfg.decoder.d_ff = 32;

  SynthSpec spec;
  spec.count = 6;
  spec.min_len = 2;
  spec.max_len = 4;
  spec.seed = 5;
  const auto corpus = synth_corpus(spec);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 3;
  tc.seed = 6;

  // uninterrupted run
  Model full = build_model(cfg, 7);
  Trainer t_full(full, tc);
  (void)t_full.train_epoch(corpus);
  const EpochMetrics full2 = t_full.train_epoch(corpus);

  // save -> load -> save byte-identical
  Model part = build_model(cfg, 7);
  Trainer t_part(part, tc);
  (void)t_part.train_epoch(corpus);
  const auto p1 = (dir / "one.ckpt").string();
  const auto p2 = (dir / "two.ckpt").string();
  save_checkpoint(p1, part, &t_part);
  LoadedCheckpoint ck = load_checkpoint(p1);
  Trainer t_res = resume_trainer(ck.model, ck);
  save_checkpoint(p2, ck.model, &t_res);
  auto bytes = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  const bool byte_identical = bytes(p1) == bytes(p2);

  // resumed epoch reproduces the uninterrupted second epoch exactly
  const EpochMetrics res2 = t_res.train_epoch(corpus);
  const bool metrics_equal = res2.mean_loss == full2.mean_loss &&
                             res2.token_accuracy == full2.token_accuracy &&
                             res2.sequence_accuracy == full2.sequence_accuracy;
  fs::remove_all(dir);
  std::ostringstream os;
  os << "save/load/save " << (byte_identical ? "byte-identical" : "DIFFERS")
     << ", resumed epoch metrics " << (metrics_equal ? "exact" : "DIFFER");
  detail = os.str();
  return byte_identical && metrics_equal;
}

bool check_toy_end_to_end(std::string& detail) {
  const auto t0 = Clock::now();
  const ModelConfig cfg = toy_config();

  SynthSpec train_spec;
  train_spec.count = 2000;
  train_spec.min_len = 3;
  train_spec.max_len = 8;
  train_spec.seed = 1001;
  const auto train_corpus = synth_corpus(train_spec);

  SynthSpec eval_spec = train_spec;
  eval_spec.count = 200;
  eval_spec.seed = 2002;  // disjoint seed stream = held-out set
  const auto eval_corpus = synth_corpus(eval_spec);

  Model model = build_model(cfg, 3003);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 16;
  tc.seed = 4004;
  Trainer trainer(model, tc);

  double accuracy = 0.0;
  std::ostringstream log;
  const double budget_s = 1200.0;
  for (int epoch = 0; epoch < 14; ++epoch) {
    const EpochMetrics m = trainer.train_epoch(train_corpus);
    accuracy = evaluate_sequence_accuracy(model, eval_corpus);
    log << " e" << trainer.epoch() << ":loss=" << m.mean_loss << ",acc=" << accuracy;
    if (accuracy >= 0.92) break;                    // solved with margin
    if (seconds_since(t0) > budget_s * 0.85) break; // out of time for another epoch
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "held-out sequence accuracy " << accuracy << " (need >= 0.90) in " << secs
     << "s (budget 1200s);" << log.str();
  detail = os.str();
  return accuracy >= 0.90 && secs < budget_s;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"cache_equivalence", check_cache_equivalence},
      {"speedup", check_speedup},
      {"gradients", check_gradients},
      {"table1_shapes", check_table1_shapes},
      {"causality", check_causality},
      {"magc_properties", check_magc_properties},
      {"vocabulary", check_vocabulary},
      {"checkpoint_roundtrip", check_checkpoint_roundtrip},
      {"toy_end_to_end", check_toy_end_to_end},
  };

  std::vector<std::string> selected;
  for (int i = 1; i < argc; ++i) selected.emplace_back(argv[i]);
  auto wanted = [&selected](const std::string& name) {
    if (selected.empty()) return true;
    for (const auto& s : selected) {
      if (s == name) return true;
    }
    return false;
  };

  int failures = 0;
  int ran = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.name)) continue;
    ++ran;
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << c.name << ": " << detail << "\n" << std::flush;
    if (!ok) ++failures;
  }
  if (ran == 0) {
    std::cerr << "no such criterion; known:";
    for (const auto& c : criteria) std::cerr << " " << c.name;
    std::cerr << "\n";
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
