#include "master/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "master/inference.hpp"
#include "master/init.hpp"

namespace master {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0, Clock::time_point t1) {
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

struct Stats {
  double mean = 0.0, stddev = 0.0;
};

Stats mean_stddev(const std::vector<double>& xs) {
  Stats s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

BenchReport run_bench(const BenchConfig& cfg) {
  if (cfg.trials < 20) {
    throw ContractError("bench: at least 20 timed trials required, got " +
                        std::to_string(cfg.trials));
  }
  if (cfg.warmup < 3) {
    throw ContractError("bench: at least 3 warmup trials required, got " +
                        std::to_string(cfg.warmup));
  }
  if (cfg.lengths.empty()) throw ContractError("bench: no sequence lengths given");

  DecoderConfig dec;
  dec.d_model = cfg.d_model;
  dec.heads = cfg.heads;
  dec.blocks = cfg.blocks;
  dec.d_ff = cfg.d_ff;
  dec.vocab_size = cfg.vocab;
  dec.dropout = 0.0;
  dec.max_len = *std::max_element(cfg.lengths.begin(), cfg.lengths.end());
  dec.validate();

  std::mt19937_64 rng(cfg.seed);
  const DecoderParams params = build_decoder(dec, rng());
  const Tensor memory = rand_normal({cfg.memory_len, cfg.d_model}, 1.0, rng);

  BenchReport report;
  report.cfg = cfg;
  for (const std::int64_t len : cfg.lengths) {
    DecodeOptions opts;
    opts.forced_steps = len;
    for (std::int64_t i = 0; i < cfg.warmup; ++i) {
      (void)greedy_naive(memory, params, dec, opts);
      (void)greedy_cached(memory, params, dec, opts);
    }
    std::vector<double> naive_ms, cached_ms;
    for (std::int64_t i = 0; i < cfg.trials; ++i) {
      const auto t0 = Clock::now();
      const DecodeResult rn = greedy_naive(memory, params, dec, opts);
      const auto t1 = Clock::now();
      const DecodeResult rc = greedy_cached(memory, params, dec, opts);
      const auto t2 = Clock::now();
      if (rn.length() != len || rc.length() != len) {
        throw ContractError("bench: forced decode emitted a wrong token count");
      }
      naive_ms.push_back(elapsed_ms(t0, t1));
      cached_ms.push_back(elapsed_ms(t1, t2));
    }
    const Stats ns = mean_stddev(naive_ms);
    const Stats cs = mean_stddev(cached_ms);
    BenchRow row;
    row.length = len;
    row.naive_mean_ms = ns.mean;
    row.naive_stddev_ms = ns.stddev;
    row.cached_mean_ms = cs.mean;
    row.cached_stddev_ms = cs.stddev;
    row.speedup = cs.mean > 0.0 ? ns.mean / cs.mean : 0.0;
    row.trials = cfg.trials;
    report.rows.push_back(row);
  }
  return report;
}

std::string BenchReport::table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%8s %14s %12s %14s %12s %9s %7s\n", "length", "naive_ms",
                "naive_sd", "cached_ms", "cached_sd", "speedup", "trials");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%8lld %14.3f %12.3f %14.3f %12.3f %8.2fx %7lld\n",
                  static_cast<long long>(r.length), r.naive_mean_ms, r.naive_stddev_ms,
                  r.cached_mean_ms, r.cached_stddev_ms, r.speedup,
                  static_cast<long long>(r.trials));
    os << line;
  }
  return os.str();
}

std::string BenchReport::csv() const {
  std::ostringstream os;
  os << "length,naive_mean_ms,naive_stddev_ms,cached_mean_ms,cached_stddev_ms,speedup,trials\n";
  for (const auto& r : rows) {
    os << r.length << ',' << r.naive_mean_ms << ',' << r.naive_stddev_ms << ','
       << r.cached_mean_ms << ',' << r.cached_stddev_ms << ',' << r.speedup << ',' << r.trials
       << '\n';
  }
  return os.str();
}

}  // namespace master
