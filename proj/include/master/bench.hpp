#pragma once

#include <string>
#include <vector>

#include "master/tensor.hpp"

namespace master {

struct BenchConfig {
  std::int64_t d_model = 256;
  std::int64_t heads = 8;
  std::int64_t blocks = 3;
  std::int64_t d_ff = 1024;
  std::int64_t vocab = 66;
  std::int64_t memory_len = 240;  // the 6x40 grid
  std::vector<std::int64_t> lengths{5, 10, 25};
  std::int64_t trials = 20;  // timed, per length; >= 20
  std::int64_t warmup = 3;   // untimed, per length; >= 3
  std::uint64_t seed = 17;
};

struct BenchRow {
  std::int64_t length = 0;
  double naive_mean_ms = 0.0, naive_stddev_ms = 0.0;
  double cached_mean_ms = 0.0, cached_stddev_ms = 0.0;
  double speedup = 0.0;
  std::int64_t trials = 0;
};

struct BenchReport {
  BenchConfig cfg;
  std::vector<BenchRow> rows;

  std::string table() const;
  std::string csv() const;
};

/// Times naive vs cached greedy decoding with EOS suppressed so both paths
/// emit exactly the requested token counts.
BenchReport run_bench(const BenchConfig& cfg);

}  // namespace master
