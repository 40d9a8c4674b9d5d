#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "master/decoder.hpp"
#include "master/model.hpp"
#include "master/tensor.hpp"

namespace master {

/// Fixed-capacity row store for one block's self-attention keys or values.
class KvBuffer {
 public:
  KvBuffer() = default;
  KvBuffer(std::int64_t capacity, std::int64_t width)
      : width_(width), data_(static_cast<std::size_t>(capacity * width)) {}

  void append_row(const double* row) {
    std::copy(row, row + width_, data_.data() + rows_ * width_);
    ++rows_;
  }
  std::int64_t rows() const { return rows_; }
  std::int64_t width() const { return width_; }
  const double* data() const { return data_.data(); }

 private:
  std::int64_t width_ = 0;
  std::int64_t rows_ = 0;
  detail::AlignedBuffer data_;
};

/// Cached variables of the incremental decode: per block, the cross-attention
/// projections of the memory (computed once) and the growing self-attention
/// key/value memories (one appended row per step).
struct DecodeCache {
  std::vector<Tensor> cross_keys;    // per block, L x d
  std::vector<Tensor> cross_values;  // per block, L x d
  std::vector<KvBuffer> self_keys;   // per block, grows to t x d
  std::vector<KvBuffer> self_values;
  std::int64_t cross_projection_computations = 0;
};

struct DecodeResult {
  std::vector<int> tokens;  // emitted tokens; EOS included when emitted
  std::vector<double> step_logprobs;
  double total_logprob = 0.0;

  std::int64_t length() const { return static_cast<std::int64_t>(tokens.size()); }
  double mean_logprob() const {
    return tokens.empty() ? 0.0 : total_logprob / static_cast<double>(tokens.size());
  }
};

struct DecodeOptions {
  // > 0: ignore EOS and emit exactly this many tokens (work-equalized
  // benchmarking); must not exceed the config max_len.
  std::int64_t forced_steps = 0;
  // When set, receives the raw vocab logits of every step.
  std::vector<std::vector<double>>* logits_trace = nullptr;
  // When set, receives per-step self-memory lengths (per block) and the
  // cross-projection count (cached path only).
  DecodeCache* cache_out = nullptr;
  std::vector<std::vector<std::int64_t>>* memory_lengths = nullptr;
};

/// Greedy decode by re-running the full teacher-forced pass on the growing
/// prefix each step. Ties pick the lowest token id.
DecodeResult greedy_naive(const Tensor& memory, const DecoderParams& params,
                          const DecoderConfig& cfg, const DecodeOptions& options = {});

/// Greedy decode with the memory cache: cross projections computed once per
/// block, self keys/values appended per step, the query is a single row
/// throughout. Token-for-token equal to greedy_naive.
DecodeResult greedy_cached(const Tensor& memory, const DecoderParams& params,
                           const DecoderConfig& cfg, const DecodeOptions& options = {});

struct EquivalenceTrial {
  std::uint64_t seed = 0;
  std::int64_t d_model = 0, heads = 0, blocks = 0, d_ff = 0, memory_len = 0, vocab = 0;
  std::int64_t steps = 0;
  bool tokens_equal = false;
  double max_logit_dev = 0.0;
};

struct EquivalenceReport {
  std::int64_t trials = 0;
  std::int64_t mismatches = 0;
  double max_deviation = 0.0;
  double tolerance = 1e-9;
  std::vector<EquivalenceTrial> detail;

  bool passed() const { return mismatches == 0; }
  std::string summary() const;
};

struct EquivalenceOptions {
  std::vector<std::int64_t> block_choices{1, 2, 3};
  std::vector<std::int64_t> head_choices{1, 2, 4};
  double tolerance = 1e-9;
  // Negative control: perturbs the cached logits before comparison so the
  // checker must report a failure.
  bool inject_fault =
#ifdef MASTER_INJECT_FAULT
      true;
#else
      false;
#endif
};

/// Random (config, params, memory) trials asserting cached == naive.
EquivalenceReport verify_equivalence(std::int64_t trials, std::uint64_t seed,
                                     const EquivalenceOptions& options = {});

Tensor rotate90_cw(const Tensor& image);
Tensor rotate90_ccw(const Tensor& image);

struct RecognitionResult {
  DecodeResult decode;
  int rotation = 0;  // -1 = ccw, 0 = original, +1 = cw
  int decodes_performed = 0;
};

/// Index of the candidate with the largest length-normalized mean
/// log-probability (first on ties).
std::size_t pick_rotation_candidate(const std::vector<DecodeResult>& candidates);

/// Decodes the raw grayscale image; when height > width also tries both
/// 90-degree rotations and keeps the best-scoring candidate.
RecognitionResult recognize_with_rotation(const Tensor& image, const Model& model);

/// Single-orientation recognition (preprocess, encode, cached decode).
DecodeResult recognize(const Tensor& image, const Model& model);

}  // namespace master
