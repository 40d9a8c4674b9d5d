#pragma once

#include <random>
#include <vector>

#include "master/attention.hpp"
#include "master/encoder.hpp"
#include "master/tensor.hpp"

namespace master {

struct DecoderConfig {
  std::int64_t d_model = 512;
  std::int64_t heads = 8;   // H
  std::int64_t blocks = 3;  // N
  std::int64_t d_ff = 2048;
  double dropout = 0.2;
  std::int64_t max_len = 50;  // T, decode steps
  std::int64_t vocab_size = 66;

  void validate() const;
};

struct FfnParams {
  Tensor w1, b1;  // d x d_ff
  Tensor w2, b2;  // d_ff x d
};

struct DecoderBlockParams {
  MhaParams self_attn;
  MhaParams cross_attn;
  FfnParams ffn;
  Tensor ln1_gamma, ln1_beta;  // after masked self-attention
  Tensor ln2_gamma, ln2_beta;  // after cross-attention
  Tensor ln3_gamma, ln3_beta;  // after FFN
};

struct DecoderParams {
  Tensor embedding;  // vocab x d
  std::vector<DecoderBlockParams> blocks;
  Tensor w_out;  // d x vocab, shared across positions
  Tensor b_out;  // vocab
};

DecoderParams build_decoder(const DecoderConfig& cfg, std::uint64_t seed);

/// Sinusoidal table: sin on even columns, cos on odd, frequency
/// 10000^(-2i/d). d must be even.
Tensor positional_encoding(std::int64_t length, std::int64_t d);

/// Flattened feature map plus a 2D positional code: the first d/2 columns
/// encode the grid row, the last d/2 the grid column, each with the 1D
/// sinusoidal table. Requires C == d_model and d_model % 4 == 0.
Tensor encode_memory_positions(const FeatureMap& f, std::int64_t d_model);

/// Position-wise max(0, x W1 + b1) W2 + b2.
Tensor ffn(const Tensor& x, const FfnParams& p);

/// Teacher-forced pass: embeds the target prefix (scaled by sqrt(d), plus
/// positional codes), runs the N blocks under a causal mask, and projects to
/// vocab logits. Dropout is applied at the embedding, FFN, and classifier
/// input only when `dropout_rng` is given (training mode).
Tensor decode_train(const Tensor& memory, const std::vector<int>& targets,
                    const DecoderParams& params, const DecoderConfig& cfg,
                    std::mt19937_64* dropout_rng = nullptr);

}  // namespace master
