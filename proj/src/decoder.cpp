#include "master/decoder.hpp"

#include <cmath>

#include "master/init.hpp"
#include "master/ops.hpp"
#include "master/vocab.hpp"

namespace master {

void DecoderConfig::validate() const {
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("decoder: heads " + std::to_string(heads) + " must divide d_model " +
                      std::to_string(d_model));
  }
  if (blocks < 1) throw ConfigError("decoder: block count must be >= 1");
  if (max_len < 1) throw ConfigError("decoder: max_len must be >= 1");
  if (d_ff < 1) throw ConfigError("decoder: d_ff must be >= 1");
  if (vocab_size <= Vocabulary::kUnk) throw ConfigError("decoder: vocab too small");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("decoder: dropout must be in [0, 1)");
  if (d_model % 2 != 0) throw ConfigError("decoder: d_model must be even");
}

DecoderParams build_decoder(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::int64_t d = cfg.d_model;
  DecoderParams p;
  p.embedding = rand_uniform_fan_in({cfg.vocab_size, d}, d, rng);
  for (std::int64_t b = 0; b < cfg.blocks; ++b) {
    DecoderBlockParams blk;
    blk.self_attn = MhaParams::init(d, cfg.heads, rng);
    blk.cross_attn = MhaParams::init(d, cfg.heads, rng);
    blk.ffn.w1 = rand_relu_fan_in({d, cfg.d_ff}, d, rng);
    blk.ffn.b1 = Tensor({cfg.d_ff});
    blk.ffn.w2 = rand_uniform_fan_in({cfg.d_ff, d}, cfg.d_ff, rng);
    blk.ffn.b2 = Tensor({d});
    blk.ln1_gamma = Tensor::full({d}, 1.0);
    blk.ln1_beta = Tensor({d});
    blk.ln2_gamma = Tensor::full({d}, 1.0);
    blk.ln2_beta = Tensor({d});
    blk.ln3_gamma = Tensor::full({d}, 1.0);
    blk.ln3_beta = Tensor({d});
    p.blocks.push_back(std::move(blk));
  }
  p.w_out = rand_uniform_fan_in({d, cfg.vocab_size}, d, rng);
  p.b_out = Tensor({cfg.vocab_size});
  return p;
}

Tensor positional_encoding(std::int64_t length, std::int64_t d) {
  if (length < 1) throw ContractError("positional_encoding: length must be >= 1");
  if (d < 2 || d % 2 != 0) throw ContractError("positional_encoding: d must be even");
  Tensor table({length, d});
  for (std::int64_t pos = 0; pos < length; ++pos) {
    for (std::int64_t i = 0; i < d / 2; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      table[pos * d + 2 * i] = std::sin(angle);
      table[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return table;
}

Tensor encode_memory_positions(const FeatureMap& f, std::int64_t d_model) {
  if (f.channels() != d_model) {
    throw ConfigError("memory: feature channels " + std::to_string(f.channels()) +
                      " must equal d_model " + std::to_string(d_model));
  }
  if (d_model % 4 != 0) {
    throw ConfigError("memory: d_model must be divisible by 4 for the 2D positional code");
  }
  const std::int64_t h = f.height(), w = f.width(), d = d_model;
  const std::int64_t half = d / 2;
  Tensor rows = positional_encoding(h, half);
  Tensor cols = positional_encoding(w, half);
  Tensor codes({h * w, d});
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      double* dst = codes.data() + (r * w + c) * d;
      std::copy(rows.data() + r * half, rows.data() + (r + 1) * half, dst);
      std::copy(cols.data() + c * half, cols.data() + (c + 1) * half, dst + half);
    }
  }
  return add(f.flattened(), codes);
}

Tensor ffn(const Tensor& x, const FfnParams& p) {
  Tensor h = relu(broadcast_add(matmul(x, p.w1), p.b1, 1));
  return broadcast_add(matmul(h, p.w2), p.b2, 1);
}

Tensor decode_train(const Tensor& memory, const std::vector<int>& targets,
                    const DecoderParams& params, const DecoderConfig& cfg,
                    std::mt19937_64* dropout_rng) {
  cfg.validate();
  if (memory.rank() != 2 || memory.extent(1) != cfg.d_model) {
    throw ShapeError("decode_train: memory " + shape_str(memory.shape()) +
                     " must be L x d_model");
  }
  if (targets.empty() || targets.front() != Vocabulary::kSos) {
    throw ContractError("decode_train: target sequence must begin with SOS");
  }
  const auto t = static_cast<std::int64_t>(targets.size());
  if (t > cfg.max_len) {
    throw ContractError("decode_train: sequence length " + std::to_string(t) +
                        " exceeds max decode length " + std::to_string(cfg.max_len));
  }
  const bool train = dropout_rng != nullptr && cfg.dropout > 0.0;
  auto maybe_dropout = [&](Tensor v) {
    return train ? dropout(v, cfg.dropout, *dropout_rng) : v;
  };

  Tensor x = scale(embed(params.embedding, targets), std::sqrt(static_cast<double>(cfg.d_model)));
  x = add(x, positional_encoding(t, cfg.d_model));
  x = maybe_dropout(x);

  const AttentionMask mask = causal_mask(t);
  for (const auto& blk : params.blocks) {
    Tensor sa = mha(x, x, x, blk.self_attn, &mask);
    x = layer_norm(add(x, sa), blk.ln1_gamma, blk.ln1_beta, 1);
    Tensor ca = mha(x, memory, memory, blk.cross_attn, nullptr);
    x = layer_norm(add(x, ca), blk.ln2_gamma, blk.ln2_beta, 1);
    Tensor ff = maybe_dropout(ffn(x, blk.ffn));
    x = layer_norm(add(x, ff), blk.ln3_gamma, blk.ln3_beta, 1);
  }
  x = maybe_dropout(x);
  return broadcast_add(matmul(x, params.w_out), params.b_out, 1);
}

}  // namespace master
