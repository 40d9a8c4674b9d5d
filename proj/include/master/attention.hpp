#pragma once

#include <cstdint>
#include <random>

#include "master/tensor.hpp"

namespace master {

/// Visibility mask for attention logits; true = key visible to the query.
struct AttentionMask {
  std::int64_t rows = 0;  // queries
  std::int64_t cols = 0;  // keys
  std::vector<std::uint8_t> visible;  // row-major rows x cols

  bool at(std::int64_t i, std::int64_t j) const {
    return visible[static_cast<std::size_t>(i * cols + j)] != 0;
  }
};

/// Lower-triangle mask: query i sees keys j <= i.
AttentionMask causal_mask(std::int64_t t);

/// Which width the per-head logit scale is derived from. The projected head
/// width d/H matches the dot products actually taken; the full model width
/// is kept selectable for A/B comparison.
enum class LogitScale { kHeadWidth, kModelWidth };

struct MhaParams {
  std::int64_t heads = 1;
  // Per-head projections stored as column blocks: columns [i*d/H, (i+1)*d/H)
  // of wq/wk/wv are head i's d x (d/H) matrices.
  Tensor wq, wk, wv;  // d x d
  Tensor wo;          // d x d
  LogitScale logit_scale = LogitScale::kHeadWidth;

  std::int64_t dim() const { return wq.extent(0); }
  std::int64_t head_width() const { return dim() / heads; }

  static MhaParams init(std::int64_t d, std::int64_t heads, std::mt19937_64& rng);
};

/// Scaled dot-product attention. Q: t' x d, K/V: t x d. Logits are
/// q.k / sqrt(d of K) with masked entries pushed to -1e9 before softmax.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v,
              const AttentionMask* mask = nullptr);

/// Multi-head attention: per-head attend over projected Q/K/V, heads
/// concatenated, then the output projection.
Tensor mha(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& params,
           const AttentionMask* mask = nullptr);

}  // namespace master
