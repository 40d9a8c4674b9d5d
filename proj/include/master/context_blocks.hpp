#pragma once

#include <random>
#include <vector>

#include "master/tensor.hpp"

namespace master {

/// Channel bottleneck C -> C/r -> C: wv2 . ReLU(LN(wv1 . v)).
struct BottleneckTransform {
  Tensor wv1;       // (C/r) x C
  Tensor ln_gamma;  // C/r
  Tensor ln_beta;   // C/r
  Tensor wv2;       // C x (C/r)
  std::int64_t ratio = 1;

  std::int64_t channels() const { return wv2.extent(0); }
  Tensor apply(const Tensor& v) const;  // v: C x 1 column

  static BottleneckTransform init(std::int64_t channels, std::int64_t ratio,
                                  std::mt19937_64& rng);
};

struct GcParams {
  Tensor wk;  // 1 x C logit projection
  BottleneckTransform delta;

  static GcParams init(std::int64_t channels, std::int64_t ratio, std::mt19937_64& rng);
};

struct MagcParams {
  std::int64_t heads = 0;  // 0 = block disabled, pass-through
  // When set, drops the 1/sqrt(d_h) logit scale; with heads == 1 and shared
  // weights this makes the block coincide with the plain GC block.
  bool unit_logit_scale = false;
  Tensor wk;  // heads x d_h, row i is head i's logit projection
  BottleneckTransform delta;

  std::int64_t head_width() const { return wk.defined() ? wk.extent(1) : 0; }

  static MagcParams init(std::int64_t channels, std::int64_t heads, std::int64_t ratio,
                         std::mt19937_64& rng);
};

/// Global context block: softmax pooling over all H*W positions, bottleneck
/// transform, residual broadcast add. Output shape equals input shape.
Tensor gc_block(const Tensor& x, const GcParams& p);

/// Pooled multi-aspect context: channels split into h groups, each softmax
/// pooled over positions with logit scale 1/sqrt(d_h), concatenated.
Tensor magc_attend(const Tensor& x, const MagcParams& p);

/// Per-group attention weights over the L positions (each 1 x L).
std::vector<Tensor> magc_attention_weights(const Tensor& x, const MagcParams& p);

/// y = x + broadcast(delta(magc_attend(x))); identity when heads == 0.
Tensor magc_block(const Tensor& x, const MagcParams& p);

}  // namespace master
