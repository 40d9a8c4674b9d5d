#pragma once

#include <array>
#include <random>
#include <utility>
#include <vector>

#include "master/context_blocks.hpp"
#include "master/tensor.hpp"

namespace master {

/// Backbone layout: two stem convs + 2x2 pool, then four stages. Each stage
/// is residual blocks, a MAGC block, a trailing conv, and (first two stages
/// only) a max pool. Defaults follow the 48x160 -> 512x6x40 configuration.
struct EncoderConfig {
  std::array<std::int64_t, 6> channels = {64, 128, 256, 512, 512, 512};
  std::array<std::int64_t, 4> residual_blocks = {1, 2, 5, 3};
  std::int64_t magc_heads = 8;        // h; 0 disables the blocks
  std::int64_t bottleneck_ratio = 16; // r
  // Desk-scale knob: divides every channel count, spatial geometry unchanged.
  std::int64_t channel_divisor = 1;

  std::int64_t scaled_channels(int i) const;
  std::int64_t output_channels() const { return scaled_channels(5); }
  void validate() const;
};

struct ConvBlockParams {
  Tensor w, b;          // 3x3 (stride 1, pad 1) unless noted
  Tensor gamma, beta;   // LN over the channel axis
};

struct ResidualBlockParams {
  Tensor w1, b1, gamma1, beta1;  // conv-LN-ReLU
  Tensor w2, b2, gamma2, beta2;  // conv-LN
  Tensor wp, bp;                 // 1x1 projection shortcut when channels change
  bool has_projection() const { return wp.defined(); }
};

struct EncoderStageParams {
  std::vector<ResidualBlockParams> residuals;
  MagcParams magc;
  ConvBlockParams conv;
  bool has_pool = false;
  std::pair<int, int> pool{1, 1};  // kernel == stride per the backbone table
};

struct EncoderParams {
  EncoderConfig cfg;
  ConvBlockParams stem1, stem2;
  std::vector<EncoderStageParams> stages;
};

/// Encoder activation plus its sequence view for cross-attention.
struct FeatureMap {
  Tensor map;  // C x H' x W'

  std::int64_t channels() const { return map.extent(0); }
  std::int64_t height() const { return map.extent(1); }
  std::int64_t width() const { return map.extent(2); }
  std::int64_t positions() const { return height() * width(); }

  /// L x C view, position l = row * W' + col (row-major over the grid).
  Tensor flattened() const;
};

/// Inverse of FeatureMap::flattened.
Tensor unflatten_feature(const Tensor& flat, std::int64_t c, std::int64_t h, std::int64_t w);

/// Deterministic init for the given seed; fan-in-scaled uniform convs,
/// ones/zeros LN affines.
EncoderParams build_encoder(const EncoderConfig& cfg, std::uint64_t seed);

std::int64_t parameter_count(const EncoderParams& params);

/// Runs the backbone on a 1 x 48 x 160 image. `stage_trace`, when given,
/// receives (stage name, output shape) after every stage.
FeatureMap encode(const Tensor& image, const EncoderParams& params,
                  std::vector<std::pair<std::string, Shape>>* stage_trace = nullptr);

}  // namespace master
