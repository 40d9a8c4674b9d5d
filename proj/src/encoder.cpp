#include "master/encoder.hpp"

#include "master/init.hpp"
#include "master/ops.hpp"

namespace master {

std::int64_t EncoderConfig::scaled_channels(int i) const {
  return channels[static_cast<std::size_t>(i)] / channel_divisor;
}

void EncoderConfig::validate() const {
  if (channel_divisor < 1) throw ConfigError("encoder: channel_divisor must be >= 1");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] % channel_divisor != 0) {
      throw ConfigError("encoder: channel_divisor " + std::to_string(channel_divisor) +
                        " does not divide channel count " + std::to_string(channels[i]));
    }
  }
  // MAGC and bottleneck divisibility on the four stage widths.
  for (int i = 2; i <= 5; ++i) {
    const std::int64_t c = scaled_channels(i);
    if (magc_heads > 0 && c % magc_heads != 0) {
      throw ConfigError("encoder: magc_heads " + std::to_string(magc_heads) +
                        " does not divide stage channels " + std::to_string(c));
    }
    if (c % bottleneck_ratio != 0) {
      throw ConfigError("encoder: bottleneck_ratio " + std::to_string(bottleneck_ratio) +
                        " does not divide stage channels " + std::to_string(c));
    }
  }
  for (auto n : residual_blocks) {
    if (n < 1) throw ConfigError("encoder: residual block counts must be >= 1");
  }
}

Tensor FeatureMap::flattened() const {
  return transpose(reshape(map, {channels(), positions()}));
}

Tensor unflatten_feature(const Tensor& flat, std::int64_t c, std::int64_t h, std::int64_t w) {
  if (flat.rank() != 2 || flat.extent(0) != h * w || flat.extent(1) != c) {
    throw ShapeError("unflatten_feature: " + shape_str(flat.shape()) + " does not match " +
                     std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
  }
  return reshape(transpose(flat), {c, h, w});
}

namespace {

ConvBlockParams init_conv_block(std::int64_t cin, std::int64_t cout, std::int64_t k,
                                std::mt19937_64& rng) {
  ConvBlockParams p;
  p.w = rand_relu_fan_in({cout, cin, k, k}, cin * k * k, rng);
  p.b = Tensor({cout});
  p.gamma = Tensor::full({cout}, 1.0);
  p.beta = Tensor({cout});
  return p;
}

ResidualBlockParams init_residual_block(std::int64_t cin, std::int64_t cout,
                                        std::mt19937_64& rng) {
  ResidualBlockParams p;
  p.w1 = rand_relu_fan_in({cout, cin, 3, 3}, cin * 9, rng);
  p.b1 = Tensor({cout});
  p.gamma1 = Tensor::full({cout}, 1.0);
  p.beta1 = Tensor({cout});
  p.w2 = rand_relu_fan_in({cout, cout, 3, 3}, cout * 9, rng);
  p.b2 = Tensor({cout});
  p.gamma2 = Tensor::full({cout}, 1.0);
  p.beta2 = Tensor({cout});
  if (cin != cout) {
    p.wp = rand_relu_fan_in({cout, cin, 1, 1}, cin, rng);
    p.bp = Tensor({cout});
  }
  return p;
}

Tensor conv_block(const Tensor& x, const ConvBlockParams& p, std::pair<int, int> padding) {
  Tensor t = conv2d(x, p.w, p.b, {1, 1}, padding);
  t = spatial_norm(t, p.gamma, p.beta);
  return relu(t);
}

Tensor residual_block(const Tensor& x, const ResidualBlockParams& p) {
  Tensor t = conv2d(x, p.w1, p.b1, {1, 1}, {1, 1});
  t = relu(spatial_norm(t, p.gamma1, p.beta1));
  t = conv2d(t, p.w2, p.b2, {1, 1}, {1, 1});
  t = spatial_norm(t, p.gamma2, p.beta2);
  Tensor shortcut = p.has_projection() ? conv2d(x, p.wp, p.bp) : x;
  return relu(add(t, shortcut));
}

void check_stage_shape(const Tensor& t, const Shape& expect, const std::string& stage) {
  if (t.shape() != expect) {
    throw ContractError("encoder: stage " + stage + " produced " + shape_str(t.shape()) +
                        ", expected " + shape_str(expect));
  }
}

std::int64_t count(const Tensor& t) { return t.defined() ? t.size() : 0; }

}  // namespace

EncoderParams build_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  EncoderParams params;
  params.cfg = cfg;
  params.stem1 = init_conv_block(1, cfg.scaled_channels(0), 3, rng);
  params.stem2 = init_conv_block(cfg.scaled_channels(0), cfg.scaled_channels(1), 3, rng);
  std::int64_t cin = cfg.scaled_channels(1);
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t cout = cfg.scaled_channels(stage + 2);
    EncoderStageParams sp;
    for (std::int64_t bi = 0; bi < cfg.residual_blocks[static_cast<std::size_t>(stage)]; ++bi) {
      sp.residuals.push_back(init_residual_block(bi == 0 ? cin : cout, cout, rng));
    }
    sp.magc = MagcParams::init(cout, cfg.magc_heads, cfg.bottleneck_ratio, rng);
    sp.conv = init_conv_block(cout, cout, 3, rng);
    if (stage == 0) {
      sp.has_pool = true;
      sp.pool = {2, 2};
    } else if (stage == 1) {
      sp.has_pool = true;
      sp.pool = {2, 1};  // halves height only, keeping horizontal detail
    }
    params.stages.push_back(std::move(sp));
    cin = cout;
  }
  return params;
}

std::int64_t parameter_count(const EncoderParams& params) {
  std::int64_t n = 0;
  auto add_conv = [&n](const ConvBlockParams& p) {
    n += count(p.w) + count(p.b) + count(p.gamma) + count(p.beta);
  };
  add_conv(params.stem1);
  add_conv(params.stem2);
  for (const auto& s : params.stages) {
    for (const auto& r : s.residuals) {
      n += count(r.w1) + count(r.b1) + count(r.gamma1) + count(r.beta1);
      n += count(r.w2) + count(r.b2) + count(r.gamma2) + count(r.beta2);
      n += count(r.wp) + count(r.bp);
    }
    if (s.magc.heads > 0) {
      n += count(s.magc.wk) + count(s.magc.delta.wv1) + count(s.magc.delta.wv2);
      n += count(s.magc.delta.ln_gamma) + count(s.magc.delta.ln_beta);
    }
    add_conv(s.conv);
  }
  return n;
}

FeatureMap encode(const Tensor& image, const EncoderParams& params,
                  std::vector<std::pair<std::string, Shape>>* stage_trace) {
  const auto& cfg = params.cfg;
  if (image.rank() != 3 || image.extent(0) != 1 || image.extent(1) != 48 ||
      image.extent(2) != 160) {
    throw ShapeError("encode: expects a 1x48x160 image, got " + shape_str(image.shape()));
  }
  auto trace = [&](const std::string& name, const Tensor& t) {
    if (stage_trace) stage_trace->emplace_back(name, t.shape());
  };

  Tensor t = conv_block(image, params.stem1, {1, 1});
  t = conv_block(t, params.stem2, {1, 1});
  t = max_pool2d(t, {2, 2}, {2, 2});
  check_stage_shape(t, {cfg.scaled_channels(1), 24, 80}, "conv1_x");
  trace("conv1_x", t);

  static constexpr std::int64_t kStageH[4] = {12, 6, 6, 6};
  static constexpr std::int64_t kStageW[4] = {40, 40, 40, 40};
  for (int stage = 0; stage < 4; ++stage) {
    const auto& sp = params.stages[static_cast<std::size_t>(stage)];
    for (const auto& r : sp.residuals) t = residual_block(t, r);
    t = magc_block(t, sp.magc);
    t = conv_block(t, sp.conv, {1, 1});
    if (sp.has_pool) t = max_pool2d(t, sp.pool, sp.pool);
    const std::string name = "conv" + std::to_string(stage + 2) + "_x";
    check_stage_shape(t, {cfg.scaled_channels(stage + 2), kStageH[stage], kStageW[stage]}, name);
    trace(name, t);
  }
  return FeatureMap{t};
}

}  // namespace master
