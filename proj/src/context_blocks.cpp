#include "master/context_blocks.hpp"

#include <cmath>

#include "master/init.hpp"
#include "master/ops.hpp"

namespace master {

Tensor BottleneckTransform::apply(const Tensor& v) const {
  Tensor h = matmul(wv1, v);                         // (C/r) x 1
  h = layer_norm(h, ln_gamma, ln_beta, 0);
  h = relu(h);
  return matmul(wv2, h);                             // C x 1
}

BottleneckTransform BottleneckTransform::init(std::int64_t channels, std::int64_t ratio,
                                              std::mt19937_64& rng) {
  if (ratio < 1 || channels % ratio != 0) {
    throw ConfigError("bottleneck ratio " + std::to_string(ratio) +
                      " must divide channel count " + std::to_string(channels));
  }
  const std::int64_t hidden = channels / ratio;
  BottleneckTransform t;
  t.ratio = ratio;
  t.wv1 = rand_relu_fan_in({hidden, channels}, channels, rng);
  t.ln_gamma = Tensor::full({hidden}, 1.0);
  t.ln_beta = Tensor({hidden});
  t.wv2 = rand_uniform_fan_in({channels, hidden}, hidden, rng);
  return t;
}

GcParams GcParams::init(std::int64_t channels, std::int64_t ratio, std::mt19937_64& rng) {
  GcParams p;
  p.wk = rand_uniform_fan_in({1, channels}, channels, rng);
  p.delta = BottleneckTransform::init(channels, ratio, rng);
  return p;
}

MagcParams MagcParams::init(std::int64_t channels, std::int64_t heads, std::int64_t ratio,
                            std::mt19937_64& rng) {
  MagcParams p;
  p.heads = heads;
  if (heads == 0) return p;
  if (heads < 0 || channels % heads != 0) {
    throw ConfigError("magc: head count " + std::to_string(heads) +
                      " must divide channel count " + std::to_string(channels));
  }
  const std::int64_t dh = channels / heads;
  p.wk = rand_uniform_fan_in({heads, dh}, dh, rng);
  p.delta = BottleneckTransform::init(channels, ratio, rng);
  return p;
}

namespace {

void require_map(const Tensor& x, const char* op) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(op) + ": expects C x H x W input, got " + shape_str(x.shape()));
  }
}

// Softmax-pooled context of one channel group: group is d x L, wk_row 1 x d.
Tensor pooled_context(const Tensor& group, const Tensor& wk_row, double logit_scale,
                      Tensor* alpha_out) {
  Tensor logits = matmul(wk_row, group);  // 1 x L
  if (logit_scale != 1.0) logits = scale(logits, logit_scale);
  Tensor alpha = softmax(logits, 1);
  if (alpha_out) *alpha_out = alpha;
  return matmul(group, transpose(alpha));  // d x 1
}

}  // namespace

Tensor gc_block(const Tensor& x, const GcParams& p) {
  require_map(x, "gc_block");
  const std::int64_t c = x.extent(0), l = x.extent(1) * x.extent(2);
  Tensor flat = reshape(x, {c, l});
  Tensor ctx = pooled_context(flat, p.wk, 1.0, nullptr);
  Tensor fused = reshape(p.delta.apply(ctx), {c});
  return broadcast_add(x, fused, 0);
}

std::vector<Tensor> magc_attention_weights(const Tensor& x, const MagcParams& p) {
  require_map(x, "magc");
  if (p.heads == 0) return {};
  const std::int64_t c = x.extent(0), l = x.extent(1) * x.extent(2);
  if (c % p.heads != 0 || p.head_width() != c / p.heads) {
    throw ConfigError("magc: params built for " + std::to_string(p.heads * p.head_width()) +
                      " channels, input has " + std::to_string(c));
  }
  const std::int64_t dh = c / p.heads;
  const double sc = p.unit_logit_scale ? 1.0 : 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor flat = reshape(x, {c, l});
  std::vector<Tensor> weights;
  for (std::int64_t i = 0; i < p.heads; ++i) {
    Tensor group = narrow(flat, 0, i * dh, dh);
    Tensor alpha;
    pooled_context(group, narrow(p.wk, 0, i, 1), sc, &alpha);
    weights.push_back(alpha);
  }
  return weights;
}

Tensor magc_attend(const Tensor& x, const MagcParams& p) {
  require_map(x, "magc_attend");
  if (p.heads < 1) throw ContractError("magc_attend: requires heads >= 1");
  const std::int64_t c = x.extent(0), l = x.extent(1) * x.extent(2);
  if (c % p.heads != 0 || p.head_width() != c / p.heads) {
    throw ConfigError("magc: params built for " + std::to_string(p.heads * p.head_width()) +
                      " channels, input has " + std::to_string(c));
  }
  const std::int64_t dh = c / p.heads;
  const double sc = p.unit_logit_scale ? 1.0 : 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor flat = reshape(x, {c, l});
  std::vector<Tensor> groups;
  groups.reserve(static_cast<std::size_t>(p.heads));
  for (std::int64_t i = 0; i < p.heads; ++i) {
    Tensor group = narrow(flat, 0, i * dh, dh);
    groups.push_back(pooled_context(group, narrow(p.wk, 0, i, 1), sc, nullptr));
  }
  Tensor ctx = p.heads == 1 ? groups[0] : concat(groups, 0);  // C x 1
  return reshape(ctx, {c});
}

Tensor magc_block(const Tensor& x, const MagcParams& p) {
  require_map(x, "magc_block");
  if (p.heads == 0) return x;
  const std::int64_t c = x.extent(0);
  Tensor ctx = reshape(magc_attend(x, p), {c, 1});
  Tensor fused = reshape(p.delta.apply(ctx), {c});
  return broadcast_add(x, fused, 0);
}

}  // namespace master
