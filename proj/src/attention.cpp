#include "master/attention.hpp"

#include <cmath>

#include "master/init.hpp"
#include "master/ops.hpp"

namespace master {

namespace {
constexpr double kMaskedLogit = -1e9;
}

AttentionMask causal_mask(std::int64_t t) {
  if (t < 1) throw ContractError("causal_mask: t must be >= 1");
  AttentionMask m;
  m.rows = t;
  m.cols = t;
  m.visible.assign(static_cast<std::size_t>(t * t), 0);
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = 0; j <= i; ++j) m.visible[static_cast<std::size_t>(i * t + j)] = 1;
  }
  return m;
}

MhaParams MhaParams::init(std::int64_t d, std::int64_t heads, std::mt19937_64& rng) {
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("mha: head count " + std::to_string(heads) + " must divide width " +
                      std::to_string(d));
  }
  MhaParams p;
  p.heads = heads;
  p.wq = rand_uniform_fan_in({d, d}, d, rng);
  p.wk = rand_uniform_fan_in({d, d}, d, rng);
  p.wv = rand_uniform_fan_in({d, d}, d, rng);
  p.wo = rand_uniform_fan_in({d, d}, d, rng);
  return p;
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.extent(1) != k.extent(1) ||
      k.extent(0) != v.extent(0)) {
    throw ShapeError("attend: incompatible Q " + shape_str(q.shape()) + ", K " +
                     shape_str(k.shape()) + ", V " + shape_str(v.shape()));
  }
  const std::int64_t tq = q.extent(0), tk = k.extent(0), d = k.extent(1);
  Tensor bias;
  if (mask) {
    if (mask->rows != tq || mask->cols != tk) {
      throw ShapeError("attend: mask " + std::to_string(mask->rows) + "x" +
                       std::to_string(mask->cols) + " does not match logits " +
                       std::to_string(tq) + "x" + std::to_string(tk));
    }
    bias = Tensor({tq, tk});
    for (std::int64_t i = 0; i < tq; ++i) {
      bool any_visible = false;
      for (std::int64_t j = 0; j < tk; ++j) {
        const bool vis = mask->at(i, j);
        any_visible = any_visible || vis;
        bias[i * tk + j] = vis ? 0.0 : kMaskedLogit;
      }
      if (!any_visible) {
        throw ContractError("attend: query row " + std::to_string(i) + " has no visible key");
      }
    }
  }
  Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  if (mask) logits = add(logits, bias);
  return matmul(softmax(logits, 1), v);
}

Tensor mha(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& params,
           const AttentionMask* mask) {
  const std::int64_t d = params.dim();
  if (q.extent(1) != d || k.extent(1) != d || v.extent(1) != d) {
    throw ShapeError("mha: inputs must have width " + std::to_string(d));
  }
  const std::int64_t dh = params.head_width();
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(params.heads));
  for (std::int64_t i = 0; i < params.heads; ++i) {
    Tensor qh = matmul(q, narrow(params.wq, 1, i * dh, dh));
    Tensor kh = matmul(k, narrow(params.wk, 1, i * dh, dh));
    Tensor vh = matmul(v, narrow(params.wv, 1, i * dh, dh));
    if (params.logit_scale == LogitScale::kModelWidth) {
      // Rescale so the effective divisor is sqrt(d) instead of sqrt(d/H).
      qh = scale(qh, std::sqrt(static_cast<double>(dh) / static_cast<double>(d)));
    }
    heads.push_back(attend(qh, kh, vh, mask));
  }
  Tensor cat = params.heads == 1 ? heads[0] : concat(heads, 1);
  return matmul(cat, params.wo);
}

}  // namespace master
