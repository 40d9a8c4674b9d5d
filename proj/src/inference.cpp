#include "master/inference.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

#include "master/data.hpp"
#include "master/init.hpp"
#include "master/ops.hpp"
#include "master/vocab.hpp"

namespace master {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap =
    Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<Eigen::Dynamic>>;

// Greedy pick: strictly-greater keeps the lowest id on ties.
std::pair<int, double> argmax_logprob(const double* logits, std::int64_t n) {
  double m = logits[0];
  int best = 0;
  for (std::int64_t i = 1; i < n; ++i) {
    if (logits[i] > m) {
      m = logits[i];
      best = static_cast<int>(i);
    }
  }
  double lse = 0.0;
  for (std::int64_t i = 0; i < n; ++i) lse += std::exp(logits[i] - m);
  lse = m + std::log(lse);
  return {best, logits[best] - lse};
}

void record_step(const Tensor& logits_row, DecodeResult& result, const DecodeOptions& options) {
  if (options.logits_trace) {
    options.logits_trace->emplace_back(logits_row.data(), logits_row.data() + logits_row.size());
  }
  auto [token, logprob] = argmax_logprob(logits_row.data(), logits_row.size());
  result.tokens.push_back(token);
  result.step_logprobs.push_back(logprob);
  result.total_logprob += logprob;
}

// Per-head softmax attention of a single query row against the first `rows`
// rows of a (possibly strided) key/value store, restricted to one column
// block. Same max-subtracted softmax as the softmax op.
void single_query_attend(const double* q_head, const double* keys, const double* values,
                         std::int64_t rows, std::int64_t stride, std::int64_t col0,
                         std::int64_t dh, double inv_scale, double* out) {
  StridedMap km(keys + col0, rows, dh, Eigen::OuterStride<Eigen::Dynamic>(stride));
  StridedMap vm(values + col0, rows, dh, Eigen::OuterStride<Eigen::Dynamic>(stride));
  Eigen::Map<const Eigen::VectorXd> qv(q_head, dh);
  Eigen::VectorXd scores = km * qv * inv_scale;
  double m = scores[0];
  for (std::int64_t j = 1; j < rows; ++j) m = std::max(m, scores[j]);
  double s = 0.0;
  for (std::int64_t j = 0; j < rows; ++j) {
    scores[j] = std::exp(scores[j] - m);
    s += scores[j];
  }
  scores /= s;
  Eigen::Map<Eigen::RowVectorXd>(out, dh).noalias() = scores.transpose() * vm;
}

// One decoder block applied to the single-row query state (Alg. 1 body).
Tensor cached_block_step(const Tensor& q_in, const DecoderBlockParams& blk,
                         const DecoderConfig& cfg, const Tensor& cross_k, const Tensor& cross_v,
                         KvBuffer& self_k, KvBuffer& self_v) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t heads = blk.self_attn.heads;
  const std::int64_t dh = d / heads;

  Tensor k_new = matmul(q_in, blk.self_attn.wk);
  Tensor v_new = matmul(q_in, blk.self_attn.wv);
  self_k.append_row(k_new.data());
  self_v.append_row(v_new.data());

  auto attend_rows = [&](const MhaParams& attn, const double* keys, const double* values,
                         std::int64_t rows, const Tensor& state) {
    Tensor qp = matmul(state, attn.wq);  // 1 x d
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (attn.logit_scale == LogitScale::kModelWidth) {
      inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
    }
    Tensor ctx({1, d});
    for (std::int64_t i = 0; i < heads; ++i) {
      single_query_attend(qp.data() + i * dh, keys, values, rows, d, i * dh, dh, inv_scale,
                          ctx.data() + i * dh);
    }
    return matmul(ctx, attn.wo);
  };

  // Masked self-attention degenerates to full attention over the stored
  // prefix: future keys do not exist yet.
  Tensor sa = attend_rows(blk.self_attn, self_k.data(), self_v.data(), self_k.rows(), q_in);
  Tensor q = layer_norm(add(q_in, sa), blk.ln1_gamma, blk.ln1_beta, 1);
  Tensor ca = attend_rows(blk.cross_attn, cross_k.data(), cross_v.data(), cross_k.extent(0), q);
  q = layer_norm(add(q, ca), blk.ln2_gamma, blk.ln2_beta, 1);
  Tensor ff = ffn(q, blk.ffn);
  return layer_norm(add(q, ff), blk.ln3_gamma, blk.ln3_beta, 1);
}

std::int64_t step_budget(const DecoderConfig& cfg, const DecodeOptions& options) {
  if (options.forced_steps > 0) {
    if (options.forced_steps > cfg.max_len) {
      throw ContractError("decode: forced_steps " + std::to_string(options.forced_steps) +
                          " exceeds max_len " + std::to_string(cfg.max_len));
    }
    return options.forced_steps;
  }
  return cfg.max_len;
}

}  // namespace

DecodeResult greedy_naive(const Tensor& memory, const DecoderParams& params,
                          const DecoderConfig& cfg, const DecodeOptions& options) {
  NoGradScope no_grad;
  const std::int64_t budget = step_budget(cfg, options);
  const bool forced = options.forced_steps > 0;
  DecodeResult result;
  std::vector<int> prefix{Vocabulary::kSos};
  for (std::int64_t step = 0; step < budget; ++step) {
    Tensor logits = decode_train(memory, prefix, params, cfg, nullptr);
    Tensor last = narrow(logits, 0, step, 1);
    record_step(last, result, options);
    const int token = result.tokens.back();
    if (!forced && token == Vocabulary::kEos) break;
    if (step + 1 < budget) prefix.push_back(token);
  }
  return result;
}

DecodeResult greedy_cached(const Tensor& memory, const DecoderParams& params,
                           const DecoderConfig& cfg, const DecodeOptions& options) {
  NoGradScope no_grad;
  cfg.validate();
  if (memory.rank() != 2 || memory.extent(1) != cfg.d_model) {
    throw ShapeError("greedy_cached: memory " + shape_str(memory.shape()) +
                     " must be L x d_model");
  }
  const std::int64_t budget = step_budget(cfg, options);
  const bool forced = options.forced_steps > 0;
  const std::int64_t d = cfg.d_model;

  DecodeCache cache;
  for (const auto& blk : params.blocks) {
    cache.cross_keys.push_back(matmul(memory, blk.cross_attn.wk));
    cache.cross_values.push_back(matmul(memory, blk.cross_attn.wv));
    ++cache.cross_projection_computations;
    cache.self_keys.emplace_back(budget, d);
    cache.self_values.emplace_back(budget, d);
  }

  const Tensor pe = positional_encoding(budget, d);
  const double embed_scale = std::sqrt(static_cast<double>(d));

  DecodeResult result;
  int token = Vocabulary::kSos;
  for (std::int64_t step = 0; step < budget; ++step) {
    Tensor q = scale(embed(params.embedding, {token}), embed_scale);
    q = add(q, narrow(pe, 0, step, 1));
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
      q = cached_block_step(q, params.blocks[b], cfg, cache.cross_keys[b], cache.cross_values[b],
                            cache.self_keys[b], cache.self_values[b]);
    }
    if (options.memory_lengths) {
      std::vector<std::int64_t> lens;
      for (const auto& buf : cache.self_keys) lens.push_back(buf.rows());
      options.memory_lengths->push_back(std::move(lens));
    }
    Tensor logits = broadcast_add(matmul(q, params.w_out), params.b_out, 1);
    record_step(logits, result, options);
    token = result.tokens.back();
    if (!forced && token == Vocabulary::kEos) break;
  }
  if (options.cache_out) *options.cache_out = std::move(cache);
  return result;
}

std::string EquivalenceReport::summary() const {
  std::ostringstream os;
  os << "equivalence: " << (trials - mismatches) << "/" << trials
     << " trials matched, max logit deviation " << max_deviation << " (tolerance " << tolerance
     << ")";
  return os.str();
}

EquivalenceReport verify_equivalence(std::int64_t trials, std::uint64_t seed,
                                     const EquivalenceOptions& options) {
  if (trials < 1) throw ContractError("verify_equivalence: trials must be >= 1");
  EquivalenceReport report;
  report.tolerance = options.tolerance;
  for (std::int64_t i = 0; i < trials; ++i) {
    const std::uint64_t trial_seed = seed + static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull;
    std::mt19937_64 rng(trial_seed);
    auto pick = [&rng](const std::vector<std::int64_t>& v) {
      return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    DecoderConfig cfg;
    cfg.blocks = pick(options.block_choices);
    cfg.heads = pick(options.head_choices);
    const std::int64_t dh = pick({2, 4, 8});
    cfg.d_model = cfg.heads * dh;
    cfg.d_ff = pick({4, 8, 16, 32});
    cfg.vocab_size = std::uniform_int_distribution<std::int64_t>(5, 16)(rng);
    cfg.max_len = std::uniform_int_distribution<std::int64_t>(3, 12)(rng);
    cfg.dropout = 0.0;
    const std::int64_t memory_len = std::uniform_int_distribution<std::int64_t>(4, 24)(rng);

    DecoderParams params = build_decoder(cfg, rng());
    Tensor memory = rand_normal({memory_len, cfg.d_model}, 1.0, rng);

    std::vector<std::vector<double>> naive_trace, cached_trace;
    DecodeOptions naive_opts, cached_opts;
    naive_opts.logits_trace = &naive_trace;
    cached_opts.logits_trace = &cached_trace;
    DecodeResult naive = greedy_naive(memory, params, cfg, naive_opts);
    DecodeResult cached = greedy_cached(memory, params, cfg, cached_opts);

    if (options.inject_fault && !cached_trace.empty() && !cached_trace[0].empty()) {
      cached_trace[0][0] += 1e-6;
    }

    EquivalenceTrial trial;
    trial.seed = trial_seed;
    trial.d_model = cfg.d_model;
    trial.heads = cfg.heads;
    trial.blocks = cfg.blocks;
    trial.d_ff = cfg.d_ff;
    trial.memory_len = memory_len;
    trial.vocab = cfg.vocab_size;
    trial.steps = naive.length();
    trial.tokens_equal = naive.tokens == cached.tokens;
    double dev = 0.0;
    const std::size_t steps = std::min(naive_trace.size(), cached_trace.size());
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t k = 0; k < naive_trace[s].size(); ++k) {
        dev = std::max(dev, std::abs(naive_trace[s][k] - cached_trace[s][k]));
      }
    }
    if (naive_trace.size() != cached_trace.size()) trial.tokens_equal = false;
    trial.max_logit_dev = dev;
    report.max_deviation = std::max(report.max_deviation, dev);
    if (!trial.tokens_equal || dev > options.tolerance) ++report.mismatches;
    ++report.trials;
    report.detail.push_back(trial);
  }
  return report;
}

Tensor rotate90_cw(const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("rotate90: expects H x W, got " + shape_str(image.shape()));
  const std::int64_t h = image.extent(0), w = image.extent(1);
  Tensor out({w, h});
  for (std::int64_t i = 0; i < w; ++i) {
    for (std::int64_t j = 0; j < h; ++j) out[i * h + j] = image[(h - 1 - j) * w + i];
  }
  return out;
}

Tensor rotate90_ccw(const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("rotate90: expects H x W, got " + shape_str(image.shape()));
  const std::int64_t h = image.extent(0), w = image.extent(1);
  Tensor out({w, h});
  for (std::int64_t i = 0; i < w; ++i) {
    for (std::int64_t j = 0; j < h; ++j) out[i * h + j] = image[j * w + (w - 1 - i)];
  }
  return out;
}

std::size_t pick_rotation_candidate(const std::vector<DecodeResult>& candidates) {
  if (candidates.empty()) throw ContractError("pick_rotation_candidate: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].mean_logprob() > candidates[best].mean_logprob()) best = i;
  }
  return best;
}

DecodeResult recognize(const Tensor& image, const Model& model) {
  NoGradScope no_grad;
  Tensor memory = model_memory(model, preprocess(image));
  return greedy_cached(memory, model.decoder, model.cfg.decoder);
}

RecognitionResult recognize_with_rotation(const Tensor& image, const Model& model) {
  RecognitionResult out;
  if (image.rank() != 2) {
    throw ShapeError("recognize: expects H x W grayscale, got " + shape_str(image.shape()));
  }
  std::vector<DecodeResult> candidates;
  candidates.push_back(recognize(image, model));
  out.decodes_performed = 1;
  if (image.extent(0) > image.extent(1)) {  // strictly taller than wide
    candidates.push_back(recognize(rotate90_cw(image), model));
    candidates.push_back(recognize(rotate90_ccw(image), model));
    out.decodes_performed = 3;
  }
  const std::size_t best = pick_rotation_candidate(candidates);
  out.decode = candidates[best];
  out.rotation = best == 0 ? 0 : (best == 1 ? 1 : -1);
  return out;
}

}  // namespace master
