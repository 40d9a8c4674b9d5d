#include "master/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "master/inference.hpp"
#include "master/ops.hpp"

namespace master {

void TrainConfig::validate() const {
  if (lr < 0.0) throw ConfigError("train: learning rate must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0 || adam_eps <= 0.0) {
    throw ConfigError("train: invalid Adam constants");
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {
std::int64_t kv_int(const KvMap& kv, const std::string& key, std::int64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + it->second + "'");
  }
}
double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + it->second + "'");
  }
}
}  // namespace

bool is_train_config_key(const std::string& key) {
  static const char* keys[] = {"lr", "batch_size", "epochs", "beta1", "beta2", "adam_eps", "seed"};
  for (const char* k : keys) {
    if (key == k) return true;
  }
  return false;
}

TrainConfig train_config_from(const KvMap& kv) {
  TrainConfig cfg;
  cfg.lr = kv_double(kv, "lr", cfg.lr);
  cfg.batch_size = kv_int(kv, "batch_size", cfg.batch_size);
  cfg.epochs = kv_int(kv, "epochs", cfg.epochs);
  cfg.beta1 = kv_double(kv, "beta1", cfg.beta1);
  cfg.beta2 = kv_double(kv, "beta2", cfg.beta2);
  cfg.adam_eps = kv_double(kv, "adam_eps", cfg.adam_eps);
  cfg.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", 0));
  cfg.validate();
  return cfg;
}

KvMap train_config_to_kv(const TrainConfig& cfg) {
  KvMap kv;
  kv["lr"] = format_double(cfg.lr);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["beta1"] = format_double(cfg.beta1);
  kv["beta2"] = format_double(cfg.beta2);
  kv["adam_eps"] = format_double(cfg.adam_eps);
  kv["seed"] = std::to_string(cfg.seed);
  return kv;
}

Tensor xent_loss(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) {
    throw ShapeError("xent_loss: logits must be t x vocab, got " + shape_str(logits.shape()));
  }
  const std::int64_t t = logits.extent(0), vocab = logits.extent(1);
  if (static_cast<std::int64_t>(targets.size()) != t) {
    throw ContractError("xent_loss: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(t) + " logit rows");
  }
  for (int id : targets) {
    if (id < 0 || id >= vocab) {
      throw ContractError("xent_loss: target id " + std::to_string(id) +
                          " outside vocabulary of " + std::to_string(vocab));
    }
  }
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(t * vocab));
  double total = 0.0;
  std::int64_t valid = 0;
  const double* lv = logits.data();
  for (std::int64_t r = 0; r < t; ++r) {
    const double* row = lv + r * vocab;
    double m = row[0];
    for (std::int64_t k = 1; k < vocab; ++k) m = std::max(m, row[k]);
    double s = 0.0;
    for (std::int64_t k = 0; k < vocab; ++k) {
      const double e = std::exp(row[k] - m);
      (*probs)[static_cast<std::size_t>(r * vocab + k)] = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (std::int64_t k = 0; k < vocab; ++k) {
      (*probs)[static_cast<std::size_t>(r * vocab + k)] *= inv;
    }
    if (targets[static_cast<std::size_t>(r)] == Vocabulary::kPad) continue;
    const double lse = m + std::log(s);
    total += lse - row[targets[static_cast<std::size_t>(r)]];
    ++valid;
  }
  Tensor loss = Tensor::scalar(valid > 0 ? total / static_cast<double>(valid) : 0.0);
  if (valid > 0 && active_tape() && logits.requires_grad()) {
    loss.set_requires_grad(true);
    auto ln = logits.storage();
    auto on = loss.storage();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    active_tape()->record([ln, on, probs, tgt, t, vocab, valid] {
      if (on->grad.empty()) return;
      const double g = on->grad[0] / static_cast<double>(valid);
      if (ln->grad.empty()) ln->grad.assign(ln->values.size(), 0.0);
      double* gl = ln->grad.data();
      for (std::int64_t r = 0; r < t; ++r) {
        const int target = (*tgt)[static_cast<std::size_t>(r)];
        if (target == Vocabulary::kPad) continue;
        const double* p = probs->data() + r * vocab;
        double* dst = gl + r * vocab;
        for (std::int64_t k = 0; k < vocab; ++k) dst[k] += g * p[k];
        dst[target] -= g;
      }
    });
  }
  return loss;
}

AdamState init_adam(const std::vector<std::pair<std::string, Tensor>>& params) {
  AdamState st;
  for (const auto& [name, p] : params) {
    (void)name;
    st.m.emplace_back(p.shape());
    st.v.emplace_back(p.shape());
  }
  return st;
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: state size does not match parameter list");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const bool has_grad = p.has_grad();
    const double* g = has_grad ? p.grad().data() : nullptr;
    for (std::int64_t k = 0; k < p.size(); ++k) {
      const double gk = g ? g[k] : 0.0;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

Trainer::Trainer(Model& model, TrainConfig cfg)
    : model_(model),
      cfg_(cfg),
      vocab_(model.cfg.make_vocab()),
      params_(named_params(model)),
      adam_(init_adam(params_)),
      rng_(cfg.seed) {
  cfg_.validate();
}

void Trainer::restore(std::int64_t epoch, const std::string& rng_state) {
  epoch_ = epoch;
  if (!rng_state.empty()) {
    std::istringstream is(rng_state);
    is >> rng_;
    if (!is) throw ParseError("trainer: bad RNG state string");
  }
}

std::string Trainer::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

EpochMetrics Trainer::train_epoch(const std::vector<Sample>& corpus) {
  if (corpus.empty()) throw ContractError("train_epoch: empty corpus");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);

  EpochMetrics metrics;
  double loss_sum = 0.0;
  std::int64_t token_hits = 0, token_total = 0, seq_hits = 0;

  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(cfg_.batch_size)) {
    const std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
    for (auto& [name, p] : params_) {
      (void)name;
      p.zero_grad();
    }
    const auto batch_n = static_cast<double>(end - start);
    for (std::size_t bi = start; bi < end; ++bi) {
      const Sample& sample = corpus[order[bi]];
      if (sample.transcription.empty()) {
        throw ContractError("train_epoch: sample with empty transcription");
      }
      GradTape tape;
      TapeScope scope(tape);
      Tensor memory = model_memory(model_, preprocess(sample.image));
      const std::vector<int> tokens = encode_text(sample.transcription, vocab_);
      const std::vector<int> input(tokens.begin(), tokens.end() - 1);
      const std::vector<int> target(tokens.begin() + 1, tokens.end());
      Tensor logits = decode_train(memory, input, model_.decoder, model_.cfg.decoder, &rng_);
      Tensor loss = xent_loss(logits, target);
      tape.backward(loss);

      loss_sum += loss.item();
      const std::int64_t vocab_n = logits.extent(1);
      bool all_correct = true;
      for (std::size_t r = 0; r < target.size(); ++r) {
        const double* row = logits.data() + static_cast<std::int64_t>(r) * vocab_n;
        int best = 0;
        for (std::int64_t k = 1; k < vocab_n; ++k) {
          if (row[k] > row[best]) best = static_cast<int>(k);
        }
        if (target[r] == Vocabulary::kPad) continue;
        ++token_total;
        if (best == target[r]) {
          ++token_hits;
        } else {
          all_correct = false;
        }
      }
      if (all_correct) ++seq_hits;
      ++metrics.samples;
    }
    for (auto& [name, p] : params_) {
      (void)name;
      if (!p.has_grad()) continue;
      double* g = p.grad_data();
      for (std::int64_t k = 0; k < p.size(); ++k) g[k] /= batch_n;
    }
    adam_step(params_, adam_, cfg_);
  }
  ++epoch_;
  metrics.mean_loss = loss_sum / static_cast<double>(metrics.samples);
  metrics.token_accuracy =
      token_total > 0 ? static_cast<double>(token_hits) / static_cast<double>(token_total) : 0.0;
  metrics.sequence_accuracy =
      static_cast<double>(seq_hits) / static_cast<double>(metrics.samples);
  return metrics;
}

double evaluate_sequence_accuracy(const Model& model, const std::vector<Sample>& corpus) {
  if (corpus.empty()) return 0.0;
  const Vocabulary vocab = model.cfg.make_vocab();
  std::int64_t hits = 0;
  for (const auto& sample : corpus) {
    const DecodeResult r = recognize(sample.image, model);
    if (decode_tokens(r.tokens, vocab) == sample.transcription) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

}  // namespace master
