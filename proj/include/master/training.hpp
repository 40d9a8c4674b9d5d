#pragma once

#include <random>
#include <string>
#include <vector>

#include "master/data.hpp"
#include "master/model.hpp"
#include "master/tensor.hpp"
#include "master/vocab.hpp"

namespace master {

struct TrainConfig {
  double lr = 1e-4;  // single-device setting; constant over the whole run
  std::int64_t batch_size = 32;
  std::int64_t epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

TrainConfig train_config_from(const KvMap& kv);
KvMap train_config_to_kv(const TrainConfig& cfg);
bool is_train_config_key(const std::string& key);

/// PAD-masked mean of per-position negative log-softmax of the target class.
/// logits: t x vocab; targets: t ids. PAD rows contribute neither loss nor
/// gradient.
Tensor xent_loss(const Tensor& logits, const std::vector<int>& targets);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

AdamState init_adam(const std::vector<std::pair<std::string, Tensor>>& params);

/// Bias-corrected Adam update from the params' accumulated grad buffers.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const TrainConfig& cfg);

struct EpochMetrics {
  double mean_loss = 0.0;
  double token_accuracy = 0.0;     // teacher-forced argmax vs target
  double sequence_accuracy = 0.0;  // all positions of a sample correct
  std::int64_t samples = 0;
};

/// Owns the optimizer state and RNG streams of one training run.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg);

  /// One pass over the corpus: seeded shuffle, teacher forcing with dropout,
  /// cross-entropy, Adam after every batch.
  EpochMetrics train_epoch(const std::vector<Sample>& corpus);

  const TrainConfig& config() const { return cfg_; }
  std::int64_t epoch() const { return epoch_; }
  Model& model() { return model_; }

  AdamState& adam_state() { return adam_; }
  const AdamState& adam_state() const { return adam_; }
  std::mt19937_64& rng() { return rng_; }
  void restore(std::int64_t epoch, const std::string& rng_state);
  std::string rng_state() const;

 private:
  Model& model_;
  TrainConfig cfg_;
  Vocabulary vocab_;
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamState adam_;
  std::mt19937_64 rng_;
  std::int64_t epoch_ = 0;
};

/// Exact-match rate of greedy cached decoding over the corpus.
double evaluate_sequence_accuracy(const Model& model, const std::vector<Sample>& corpus);

// ---- checkpoints ----
// Binary container: magic "MSTR", u32 version, length-prefixed UTF-8
// key=value config, u64 tensor count, then per-tensor records
// (u32 name length + bytes, u32 rank, u64 extents, little-endian f64 data).

void save_checkpoint(const std::string& path, const Model& model, const Trainer* trainer);

struct LoadedCheckpoint {
  Model model;
  TrainConfig train_cfg;
  bool has_train_state = false;
  AdamState adam;
  std::int64_t epoch = 0;
  std::string rng_state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

/// Rebuilds a Trainer continuing exactly where the checkpoint left off.
Trainer resume_trainer(Model& model, const LoadedCheckpoint& ck);

std::string format_double(double v);  // round-trip-exact decimal form

}  // namespace master
