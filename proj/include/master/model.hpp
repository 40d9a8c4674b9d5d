#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "master/decoder.hpp"
#include "master/encoder.hpp"
#include "master/vocab.hpp"

namespace master {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::string charset_override;  // "" = default 66-symbol inventory

  Vocabulary make_vocab() const;
  void validate() const;
};

struct Model {
  ModelConfig cfg;
  EncoderParams encoder;
  DecoderParams decoder;
};

/// Deterministic build; all parameters are marked as requiring grad.
Model build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Stable enumeration of every trainable tensor. The handles share storage
/// with the model; order is fixed across runs and is the checkpoint order.
std::vector<std::pair<std::string, Tensor>> named_params(const Model& m);

std::int64_t parameter_count(const Model& m);

/// encode + flatten + 2D positional codes: the cross-attention memory.
Tensor model_memory(const Model& m, const Tensor& image);

// Flat key=value config files ('#' comments, blank lines ignored).
using KvMap = std::map<std::string, std::string>;
KvMap read_kv_file(const std::string& path);
KvMap parse_kv_lines(const std::string& text);
std::string kv_to_string(const KvMap& kv);

/// Applies recognised model keys; throws ConfigError on unknown model keys
/// being malformed. Keys: d_model, heads, decoder_blocks, d_ff, dropout,
/// max_len, magc_heads, bottleneck_ratio, channel_divisor, channels,
/// residual_blocks, charset.
ModelConfig model_config_from(const KvMap& kv);
KvMap model_config_to_kv(const ModelConfig& cfg);

bool is_model_config_key(const std::string& key);

}  // namespace master
