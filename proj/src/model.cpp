#include "master/model.hpp"

#include <fstream>
#include <sstream>

namespace master {

Vocabulary ModelConfig::make_vocab() const {
  if (charset_override.empty()) return build_vocab();
  return build_vocab(charset_override);
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.output_channels() != decoder.d_model) {
    throw ConfigError("model: encoder output channels " +
                      std::to_string(encoder.output_channels()) + " must equal d_model " +
                      std::to_string(decoder.d_model));
  }
  if (decoder.d_model % 4 != 0) {
    throw ConfigError("model: d_model must be divisible by 4 for memory position codes");
  }
  if (make_vocab().size() != decoder.vocab_size) {
    throw ConfigError("model: vocab size " + std::to_string(make_vocab().size()) +
                      " disagrees with decoder vocab_size " +
                      std::to_string(decoder.vocab_size));
  }
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.encoder = build_encoder(cfg.encoder, seed);
  m.decoder = build_decoder(cfg.decoder, seed + 1);
  for (auto& [name, tensor] : named_params(m)) {
    (void)name;
    Tensor t = tensor;
    t.set_requires_grad(true);
  }
  return m;
}

std::vector<std::pair<std::string, Tensor>> named_params(const Model& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&out](const std::string& name, const Tensor& t) {
    if (t.defined()) out.emplace_back(name, t);
  };
  auto push_conv = [&push](const std::string& p, const ConvBlockParams& c) {
    push(p + ".w", c.w);
    push(p + ".b", c.b);
    push(p + ".gamma", c.gamma);
    push(p + ".beta", c.beta);
  };
  push_conv("encoder.stem1", m.encoder.stem1);
  push_conv("encoder.stem2", m.encoder.stem2);
  for (std::size_t s = 0; s < m.encoder.stages.size(); ++s) {
    const std::string sp = "encoder.stage" + std::to_string(s + 2);
    const auto& stage = m.encoder.stages[s];
    for (std::size_t r = 0; r < stage.residuals.size(); ++r) {
      const std::string rp = sp + ".res" + std::to_string(r);
      const auto& rb = stage.residuals[r];
      push(rp + ".w1", rb.w1);
      push(rp + ".b1", rb.b1);
      push(rp + ".gamma1", rb.gamma1);
      push(rp + ".beta1", rb.beta1);
      push(rp + ".w2", rb.w2);
      push(rp + ".b2", rb.b2);
      push(rp + ".gamma2", rb.gamma2);
      push(rp + ".beta2", rb.beta2);
      push(rp + ".wp", rb.wp);
      push(rp + ".bp", rb.bp);
    }
    if (stage.magc.heads > 0) {
      push(sp + ".magc.wk", stage.magc.wk);
      push(sp + ".magc.wv1", stage.magc.delta.wv1);
      push(sp + ".magc.ln_gamma", stage.magc.delta.ln_gamma);
      push(sp + ".magc.ln_beta", stage.magc.delta.ln_beta);
      push(sp + ".magc.wv2", stage.magc.delta.wv2);
    }
    push_conv(sp + ".conv", stage.conv);
  }
  push("decoder.embedding", m.decoder.embedding);
  for (std::size_t b = 0; b < m.decoder.blocks.size(); ++b) {
    const std::string bp = "decoder.block" + std::to_string(b);
    const auto& blk = m.decoder.blocks[b];
    auto push_mha = [&push](const std::string& p, const MhaParams& a) {
      push(p + ".wq", a.wq);
      push(p + ".wk", a.wk);
      push(p + ".wv", a.wv);
      push(p + ".wo", a.wo);
    };
    push_mha(bp + ".self", blk.self_attn);
    push_mha(bp + ".cross", blk.cross_attn);
    push(bp + ".ffn.w1", blk.ffn.w1);
    push(bp + ".ffn.b1", blk.ffn.b1);
    push(bp + ".ffn.w2", blk.ffn.w2);
    push(bp + ".ffn.b2", blk.ffn.b2);
    push(bp + ".ln1_gamma", blk.ln1_gamma);
    push(bp + ".ln1_beta", blk.ln1_beta);
    push(bp + ".ln2_gamma", blk.ln2_gamma);
    push(bp + ".ln2_beta", blk.ln2_beta);
    push(bp + ".ln3_gamma", blk.ln3_gamma);
    push(bp + ".ln3_beta", blk.ln3_beta);
  }
  push("decoder.w_out", m.decoder.w_out);
  push("decoder.b_out", m.decoder.b_out);
  return out;
}

std::int64_t parameter_count(const Model& m) {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_params(m)) {
    (void)name;
    n += t.size();
  }
  return n;
}

Tensor model_memory(const Model& m, const Tensor& image) {
  FeatureMap f = encode(image, m.encoder);
  return encode_memory_positions(f, m.cfg.decoder.d_model);
}

KvMap parse_kv_lines(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    const std::size_t eq = line.find('=', start);
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + line);
    }
    std::string key = line.substr(start, eq - start);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    kv[key] = line.substr(eq + 1);
  }
  return kv;
}

KvMap read_kv_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_kv_lines(ss.str());
}

std::string kv_to_string(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

namespace {

std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

std::vector<std::int64_t> to_int_list(const std::string& key, const std::string& v) {
  std::vector<std::int64_t> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_int(key, item));
  return out;
}

const char* kModelKeys[] = {"d_model",     "heads",           "decoder_blocks", "d_ff",
                            "dropout",     "max_len",         "magc_heads",     "bottleneck_ratio",
                            "channel_divisor", "channels",    "residual_blocks", "charset"};

}  // namespace

bool is_model_config_key(const std::string& key) {
  for (const char* k : kModelKeys) {
    if (key == k) return true;
  }
  return false;
}

ModelConfig model_config_from(const KvMap& kv) {
  ModelConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "d_model") {
      cfg.decoder.d_model = to_int(key, value);
    } else if (key == "heads") {
      cfg.decoder.heads = to_int(key, value);
    } else if (key == "decoder_blocks") {
      cfg.decoder.blocks = to_int(key, value);
    } else if (key == "d_ff") {
      cfg.decoder.d_ff = to_int(key, value);
    } else if (key == "dropout") {
      cfg.decoder.dropout = to_double(key, value);
    } else if (key == "max_len") {
      cfg.decoder.max_len = to_int(key, value);
    } else if (key == "magc_heads") {
      cfg.encoder.magc_heads = to_int(key, value);
    } else if (key == "bottleneck_ratio") {
      cfg.encoder.bottleneck_ratio = to_int(key, value);
    } else if (key == "channel_divisor") {
      cfg.encoder.channel_divisor = to_int(key, value);
    } else if (key == "channels") {
      const auto list = to_int_list(key, value);
      if (list.size() != cfg.encoder.channels.size()) {
        throw ConfigError("config: channels expects 6 comma-separated values");
      }
      std::copy(list.begin(), list.end(), cfg.encoder.channels.begin());
    } else if (key == "residual_blocks") {
      const auto list = to_int_list(key, value);
      if (list.size() != cfg.encoder.residual_blocks.size()) {
        throw ConfigError("config: residual_blocks expects 4 comma-separated values");
      }
      std::copy(list.begin(), list.end(), cfg.encoder.residual_blocks.begin());
    } else if (key == "charset") {
      cfg.charset_override = value;
    }
    // Non-model keys are the caller's concern (train settings share the file).
  }
  cfg.decoder.vocab_size = cfg.make_vocab().size();
  return cfg;
}

KvMap model_config_to_kv(const ModelConfig& cfg) {
  KvMap kv;
  kv["d_model"] = std::to_string(cfg.decoder.d_model);
  kv["heads"] = std::to_string(cfg.decoder.heads);
  kv["decoder_blocks"] = std::to_string(cfg.decoder.blocks);
  kv["d_ff"] = std::to_string(cfg.decoder.d_ff);
  kv["dropout"] = std::to_string(cfg.decoder.dropout);
  kv["max_len"] = std::to_string(cfg.decoder.max_len);
  kv["magc_heads"] = std::to_string(cfg.encoder.magc_heads);
  kv["bottleneck_ratio"] = std::to_string(cfg.encoder.bottleneck_ratio);
  kv["channel_divisor"] = std::to_string(cfg.encoder.channel_divisor);
  std::string ch, rb;
  for (std::size_t i = 0; i < cfg.encoder.channels.size(); ++i) {
    if (i) ch += ',';
    ch += std::to_string(cfg.encoder.channels[i]);
  }
  for (std::size_t i = 0; i < cfg.encoder.residual_blocks.size(); ++i) {
    if (i) rb += ',';
    rb += std::to_string(cfg.encoder.residual_blocks[i]);
  }
  kv["channels"] = ch;
  kv["residual_blocks"] = rb;
  kv["charset"] = cfg.charset_override;
  return kv;
}

}  // namespace master
