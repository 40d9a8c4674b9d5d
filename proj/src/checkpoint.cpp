#include <cstring>
#include <fstream>

#include "master/training.hpp"

namespace master {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'T', 'R'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, const double* data, std::int64_t n) {
  // x86-64 is little-endian; doubles are written verbatim.
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
}

struct Reader {
  std::vector<char> bytes;
  std::size_t pos = 0;
  std::string path;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("checkpoint: " + path + ": " + msg);
  }
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) fail("truncated file");
  }
  std::uint32_t read_u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t read_u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    pos += 8;
    return v;
  }
  std::string read_bytes(std::size_t n) {
    need(n);
    std::string s(bytes.data() + pos, n);
    pos += n;
    return s;
  }
};

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_u64(os, static_cast<std::uint64_t>(t.extent(i)));
  write_f64(os, t.data(), t.size());
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const Trainer* trainer) {
  KvMap kv = model_config_to_kv(model.cfg);
  std::vector<std::pair<std::string, Tensor>> tensors = named_params(model);
  if (trainer) {
    for (const auto& [k, v] : train_config_to_kv(trainer->config())) kv["train." + k] = v;
    kv["epoch"] = std::to_string(trainer->epoch());
    kv["adam_step"] = std::to_string(trainer->adam_state().step);
    kv["rng"] = trainer->rng_state();
    const auto& st = trainer->adam_state();
    const auto params = named_params(model);
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.emplace_back("adam_m." + params[i].first, st.m[i]);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.emplace_back("adam_v." + params[i].first, st.v[i]);
    }
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  const std::string cfg_text = kv_to_string(kv);
  write_u64(os, cfg_text.size());
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  write_u64(os, tensors.size());
  for (const auto& [name, t] : tensors) write_tensor(os, name, t);
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  Reader r;
  r.path = path;
  r.bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());

  r.need(4);
  if (std::memcmp(r.bytes.data(), kMagic, 4) != 0) r.fail("bad magic, not a checkpoint");
  r.pos = 4;
  const std::uint32_t version = r.read_u32();
  if (version != kVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  const std::uint64_t cfg_len = r.read_u64();
  const KvMap kv = parse_kv_lines(r.read_bytes(cfg_len));

  LoadedCheckpoint out;
  const ModelConfig cfg = model_config_from(kv);
  out.model = build_model(cfg, 0);

  KvMap train_kv;
  for (const auto& [k, v] : kv) {
    if (k.rfind("train.", 0) == 0) train_kv[k.substr(6)] = v;
  }
  out.has_train_state = !train_kv.empty();
  if (out.has_train_state) {
    out.train_cfg = train_config_from(train_kv);
    auto it = kv.find("epoch");
    if (it != kv.end()) out.epoch = std::stoll(it->second);
    it = kv.find("rng");
    if (it != kv.end()) out.rng_state = it->second;
  }

  auto params = named_params(out.model);
  AdamState adam = init_adam(params);
  auto it = kv.find("adam_step");
  if (it != kv.end()) adam.step = std::stoll(it->second);

  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : params) by_name.emplace(name, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    by_name.emplace("adam_m." + params[i].first, adam.m[i]);
    by_name.emplace("adam_v." + params[i].first, adam.v[i]);
  }

  const std::uint64_t tensor_count = r.read_u64();
  std::size_t adam_tensors_seen = 0;
  for (std::uint64_t ti = 0; ti < tensor_count; ++ti) {
    const std::uint32_t name_len = r.read_u32();
    const std::string name = r.read_bytes(name_len);
    const std::uint32_t rank = r.read_u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::int64_t>(r.read_u64()));
    }
    const std::int64_t n = numel(shape);
    r.need(static_cast<std::size_t>(n) * 8);
    auto found = by_name.find(name);
    if (found == by_name.end()) r.fail("unknown tensor '" + name + "'");
    Tensor dst = found->second;
    if (dst.shape() != shape) {
      r.fail("tensor '" + name + "' has shape " + shape_str(shape) +
             " but the config implies " + shape_str(dst.shape()));
    }
    std::memcpy(dst.data(), r.bytes.data() + r.pos, static_cast<std::size_t>(n) * 8);
    r.pos += static_cast<std::size_t>(n) * 8;
    if (name.rfind("adam_", 0) == 0) ++adam_tensors_seen;
  }
  if (out.has_train_state && adam_tensors_seen != 2 * params.size()) {
    r.fail("missing optimizer tensors");
  }
  out.adam = std::move(adam);
  return out;
}

Trainer resume_trainer(Model& model, const LoadedCheckpoint& ck) {
  Trainer t(model, ck.train_cfg);
  t.adam_state() = ck.adam;
  t.restore(ck.epoch, ck.rng_state);
  return t;
}

}  // namespace master
