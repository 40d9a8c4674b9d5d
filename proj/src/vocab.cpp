#include "master/vocab.hpp"

#include <algorithm>
#include <fstream>

namespace master {

namespace {
const char* kSpecials[4] = {"<PAD>", "<SOS>", "<EOS>", "<UNK>"};

std::string default_charset() {
  std::string s;
  for (char c = '0'; c <= '9'; ++c) s.push_back(c);
  for (char c = 'A'; c <= 'Z'; ++c) s.push_back(c);
  for (char c = 'a'; c <= 'z'; ++c) s.push_back(c);
  return s;
}
}  // namespace

std::vector<std::string> utf8_split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

void Vocabulary::build_index() {
  index_.clear();
  for (std::size_t i = 4; i < symbols_.size(); ++i) {
    index_.emplace_back(symbols_[i], static_cast<int>(i));
  }
  std::sort(index_.begin(), index_.end());
}

int Vocabulary::id_of(std::string_view symbol) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), symbol,
                             [](const auto& e, std::string_view s) { return e.first < s; });
  if (it != index_.end() && it->first == symbol) return it->second;
  return kUnk;
}

std::vector<std::string> Vocabulary::printable_symbols() const {
  return {symbols_.begin() + 4, symbols_.end()};
}

Vocabulary build_vocab(const std::optional<std::string>& charset) {
  Vocabulary v;
  for (const char* s : kSpecials) v.symbols_.emplace_back(s);
  const std::string chars = charset ? *charset : default_charset();
  v.override_ = charset ? *charset : std::string();
  for (const auto& sym : utf8_split(chars)) {
    for (const char* s : kSpecials) {
      if (sym == s) throw ContractError("vocab: charset may not contain special marker " + sym);
    }
    if (std::find(v.symbols_.begin() + 4, v.symbols_.end(), sym) != v.symbols_.end()) {
      throw ContractError("vocab: duplicate symbol '" + sym + "'");
    }
    v.symbols_.push_back(sym);
  }
  v.build_index();
  return v;
}

std::vector<int> encode_text(std::string_view text, const Vocabulary& v) {
  std::vector<int> ids;
  ids.push_back(Vocabulary::kSos);
  for (const auto& sym : utf8_split(text)) ids.push_back(v.id_of(sym));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::string decode_tokens(const std::vector<int>& ids, const Vocabulary& v) {
  std::string out;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kSos || id == Vocabulary::kPad) continue;
    if (id == Vocabulary::kUnk) {
      out += "□";
      continue;
    }
    if (id < 0 || id >= v.size()) {
      throw ContractError("decode_tokens: id " + std::to_string(id) + " outside vocabulary");
    }
    out += v.symbol(id);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("vocab: cannot open " + path + " for writing");
  for (const auto& s : symbols_) f << s << '\n';
  if (!f) throw IoError("vocab: write failed for " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("vocab: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  if (lines.size() < 4) throw ParseError("vocab: " + path + " is missing the special symbols");
  for (int i = 0; i < 4; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kSpecials[i]) {
      throw ParseError("vocab: " + path + " line " + std::to_string(i + 1) + " must be " +
                       kSpecials[i]);
    }
  }
  std::string charset;
  for (std::size_t i = 4; i < lines.size(); ++i) charset += lines[i];
  if (charset == default_charset()) return build_vocab(std::nullopt);
  return build_vocab(charset);
}

}  // namespace master
