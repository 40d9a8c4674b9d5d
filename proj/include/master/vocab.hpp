#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "master/tensor.hpp"

namespace master {

/// Character inventory. Canonical ordering: PAD, SOS, EOS, UNK, then the
/// printable symbols (default: digits, A-Z, a-z for 66 entries total).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::int64_t size() const { return static_cast<std::int64_t>(symbols_.size()); }
  const std::string& symbol(int id) const { return symbols_[static_cast<std::size_t>(id)]; }
  /// Id of a printable symbol, or kUnk when outside the inventory.
  int id_of(std::string_view symbol) const;
  /// Characters usable in transcriptions (specials excluded).
  std::vector<std::string> printable_symbols() const;
  /// The printable inventory as one concatenated string ("" = default set).
  std::string charset_override() const { return override_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend Vocabulary build_vocab(const std::optional<std::string>& charset);

 private:
  std::vector<std::string> symbols_;
  std::vector<std::pair<std::string, int>> index_;  // sorted symbol -> id
  std::string override_;

  void build_index();
};

/// Default inventory (66 symbols) or the 4 specials plus the given UTF-8
/// character set (e.g. the 104-class variant, or digits-only corpora).
Vocabulary build_vocab(const std::optional<std::string>& charset = std::nullopt);

/// SOS + per-character ids (unknown characters map to UNK) + EOS.
std::vector<int> encode_text(std::string_view text, const Vocabulary& v);

/// Strips SOS, stops at the first EOS, drops PAD; UNK renders as U+25A1.
std::string decode_tokens(const std::vector<int>& ids, const Vocabulary& v);

/// Splits UTF-8 text into code-point strings.
std::vector<std::string> utf8_split(std::string_view text);

}  // namespace master
