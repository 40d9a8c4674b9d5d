#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "master/vocab.hpp"

using namespace master;

TEST_CASE("default vocabulary has 66 symbols in canonical order") {
  const Vocabulary v = build_vocab();
  CHECK(v.size() == 66);
  CHECK(v.symbol(Vocabulary::kPad) == "<PAD>");
  CHECK(v.symbol(Vocabulary::kSos) == "<SOS>");
  CHECK(v.symbol(Vocabulary::kEos) == "<EOS>");
  CHECK(v.symbol(Vocabulary::kUnk) == "<UNK>");
  CHECK(v.symbol(4) == "0");
  CHECK(v.symbol(13) == "9");
  CHECK(v.symbol(14) == "A");
  CHECK(v.symbol(39) == "Z");
  CHECK(v.symbol(40) == "a");
  CHECK(v.symbol(65) == "z");
}

TEST_CASE("id/symbol round trip is the identity for every entry") {
  const Vocabulary v = build_vocab();
  for (int id = 4; id < v.size(); ++id) {
    CHECK(v.id_of(v.symbol(id)) == id);
  }
}

TEST_CASE("digits-only override gives 14 symbols") {
  const Vocabulary v = build_vocab(std::string("0123456789"));
  CHECK(v.size() == 14);
  CHECK(v.id_of("7") == 11);
  CHECK(v.id_of("A") == Vocabulary::kUnk);
}

TEST_CASE("duplicate or special symbols are rejected") {
  CHECK_THROWS_AS(build_vocab(std::string("abca")), ContractError);
  CHECK_THROWS_AS(build_vocab(std::string("a<SOS>b")), ContractError);
}

TEST_CASE("encode_text wraps with SOS/EOS and maps unknowns to UNK") {
  const Vocabulary v = build_vocab();
  const auto ids = encode_text("A1", v);
  CHECK(ids == std::vector<int>{Vocabulary::kSos, v.id_of("A"), v.id_of("1"), Vocabulary::kEos});

  CHECK(encode_text("", v) == std::vector<int>{Vocabulary::kSos, Vocabulary::kEos});

  const auto mixed = encode_text("a€b", v);  // euro sign is outside the inventory
  REQUIRE(mixed.size() == 5);
  CHECK(mixed[1] == v.id_of("a"));
  CHECK(mixed[2] == Vocabulary::kUnk);
  CHECK(mixed[3] == v.id_of("b"));
}

TEST_CASE("decode_tokens strips specials and stops at EOS") {
  const Vocabulary v = build_vocab();
  const std::vector<int> ids{Vocabulary::kSos, v.id_of("H"), v.id_of("i"), Vocabulary::kEos};
  CHECK(decode_tokens(ids, v) == "Hi");

  const std::vector<int> with_tail{Vocabulary::kSos, v.id_of("x"), Vocabulary::kEos, v.id_of("y"),
                                   v.id_of("z")};
  CHECK(decode_tokens(with_tail, v) == "x");

  const std::vector<int> padded{v.id_of("a"), Vocabulary::kPad, v.id_of("b")};
  CHECK(decode_tokens(padded, v) == "ab");

  const std::vector<int> unk{Vocabulary::kUnk};
  CHECK(decode_tokens(unk, v) == "□");
}

TEST_CASE("decode(encode(s)) is the identity over all printable symbols") {
  const Vocabulary v = build_vocab();
  std::string everything;
  for (const auto& s : v.printable_symbols()) everything += s;
  CHECK(everything.size() == 62);
  CHECK(decode_tokens(encode_text(everything, v), v) == everything);
}

TEST_CASE("vocabulary file round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "vocab_test.txt").string();
  const Vocabulary v = build_vocab();
  v.save(path);
  const Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  for (int id = 0; id < v.size(); ++id) CHECK(loaded.symbol(id) == v.symbol(id));

  // second save is byte-identical
  const auto path2 = (std::filesystem::temp_directory_path() / "vocab_test2.txt").string();
  loaded.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("charset override survives the custom-vocab file round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "vocab_digits.txt").string();
  build_vocab(std::string("0123456789")).save(path);
  const Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == 14);
  CHECK(loaded.charset_override() == "0123456789");
  std::remove(path.c_str());
}
