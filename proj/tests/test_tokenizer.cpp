#include "latr/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "latr/corpus.hpp"
#include "latr/rng.hpp"

using namespace latr;

namespace {

OcrDocument doc_from_words(const std::vector<std::string>& words) {
  OcrDocument doc;
  doc.id = "t";
  doc.page_w = 100;
  doc.page_h = 100;
  double x = 0;
  for (const auto& w : words) {
    doc.words.push_back({w, x, 0, x + 8, 10});
    x += 10;
  }
  return doc;
}

}  // namespace

TEST_CASE("build_vocabulary keeps frequent words and all characters") {
  const auto v = build_vocabulary({doc_from_words({"the", "the", "cat"})}, 20, 4);
  const auto& pieces = v.pieces();
  CHECK(std::count(pieces.begin(), pieces.end(), "the") == 1);
  for (const std::string c : {"t", "h", "e", "c", "a", " "}) {
    CHECK(std::count(pieces.begin(), pieces.end(), c) == 1);
  }
  CHECK(pieces[0] == "<pad>");
  CHECK(pieces[1] == "</s>");
  CHECK(pieces[2] == "<unk>");
}

TEST_CASE("equal-frequency words break ties lexicographically") {
  const auto v = build_vocabulary({doc_from_words({"zebra", "apple"})}, 60, 4);
  const auto& pieces = v.pieces();
  const auto ia = std::find(pieces.begin(), pieces.end(), "apple");
  const auto iz = std::find(pieces.begin(), pieces.end(), "zebra");
  REQUIRE(ia != pieces.end());
  REQUIRE(iz != pieces.end());
  CHECK(ia < iz);
}

TEST_CASE("vocabulary build is deterministic") {
  const std::vector<OcrDocument> corpus{doc_from_words({"red", "green", "blue", "red"})};
  const auto v1 = build_vocabulary(corpus, 40, 4);
  const auto v2 = build_vocabulary(corpus, 40, 4);
  CHECK(v1.pieces() == v2.pieces());
}

TEST_CASE("build_vocabulary rejects an empty corpus") {
  CHECK_THROWS_AS(build_vocabulary({}, 20, 4), EmptyDataError);
}

TEST_CASE("encode basics") {
  const auto v = build_vocabulary({doc_from_words({"hello", "world"})}, 60, 4);
  CHECK(v.encode("").empty());
  const auto one = v.encode("hello");
  CHECK(one.size() == 1);
  CHECK(v.piece(one[0]) == "hello");
  // Uppercase folds to the same ids.
  CHECK(v.encode("HELLO") == one);
}

TEST_CASE("characters outside the corpus map to unk") {
  const auto v = build_vocabulary({doc_from_words({"ab"})}, 20, 2);
  const auto ids = v.encode("a#b");
  REQUIRE(ids.size() == 3);
  CHECK(ids[1] == Vocabulary::kUnkId);
}

TEST_CASE("encode/decode round trip over the vocabulary character set") {
  const auto v =
      build_vocabulary({doc_from_words({"alpha", "beta", "gamma", "delta", "42"})}, 80, 4);
  Rng rng(99);
  const std::string charset = "abgdelmt42 ";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const int len = static_cast<int>(rng.below(12));
    for (int i = 0; i < len; ++i) s += charset[rng.below(charset.size())];
    CHECK(v.decode(v.encode(s)) == lowercase(s));
  }
}

TEST_CASE("sentinel block sits at the end in order") {
  const auto v = build_vocabulary({doc_from_words({"aa", "bb"})}, 30, 4);
  CHECK(v.sentinel_id(0) == v.size() - 4);
  CHECK(v.sentinel_id(3) == v.size() - 1);
  CHECK(v.decode({v.sentinel_id(3)}) == "<extra_id_3>");
  CHECK(v.decode({v.sentinel_id(0)}) == "<extra_id_0>");
  CHECK_THROWS_AS(v.sentinel_id(4), ValueError);
  CHECK_THROWS_AS(v.sentinel_id(-1), ValueError);
}

TEST_CASE("encode never emits sentinels, even for sentinel-looking text") {
  const auto v = build_vocabulary({doc_from_words({"extra", "id", "<extra_id_0>"})}, 80, 4);
  for (const int id : v.encode("<extra_id_0> plain text")) {
    CHECK_FALSE(v.is_sentinel(id));
    CHECK(id != Vocabulary::kPadId);
    CHECK(id != Vocabulary::kEosId);
  }
}

TEST_CASE("decode rejects out-of-range ids and drops pad/eos") {
  const auto v = build_vocabulary({doc_from_words({"xy"})}, 20, 2);
  CHECK_THROWS_AS(v.decode({v.size()}), IndexError);
  CHECK(v.decode({Vocabulary::kPadId, Vocabulary::kEosId}).empty());
}

TEST_CASE("vocabulary file round trip") {
  const auto v = build_vocabulary({doc_from_words({"save", "load", "me"})}, 60, 4);
  const std::string path = "vocab_test_tmp.txt";
  v.save(path);
  const auto loaded = Vocabulary::load(path);
  CHECK(loaded.pieces() == v.pieces());
  CHECK(loaded.n_sentinels() == v.n_sentinels());
  CHECK(loaded.encode("save me") == v.encode("save me"));
  std::remove(path.c_str());
}
