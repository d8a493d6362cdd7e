#include <doctest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "mctsnmt/corpus.hpp"

using namespace mctsnmt;

TEST_SUITE("corpus") {

TEST_CASE("build_vocab orders by frequency") {
  const Vocab v = build_vocab({{"a", "b"}, {"a"}}, 6);
  CHECK(v.tokens() ==
        std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "a", "b"});
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v.id_of(v.tokens()[i]) == static_cast<TokenId>(i));
  }
}

TEST_CASE("build_vocab rejects an empty corpus and tiny caps") {
  CHECK_THROWS_WITH_AS(build_vocab({}, 10), "empty corpus", Error);
  CHECK_THROWS_AS(build_vocab({{"a"}}, 4), Error);
}

TEST_CASE("build_vocab keeps the most frequent tokens, ties lexicographic") {
  // Counts: the=5, cat=3, sat=3, on=2, a=2, mat=1, dog=1, ran=1, far=1, up=1.
  const std::vector<std::vector<std::string>> corpus = {
      {"the", "cat", "sat", "on", "the", "mat"},
      {"the", "dog", "sat"},
      {"a", "cat", "ran", "far"},
      {"the", "cat", "sat", "up"},
      {"the", "a", "on"},
  };
  const Vocab v = build_vocab(corpus, 8);
  REQUIRE(v.size() == 8);
  CHECK(v.token(4) == "the");
  CHECK(v.token(5) == "cat");
  CHECK(v.token(6) == "sat");
  CHECK(v.token(7) == "a");  // "a" < "on" at count 2
  CHECK(encode(v, {"on", "mat", "dog"}) == Sequence{kUnk, kUnk, kUnk});
}

TEST_CASE("encode / decode") {
  const Vocab v({"a", "b"});
  CHECK(encode(v, {"a", "zz"}) == Sequence{4, 3});
  CHECK(encode(v, {}).empty());
  CHECK(decode(v, {4, 2}) == std::vector<std::string>{"a", "<eos>"});
  CHECK_THROWS_WITH_AS(decode(v, {99}), doctest::Contains("id out of range"), Error);
  CHECK_THROWS_AS(decode(v, {-1}), Error);

  Sequence all(v.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<TokenId>(i);
  CHECK(encode(v, decode(v, all)) == all);
}

TEST_CASE("encode / decode roundtrip on a generated vocabulary") {
  const SyntheticTask task({});
  const Vocab v = task.vocab();
  std::vector<std::string> words(v.tokens().begin() + kNumSpecials, v.tokens().end());
  std::reverse(words.begin(), words.end());
  CHECK(decode(v, encode(v, words)) == words);
}

TEST_CASE("vocab fingerprint tracks the token list") {
  CHECK(Vocab({"a", "b"}).fingerprint() == Vocab({"a", "b"}).fingerprint());
  CHECK(Vocab({"a", "b"}).fingerprint() != Vocab({"b", "a"}).fingerprint());
  CHECK_THROWS_AS(Vocab({"a", "a"}), Error);
  CHECK_THROWS_AS(Vocab({"<eos>"}), Error);
}

TEST_CASE("synthetic reverse task") {
  SyntheticTaskSpec spec;
  const SyntheticTask task(spec);
  const Sequence src{4, 5, 6};
  CHECK(task.reference(src) ==
        Sequence{task.map(6), task.map(5), task.map(4), kEos});
  CHECK(task.target_at(src, 0) == task.map(6));
  CHECK(task.target_at(src, 3) == kEos);

  // The mapping is a bijection over the content ids.
  std::set<TokenId> image;
  for (TokenId t = kNumSpecials; t < kNumSpecials + spec.src_vocab_size; ++t) {
    const TokenId m = task.map(t);
    CHECK(m >= kNumSpecials);
    CHECK(m < kNumSpecials + spec.src_vocab_size);
    image.insert(m);
  }
  CHECK(image.size() == static_cast<std::size_t>(spec.src_vocab_size));
}

TEST_CASE("synthetic identity task") {
  SyntheticTaskSpec spec;
  spec.reorder = Reorder::identity;
  const SyntheticTask task(spec);
  CHECK(task.reference({7}) == Sequence{task.map(7), kEos});
  CHECK(task.reference({7, 9}) == Sequence{task.map(7), task.map(9), kEos});
}

TEST_CASE("gen_synthetic is a pure function of (spec, n, seed)") {
  SyntheticTaskSpec spec;
  const auto a = gen_synthetic(spec, 300, 7);
  const auto b = gen_synthetic(spec, 300, 7);
  const auto c = gen_synthetic(spec, 300, 8);
  CHECK(a == b);
  CHECK(a != c);
  CHECK_THROWS_AS(gen_synthetic(spec, 0, 1), Error);

  const SyntheticTask task(spec);
  for (const auto& p : a) {
    CHECK(p.src.size() >= static_cast<std::size_t>(spec.min_len));
    CHECK(p.src.size() <= static_cast<std::size_t>(spec.max_len));
    CHECK(p.ref.size() == p.src.size() + 1);
    CHECK(p.ref.back() == kEos);
    CHECK(p.ref == task.reference(p.src));
  }
}

TEST_CASE("synthetic spec validation") {
  SyntheticTaskSpec spec;
  spec.min_len = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.min_len = 5;
  spec.max_len = 4;
  CHECK_THROWS_AS(spec.validate(), Error);
  CHECK(parse_reorder("identity") == Reorder::identity);
  CHECK_THROWS_AS(parse_reorder("sideways"), Error);
}

TEST_CASE("dataset file roundtrip") {
  testutil::TempDir dir;
  const auto pairs = gen_synthetic({}, 25, 3);
  save_dataset(dir / "d.tsv", pairs);
  CHECK(load_dataset(dir / "d.tsv") == pairs);
  CHECK_THROWS_AS(load_dataset(dir / "missing.tsv"), Error);

  testutil::write_file(dir / "bad.tsv", "4 5\t6 7\n");  // ref lacks EOS
  CHECK_THROWS_AS(load_dataset(dir / "bad.tsv"), Error);
}

TEST_CASE("load_parallel") {
  testutil::TempDir dir;
  const Vocab v({"a", "b", "x"});
  testutil::write_file(dir / "s.txt", "a b\nb\n");
  testutil::write_file(dir / "t.txt", "x\nx a\n");
  const auto pairs = load_parallel(dir / "s.txt", dir / "t.txt", v);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].src == Sequence{4, 5});
  CHECK(pairs[0].ref == Sequence{6, kEos});
  CHECK(pairs[1].ref == Sequence{6, 4, kEos});

  testutil::write_file(dir / "t3.txt", "x\nx\nx\n");
  CHECK_THROWS_AS(load_parallel(dir / "s.txt", dir / "t3.txt", v), Error);
  CHECK_THROWS_AS(load_parallel(dir / "nope.txt", dir / "t.txt", v), Error);
}

}  // TEST_SUITE
