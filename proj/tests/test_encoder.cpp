#include <doctest.h>

#include <cstring>
#include <fstream>
#include <numeric>

#include "probing/cache.hpp"
#include "probing/encoder.hpp"
#include "probing/error.hpp"
#include "test_util.hpp"

using namespace probing;

namespace {

ToyEncoder small_toy(int max_pieces = 512) {
  return ToyEncoder({"toy", 3, 16, max_pieces}, 5);
}

LayerStack random_stack(Rng& rng) {
  const int layers = 1 + static_cast<int>(uniform_index(rng, 4));
  const int pieces = static_cast<int>(uniform_index(rng, 9));
  const int width = 1 + static_cast<int>(uniform_index(rng, 7));
  LayerStack s(layers, pieces, width);
  for (auto& v : s.values()) {
    // arbitrary finite bit patterns, including subnormals and signed zeros
    std::uint32_t bits;
    do bits = static_cast<std::uint32_t>(rng());
    while (((bits >> 23) & 0xff) == 0xff);
    std::memcpy(&v, &bits, 4);
  }
  return s;
}

}  // namespace

TEST_CASE("wordpiece: subword split and round trip") {
  auto enc = small_toy();
  auto one = tokenize_align({"ontplooiingsliberalisme"}, enc);
  REQUIRE(one.alignment.token_ranges.size() == 1);
  CHECK(one.alignment.token_ranges[0].size() > 1);
  CHECK(one.pieces.front() == enc.vocab().cls());
  CHECK(one.pieces.back() == enc.vocab().sep());

  auto de = tokenize_align({"de"}, enc);
  CHECK(de.alignment.token_ranges[0].size() == 1);

  const std::vector<std::string> tokens{"Het", "ontplooiingsliberalisme", "stelde", "de",
                                        "mens", "centraal", ",", "zei", "Keltisch", "1998"};
  auto t = tokenize_align(tokens, enc);
  REQUIRE(t.alignment.token_ranges.size() == tokens.size());
  int covered = 0;
  int prev_end = 1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto r = t.alignment.token_ranges[i];
    CHECK(r.start == prev_end);
    CHECK_FALSE(r.empty());
    prev_end = r.end;
    covered += r.size();
    std::span<const PieceId> ids(t.pieces.data() + r.start, r.size());
    CHECK(detokenize(enc.vocab(), ids) == tokens[i]);
  }
  CHECK(covered == t.alignment.piece_count);
  CHECK(t.alignment.piece_count + 2 == static_cast<int>(t.pieces.size()));
}

TEST_CASE("tokenize_align: empty token maps to unknown piece") {
  auto enc = small_toy();
  auto t = tokenize_align({"a", "", "b"}, enc);
  REQUIRE(t.alignment.token_ranges.size() == 3);
  CHECK(t.alignment.token_ranges[1].size() == 1);
  CHECK(t.pieces[t.alignment.token_ranges[1].start] == enc.vocab().unk());
  CHECK(t.warnings.size() == 1);
  CHECK_THROWS_AS(tokenize_align({}, enc), ValidationError);
}

TEST_CASE("extract_layers: shape, lexical layer, determinism, length limit") {
  auto enc = small_toy(12);
  auto t = tokenize_align({"de", "stad", "en", "de", "taal"}, enc);
  auto stack = extract_layers(t.pieces, enc);
  CHECK(stack.num_layers() == 4);
  CHECK(stack.width() == 16);
  CHECK(stack.piece_count() == static_cast<int>(t.pieces.size()));
  CHECK(stack.all_finite());

  // "de" at two positions: identical lexical rows, different contextual rows
  const int a = t.alignment.token_ranges[0].start;
  const int b = t.alignment.token_ranges[3].start;
  CHECK(std::ranges::equal(stack.row(0, a), stack.row(0, b)));
  CHECK_FALSE(std::ranges::equal(stack.row(2, a), stack.row(2, b)));

  auto again = extract_layers(t.pieces, enc);
  CHECK(serialize_stack(again) == serialize_stack(stack));

  std::vector<PieceId> too_long(13, enc.vocab().unk());
  try {
    extract_layers(too_long, enc);
    FAIL("expected over-length error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("chunk") != std::string::npos);
  }
}

TEST_CASE("concat_context: greedy packing") {
  auto enc = small_toy(512);
  std::vector<std::vector<std::string>> three{{"de", "stad"}, {"het", "land"}, {"een", "jaar"}};
  auto c = concat_context(three, enc);
  REQUIRE(c.chunks.size() == 1);
  CHECK(c.chunks[0].sentences == std::vector<int>{0, 1, 2});

  // two sentences of 300 pieces each: each byte-level "q" is one piece
  std::vector<std::vector<std::string>> big(2, std::vector<std::string>(300, "q"));
  CHECK(concat_context(big, enc).chunks.size() == 2);

  // 20 random sentences against a reference packer
  auto small = small_toy(40);
  Rng rng(4);
  const std::vector<std::string> words{"de", "ontplooiing", "stad", "x", "Keltisch", "men"};
  std::vector<std::vector<std::string>> doc(20);
  std::vector<int> lengths;
  for (auto& s : doc) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 5));
    int pieces = 0;
    for (int i = 0; i < n; ++i) {
      s.push_back(words[uniform_index(rng, words.size())]);
      pieces += static_cast<int>(small.vocab().tokenize(s.back()).size());
    }
    lengths.push_back(pieces);
  }
  std::vector<std::vector<int>> want;
  int used = 0;
  for (int s = 0; s < 20; ++s) {
    REQUIRE(lengths[s] <= 38);
    if (want.empty() || used + lengths[s] > 38) {
      want.emplace_back();
      used = 0;
    }
    want.back().push_back(s);
    used += lengths[s];
  }
  auto got = concat_context(doc, small);
  REQUIRE(got.chunks.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(got.chunks[i].sentences == want[i]);
    CHECK(static_cast<int>(got.chunks[i].pieces.size()) <= 40);
  }
  CHECK(got.warnings.empty());
}

TEST_CASE("concat_context: oversized sentence truncated with warning") {
  auto enc = small_toy(8);
  std::vector<std::vector<std::string>> doc{{"a"}, std::vector<std::string>(10, "b"), {"c"}};
  auto c = concat_context(doc, enc);
  REQUIRE(c.chunks.size() == 3);
  CHECK(c.chunks[1].alignments[0].token_ranges.size() == 6);
  CHECK_FALSE(c.warnings.empty());

  Context ctx{"doc", doc};
  auto loc = locate_tokens(ctx, c);
  REQUIRE(loc.size() == 12);
  CHECK(loc[0].chunk == 0);
  CHECK(loc[1].chunk == 1);
  CHECK(loc[6].chunk == 1);
  CHECK(loc[7].chunk == -1);
  CHECK(loc[11].chunk == 2);
}

TEST_CASE("layer stack serialization") {
  LayerStack s(2, 3, 4);
  std::iota(s.values().begin(), s.values().end(), 0.5f);
  const auto bytes = serialize_stack(s);
  CHECK(bytes.substr(0, 4) == "LSTK");
  CHECK(bytes.size() == 24 + 4 * 24);
  CHECK(deserialize_stack(bytes) == s);

  auto flipped = bytes;
  flipped[40] ^= 0x01;
  CHECK_THROWS_AS(deserialize_stack(flipped), IntegrityError);
  CHECK_THROWS_AS(deserialize_stack(bytes.substr(0, 30)), IntegrityError);
  CHECK_THROWS_AS(deserialize_stack("XXXX"), IntegrityError);
}

TEST_CASE("cache: round trip, missing key, corruption, manifest mismatch") {
  const auto root = scratch_dir("cache");
  EncoderHandle h{"toy/enc", 3, 16, 512};
  StackCache cache(root, h, "corpus-a");

  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto s = random_stack(rng);
    const auto key = "ctx-" + std::to_string(i) + "#0";
    cache.write(key, s);
    auto back = cache.read(key);
    REQUIRE(back.num_layers() == s.num_layers());
    REQUIRE(std::memcmp(back.values().data(), s.values().data(), s.values().size_bytes()) == 0);
  }
  CHECK(cache.contains("ctx-3#0"));
  CHECK_THROWS_AS(cache.read("absent"), NotFoundError);

  // flip a payload byte on disk
  const auto path = cache.record_path("ctx-7#0");
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = static_cast<long>(f.tellg());
    REQUIRE(size > 24);
    f.seekp(size - 1);
    char c = 0;
    f.seekg(size - 1);
    f.get(c);
    f.seekp(size - 1);
    f.put(static_cast<char>(c ^ 0x40));
  }
  try {
    cache.read("ctx-7#0");
    FAIL("expected integrity error");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find(path.filename().string()) != std::string::npos);
  }

  // reopening with another encoder shape under the same names is refused
  EncoderHandle other = h;
  other.width = 32;
  CHECK_THROWS_AS(StackCache(root, other, "corpus-a"), IntegrityError);
  CHECK_NOTHROW(StackCache(root, h, "corpus-a"));

  // keys differing only in unsafe characters do not collide
  CHECK(key_file_stem("a/b") != key_file_stem("a_b"));
  CHECK(key_file_stem(std::string(500, 'k')).size() < 140);
}

TEST_CASE("cache root resolution") {
  CHECK(resolve_cache_root(std::filesystem::path("/tmp/x")) == "/tmp/x");
  ::setenv(kCacheDirEnv, "/tmp/from-env", 1);
  CHECK(resolve_cache_root(std::nullopt) == "/tmp/from-env");
  ::unsetenv(kCacheDirEnv);
  CHECK(resolve_cache_root(std::nullopt) == ".probing-cache");
}

TEST_CASE("signal encoder: planted bit only from signal layer on") {
  SignalEncoder enc({"sig", 6, 8, 512}, {});
  auto sents = enc.generate_corpus(5, 3, 6, 2, "t");
  for (const auto& s : sents) {
    auto t = tokenize_align(s.tokens, enc);
    CHECK(t.alignment.piece_count == static_cast<int>(s.tokens.size()));
    auto stack = extract_layers(t.pieces, enc);
    CHECK(stack.num_layers() == 7);
    for (int p = 1; p + 1 < stack.piece_count(); ++p) {
      const int bit = enc.bit_after(t.pieces[p - 1]);
      CHECK((*s.upos)[p - 1] == (bit ? "A" : "B"));
    }
  }
}

TEST_CASE("command encoder: external program contract") {
  const auto dir = scratch_dir("cmd");
  WordPieceVocab vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b"});
  CommandEncoder enc({"ext", 2, 3, 512}, std::string(FAKE_LAYERS_BIN) + " 2 3", vocab, dir);
  auto t = tokenize_align({"a", "b", "a"}, enc);
  auto stacks = enc.encode_batch({t.pieces, {vocab.cls(), vocab.sep()}});
  REQUIRE(stacks.size() == 2);
  CHECK(stacks[0].num_layers() == 3);
  CHECK(stacks[0].piece_count() == 5);
  CHECK(stacks[1].piece_count() == 2);
  // the fake program writes piece id + layer into every value
  CHECK(stacks[0].row(2, 1)[0] == static_cast<float>(t.pieces[1] + 2));
  CHECK(extract_layers(t.pieces, enc) == stacks[0]);

  CommandEncoder broken({"ext", 2, 3, 512}, "false", vocab, dir);
  CHECK_THROWS_AS(broken.encode(t.pieces), Error);
}
