#include <gtest/gtest.h>

#include <set>

#include "lrladapt/corpus.hpp"
#include "test_util.hpp"

using namespace lrladapt;
using lrladapt::testing::TempDir;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(LangTag, Validation) {
  EXPECT_EQ(LangTag("gl").code(), "gl");
  EXPECT_EQ(LangTag("d1").code(), "d1");
  EXPECT_THROW(LangTag(""), Error);
  EXPECT_THROW(LangTag("Gl"), Error);
  EXPECT_THROW(LangTag("pt-br"), Error);
}

TEST(LoadMono, ThreeLinesInOrder) {
  TempDir tmp;
  write_file(tmp / "a.txt", "first line\nsecond  \nthird\n");
  auto c = load_mono(tmp / "a.txt", LangTag("gl"));
  ASSERT_EQ(c.segments.size(), 3u);
  EXPECT_EQ(c.segments[0], "first line");
  EXPECT_EQ(c.segments[1], "second");
  EXPECT_EQ(c.segments[2], "third");
}

TEST(LoadMono, MissingFinalNewlineIsFine) {
  TempDir tmp;
  write_file(tmp / "a.txt", "x\ny");
  EXPECT_EQ(load_mono(tmp / "a.txt", LangTag("gl")).segments.size(), 2u);
}

TEST(LoadMono, BlankLineNamesLineNumber) {
  TempDir tmp;
  write_file(tmp / "a.txt", "one\n\nthree\n");
  EXPECT_NE(error_of([&] { load_mono(tmp / "a.txt", LangTag("gl")); }).find("line 2"), std::string::npos);
  write_file(tmp / "b.txt", "one\n   \n");
  EXPECT_NE(error_of([&] { load_mono(tmp / "b.txt", LangTag("gl")); }).find("line 2"), std::string::npos);
}

TEST(LoadMono, InvalidUtf8ReportsOffset) {
  TempDir tmp;
  write_file(tmp / "a.txt", std::string("ok\nbad \xC3\x28 byte\n"));
  EXPECT_NE(error_of([&] { load_mono(tmp / "a.txt", LangTag("gl")); }).find("byte offset 7"), std::string::npos);
}

TEST(LoadMono, EmptyAndMissingFiles) {
  TempDir tmp;
  write_file(tmp / "empty.txt", "");
  EXPECT_NE(error_of([&] { load_mono(tmp / "empty.txt", LangTag("gl")); }).find("empty file"), std::string::npos);
  try {
    load_mono(tmp / "nope.txt", LangTag("gl"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(LoadMono, RoundTripIsLossless) {
  TempDir tmp;
  const std::string content = "olá mundo\nnão\n日本語 テキスト\n";
  write_file(tmp / "a.txt", content);
  auto c = load_mono(tmp / "a.txt", LangTag("gl"));
  write_mono(tmp / "b.txt", c);
  EXPECT_EQ(read_file(tmp / "b.txt"), content);
}

TEST(LoadBitext, ZipsByLine) {
  TempDir tmp;
  write_file(tmp / "s", "a\nb\nc\nd\ne\n");
  write_file(tmp / "t", "A\nB\nC\nD\nE\n");
  auto b = load_bitext(tmp / "s", tmp / "t", LangTag("gl"), LangTag("en"));
  ASSERT_EQ(b.size(), 5u);
  EXPECT_EQ(b.pairs[3], std::make_pair(std::string("d"), std::string("D")));
}

TEST(LoadBitext, LineCountMismatchReportsBoth) {
  TempDir tmp;
  write_file(tmp / "s", "a\nb\nc\nd\ne\n");
  write_file(tmp / "t", "A\nB\nC\nD\nE\nF\n");
  auto msg = error_of([&] { load_bitext(tmp / "s", tmp / "t", LangTag("gl"), LangTag("en")); });
  EXPECT_NE(msg.find("5"), std::string::npos);
  EXPECT_NE(msg.find("6"), std::string::npos);
  EXPECT_THROW(load_bitext(tmp / "s", tmp / "s", LangTag("gl"), LangTag("gl")), Error);
}

TEST(Tagging, PrefixesTargetControlToken) {
  Bitext b{LangTag("gl"), LangTag("en"), {{"ola mundo", "hello world"}}};
  auto t = tag_for_universal(b);
  EXPECT_EQ(t.pairs[0].first, "<2en> ola mundo");
  EXPECT_EQ(t.pairs[0].second, "hello world");
}

TEST(Tagging, StripIsInverse) {
  Bitext b{LangTag("gl"), LangTag("en"), {{"a b", "x"}, {"c", "y z"}}};
  auto back = strip_tag(tag_for_universal(b));
  EXPECT_EQ(back.pairs, b.pairs);
}

TEST(Tagging, CollisionIsRejected) {
  Bitext b{LangTag("gl"), LangTag("en"), {{"hi <2pt> there", "x"}}};
  EXPECT_THROW(tag_for_universal(b), Error);
}

TEST(Tagging, ThreeLanguagesGiveThreeDistinctTokens) {
  std::vector<Bitext> pools;
  for (auto l : {"pt", "es", "it"}) pools.push_back(Bitext{LangTag(l), LangTag("en"), {{std::string("w ") + l, "e"}}});
  auto stream = concat_pools(pools, Direction::kFromPivot);
  std::set<std::string> seen;
  for (const auto& p : stream.pairs) {
    Bitext one{p.src_lang, p.tgt_lang, {{p.src, p.tgt}}};
    auto first = split_ws(tag_for_universal(one).pairs[0].first).front();
    ASSERT_TRUE(is_control_token(first));
    seen.insert(first);
  }
  EXPECT_EQ(seen, (std::set<std::string>{"<2pt>", "<2es>", "<2it>"}));
}

TEST(ConcatPools, CountsAndOrder) {
  Bitext a{LangTag("a"), LangTag("en"), {}};
  Bitext b{LangTag("b"), LangTag("en"), {}};
  for (int i = 0; i < 10; ++i) a.pairs.emplace_back("a" + std::to_string(i), "e" + std::to_string(i));
  for (int i = 0; i < 20; ++i) b.pairs.emplace_back("b" + std::to_string(i), "f" + std::to_string(i));
  auto s = concat_pools({a, b}, Direction::kToPivot);
  ASSERT_EQ(s.size(), 30u);
  ASSERT_EQ(s.counts.size(), 2u);
  EXPECT_EQ(s.counts[0], std::make_pair(LangTag("a"), std::size_t{10}));
  EXPECT_EQ(s.counts[1], std::make_pair(LangTag("b"), std::size_t{20}));
  EXPECT_EQ(s.pairs.front().src, "a0");
  EXPECT_EQ(s.pairs.back().src, "b19");

  auto r = concat_pools({a, b}, Direction::kFromPivot);
  EXPECT_EQ(r.pairs.front().src, "e0");
  EXPECT_EQ(r.pairs.front().tgt_lang, LangTag("a"));
}

TEST(ConcatPools, Errors) {
  EXPECT_THROW(concat_pools({}, Direction::kToPivot), Error);
  Bitext a{LangTag("a"), LangTag("en"), {{"x", "y"}}};
  Bitext flipped{LangTag("en"), LangTag("b"), {{"y", "x"}}};
  EXPECT_THROW(concat_pools({a, flipped}, Direction::kToPivot), Error);
  Bitext unrelated{LangTag("c"), LangTag("d"), {{"y", "x"}}};
  EXPECT_THROW(concat_pools({a, unrelated}, Direction::kToPivot), Error);
}

TEST(ConcatPools, LengthIsSumOfInputs) {
  for (int seed = 0; seed < 20; ++seed) {
    std::vector<Bitext> pools;
    std::size_t expected = 0;
    for (int p = 0; p < 1 + seed % 4; ++p) {
      Bitext b{LangTag("l" + std::to_string(p)), LangTag("en"), {}};
      const int n = (seed * 7 + p * 3) % 11;
      for (int i = 0; i < n; ++i) b.pairs.emplace_back("s", "t");
      expected += static_cast<std::size_t>(n);
      pools.push_back(b);
    }
    auto s = concat_pools(pools, Direction::kToPivot);
    std::size_t sum = 0;
    for (const auto& c : s.counts) sum += c.second;
    EXPECT_EQ(s.size(), expected);
    EXPECT_EQ(sum, expected);
  }
}

TEST(Manifest, RoundTripAndValidation) {
  TempDir tmp;
  write_file(tmp / "gl.s", "a\n");
  write_file(tmp / "gl.t", "b\n");
  CorpusManifest m;
  m.base_dir = tmp.path();
  m.pivot = LangTag("en");
  m.entries.push_back({"gl.train", LangTag("gl"), Role::kTrain, std::nullopt, "gl.s", "gl.t"});
  save_manifest(tmp / "manifest.json", m);
  auto back = load_manifest(tmp / "manifest.json");
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(back.load_bitext("gl.train").pairs[0].second, "b");
  EXPECT_EQ(back.load_mono("gl.train").segments[0], "a");

  m.entries.push_back({"gl.train", LangTag("gl"), Role::kDev, std::nullopt, "gl.s", "gl.t"});
  EXPECT_THROW(validate(m), Error);
  m.entries.back().key = "gl.train2";
  m.entries.back().role = Role::kTrain;
  EXPECT_THROW(validate(m), Error);
}
