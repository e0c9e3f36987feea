#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "lrladapt/subword.hpp"
#include "lrladapt/synth.hpp"
#include "test_util.hpp"

using namespace lrladapt;
using lrladapt::testing::TempDir;

namespace {

MonoCorpus mono(std::vector<std::string> lines, const std::string& lang = "gl") {
  return MonoCorpus{LangTag(lang), std::move(lines)};
}

SubwordOptions with_merges(int n) {
  SubwordOptions o;
  o.merges = n;
  return o;
}

const std::string kMark(kWordMarker);

// Naive reference learner: recount every pair from scratch after each merge.
std::vector<std::pair<std::string, std::string>> naive_merges(const std::vector<std::string>& lines, int n) {
  std::map<std::string, long> freq;
  for (const auto& l : lines)
    for (const auto& w : split_ws(l)) ++freq[w];
  std::vector<std::pair<std::vector<std::string>, long>> words;
  for (const auto& [w, c] : freq) {
    auto chars = utf8_chars(w);
    chars.back() += kMark;
    words.emplace_back(chars, c);
  }
  std::vector<std::pair<std::string, std::string>> out;
  while (static_cast<int>(out.size()) < n) {
    std::map<std::pair<std::string, std::string>, long> pairs;
    for (const auto& [syms, c] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += c;
    const std::pair<std::string, std::string>* best = nullptr;
    long best_c = 0;
    for (const auto& [p, c] : pairs) {
      if (c < 2) continue;
      if (!best || c > best_c || (c == best_c && p.first + p.second < best->first + best->second) ||
          (c == best_c && p.first + p.second == best->first + best->second && p.first < best->first)) {
        best = &p;
        best_c = c;
      }
    }
    if (!best) break;
    auto pick = *best;
    out.push_back(pick);
    for (auto& [syms, c] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < syms.size();) {
        if (i + 1 < syms.size() && syms[i] == pick.first && syms[i + 1] == pick.second) {
          next.push_back(pick.first + pick.second);
          i += 2;
        } else {
          next.push_back(syms[i++]);
        }
      }
      syms = next;
    }
  }
  return out;
}

std::vector<std::string> family_lines(std::size_t n, std::uint64_t seed) {
  auto lex = synth_detail::build_lexicon(120, seed);
  std::vector<std::string> out;
  for (const auto& s : sample_sentences(lex, n, seed + 1)) out.push_back(synth_detail::render(s, lex.forms));
  return out;
}

}  // namespace

TEST(Subword, ZeroMergesIsCharacterLevel) {
  auto t = train_subword(mono({"abc ab", "ca"}), with_merges(0));
  EXPECT_TRUE(t.model.merges.empty());
  EXPECT_EQ(t.vocab.size(), 4u + t.model.alphabet.size());
  for (const auto& p : encode(t.model, "abc ab")) EXPECT_EQ(utf8_chars(p).size() - (ends_with_marker(p) ? 1 : 0), 1u);
}

TEST(Subword, HandRunMergeTable) {
  auto t = train_subword(mono({"aaab aaab"}), with_merges(2));
  ASSERT_EQ(t.model.merges.size(), 2u);
  EXPECT_EQ(t.model.merges[0], std::make_pair(std::string("a"), std::string("a")));
  EXPECT_EQ(t.model.merges[1], std::make_pair(std::string("aa"), std::string("a")));
  EXPECT_EQ(encode(t.model, "aaab"), (std::vector<std::string>{"aaa", "b" + kMark}));
}

TEST(Subword, MatchesNaiveLearner) {
  const auto lines = family_lines(300, 11);
  for (int n : {5, 50, 200}) {
    auto t = train_subword(mono(lines), with_merges(n));
    EXPECT_EQ(t.model.merges, naive_merges(lines, n)) << "merges=" << n;
  }
}

TEST(Subword, MergesExhaustAndRequestIsRecorded) {
  auto t = train_subword(mono({"ab ab"}), with_merges(8000));
  EXPECT_EQ(t.model.requested_merges, 8000);
  EXPECT_LT(t.model.merges.size(), 8000u);
}

TEST(Subword, VocabSizeBelowInventoryFails) {
  SubwordOptions o;
  o.vocab_size = 5;
  try {
    train_subword(mono({"abcdef"}), o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("minimum feasible size is 10"), std::string::npos) << e.what();
  }
  o.vocab_size = 12;
  auto t = train_subword(mono({"abcdef abcdef"}), o);
  EXPECT_EQ(t.vocab.size(), 12u);
}

TEST(Subword, ReservedOrderAndControlTokens) {
  SubwordOptions o = with_merges(10);
  o.control_tokens = {"<2pt>", "<2en>"};
  o.spare_control_slots = 2;
  auto t = train_subword(mono({"<2pt> ola <2en> mundo"}), o);
  const std::vector<std::string> expect{"<pad>", "<unk>", "<s>", "</s>", "<2en>", "<2pt>", "<2@0>", "<2@1>"};
  ASSERT_GE(t.vocab.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(t.vocab.piece(static_cast<int>(i)), expect[i]);
  EXPECT_EQ(t.vocab.reserved_count(), expect.size());
  auto pieces = encode(t.model, "<2pt> ola");
  EXPECT_EQ(pieces.front(), "<2pt>");
  for (const auto& [a, b] : t.model.merges) {
    EXPECT_FALSE(is_control_token(a + b));
    EXPECT_EQ(std::count(t.model.reserved.begin(), t.model.reserved.end(), a + b), 0);
  }
}

TEST(Subword, AssignControlTokenRenamesSpareSlot) {
  SubwordOptions o = with_merges(0);
  o.spare_control_slots = 1;
  auto t = train_subword(mono({"abc"}), o);
  auto v = t.vocab;
  const int id = assign_control_token(v, LangTag("gl"));
  EXPECT_EQ(id, 4);
  EXPECT_EQ(v.piece(id), "<2gl>");
  EXPECT_EQ(v.size(), t.vocab.size());
  EXPECT_EQ(assign_control_token(v, LangTag("gl")), id);
  EXPECT_THROW(assign_control_token(v, LangTag("pt")), Error);
}

TEST(Subword, RoundTripOnCorpusAndOddWhitespace) {
  const auto lines = family_lines(200, 3);
  auto t = train_subword(mono(lines), with_merges(150));
  SubwordEncoder enc(t.model);
  for (const auto& l : lines) EXPECT_EQ(decode_pieces(enc.encode(l)), l);
  for (std::string s : {"a  b", " lead", "trail ", "日本 語", "x", "<2en> hello", "  "})
    EXPECT_EQ(decode_pieces(enc.encode(s)), s) << "'" << s << "'";
}

TEST(Subword, UnseenCharactersStayCharacters) {
  auto t = train_subword(mono({"ab ab ab"}), with_merges(5));
  auto pieces = encode(t.model, "Ωz");
  EXPECT_EQ(pieces, (std::vector<std::string>{"Ω", "z" + kMark}));
  std::size_t unk = 0;
  auto ids = SubwordEncoder(t.model).encode_ids("Ωz", t.vocab, &unk);
  EXPECT_EQ(unk, 2u);
  EXPECT_EQ(ids[0], kUnkId);
}

TEST(Subword, MarkerInInputIsRejected) {
  auto t = train_subword(mono({"ab"}), with_merges(1));
  EXPECT_THROW(encode(t.model, "a" + kMark), Error);
}

TEST(Subword, DecodeUnknownIdFails) {
  auto t = train_subword(mono({"ab"}), with_merges(1));
  EXPECT_THROW(decode_ids({static_cast<int>(t.vocab.size())}, t.vocab), Error);
  EXPECT_THROW(decode_ids({-1}, t.vocab), Error);
}

TEST(Subword, DeterministicSerialization) {
  const auto lines = family_lines(150, 5);
  auto a = train_subword(mono(lines), with_merges(100));
  auto b = train_subword(mono(lines), with_merges(100));
  EXPECT_EQ(serialize(a.model), serialize(b.model));
  TempDir tmp;
  save_subword(tmp / "m.json", a.model);
  EXPECT_EQ(load_subword(tmp / "m.json"), a.model);
  save_vocab(tmp / "v.tsv", a.vocab);
  EXPECT_EQ(load_vocab(tmp / "v.tsv"), a.vocab);
}

TEST(Subword, PiecesPerWordShrinkWithMoreMerges) {
  const auto lines = family_lines(400, 8);
  double prev = 1e9;
  for (int n : {400, 200, 100, 50, 10, 0}) {
    auto t = train_subword(mono(lines), with_merges(n));
    SubwordEncoder enc(t.model);
    std::size_t pieces = 0, words = 0;
    for (const auto& l : lines) {
      pieces += enc.encode(l).size();
      words += split_ws(l).size();
    }
    const double ppw = static_cast<double>(pieces) / static_cast<double>(words);
    if (prev < 1e9) {
      EXPECT_GE(ppw, prev) << n;
    }
    prev = ppw;
  }
}

TEST(Overlap, Definitions) {
  Vocabulary a({"<pad>", "<unk>", "x", "y", "z"}, 2);
  Vocabulary b({"<pad>", "<unk>", "q", "r"}, 2);
  Vocabulary c({"<pad>", "<unk>", "w", "z", "y", "x"}, 2);
  EXPECT_DOUBLE_EQ(vocab_overlap(a, a), 1.0);
  EXPECT_DOUBLE_EQ(vocab_overlap(a, b), 0.0);
  EXPECT_DOUBLE_EQ(vocab_overlap(a, c), 1.0);
  EXPECT_DOUBLE_EQ(vocab_overlap(c, a), 0.75);
}

TEST(Overlap, InvariantUnderIdPermutation) {
  std::vector<std::string> pa{"a", "b", "c", "d", "e", "f"}, pb{"c", "d", "e", "f", "g", "h", "i"};
  std::mt19937 gen(1);
  const double base = vocab_overlap(Vocabulary(pa, 0), Vocabulary(pb, 0));
  for (int k = 0; k < 10; ++k) {
    std::shuffle(pa.begin(), pa.end(), gen);
    std::shuffle(pb.begin(), pb.end(), gen);
    EXPECT_DOUBLE_EQ(vocab_overlap(Vocabulary(pa, 0), Vocabulary(pb, 0)), base);
  }
}

TEST(OverlapSearch, CharacterCandidate) {
  auto corpus = mono(family_lines(100, 1));
  auto pre = train_subword(corpus, with_merges(50));
  auto r = search_overlap_size({&corpus}, pre.vocab, {0}, SubwordOptions{});
  EXPECT_EQ(r.best_size, 0);
  ASSERT_EQ(r.table.size(), 1u);
  EXPECT_DOUBLE_EQ(r.table[0].overlap, 1.0);
  EXPECT_TRUE(r.best.model.merges.empty());
}

TEST(OverlapSearch, SelfConsistencyAndRecomputedTable) {
  auto corpus = mono(family_lines(300, 2));
  auto pre = train_subword(corpus, with_merges(120));
  auto r = search_overlap_size({&corpus}, pre.vocab, {120}, SubwordOptions{});
  EXPECT_DOUBLE_EQ(r.table[0].overlap, 1.0);

  auto dialect = mono(family_lines(300, 9), "d1");
  auto s = search_overlap_size({&dialect}, pre.vocab, {400, 50, 100, 200}, SubwordOptions{});
  ASSERT_EQ(s.table.size(), 4u);
  double best = -1;
  int best_size = -1;
  for (const auto& row : s.table) {
    auto again = train_subword(dialect, with_merges(row.requested_merges));
    EXPECT_DOUBLE_EQ(row.overlap, vocab_overlap(again.vocab, pre.vocab));
    if (row.overlap > best) {
      best = row.overlap;
      best_size = row.requested_merges;
    }
  }
  EXPECT_EQ(s.best_size, best_size);
  EXPECT_TRUE(std::is_sorted(s.table.begin(), s.table.end(),
                             [](const auto& x, const auto& y) { return x.requested_merges < y.requested_merges; }));
}

TEST(OverlapSearch, TiesGoToSmallerSize) {
  auto corpus = mono({"ab ab"});
  auto pre = train_subword(corpus, with_merges(0));
  auto r = search_overlap_size({&corpus}, pre.vocab, {8, 0, 4}, SubwordOptions{});
  EXPECT_EQ(r.best_size, 0);
}
