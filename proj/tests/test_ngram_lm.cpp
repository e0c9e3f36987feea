#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "lrladapt/ngram_lm.hpp"
#include "lrladapt/synth.hpp"
#include "test_util.hpp"

using namespace lrladapt;
using lrladapt::testing::TempDir;

namespace {

std::vector<std::vector<std::string>> toks(const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> out;
  for (const auto& l : lines) out.push_back(split_ws(l));
  return out;
}

std::vector<std::vector<std::string>> family_sentences(std::size_t n, std::uint64_t seed) {
  auto lex = synth_detail::build_lexicon(200, 17);
  std::vector<std::vector<std::string>> out;
  for (const auto& s : sample_sentences(lex, n, seed)) out.push_back(split_ws(synth_detail::render(s, lex.forms)));
  return out;
}

// Independent per-token accumulator: pads, maps OOV, and walks the string API.
double brute_force_pp(const NGramModel& m, const std::vector<std::string>& pieces) {
  std::vector<std::string> seq{"<s>"};
  for (const auto& p : pieces) seq.push_back(p);
  seq.push_back("</s>");
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    std::vector<std::string> ctx;
    const std::size_t from = i >= static_cast<std::size_t>(m.order() - 1) ? i - (m.order() - 1) : 0;
    for (std::size_t j = from; j < i; ++j) ctx.push_back(seq[j]);
    sum += std::log(m.prob(seq[i], ctx));
    ++n;
  }
  return std::exp(-sum / n);
}

}  // namespace

TEST(NGram, HandComputedUnigramWithSingletonUnk) {
  auto m = NGramModel::train(toks({"a b"}), LmOptions{1, 0.75, UnkMode::kSingleton});
  // a and b are singletons -> <unk>; counts: <unk>=2, </s>=1; predictable {<unk>, </s>}
  EXPECT_NEAR(m.prob("<unk>", {}), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.prob("</s>", {}), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.prob("a", {}), 2.0 / 3.0, 1e-12);
  auto s = perplexity(m, {"a", "b"});
  EXPECT_EQ(s.tokens, 3u);
  EXPECT_NEAR(s.pp, std::pow(27.0 / 4.0, 1.0 / 3.0), 1e-12);
}

TEST(NGram, UniformCorpusHasPerplexityV) {
  auto m = NGramModel::train(toks({"a b c", "a b c"}), LmOptions{1, 0.0, UnkMode::kNone});
  EXPECT_NEAR(perplexity(m, {"a", "b", "c"}).pp, 4.0, 1e-12);
  EXPECT_THROW(m.score({"zz"}), Error);
}

TEST(NGram, SingleFactorPerplexity) { EXPECT_DOUBLE_EQ(perplexity_from(std::log(0.25), 1), 4.0); }

TEST(NGram, EmptyInputs) {
  EXPECT_THROW(NGramModel::train({}, LmOptions{}), Error);
  EXPECT_THROW(NGramModel::train({{}}, LmOptions{}), Error);
  auto m = NGramModel::train(toks({"a b"}), LmOptions{});
  EXPECT_THROW(perplexity(m, {}), Error);
}

TEST(NGram, OrderAboveLongestSentenceWarns) {
  auto m = NGramModel::train(toks({"a b"}), LmOptions{5, 0.75, UnkMode::kSingleton});
  EXPECT_EQ(m.warnings().size(), 1u);
  EXPECT_TRUE(NGramModel::train(toks({"a b"}), LmOptions{4, 0.75, UnkMode::kSingleton}).warnings().empty());
}

TEST(NGram, MatchesBruteForceAccumulator) {
  const auto train = family_sentences(1500, 1);
  const auto test = family_sentences(100, 2);
  for (int order = 1; order <= 4; ++order) {
    auto m = NGramModel::train(train, LmOptions{order, 0.75, UnkMode::kSingleton});
    for (const auto& s : test) {
      const double a = perplexity(m, s).pp, b = brute_force_pp(m, s);
      EXPECT_LE(std::abs(a - b) / b, 1e-9);
    }
  }
}

TEST(NGram, ConditionalsSumToOne) {
  const auto train = family_sentences(800, 3);
  for (UnkMode unk : {UnkMode::kSingleton, UnkMode::kNone}) {
    for (int order = 1; order <= 4; ++order) {
      auto m = NGramModel::train(train, LmOptions{order, 0.75, unk});
      const auto words = m.predictable();
      for (int len = 0; len < order; ++len) {
        auto ctxs = m.contexts(len);
        ASSERT_FALSE(ctxs.empty());
        for (std::size_t k = 0; k < ctxs.size() && k < 200; ++k) {
          double sum = 0.0;
          for (int w : words) {
            const double p = m.prob(w, ctxs[k]);
            ASSERT_GT(p, 0.0);
            ASSERT_LE(p, 1.0);
            sum += p;
          }
          EXPECT_NEAR(sum, 1.0, 1e-6);
        }
      }
    }
  }
}

TEST(NGram, ScoringIsPureAndOrderIndependent) {
  const auto train = family_sentences(500, 4);
  auto test = family_sentences(50, 5);
  auto m = NGramModel::train(train, LmOptions{});
  const auto before = m.serialize();
  std::vector<double> first;
  for (const auto& s : test) first.push_back(perplexity(m, s).pp);
  std::vector<std::size_t> perm(test.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 17) % perm.size();
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(perplexity(m, test[perm[i]]).pp, first[perm[i]]);
  EXPECT_EQ(m.serialize(), before);
}

TEST(NGram, SerializationRoundTrip) {
  auto m = NGramModel::train(family_sentences(300, 6), LmOptions{3, 0.75, UnkMode::kSingleton});
  TempDir tmp;
  save_lm(tmp / "lm.bin", m);
  auto back = load_lm(tmp / "lm.bin");
  EXPECT_EQ(back.serialize(), m.serialize());
  for (const auto& s : family_sentences(20, 7)) EXPECT_EQ(perplexity(back, s).pp, perplexity(m, s).pp);
  EXPECT_THROW(NGramModel::deserialize("LRLMxx"), Error);
}

TEST(NGram, ScoreCorpusSummaryAndTsv) {
  MonoCorpus c{LangTag("gl"), {"ab ba", "ab"}};
  SubwordOptions o;
  o.merges = 2;
  auto sw = train_subword(c, o);
  auto lm = train_lm(c, sw.model, LmOptions{2, 0.75, UnkMode::kSingleton});
  auto empty = score_corpus(lm, sw.model, std::vector<std::string>{}, "none");
  EXPECT_TRUE(empty.segments.empty());
  EXPECT_EQ(empty.summary.segments, 0u);
  auto sc = score_corpus(lm, sw.model, c, "gl.train");
  ASSERT_EQ(sc.segments.size(), 2u);
  EXPECT_EQ(sc.segments[1].index, 1u);
  const auto tsv = scores_to_tsv(sc.segments);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "key\tindex\tN\tlogprob\tPP");
  auto back = scores_from_tsv(tsv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].key, "gl.train");
  EXPECT_EQ(back[1].pp, sc.segments[1].pp);
  EXPECT_EQ(back[1].tokens, sc.segments[1].tokens);
  EXPECT_NEAR(sc.summary.mean_pp, 0.5 * (sc.segments[0].pp + sc.segments[1].pp), 1e-12);
}

TEST(NGram, TrainingDataScoresBelowDistantDialect) {
  FamilySpec spec;
  spec.lrl_train = 2000;
  spec.lrl_dev = 1;
  spec.lrl_test = 1;
  spec.dialect_size = 300;
  spec.dialects = {{LangTag("d2"), 0.5, std::nullopt}};
  auto fam = generate_family(spec);
  auto mono = source_side(fam.lrl_train);
  SubwordOptions o;
  o.merges = 500;
  auto sw = train_subword(mono, o);
  auto lm = train_lm(mono, sw.model, LmOptions{});
  MonoCorpus head{mono.lang, {mono.segments.begin(), mono.segments.begin() + 300}};
  const double own = score_corpus(lm, sw.model, head, "own").summary.mean_pp;
  const double far = score_corpus(lm, sw.model, source_side(fam.dialects[0].train), "d2").summary.mean_pp;
  EXPECT_LT(own, far);
}
