#pragma once

// Synthetic language family: a base language sampled from a small stochastic
// grammar, dialects derived from it by lexical substitution and character
// rewrites at intensity epsilon, and a pivot language obtained through a
// bijective word mapping (so every reference is exactly recoverable).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/corpus.hpp"
#include "lrladapt/error.hpp"
#include "lrladapt/ngram_lm.hpp"
#include "lrladapt/rng.hpp"
#include "lrladapt/selection.hpp"
#include "lrladapt/subword.hpp"
#include "lrladapt/util.hpp"

namespace lrladapt {

struct DialectSpec {
  LangTag lang;
  double epsilon = 0.0;
  std::optional<std::size_t> size;  // defaults to FamilySpec::dialect_size
};

struct FamilySpec {
  LangTag base{"lrl"};
  LangTag pivot{"en"};
  std::uint64_t base_seed = 1;
  std::uint64_t pivot_seed = 2;
  std::size_t lexicon_size = 500;
  std::vector<DialectSpec> dialects;
  std::size_t lrl_train = 10000;
  std::size_t lrl_dev = 682;
  std::size_t lrl_test = 1007;
  std::size_t dialect_size = 18400;
  std::size_t dialect_test = 0;  // optional held-out dialect sets for distance checks
};

inline void validate(const FamilySpec& s) {
  if (s.base == s.pivot) fail_validation("family base and pivot languages must differ");
  if (s.lexicon_size < 50) fail_validation("lexicon_size must be at least 50");
  std::set<LangTag> langs{s.base, s.pivot};
  double prev = -1.0;
  for (const auto& d : s.dialects) {
    if (!langs.insert(d.lang).second) fail_validation("duplicate language tag '" + d.lang.code() + "' in family spec");
    if (d.epsilon < 0.0 || d.epsilon > 1.0) fail_validation("dialect intensity must lie in [0,1]");
    if (d.epsilon <= prev) fail_validation("dialect intensities must be distinct and sorted ascending");
    prev = d.epsilon;
    if (d.size && *d.size < 1) fail_validation("dialect corpus size must be >= 1");
  }
  if (s.lrl_train < 1 || s.lrl_dev < 1 || s.lrl_test < 1 || s.dialect_size < 1)
    fail_validation("corpus sizes must be >= 1");
}

inline nlohmann::json to_json(const FamilySpec& s) {
  nlohmann::json d = nlohmann::json::array();
  for (const auto& x : s.dialects) {
    nlohmann::json j{{"lang", x.lang.code()}, {"epsilon", x.epsilon}};
    if (x.size) j["size"] = *x.size;
    d.push_back(j);
  }
  return {{"base", s.base.code()},         {"pivot", s.pivot.code()},      {"base_seed", s.base_seed},
          {"pivot_seed", s.pivot_seed},    {"lexicon_size", s.lexicon_size}, {"dialects", d},
          {"lrl_train", s.lrl_train},      {"lrl_dev", s.lrl_dev},         {"lrl_test", s.lrl_test},
          {"dialect_size", s.dialect_size}, {"dialect_test", s.dialect_test}};
}

inline FamilySpec family_spec_from_json(const nlohmann::json& j) {
  FamilySpec s;
  s.base = LangTag(j.value("base", std::string("lrl")));
  s.pivot = LangTag(j.value("pivot", std::string("en")));
  s.base_seed = j.value("base_seed", s.base_seed);
  s.pivot_seed = j.value("pivot_seed", s.pivot_seed);
  s.lexicon_size = j.value("lexicon_size", s.lexicon_size);
  for (const auto& d : j.at("dialects")) {
    DialectSpec x{LangTag(d.at("lang").get<std::string>()), d.at("epsilon").get<double>(), std::nullopt};
    if (d.contains("size")) x.size = d["size"].get<std::size_t>();
    s.dialects.push_back(x);
  }
  s.lrl_train = j.value("lrl_train", s.lrl_train);
  s.lrl_dev = j.value("lrl_dev", s.lrl_dev);
  s.lrl_test = j.value("lrl_test", s.lrl_test);
  s.dialect_size = j.value("dialect_size", s.dialect_size);
  s.dialect_test = j.value("dialect_test", s.dialect_test);
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------

enum class WordClass { kDet, kPron, kNoun, kVerb, kAdj, kPrep };

struct Lexicon {
  std::vector<std::string> forms;           // base form per type
  std::vector<WordClass> cls;               // class per type
  std::map<WordClass, std::vector<int>> by_class;  // types, most frequent first
  std::map<WordClass, std::vector<double>> cumulative;  // Zipf weights
};

// Per-dialect word mapping; identity at epsilon 0.
struct Transform {
  std::vector<std::string> forms;
  std::vector<bool> substituted;
  std::vector<bool> rewritten;
  std::vector<std::pair<char, char>> rules;
};

struct DialectData {
  DialectSpec spec;
  Transform transform;
  Bitext train;                 // dialect -> pivot
  std::optional<Bitext> test;   // when dialect_test > 0
  double mean_token_edit_distance = 0.0;
};

struct Family {
  FamilySpec spec;
  Lexicon lexicon;
  std::vector<std::string> pivot_forms;
  Bitext lrl_train, lrl_dev, lrl_test;  // base -> pivot
  std::vector<DialectData> dialects;
};

namespace synth_detail {

inline constexpr const char* kBaseConsonants = "ptkbdgmnlrsv";
inline constexpr const char* kBaseVowels = "aeiou";
inline constexpr const char* kPivotConsonants = "hwzfjqxcy";
inline constexpr const char* kPivotVowels = "aeiouy";

inline std::string make_word(Rng& rng, const char* consonants, const char* vowels, int min_syl, int max_syl) {
  const std::string c(consonants), v(vowels);
  const int syl = min_syl + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_syl - min_syl + 1)));
  std::string w;
  for (int s = 0; s < syl; ++s) {
    w += c[rng.below(c.size())];
    w += v[rng.below(v.size())];
    if (rng.bernoulli(0.25)) w += c[rng.below(c.size())];
  }
  return w;
}

inline std::string unique_word(Rng& rng, const char* consonants, const char* vowels, int min_syl, int max_syl,
                               std::unordered_set<std::string>& taken) {
  for (int attempt = 0;; ++attempt) {
    const int extra = attempt / 50;  // grow words if the short ones run out
    auto w = make_word(rng, consonants, vowels, min_syl + extra, max_syl + extra);
    if (taken.insert(w).second) return w;
  }
}

inline Lexicon build_lexicon(std::size_t size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "lexicon"));
  Lexicon lex;
  const std::vector<std::pair<WordClass, double>> shares{{WordClass::kDet, 0.02},  {WordClass::kPron, 0.02},
                                                         {WordClass::kPrep, 0.03}, {WordClass::kAdj, 0.13},
                                                         {WordClass::kVerb, 0.30}, {WordClass::kNoun, 0.50}};
  std::unordered_set<std::string> taken;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < shares.size(); ++k) {
    const auto [cls, share] = shares[k];
    std::size_t n = k + 1 == shares.size() ? size - assigned
                                           : std::max<std::size_t>(3, static_cast<std::size_t>(std::lround(share * static_cast<double>(size))));
    const bool function_word = cls == WordClass::kDet || cls == WordClass::kPron || cls == WordClass::kPrep;
    for (std::size_t i = 0; i < n; ++i) {
      const int id = static_cast<int>(lex.forms.size());
      lex.forms.push_back(unique_word(rng, kBaseConsonants, kBaseVowels, 1, function_word ? 1 : 3, taken));
      lex.cls.push_back(cls);
      lex.by_class[cls].push_back(id);
    }
    assigned += n;
  }
  for (auto& [cls, ids] : lex.by_class) {
    std::vector<double> cum;
    double acc = 0.0;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      acc += 1.0 / static_cast<double>(r + 1);
      cum.push_back(acc);
    }
    lex.cumulative[cls] = std::move(cum);
  }
  return lex;
}

inline int draw(const Lexicon& lex, WordClass cls, Rng& rng) {
  const auto& ids = lex.by_class.at(cls);
  return ids[rng.categorical(lex.cumulative.at(cls))];
}

inline void noun_phrase(const Lexicon& lex, Rng& rng, std::vector<int>& out) {
  const double u = rng.uniform();
  if (u < 0.45) {
    out.push_back(draw(lex, WordClass::kDet, rng));
    out.push_back(draw(lex, WordClass::kNoun, rng));
  } else if (u < 0.70) {
    out.push_back(draw(lex, WordClass::kDet, rng));
    out.push_back(draw(lex, WordClass::kAdj, rng));
    out.push_back(draw(lex, WordClass::kNoun, rng));
  } else if (u < 0.88) {
    out.push_back(draw(lex, WordClass::kNoun, rng));
  } else {
    out.push_back(draw(lex, WordClass::kPron, rng));
  }
}

// S -> NP VP ; VP -> V | V NP | V NP PP ; PP -> PREP NP
inline std::vector<int> sample_sentence(const Lexicon& lex, Rng& rng) {
  std::vector<int> s;
  noun_phrase(lex, rng, s);
  s.push_back(draw(lex, WordClass::kVerb, rng));
  const double u = rng.uniform();
  if (u < 0.2) return s;
  noun_phrase(lex, rng, s);
  if (u < 0.65) return s;
  s.push_back(draw(lex, WordClass::kPrep, rng));
  noun_phrase(lex, rng, s);
  return s;
}

inline std::string render(const std::vector<int>& ids, const std::vector<std::string>& forms) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += forms[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

inline Transform make_transform(const Lexicon& lex, double epsilon, std::uint64_t seed) {
  static const std::vector<std::pair<char, char>> kRulePool{{'a', 'e'}, {'o', 'u'}, {'k', 'c'}, {'s', 'z'},
                                                            {'p', 'b'}, {'t', 'd'}, {'i', 'y'}, {'e', 'a'}};
  Transform t;
  const auto n = lex.forms.size();
  t.forms = lex.forms;
  t.substituted.assign(n, false);
  t.rewritten.assign(n, false);
  Rng rule_rng(derive_seed(seed, "rules"));
  std::vector<std::size_t> order(kRulePool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rule_rng.shuffle(order);
  for (int k = 0; k < 3; ++k) t.rules.push_back(kRulePool[order[static_cast<std::size_t>(k)]]);

  std::unordered_set<std::string> taken(lex.forms.begin(), lex.forms.end());
  Rng word_rng(derive_seed(seed, "words"));
  for (std::size_t i = 0; i < n; ++i) {
    const double u_sub = hash_to_unit(derive_seed(derive_seed(seed, "substitute"), i));
    const double u_rw = hash_to_unit(derive_seed(derive_seed(seed, "rewrite"), i));
    const bool function_word = lex.cls[i] == WordClass::kDet || lex.cls[i] == WordClass::kPron || lex.cls[i] == WordClass::kPrep;
    if (u_sub < epsilon) {
      t.forms[i] = unique_word(word_rng, kBaseConsonants, kBaseVowels, 1, function_word ? 1 : 3, taken);
      t.substituted[i] = true;
    } else if (u_rw < epsilon) {
      std::string w = lex.forms[i];
      for (auto& ch : w)
        for (const auto& [from, to] : t.rules)
          if (ch == from) {
            ch = to;
            break;
          }
      if (w != lex.forms[i] && taken.insert(w).second) {
        t.forms[i] = w;
        t.rewritten[i] = true;
      }
    }
  }
  return t;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  const auto ca = utf8_chars(a), cb = utf8_chars(b);
  std::vector<std::size_t> prev(cb.size() + 1), cur(cb.size() + 1);
  for (std::size_t j = 0; j <= cb.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ca.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= cb.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca[i - 1] == cb[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[cb.size()];
}

}  // namespace synth_detail

// Samples `n` sentences from the grammar with the given stream seed.
inline std::vector<std::vector<int>> sample_sentences(const Lexicon& lex, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_detail::sample_sentence(lex, rng));
  return out;
}

inline Family generate_family(const FamilySpec& spec) {
  validate(spec);
  Family fam;
  fam.spec = spec;
  fam.lexicon = synth_detail::build_lexicon(spec.lexicon_size, spec.base_seed);
  {
    Rng prng(derive_seed(spec.pivot_seed, "pivot"));
    std::unordered_set<std::string> taken;
    for (std::size_t i = 0; i < fam.lexicon.forms.size(); ++i) {
      const auto cls = fam.lexicon.cls[i];
      const bool fw = cls == WordClass::kDet || cls == WordClass::kPron || cls == WordClass::kPrep;
      fam.pivot_forms.push_back(synth_detail::unique_word(prng, synth_detail::kPivotConsonants,
                                                          synth_detail::kPivotVowels, 1, fw ? 1 : 3, taken));
    }
  }
  auto make_bitext = [&](const LangTag& lang, const std::vector<std::string>& forms,
                         const std::vector<std::vector<int>>& sents) {
    Bitext b{lang, spec.pivot, {}};
    b.pairs.reserve(sents.size());
    for (const auto& s : sents) b.pairs.emplace_back(synth_detail::render(s, forms), synth_detail::render(s, fam.pivot_forms));
    return b;
  };
  const auto& base_forms = fam.lexicon.forms;
  fam.lrl_train = make_bitext(spec.base, base_forms, sample_sentences(fam.lexicon, spec.lrl_train, derive_seed(spec.base_seed, "lrl.train")));
  fam.lrl_dev = make_bitext(spec.base, base_forms, sample_sentences(fam.lexicon, spec.lrl_dev, derive_seed(spec.base_seed, "lrl.dev")));
  fam.lrl_test = make_bitext(spec.base, base_forms, sample_sentences(fam.lexicon, spec.lrl_test, derive_seed(spec.base_seed, "lrl.test")));

  for (const auto& d : spec.dialects) {
    DialectData dd;
    dd.spec = d;
    const auto dseed = derive_seed(spec.base_seed, "dialect." + d.lang.code());
    dd.transform = synth_detail::make_transform(fam.lexicon, d.epsilon, dseed);
    const auto sents = sample_sentences(fam.lexicon, d.size.value_or(spec.dialect_size), derive_seed(dseed, "train"));
    dd.train = make_bitext(d.lang, dd.transform.forms, sents);
    if (spec.dialect_test > 0)
      dd.test = make_bitext(d.lang, dd.transform.forms, sample_sentences(fam.lexicon, spec.dialect_test, derive_seed(dseed, "test")));
    double dist = 0.0;
    std::size_t toks = 0;
    for (const auto& s : sents)
      for (int id : s) {
        dist += static_cast<double>(synth_detail::edit_distance(dd.transform.forms[static_cast<std::size_t>(id)],
                                                                base_forms[static_cast<std::size_t>(id)]));
        ++toks;
      }
    dd.mean_token_edit_distance = toks ? dist / static_cast<double>(toks) : 0.0;
    fam.dialects.push_back(std::move(dd));
  }
  // self-check: distance to the base grows with epsilon
  for (std::size_t i = 1; i < fam.dialects.size(); ++i)
    if (!(fam.dialects[i].mean_token_edit_distance > fam.dialects[i - 1].mean_token_edit_distance))
      fail_runtime("generated family violates edit-distance monotonicity between " + fam.dialects[i - 1].spec.lang.code() +
                   " and " + fam.dialects[i].spec.lang.code());
  return fam;
}

// Recovers base-language text from pivot text (the mapping is a bijection).
inline std::string pivot_to_base(const Family& fam, const std::string& pivot_text) {
  std::unordered_map<std::string, std::size_t> inv;
  for (std::size_t i = 0; i < fam.pivot_forms.size(); ++i) inv.emplace(fam.pivot_forms[i], i);
  std::vector<std::string> out;
  for (const auto& w : split_ws(pivot_text)) {
    auto it = inv.find(w);
    if (it == inv.end()) fail_validation("'" + w + "' is not a pivot word");
    out.push_back(fam.lexicon.forms[it->second]);
  }
  return join(out, " ");
}

inline ScoredPool to_pool(const DialectData& d) { return {d.spec.lang.code() + ".train", d.train, {}}; }

// Writes every corpus plus manifest.json under `dir`.
inline CorpusManifest write_family(const Family& fam, const fs::path& dir) {
  CorpusManifest m;
  m.base_dir = dir;
  m.pivot = fam.spec.pivot;
  auto put = [&](const Bitext& b, const std::string& role) {
    const auto stem = b.src_lang.code() + "." + role;
    write_bitext(dir / (stem + "." + b.src_lang.code()), dir / (stem + "." + b.tgt_lang.code()), b);
    m.entries.push_back({stem, b.src_lang, parse_role(role), std::nullopt, stem + "." + b.src_lang.code(),
                         stem + "." + b.tgt_lang.code()});
  };
  put(fam.lrl_train, "train");
  put(fam.lrl_dev, "dev");
  put(fam.lrl_test, "test");
  for (const auto& d : fam.dialects) {
    put(d.train, "train");
    if (d.test) put(*d.test, "test");
  }
  validate(m);
  save_manifest(dir / "manifest.json", m);
  nlohmann::json info = to_json(fam.spec);
  nlohmann::json dist = nlohmann::json::object();
  for (const auto& d : fam.dialects) dist[d.spec.lang.code()] = d.mean_token_edit_distance;
  info["mean_token_edit_distance"] = dist;
  write_file(dir / "family.json", info.dump(2) + "\n");
  return m;
}

struct DistanceRow {
  LangTag lang;
  double epsilon = 0.0;
  double mean_pp = 0.0;
};

struct DistanceReport {
  std::vector<DistanceRow> rows;  // sorted by mean PP
  bool ranking_matches_epsilon = false;
};

// Ranks dialect corpora by mean perplexity under the base-language LM.
inline DistanceReport family_distance_check(const Family& fam, const PieceScorer& lm, const SubwordModel& subword,
                                            bool use_test_sets = true) {
  DistanceReport r;
  for (const auto& d : fam.dialects) {
    const Bitext& b = use_test_sets && d.test ? *d.test : d.train;
    const auto scored = score_corpus(lm, subword, source_side(b), d.spec.lang.code());
    r.rows.push_back({d.spec.lang, d.spec.epsilon, scored.summary.mean_pp});
  }
  std::stable_sort(r.rows.begin(), r.rows.end(), [](const auto& a, const auto& b) { return a.mean_pp < b.mean_pp; });
  r.ranking_matches_epsilon = true;
  for (std::size_t i = 1; i < r.rows.size(); ++i)
    if (!(r.rows[i - 1].epsilon < r.rows[i].epsilon && r.rows[i - 1].mean_pp < r.rows[i].mean_pp))
      r.ranking_matches_epsilon = false;
  return r;
}

inline nlohmann::json to_json(const DistanceReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& x : r.rows) rows.push_back({{"lang", x.lang.code()}, {"epsilon", x.epsilon}, {"mean_pp", x.mean_pp}});
  return {{"ranking", rows}, {"ranking_matches_epsilon", r.ranking_matches_epsilon}};
}

}  // namespace lrladapt
