#pragma once

// Related-language data selection over scored high-resource pools:
// lowest-perplexity pooling, single closest language, whole family and a
// seeded random sample of equal size.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/corpus.hpp"
#include "lrladapt/error.hpp"
#include "lrladapt/ngram_lm.hpp"
#include "lrladapt/rng.hpp"

namespace lrladapt {

enum class Strategy { kPplx, kOne, kFam, kRand };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kPplx: return "pplx";
    case Strategy::kOne: return "one";
    case Strategy::kFam: return "fam";
    case Strategy::kRand: return "rand";
  }
  return "pplx";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "pplx") return Strategy::kPplx;
  if (s == "one") return Strategy::kOne;
  if (s == "fam") return Strategy::kFam;
  if (s == "rand") return Strategy::kRand;
  fail_validation("unknown selection strategy '" + s + "' (expected pplx, one, fam or rand)");
}

// One high-resource pool: a lang->pivot bitext, optionally scored by the LRL LM.
struct ScoredPool {
  std::string key;  // manifest key
  Bitext bitext;
  std::vector<ScoredSegment> scores;  // empty unless scored; else one per pair

  const LangTag& lang() const { return bitext.src_lang; }
};

struct SelectedSegment {
  std::string key;
  LangTag lang;
  std::size_t index = 0;
  double pp = 0.0;
};

struct SelectionReport {
  Strategy strategy = Strategy::kPplx;
  std::optional<std::size_t> budget;
  std::optional<double> pp_cutoff;
  std::optional<std::uint64_t> seed;
  std::vector<std::pair<LangTag, std::size_t>> counts;  // pool order, zeros included
  std::vector<std::pair<LangTag, std::size_t>> pool_sizes;
  std::size_t total = 0;
  std::vector<SelectedSegment> segments;  // pplx only, ascending PP
  std::size_t duplicate_pivot_segments = 0;
  std::vector<std::string> notes;
};

struct Selection {
  PairStream pairs;  // oriented lang -> pivot
  SelectionReport report;
};

struct SelectionConfig {
  Strategy strategy = Strategy::kPplx;
  std::optional<std::size_t> budget;
  std::optional<double> pp_cutoff;  // alternative to budget for pplx
  std::optional<std::uint64_t> seed;
  std::vector<LangTag> pools;
  std::optional<LangTag> closest_hrl;
};

namespace detail {

inline void check_pools(const std::vector<ScoredPool>& pools) {
  if (pools.empty()) fail_validation("selection needs at least one pool");
  std::set<LangTag> seen;
  for (const auto& p : pools) {
    if (!seen.insert(p.lang()).second) fail_validation("pool language '" + p.lang().code() + "' listed twice");
    if (!p.scores.empty() && p.scores.size() != p.bitext.size())
      fail_validation("pool '" + p.key + "' has " + std::to_string(p.scores.size()) + " scores for " +
                      std::to_string(p.bitext.size()) + " pairs");
  }
}

inline std::size_t pool_total(const std::vector<ScoredPool>& pools) {
  std::size_t n = 0;
  for (const auto& p : pools) n += p.bitext.size();
  return n;
}

inline SelectionReport base_report(Strategy s, const std::vector<ScoredPool>& pools) {
  SelectionReport r;
  r.strategy = s;
  for (const auto& p : pools) {
    r.counts.emplace_back(p.lang(), 0);
    r.pool_sizes.emplace_back(p.lang(), p.bitext.size());
  }
  r.notes.push_back("pools are not deduplicated against each other");
  return r;
}

// Builds the output stream from (pool, index) picks in the given order.
inline Selection assemble(const std::vector<ScoredPool>& pools, const std::vector<std::pair<std::size_t, std::size_t>>& picks,
                          SelectionReport report) {
  Selection sel;
  std::map<std::string, std::size_t> pivot_seen;
  for (const auto& [pi, i] : picks) {
    const auto& pool = pools[pi];
    const auto& [src, tgt] = pool.bitext.pairs[i];
    sel.pairs.pairs.push_back({pool.bitext.src_lang, pool.bitext.tgt_lang, src, tgt});
    report.counts[pi].second += 1;
    ++pivot_seen[tgt];
  }
  for (const auto& [_, n] : pivot_seen)
    if (n > 1) report.duplicate_pivot_segments += n - 1;
  report.total = picks.size();
  for (const auto& c : report.counts)
    if (c.second > 0) sel.pairs.counts.push_back(c);
  sel.report = std::move(report);
  return sel;
}

inline const ScoredPool& find_pool(const std::vector<ScoredPool>& pools, const LangTag& lang, std::size_t* index = nullptr) {
  for (std::size_t i = 0; i < pools.size(); ++i)
    if (pools[i].lang() == lang) {
      if (index) *index = i;
      return pools[i];
    }
  fail_validation("unknown pool language '" + lang.code() + "'");
}

}  // namespace detail

// Global ascending sort by perplexity across all pools; ties go to
// (pool order, segment index). Takes the first `budget`, or every segment with
// PP <= cutoff when a cutoff is given instead.
inline Selection select_pplx(const std::vector<ScoredPool>& pools, std::optional<std::size_t> budget,
                             std::optional<double> pp_cutoff = std::nullopt) {
  detail::check_pools(pools);
  if (budget.has_value() == pp_cutoff.has_value()) fail_validation("select_pplx needs exactly one of budget or PP cutoff");
  const auto total = detail::pool_total(pools);
  if (budget) {
    if (*budget < 1) fail_validation("selection budget must be >= 1");
    if (*budget > total)
      fail_validation("budget " + std::to_string(*budget) + " exceeds the pooled total of " + std::to_string(total));
  }
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  cand.reserve(total);
  for (std::size_t pi = 0; pi < pools.size(); ++pi) {
    if (pools[pi].scores.size() != pools[pi].bitext.size())
      fail_validation("pool '" + pools[pi].key + "' has not been scored");
    for (std::size_t i = 0; i < pools[pi].scores.size(); ++i) cand.emplace_back(pools[pi].scores[i].pp, pi, i);
  }
  std::size_t take = 0;
  if (budget) {
    take = *budget;
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
  } else {
    std::sort(cand.begin(), cand.end());
    while (take < cand.size() && std::get<0>(cand[take]) <= *pp_cutoff) ++take;
  }
  auto report = detail::base_report(Strategy::kPplx, pools);
  report.budget = budget;
  report.pp_cutoff = pp_cutoff;
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  picks.reserve(take);
  for (std::size_t k = 0; k < take; ++k) {
    const auto [pp, pi, i] = cand[k];
    picks.emplace_back(pi, i);
    report.segments.push_back({pools[pi].key, pools[pi].lang(), i, pp});
  }
  return detail::assemble(pools, picks, std::move(report));
}

inline Selection select_one(const std::vector<ScoredPool>& pools, const LangTag& closest) {
  detail::check_pools(pools);
  std::size_t pi = 0;
  const auto& pool = detail::find_pool(pools, closest, &pi);
  if (pool.bitext.size() == 0) fail_validation("pool '" + closest.code() + "' is empty");
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < pool.bitext.size(); ++i) picks.emplace_back(pi, i);
  auto report = detail::base_report(Strategy::kOne, pools);
  return detail::assemble(pools, picks, std::move(report));
}

// Concatenates the listed pools in `family` order.
inline Selection select_fam(const std::vector<ScoredPool>& pools, const std::vector<LangTag>& family) {
  detail::check_pools(pools);
  if (family.empty()) fail_validation("select_fam: empty family");
  std::set<LangTag> seen;
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (const auto& lang : family) {
    if (!seen.insert(lang).second) fail_validation("select_fam: '" + lang.code() + "' listed twice");
    std::size_t pi = 0;
    const auto& pool = detail::find_pool(pools, lang, &pi);
    for (std::size_t i = 0; i < pool.bitext.size(); ++i) picks.emplace_back(pi, i);
  }
  if (picks.empty()) fail_validation("select_fam: family pools are empty");
  auto report = detail::base_report(Strategy::kFam, pools);
  return detail::assemble(pools, picks, std::move(report));
}

// Uniform sample without replacement from the union of pools; the picks are
// emitted in (pool, index) order.
inline Selection select_rand(const std::vector<ScoredPool>& pools, std::size_t budget, std::uint64_t seed) {
  detail::check_pools(pools);
  const auto total = detail::pool_total(pools);
  if (budget < 1) fail_validation("selection budget must be >= 1");
  if (budget > total)
    fail_validation("budget " + std::to_string(budget) + " exceeds the pooled total of " + std::to_string(total));
  std::vector<std::pair<std::size_t, std::size_t>> all;
  all.reserve(total);
  for (std::size_t pi = 0; pi < pools.size(); ++pi)
    for (std::size_t i = 0; i < pools[pi].bitext.size(); ++i) all.emplace_back(pi, i);
  Rng rng(seed);
  // partial Fisher-Yates: the first `budget` slots end up a uniform sample
  for (std::size_t k = 0; k < budget; ++k) {
    const std::size_t j = k + rng.below(total - k);
    std::swap(all[k], all[j]);
  }
  all.resize(budget);
  std::sort(all.begin(), all.end());
  auto report = detail::base_report(Strategy::kRand, pools);
  report.budget = budget;
  report.seed = seed;
  return detail::assemble(pools, all, std::move(report));
}

// Dispatches on the configured strategy. The pplx/rand budget defaults to the
// size of the closest pool, so every strategy but fam yields the same total.
inline Selection select(const std::vector<ScoredPool>& all_pools, const SelectionConfig& cfg) {
  std::vector<ScoredPool> pools;
  if (cfg.pools.empty()) {
    pools = all_pools;
  } else {
    for (const auto& l : cfg.pools) pools.push_back(detail::find_pool(all_pools, l));
  }
  if (cfg.seed.has_value() != (cfg.strategy == Strategy::kRand))
    fail_validation("a seed is required for rand selection and only for rand");
  auto default_budget = [&]() -> std::size_t {
    if (cfg.budget) return *cfg.budget;
    if (!cfg.closest_hrl) fail_validation("selection needs --budget or a closest HRL to size it");
    return detail::find_pool(pools, *cfg.closest_hrl).bitext.size();
  };
  switch (cfg.strategy) {
    case Strategy::kPplx:
      if (cfg.pp_cutoff) return select_pplx(pools, std::nullopt, cfg.pp_cutoff);
      return select_pplx(pools, default_budget());
    case Strategy::kOne:
      if (!cfg.closest_hrl) fail_validation("select-one needs the closest HRL");
      return select_one(pools, *cfg.closest_hrl);
    case Strategy::kFam: {
      std::vector<LangTag> fam;
      for (const auto& p : pools) fam.push_back(p.lang());
      return select_fam(pools, fam);
    }
    case Strategy::kRand: return select_rand(pools, default_budget(), *cfg.seed);
  }
  fail_validation("unreachable strategy");
}

inline nlohmann::json to_json(const SelectionReport& r) {
  nlohmann::json j{{"strategy", to_string(r.strategy)},
                   {"total", r.total},
                   {"counts", counts_json(r.counts)},
                   {"pool_sizes", counts_json(r.pool_sizes)},
                   {"duplicate_pivot_segments", r.duplicate_pivot_segments},
                   {"notes", r.notes}};
  j["budget"] = r.budget ? nlohmann::json(*r.budget) : nlohmann::json(nullptr);
  j["seed"] = r.seed ? nlohmann::json(*r.seed) : nlohmann::json(nullptr);
  if (r.pp_cutoff) j["pp_cutoff"] = *r.pp_cutoff;
  // insertion order of languages is lost in a JSON object; keep it explicitly
  nlohmann::json order = nlohmann::json::array();
  for (const auto& c : r.counts) order.push_back(c.first.code());
  j["language_order"] = order;
  if (r.strategy == Strategy::kPplx) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : r.segments) segs.push_back({{"key", s.key}, {"lang", s.lang.code()}, {"index", s.index}, {"pp", s.pp}});
    j["segments"] = std::move(segs);
  }
  return j;
}

}  // namespace lrladapt
