#pragma once

// Building blocks shared by the pipeline and the acceptance harness: joint
// subword training, universal training streams, adaptation runs and dev-set
// tracking.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/adapt.hpp"
#include "lrladapt/checkpoint.hpp"
#include "lrladapt/corpus.hpp"
#include "lrladapt/eval_run.hpp"
#include "lrladapt/ngram_lm.hpp"
#include "lrladapt/nmt.hpp"
#include "lrladapt/selection.hpp"
#include "lrladapt/subword.hpp"

namespace lrladapt {

// Source and target sides of every bitext, for a subword model shared by both.
inline std::vector<MonoCorpus> both_sides(const std::vector<Bitext>& bitexts) {
  std::vector<MonoCorpus> out;
  for (const auto& b : bitexts) {
    out.push_back(source_side(b));
    out.push_back(target_side(b));
  }
  return out;
}

inline std::vector<MonoCorpus> both_sides(const PairStream& stream) {
  std::map<LangTag, std::size_t> index;
  std::vector<MonoCorpus> out;
  auto add = [&](const LangTag& lang, const std::string& text) {
    auto [it, inserted] = index.emplace(lang, out.size());
    if (inserted) out.push_back({lang, {}});
    out[it->second].segments.push_back(text);
  };
  for (const auto& p : stream.pairs) {
    add(p.src_lang, p.src);
    add(p.tgt_lang, p.tgt);
  }
  return out;
}

inline TrainedSubword train_joint_subword(const std::vector<MonoCorpus>& corpora, const SubwordOptions& opt) {
  std::vector<const MonoCorpus*> ptrs;
  for (const auto& c : corpora) ptrs.push_back(&c);
  return train_subword(ptrs, opt);
}

// Every pool in every requested direction, directions in the given order.
inline PairStream universal_stream(const std::vector<Bitext>& pools, const std::vector<Direction>& directions) {
  if (directions.empty()) fail_validation("universal_stream: no directions");
  PairStream out;
  for (auto d : directions) append(out, concat_pools(pools, d));
  return out;
}

// The same pairs with source and target swapped.
inline PairStream flip(const PairStream& s) {
  PairStream out;
  out.counts = s.counts;
  out.pairs.reserve(s.size());
  for (const auto& p : s.pairs) out.pairs.push_back({p.tgt_lang, p.src_lang, p.tgt, p.src});
  return out;
}

// LRL data plus the selected HRL data, in each requested direction.
inline PairStream adaptation_stream(const Bitext& lrl_train, const PairStream* selected, const std::vector<Direction>& directions) {
  PairStream to_pivot = to_stream(lrl_train);
  if (selected) append(to_pivot, *selected);
  PairStream out;
  for (auto d : directions) append(out, d == Direction::kToPivot ? to_pivot : flip(to_pivot));
  return out;
}

inline std::string stream_to_tsv(const PairStream& s) {
  std::string out;
  for (const auto& p : s.pairs)
    out += p.src_lang.code() + "\t" + p.tgt_lang.code() + "\t" + detail::tsv_escape(p.src) + "\t" + detail::tsv_escape(p.tgt) + "\n";
  return out;
}

// Counts are kept per source language, which suits lang -> pivot streams.
inline PairStream stream_from_tsv(const std::string& text) {
  PairStream s;
  std::map<LangTag, std::size_t> index;
  for (const auto& line : detail::split_validated_lines(text, "pair stream")) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == '\t') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (cols.size() != 4) fail_validation("pair stream line needs 4 tab-separated columns");
    StreamPair p{LangTag(cols[0]), LangTag(cols[1]), detail::tsv_unescape(cols[2]), detail::tsv_unescape(cols[3])};
    s.pairs.push_back(p);
  }
  for (const auto& p : s.pairs) {
    auto [it, inserted] = index.emplace(p.src_lang, s.counts.size());
    if (inserted) s.counts.emplace_back(p.src_lang, 0);
    s.counts[it->second].second += 1;
  }
  return s;
}

// Scores the source side of every pool with the LRL language model.
inline void score_pools(const PieceScorer& lm, const SubwordModel& subword, std::vector<ScoredPool>& pools) {
  for (auto& p : pools) p.scores = score_corpus(lm, subword, source_side(p.bitext), p.key).segments;
}

struct DevPoint {
  int step = 0;
  double bleu = 0.0;
};

struct DevCurve {
  std::vector<DevPoint> points;

  // First evaluated step whose dev BLEU is at least `threshold`.
  std::optional<int> first_reaching(double threshold) const {
    for (const auto& p : points)
      if (p.bleu >= threshold) return p.step;
    return std::nullopt;
  }
};

inline nlohmann::json to_json(const DevCurve& c) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : c.points) j.push_back({{"step", p.step}, {"bleu", p.bleu}});
  return j;
}

// Step hook that scores `dev` every `every` steps into `curve`.
template <typename S>
StepHook<S> dev_tracker(const Bitext& dev, Direction dir, EvalConfig cfg, int every, DevCurve& curve) {
  if (every < 1) fail_validation("dev evaluation interval must be >= 1");
  return [&dev, dir, cfg, every, &curve](int step, BasicCheckpoint<S>& ck) {
    if (step % every != 0) return;
    curve.points.push_back({step, eval_run(ck, dev, dir, cfg).bleu.score});
  };
}

struct AdaptSpec {
  AdaptMode mode = AdaptMode::kDir;
  std::vector<int> candidates;  // DynAdapt merge counts to search
  std::uint64_t init_seed = 1;  // DynAdapt fresh rows
  TrainConfig train;
};

struct AdaptOutcome {
  Checkpoint ck;
  AdaptRun run;
};

// DirAdapt or DynAdapt of a copy of `pre` on `data`. For DynAdapt the new
// subword model is trained on both sides of `data` and its size picked by
// vocabulary overlap with the pretrained model.
inline AdaptOutcome adapt_checkpoint(const Checkpoint& pre, const LangTag& lang, const PairStream& data, const AdaptSpec& spec,
                                     StepHook<float> hook = {}) {
  AdaptOutcome out;
  if (spec.mode == AdaptMode::kDir) {
    out.ck = pre.clone();
    out.run = dir_adapt(out.ck, lang, data, spec.train, std::move(hook));
    return out;
  }
  const auto corpora = both_sides(data);
  std::vector<const MonoCorpus*> ptrs;
  for (const auto& c : corpora) ptrs.push_back(&c);
  auto search = search_overlap_size(ptrs, pre.vocab, spec.candidates, dyn_subword_options(pre, lang));
  out.ck = dyn_adapt(pre, search.best, spec.init_seed, lang, &out.run.report);
  out.run.report.overlap_table = search.table;
  const auto enc = encode_stream(out.ck, data);
  out.run.unk_tokens = enc.unk_tokens;
  out.run.train = train(out.ck, enc, spec.train, std::move(hook));
  return out;
}

// A model trained from scratch on `data` alone, with its own subword model.
inline Checkpoint train_from_scratch(const PairStream& data, int merges, ModelConfig model, std::uint64_t init_seed,
                                     const TrainConfig& cfg, StepHook<float> hook = {}, TrainResult* result = nullptr) {
  SubwordOptions opt;
  opt.merges = merges;
  std::set<LangTag> targets;
  for (const auto& p : data.pairs) targets.insert(p.tgt_lang);
  for (const auto& l : targets) opt.control_tokens.push_back(control_token(l));
  auto sw = train_joint_subword(both_sides(data), opt);
  auto ck = init_model(std::move(model), sw, init_seed);
  auto r = train(ck, encode_stream(ck, data), cfg, std::move(hook));
  if (result) *result = std::move(r);
  return ck;
}

}  // namespace lrladapt
