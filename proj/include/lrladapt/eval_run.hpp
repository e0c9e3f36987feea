#pragma once

// Translate a test set with a checkpoint, score it, and describe the run in a
// JSON report. The test bitext is always oriented LRL -> pivot; the direction
// picks which side is the source.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/checkpoint.hpp"
#include "lrladapt/corpus.hpp"
#include "lrladapt/eval.hpp"
#include "lrladapt/nmt.hpp"
#include "lrladapt/util.hpp"

namespace lrladapt {

struct EvalConfig {
  TranslateOptions translate;
  bool zero_shot = false;
};

inline nlohmann::json to_json(const EvalConfig& c) {
  return {{"beam", c.translate.beam}, {"max_len", c.translate.max_len}, {"zero_shot", c.zero_shot}};
}

struct EvalRun {
  std::vector<std::string> hypotheses;
  std::vector<std::string> references;
  std::vector<BleuStats> segments;
  BleuScore bleu;
  nlohmann::json report;
};

inline std::string joined_hash(const std::vector<std::string>& lines) {
  std::string buf;
  for (const auto& l : lines) buf += l + "\n";
  return git_blob_hash(buf);
}

// `report.input_hash` covers the checkpoint, the test set, the direction and
// the decoding config, so it changes exactly when one of them does.
template <typename S>
EvalRun eval_run(BasicCheckpoint<S>& ck, const Bitext& test, Direction dir, const EvalConfig& cfg) {
  if (test.size() == 0) fail_validation("eval: empty test set");
  std::vector<std::string> sources;
  EvalRun run;
  for (const auto& [s, t] : test.pairs) {
    sources.push_back(dir == Direction::kToPivot ? s : t);
    run.references.push_back(dir == Direction::kToPivot ? t : s);
  }
  const LangTag src_lang = dir == Direction::kToPivot ? test.src_lang : test.tgt_lang;
  const LangTag tgt_lang = dir == Direction::kToPivot ? test.tgt_lang : test.src_lang;
  nlohmann::json zero_shot = nullptr;
  if (cfg.zero_shot) {
    auto z = zero_shot_translate(ck, test, dir, cfg.translate);
    run.hypotheses = std::move(z.hypotheses);
    zero_shot = to_json(z.report);
  } else {
    run.hypotheses = translate(ck, sources, tgt_lang, cfg.translate);
  }
  run.segments = corpus_stats(run.hypotheses, run.references);
  run.bleu = bleu_from_stats(sum_stats(run.segments));

  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& m : ck.manifest) manifest.push_back({{"src", m.src.code()}, {"tgt", m.tgt.code()}, {"pairs", m.pairs}});
  nlohmann::json inputs{{"checkpoint", checkpoint_digest(ck)},
                        {"sources", joined_hash(sources)},
                        {"references", joined_hash(run.references)},
                        {"direction", to_string(dir)},
                        {"config", to_json(cfg)}};
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : run.segments) segs.push_back(to_json(s));
  run.report = {{"src_lang", src_lang.code()},
                {"tgt_lang", tgt_lang.code()},
                {"direction", to_string(dir)},
                {"segments", test.size()},
                {"bleu", to_json(run.bleu)},
                {"zero_shot", cfg.zero_shot},
                {"zero_shot_report", zero_shot},
                {"model", to_json(ck.config)},
                {"checkpoint_step", ck.step},
                {"training_manifest", manifest},
                {"inputs", inputs},
                {"input_hash", sha1_hex(inputs.dump())},
                {"hypotheses_hash", joined_hash(run.hypotheses)},
                {"segment_stats", segs}};
  return run;
}

// Per-segment statistics stored in an eval report, for significance testing.
inline std::vector<BleuStats> segment_stats_from_report(const nlohmann::json& report) {
  if (!report.contains("segment_stats")) fail_validation("report has no segment_stats (not an eval report?)");
  std::vector<BleuStats> out;
  for (const auto& s : report.at("segment_stats")) out.push_back(bleu_stats_from_json(s));
  return out;
}

}  // namespace lrladapt
