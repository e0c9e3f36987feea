#pragma once

// Adapting a pretrained checkpoint to a new language.
//
// DirAdapt keeps vocabulary, segmentation and parameters and only claims a
// spare control-token slot for the new language. DynAdapt swaps in a new
// subword model: rows of the embeddings and the pre-softmax projection are
// copied for pieces the old vocabulary already had and freshly initialized
// for the rest.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/checkpoint.hpp"
#include "lrladapt/corpus.hpp"
#include "lrladapt/error.hpp"
#include "lrladapt/nmt.hpp"
#include "lrladapt/subword.hpp"

namespace lrladapt {

struct VocabMapping {
  std::vector<std::optional<int>> old_id;  // per new id; nullopt = new row
  std::size_t transferred = 0;             // non-reserved pieces only
  std::size_t fresh = 0;                   // non-reserved pieces only
  std::size_t reserved_transferred = 0;
  std::size_t reserved_fresh = 0;
  double overlap = 0.0;  // transferred / non-reserved new-vocabulary size
};

// Pieces match by exact string; reserved tokens match by name against the old
// reserved tokens, ordinary pieces against old ordinary pieces.
inline VocabMapping build_mapping(const Vocabulary& old_vocab, const Vocabulary& new_vocab) {
  VocabMapping m;
  m.old_id.resize(new_vocab.size());
  for (std::size_t i = 0; i < new_vocab.size(); ++i) {
    const int id = static_cast<int>(i);
    auto old = old_vocab.find(new_vocab.piece(id));
    const bool reserved = new_vocab.is_reserved(id);
    if (old && old_vocab.is_reserved(*old) != reserved) old.reset();
    m.old_id[i] = old;
    if (reserved)
      ++(old ? m.reserved_transferred : m.reserved_fresh);
    else
      ++(old ? m.transferred : m.fresh);
  }
  const auto n = m.transferred + m.fresh;
  m.overlap = n == 0 ? 1.0 : static_cast<double>(m.transferred) / static_cast<double>(n);
  return m;
}

enum class AdaptMode { kDir, kDyn };

inline std::string to_string(AdaptMode m) { return m == AdaptMode::kDir ? "dir" : "dyn"; }

inline AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "dir") return AdaptMode::kDir;
  if (s == "dyn") return AdaptMode::kDyn;
  fail_validation("unknown adaptation mode '" + s + "' (expected dir or dyn)");
}

struct AdaptReport {
  AdaptMode mode = AdaptMode::kDir;
  std::string source_checkpoint;  // content digest
  LangTag lang{"lrl"};
  VocabMapping mapping;
  std::optional<std::uint64_t> init_seed;
  std::optional<int> segmentation_size;
  std::vector<OverlapRow> overlap_table;
  int control_token_id = -1;
  std::vector<std::string> notes;
};

inline nlohmann::json to_json(const AdaptReport& r, bool full_mapping = true) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& row : r.overlap_table)
    table.push_back({{"requested_merges", row.requested_merges}, {"merges", row.merges}, {"vocab_size", row.vocab_size},
                     {"overlap", row.overlap}});
  nlohmann::json j{{"mode", to_string(r.mode)},
                   {"source_checkpoint", r.source_checkpoint},
                   {"lang", r.lang.code()},
                   {"control_token_id", r.control_token_id},
                   {"overlap", r.mapping.overlap},
                   {"transferred", r.mapping.transferred},
                   {"new", r.mapping.fresh},
                   {"reserved_transferred", r.mapping.reserved_transferred},
                   {"reserved_new", r.mapping.reserved_fresh},
                   {"overlap_table", table},
                   {"notes", r.notes}};
  j["init_seed"] = r.init_seed ? nlohmann::json(*r.init_seed) : nlohmann::json(nullptr);
  j["segmentation_size"] = r.segmentation_size ? nlohmann::json(*r.segmentation_size) : nlohmann::json(nullptr);
  if (full_mapping && r.mode == AdaptMode::kDyn) {
    nlohmann::json map = nlohmann::json::array();
    for (const auto& o : r.mapping.old_id) map.push_back(o ? nlohmann::json(*o) : nlohmann::json(nullptr));
    j["mapping"] = std::move(map);
  }
  return j;
}

// Registers the new language's tag in a spare slot. Tensors are untouched, so
// the result is bit-identical to the input until training starts.
template <typename S>
AdaptReport dir_adapt_prepare(BasicCheckpoint<S>& ck, const LangTag& lang) {
  AdaptReport r;
  r.mode = AdaptMode::kDir;
  r.source_checkpoint = checkpoint_digest(ck);
  r.lang = lang;
  r.control_token_id = assign_control_token(ck.vocab, lang);
  r.mapping = build_mapping(ck.vocab, ck.vocab);
  r.notes.push_back("vocabulary, segmentation and parameters reused unchanged");
  return r;
}

struct AdaptRun {
  AdaptReport report;
  TrainResult train;
  std::size_t unk_tokens = 0;
};

// DirAdapt: claim a tag slot, then continue training on `data`.
template <typename S>
AdaptRun dir_adapt(BasicCheckpoint<S>& ck, const LangTag& lang, const PairStream& data, const TrainConfig& cfg,
                   std::type_identity_t<StepHook<S>> hook = {}) {
  AdaptRun run;
  run.report = dir_adapt_prepare(ck, lang);
  const auto enc = encode_stream(ck, data);
  run.unk_tokens = enc.unk_tokens;
  if (enc.unk_tokens > 0)
    run.report.notes.push_back(std::to_string(enc.unk_tokens) + " adaptation tokens were outside the pretrained vocabulary and mapped to <unk>");
  run.train = train(ck, enc, cfg, std::move(hook));
  return run;
}

// Subword options for a DynAdapt vocabulary: the pretrained control tokens
// plus the new language's tag, and the same number of spare slots.
template <typename S>
SubwordOptions dyn_subword_options(const BasicCheckpoint<S>& ck, const LangTag& lang) {
  SubwordOptions o;
  for (std::size_t i = 0; i < ck.vocab.reserved_count(); ++i) {
    const auto& p = ck.vocab.pieces()[i];
    if (is_spare_control_slot(p))
      ++o.spare_control_slots;
    else if (is_control_token(p))
      o.control_tokens.push_back(p);
  }
  o.control_tokens.push_back(control_token(lang));
  return o;
}

// DynAdapt surgery. Transferred rows are copied bit-exactly; new rows of each
// vocabulary-indexed tensor are drawn in increasing id order from
// derive_seed(init_seed, tensor name) with the embedding init bound. All other
// tensors are copied unchanged.
template <typename S>
BasicCheckpoint<S> dyn_adapt(const BasicCheckpoint<S>& ck, const TrainedSubword& next, std::uint64_t init_seed,
                             const LangTag& lang, AdaptReport* report = nullptr) {
  check_shapes(ck);
  const auto mapping = build_mapping(ck.vocab, next.vocab);
  BasicCheckpoint<S> out;
  out.config = ck.config;
  out.config.vocab_size = static_cast<int>(next.vocab.size());
  out.step = ck.step;
  out.manifest = ck.manifest;
  out.seeds = ck.seeds;
  out.seeds.push_back({"dyn_adapt", init_seed});
  out.vocab = next.vocab;
  out.subword = next.model;
  std::vector<int> fresh_rows;
  for (std::size_t i = 0; i < mapping.old_id.size(); ++i)
    if (!mapping.old_id[i]) fresh_rows.push_back(static_cast<int>(i));
  const auto layout = tensor_layout(out.config);
  for (const auto& t : layout) {
    const auto& src = ck.at(t.name);
    if (!is_vocab_tensor(t.name)) {
      if (src.rows() != t.rows || src.cols() != t.cols) fail_validation("tensor '" + t.name + "' has an incompatible shape");
      out.tensors[t.name] = std::make_shared<Mat<S>>(src);
      continue;
    }
    if (out.config.shared_embeddings && t.name == kOutProj) {
      out.tensors[t.name] = out.tensors.at(kTgtEmbed);
      continue;
    }
    if (src.cols() != t.cols) fail_validation("tensor '" + t.name + "' has an incompatible width");
    auto m = std::make_shared<Mat<S>>(t.rows, t.cols);
    for (std::size_t i = 0; i < mapping.old_id.size(); ++i)
      if (mapping.old_id[i]) m->row(static_cast<Eigen::Index>(i)) = src.row(*mapping.old_id[i]);
    Rng rng(derive_seed(init_seed, t.name));
    init_rows(*m, fresh_rows, init_bound(t, out.config.model_dim), rng);
    out.tensors[t.name] = std::move(m);
  }
  check_shapes(out);
  if (report) {
    report->mode = AdaptMode::kDyn;
    report->source_checkpoint = checkpoint_digest(ck);
    report->lang = lang;
    report->mapping = mapping;
    report->init_seed = init_seed;
    report->segmentation_size = next.model.requested_merges;
    report->control_token_id = out.vocab.find(control_token(lang)).value_or(-1);
    report->notes.push_back("all adaptation data, LRL and HRL, is re-segmented with the new subword model");
  }
  return out;
}

}  // namespace lrladapt
