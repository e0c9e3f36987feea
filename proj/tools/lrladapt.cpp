// Command-line entry point. Exit codes: 0 success, 1 validation error (bad
// flags, configs or inputs), 2 runtime or I/O error.

#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lrladapt/adapt.hpp"
#include "lrladapt/eval.hpp"
#include "lrladapt/eval_run.hpp"
#include "lrladapt/experiment.hpp"
#include "lrladapt/ngram_lm.hpp"
#include "lrladapt/pipeline.hpp"
#include "lrladapt/selection.hpp"
#include "lrladapt/subword.hpp"
#include "lrladapt/synth.hpp"

using namespace lrladapt;
using nlohmann::json;

namespace {

std::string read_input(const std::string& path) {
  if (path.empty() || path == "-") return std::string(std::istreambuf_iterator<char>(std::cin), {});
  return read_file(path);
}

std::vector<std::string> read_lines(const std::string& path, const std::string& name) {
  return detail::split_validated_lines(read_input(path), name);
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-")
    std::cout << content << std::flush;
  else
    write_file(path, content);
}

void write_report(const std::string& path, const json& report) {
  if (!path.empty()) write_file(path, report.dump(2) + "\n");
}

std::string joined(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

TrainedSubword load_trained_subword(const std::string& path) {
  TrainedSubword sw;
  sw.model = load_subword(path);
  sw.vocab = build_vocabulary(sw.model);
  return sw;
}

// Training flags shared by nmt-train and adapt.
struct TrainFlags {
  int steps = 1000;
  int batch_tokens = 4096;
  int warmup = 8000;
  double lr_constant = 2.0;
  std::optional<double> dropout;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  bool restart_schedule = false;

  void add(CLI::App* app, const std::string& seed_flag = "--seed") {
    app->add_option("--steps", steps, "optimizer steps")->capture_default_str();
    app->add_option("--batch-tokens", batch_tokens, "padded tokens per batch")->capture_default_str();
    app->add_option("--warmup", warmup, "warmup steps")->capture_default_str();
    app->add_option("--lr-constant", lr_constant, "learning-rate scale")->capture_default_str();
    app->add_option("--dropout", dropout, "dropout override");
    app->add_option("--label-smoothing", label_smoothing)->capture_default_str();
    app->add_option(seed_flag, seed, "batching and dropout seed")->capture_default_str();
    app->add_flag("--restart-schedule", restart_schedule, "restart warmup instead of following the checkpoint step");
  }

  TrainConfig config() const {
    TrainConfig c;
    c.max_steps = steps;
    c.batch_tokens = batch_tokens;
    c.warmup = warmup;
    c.lr_constant = lr_constant;
    c.dropout = dropout;
    c.label_smoothing = label_smoothing;
    c.seed = seed;
    c.continue_schedule = !restart_schedule;
    return c;
  }
};

std::string train_log(const TrainResult& r) {
  std::string log;
  for (const auto& s : r.log) log += to_json(s).dump() + "\n";
  return log;
}

json train_summary(const TrainResult& r) {
  return {{"examples", r.examples},
          {"dropped_too_long", r.dropped_too_long},
          {"unk_tokens", r.unk_tokens},
          {"steps", r.log.size()},
          {"final_loss", r.log.empty() ? json(nullptr) : json(r.log.back().loss)}};
}

// Loads train bitexts named by manifest key and builds the training stream.
PairStream manifest_stream(const std::string& manifest_path, const std::vector<std::string>& keys,
                           const std::vector<std::string>& directions) {
  const auto m = load_manifest(manifest_path);
  std::vector<Bitext> bitexts;
  if (keys.empty()) {
    for (const auto& e : m.entries)
      if (e.role == Role::kTrain && e.is_bitext()) bitexts.push_back(m.load_bitext(e.key));
  } else {
    for (const auto& k : keys) bitexts.push_back(m.load_bitext(k));
  }
  if (bitexts.empty()) fail_validation("no train bitexts selected from " + manifest_path);
  std::vector<Direction> dirs;
  for (const auto& d : directions) dirs.push_back(parse_direction(d));
  return universal_stream(bitexts, dirs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-resource translation by selecting related-language data and adapting a universal model"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  std::string report_path;
  auto report_opt = [&](CLI::App* sub) { sub->add_option("--report", report_path, "write a JSON report here"); };
  std::function<json()> action;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic language family and its corpus manifest");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "family spec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory")->required();
  report_opt(synth);
  synth->callback([&] {
    action = [&] {
      const auto spec = family_spec_from_json(json::parse(read_file(synth_spec)));
      const auto fam = generate_family(spec);
      fs::create_directories(synth_out);
      const auto m = write_family(fam, synth_out);
      json dist = json::object();
      for (const auto& d : fam.dialects) dist[d.spec.lang.code()] = d.mean_token_edit_distance;
      return json{{"manifest", (fs::path(synth_out) / "manifest.json").string()},
                  {"spec", to_json(spec)},
                  {"mean_token_edit_distance", dist},
                  {"entries", to_json(m)["entries"]}};
    };
  });

  // subword-train
  auto* swt = app.add_subcommand("subword-train", "learn a subword segmentation model on plain-text files");
  std::vector<std::string> swt_inputs, swt_controls;
  std::string swt_out, swt_vocab;
  int swt_merges = 8000, swt_spare = 0, swt_min_count = 2;
  std::optional<std::size_t> swt_vocab_size;
  swt->add_option("--input", swt_inputs, "training text, one segment per line")->required()->check(CLI::ExistingFile);
  swt->add_option("--merges", swt_merges, "number of merge operations")->capture_default_str();
  swt->add_option("--vocab-size", swt_vocab_size, "target vocabulary size (overrides --merges)");
  swt->add_option("--min-count", swt_min_count, "minimum pair frequency")->capture_default_str();
  swt->add_option("--control-token", swt_controls, "reserved control token such as <2en>");
  swt->add_option("--spare-slots", swt_spare, "spare control-token slots")->capture_default_str();
  swt->add_option("--out", swt_out, "model JSON")->required();
  swt->add_option("--vocab", swt_vocab, "also write the vocabulary TSV");
  report_opt(swt);
  swt->callback([&] {
    action = [&] {
      std::vector<MonoCorpus> corpora;
      for (const auto& f : swt_inputs) corpora.push_back({LangTag("x"), read_lines(f, f)});
      SubwordOptions o;
      o.merges = swt_merges;
      o.vocab_size = swt_vocab_size;
      o.min_pair_count = swt_min_count;
      o.control_tokens = swt_controls;
      o.spare_control_slots = swt_spare;
      const auto sw = train_joint_subword(corpora, o);
      save_subword(swt_out, sw.model);
      if (!swt_vocab.empty()) save_vocab(swt_vocab, sw.vocab);
      json inputs = json::object();
      for (const auto& f : swt_inputs) inputs[f] = git_file_hash(f);
      return json{{"model", swt_out},
                  {"requested_merges", sw.model.requested_merges},
                  {"merges", sw.model.merges.size()},
                  {"vocab_size", sw.vocab.size()},
                  {"inputs", inputs}};
    };
  });

  // encode
  auto* enc = app.add_subcommand("encode", "segment text into subword pieces (or join pieces back with --decode)");
  std::string enc_model, enc_in = "-", enc_out = "-";
  bool enc_decode = false;
  enc->add_option("--model", enc_model, "subword model JSON")->required()->check(CLI::ExistingFile);
  enc->add_option("--input", enc_in, "input text ('-' for stdin)")->capture_default_str();
  enc->add_option("--output", enc_out, "output ('-' for stdout)")->capture_default_str();
  enc->add_flag("--decode", enc_decode, "input is space-separated pieces");
  report_opt(enc);
  enc->callback([&] {
    action = [&] {
      const auto model = load_subword(enc_model);
      SubwordEncoder e(model);
      std::vector<std::string> out;
      std::size_t pieces = 0;
      for (const auto& line : read_lines(enc_in, "input")) {
        if (enc_decode) {
          out.push_back(decode_pieces(split_ws(line)));
        } else {
          const auto p = e.encode(line);
          pieces += p.size();
          out.push_back(join(p, " "));
        }
      }
      write_output(enc_out, joined(out));
      return json{{"segments", out.size()}, {"pieces", pieces}, {"decode", enc_decode}};
    };
  });

  // lm-train
  auto* lmt = app.add_subcommand("lm-train", "train the n-gram language model on subword-segmented text");
  std::string lmt_in, lmt_sw, lmt_out;
  LmOptions lmt_opt;
  lmt->add_option("--input", lmt_in, "training text")->required()->check(CLI::ExistingFile);
  lmt->add_option("--subword", lmt_sw, "subword model JSON")->required()->check(CLI::ExistingFile);
  lmt->add_option("--order", lmt_opt.order, "n-gram order")->capture_default_str();
  lmt->add_option("--discount", lmt_opt.discount, "absolute discount")->capture_default_str();
  lmt->add_option("--out", lmt_out, "model file")->required();
  report_opt(lmt);
  lmt->callback([&] {
    action = [&] {
      const auto lm = train_lm(MonoCorpus{LangTag("x"), read_lines(lmt_in, lmt_in)}, load_subword(lmt_sw), lmt_opt);
      save_lm(lmt_out, lm);
      return json{{"model", lmt_out}, {"order", lmt_opt.order}, {"discount", lmt_opt.discount}, {"input", git_file_hash(lmt_in)}};
    };
  });

  // lm-score
  auto* lms = app.add_subcommand("lm-score", "per-segment perplexity as TSV (key, index, N, logprob, PP)");
  std::string lms_lm, lms_sw, lms_in, lms_out = "-", lms_key = "input";
  lms->add_option("--lm", lms_lm, "language model file")->required()->check(CLI::ExistingFile);
  lms->add_option("--subword", lms_sw, "subword model JSON")->required()->check(CLI::ExistingFile);
  lms->add_option("--input", lms_in, "text to score")->required()->check(CLI::ExistingFile);
  lms->add_option("--key", lms_key, "value of the key column")->capture_default_str();
  lms->add_option("--output", lms_out, "TSV output ('-' for stdout)")->capture_default_str();
  report_opt(lms);
  lms->callback([&] {
    action = [&] {
      const auto lm = load_lm(lms_lm);
      const auto scored = score_corpus(lm, load_subword(lms_sw), read_lines(lms_in, lms_in), lms_key);
      write_output(lms_out, scores_to_tsv(scored.segments));
      return json{{"segments", scored.summary.segments},
                  {"mean_pp", scored.summary.mean_pp},
                  {"median_pp", scored.summary.median_pp}};
    };
  });

  // select
  auto* sel = app.add_subcommand("select", "select HRL training data for an LRL");
  std::string sel_manifest, sel_strategy = "pplx", sel_out;
  std::vector<std::string> sel_pools, sel_scores;
  std::optional<std::size_t> sel_budget;
  std::optional<double> sel_cutoff;
  std::optional<std::uint64_t> sel_seed;
  std::optional<std::string> sel_closest;
  sel->add_option("--manifest", sel_manifest, "corpus manifest")->required()->check(CLI::ExistingFile);
  sel->add_option("--strategy", sel_strategy, "pplx, one, fam or rand")->capture_default_str();
  sel->add_option("--pool", sel_pools, "manifest key of an HRL train bitext")->required();
  sel->add_option("--scores", sel_scores, "lm-score TSV per pool, in --pool order (pplx only)");
  sel->add_option("--budget", sel_budget, "number of segments (pplx, rand)");
  sel->add_option("--pp-cutoff", sel_cutoff, "keep every segment with PP <= cutoff (pplx)");
  sel->add_option("--seed", sel_seed, "sampling seed (rand)");
  sel->add_option("--closest", sel_closest, "closest HRL language tag (one; default budget)");
  sel->add_option("--out", sel_out, "selected pairs as TSV (src_lang, tgt_lang, src, tgt)")->required();
  report_opt(sel);
  sel->callback([&] {
    action = [&] {
      const auto m = load_manifest(sel_manifest);
      std::vector<ScoredPool> pools;
      for (const auto& k : sel_pools) pools.push_back({k, m.load_bitext(k), {}});
      SelectionConfig c;
      c.strategy = parse_strategy(sel_strategy);
      if (c.strategy == Strategy::kPplx) {
        if (sel_scores.size() != pools.size()) fail_validation("--scores must be given once per --pool for pplx selection");
        for (std::size_t i = 0; i < pools.size(); ++i) pools[i].scores = scores_from_tsv(read_file(sel_scores[i]));
      }
      c.budget = sel_budget;
      c.pp_cutoff = sel_cutoff;
      c.seed = sel_seed;
      if (sel_closest) c.closest_hrl = LangTag(*sel_closest);
      const auto s = select(pools, c);
      write_file(sel_out, stream_to_tsv(s.pairs));
      return to_json(s.report);
    };
  });

  // nmt-train
  auto* nt = app.add_subcommand("nmt-train", "train a universal translation model");
  std::string nt_manifest, nt_subword, nt_init, nt_out, nt_log, nt_preset = "desk", nt_model_json;
  std::vector<std::string> nt_keys, nt_dirs{"to-pivot", "from-pivot"};
  std::uint64_t nt_init_seed = 1;
  TrainFlags nt_flags;
  nt->add_option("--manifest", nt_manifest, "corpus manifest")->required()->check(CLI::ExistingFile);
  nt->add_option("--key", nt_keys, "train bitext keys (default: every train bitext)");
  nt->add_option("--direction", nt_dirs, "to-pivot and/or from-pivot")->capture_default_str();
  auto* nt_sw = nt->add_option("--subword", nt_subword, "subword model JSON for a new model")->check(CLI::ExistingFile);
  nt->add_option("--checkpoint", nt_init, "continue training this checkpoint")->excludes(nt_sw)->check(CLI::ExistingDirectory);
  nt->add_option("--preset", nt_preset, "model preset: paper, desk, harness, micro")->capture_default_str();
  nt->add_option("--model-config", nt_model_json, "model config JSON (overrides --preset)")->check(CLI::ExistingFile);
  nt->add_option("--init-seed", nt_init_seed, "parameter init seed")->capture_default_str();
  nt->add_option("--out", nt_out, "output checkpoint directory")->required();
  nt->add_option("--log", nt_log, "per-step JSON lines log");
  nt_flags.add(nt);
  report_opt(nt);
  nt->callback([&] {
    action = [&] {
      const auto data = manifest_stream(nt_manifest, nt_keys, nt_dirs);
      Checkpoint ck;
      if (!nt_init.empty()) {
        ck = load_checkpoint(nt_init);
      } else {
        if (nt_subword.empty()) fail_validation("nmt-train needs --subword for a new model or --checkpoint to continue");
        auto cfg = nt_model_json.empty() ? model_preset(nt_preset) : model_config_from_json(json::parse(read_file(nt_model_json)));
        ck = init_model(cfg, load_trained_subword(nt_subword), nt_init_seed);
      }
      const auto tc = nt_flags.config();
      const auto r = train(ck, encode_stream(ck, data), tc);
      save_checkpoint(nt_out, ck);
      if (!nt_log.empty()) write_file(nt_log, train_log(r));
      return json{{"checkpoint", nt_out}, {"digest", checkpoint_digest(ck)}, {"step", ck.step},
                  {"train_config", to_json(tc)}, {"data", counts_json(data.counts)}, {"train", train_summary(r)}};
    };
  });

  // translate
  auto* tr = app.add_subcommand("translate", "translate text with a checkpoint");
  std::string tr_ck, tr_in = "-", tr_out = "-", tr_lang;
  TranslateOptions tr_opt;
  tr->add_option("--checkpoint", tr_ck, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--tgt-lang", tr_lang, "target language tag")->required();
  tr->add_option("--input", tr_in, "source text ('-' for stdin)")->capture_default_str();
  tr->add_option("--output", tr_out, "output ('-' for stdout)")->capture_default_str();
  tr->add_option("--beam", tr_opt.beam, "beam width")->capture_default_str();
  tr->add_option("--max-len", tr_opt.max_len, "maximum output length in pieces")->capture_default_str();
  report_opt(tr);
  tr->callback([&] {
    action = [&] {
      auto ck = load_checkpoint(tr_ck);
      const auto src = read_lines(tr_in, "input");
      const auto hyps = translate(ck, src, LangTag(tr_lang), tr_opt);
      write_output(tr_out, joined(hyps));
      return json{{"checkpoint", checkpoint_digest(ck)}, {"segments", hyps.size()}, {"beam", tr_opt.beam},
                  {"max_len", tr_opt.max_len}, {"hypotheses_hash", joined_hash(hyps)}};
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "translate a test bitext and score it (report feeds `significance`)");
  std::string ev_ck, ev_manifest, ev_key, ev_dir = "to-pivot", ev_hyp;
  EvalConfig ev_cfg;
  ev->add_option("--checkpoint", ev_ck, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--manifest", ev_manifest, "corpus manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--key", ev_key, "test bitext key")->required();
  ev->add_option("--direction", ev_dir, "to-pivot or from-pivot")->capture_default_str();
  ev->add_option("--beam", ev_cfg.translate.beam, "beam width")->capture_default_str();
  ev->add_option("--max-len", ev_cfg.translate.max_len, "maximum output length")->capture_default_str();
  ev->add_flag("--zero-shot", ev_cfg.zero_shot, "the test language is unseen in training");
  ev->add_option("--hyp", ev_hyp, "also write the hypotheses");
  report_opt(ev);
  ev->callback([&] {
    action = [&] {
      auto ck = load_checkpoint(ev_ck);
      const auto test = load_manifest(ev_manifest).load_bitext(ev_key);
      const auto dir = parse_direction(ev_dir);
      if (ev_cfg.zero_shot && dir == Direction::kFromPivot && !ck.vocab.find(control_token(test.src_lang)))
        assign_control_token(ck.vocab, test.src_lang);
      auto run = eval_run(ck, test, dir, ev_cfg);
      if (!ev_hyp.empty()) write_lines(ev_hyp, run.hypotheses);
      std::cout << "BLEU " << run.bleu.score << "\n";
      return run.report;
    };
  });

  // adapt
  auto* ad = app.add_subcommand("adapt", "adapt a checkpoint to a new language (dir or dyn)");
  std::string ad_mode = "dir", ad_ck, ad_spm, ad_lang, ad_out, ad_manifest, ad_key, ad_selected, ad_log;
  std::vector<std::string> ad_dirs{"to-pivot"};
  std::vector<int> ad_candidates{1000, 2000, 4000, 8000};
  std::uint64_t ad_seed = 1;
  TrainFlags ad_flags;
  ad_flags.steps = 0;
  ad->add_option("--mode", ad_mode, "dir or dyn")->capture_default_str();
  ad->add_option("--checkpoint", ad_ck, "pretrained checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ad->add_option("--lang", ad_lang, "language tag of the new language")->required();
  ad->add_option("--spm", ad_spm, "new subword model JSON (dyn; default: search over --candidates)")->check(CLI::ExistingFile);
  ad->add_option("--candidates", ad_candidates, "merge counts for the overlap search (dyn)")->capture_default_str();
  ad->add_option("--seed", ad_seed, "init seed for new rows (dyn)")->capture_default_str();
  ad->add_option("--manifest", ad_manifest, "corpus manifest holding the LRL train bitext")->check(CLI::ExistingFile);
  ad->add_option("--key", ad_key, "LRL train bitext key");
  ad->add_option("--selected", ad_selected, "selected HRL pairs TSV from `select`")->check(CLI::ExistingFile);
  ad->add_option("--direction", ad_dirs, "training directions")->capture_default_str();
  ad->add_option("--out", ad_out, "output checkpoint directory")->required();
  ad->add_option("--log", ad_log, "per-step JSON lines log");
  ad_flags.add(ad, "--train-seed");
  report_opt(ad);
  ad->callback([&] {
    action = [&] {
      const auto mode = parse_adapt_mode(ad_mode);
      const LangTag lang(ad_lang);
      const auto pre = load_checkpoint(ad_ck);
      PairStream data;
      if (!ad_manifest.empty()) {
        if (ad_key.empty()) fail_validation("--manifest needs --key for the LRL train bitext");
        std::optional<PairStream> selected;
        if (!ad_selected.empty()) selected = stream_from_tsv(read_file(ad_selected));
        std::vector<Direction> dirs;
        for (const auto& d : ad_dirs) dirs.push_back(parse_direction(d));
        data = adaptation_stream(load_manifest(ad_manifest).load_bitext(ad_key), selected ? &*selected : nullptr, dirs);
      }
      if (ad_flags.steps > 0 && data.size() == 0) fail_validation("training steps requested without --manifest/--key data");
      Checkpoint ck;
      AdaptRun run;
      if (mode == AdaptMode::kDir) {
        ck = pre.clone();
        if (ad_flags.steps > 0)
          run = dir_adapt(ck, lang, data, ad_flags.config());
        else
          run.report = dir_adapt_prepare(ck, lang);
      } else {
        TrainedSubword next;
        if (!ad_spm.empty()) {
          next = load_trained_subword(ad_spm);
        } else {
          if (data.size() == 0) fail_validation("dyn adaptation needs --spm or training data to learn one from");
          const auto corpora = both_sides(data);
          std::vector<const MonoCorpus*> ptrs;
          for (const auto& c : corpora) ptrs.push_back(&c);
          auto search = search_overlap_size(ptrs, pre.vocab, ad_candidates, dyn_subword_options(pre, lang));
          run.report.overlap_table = search.table;
          next = std::move(search.best);
        }
        auto table = run.report.overlap_table;
        ck = dyn_adapt(pre, next, ad_seed, lang, &run.report);
        run.report.overlap_table = table;
        if (ad_flags.steps > 0) {
          const auto e = encode_stream(ck, data);
          run.unk_tokens = e.unk_tokens;
          run.train = train(ck, e, ad_flags.config());
        }
      }
      save_checkpoint(ad_out, ck);
      if (!ad_log.empty()) write_file(ad_log, train_log(run.train));
      auto j = to_json(run.report);
      j["checkpoint"] = ad_out;
      j["digest"] = checkpoint_digest(ck);
      j["train"] = train_summary(run.train);
      if (ad_flags.steps > 0) j["train_config"] = to_json(ad_flags.config());
      return j;
    };
  });

  // bleu
  auto* bl = app.add_subcommand("bleu", "corpus BLEU of a hypothesis file against a reference file");
  std::string bl_hyp, bl_ref;
  bl->add_option("--hyp", bl_hyp, "hypotheses, one per line")->required()->check(CLI::ExistingFile);
  bl->add_option("--ref", bl_ref, "references, one per line")->required()->check(CLI::ExistingFile);
  report_opt(bl);
  bl->callback([&] {
    action = [&] {
      auto split = [](const std::string& path) {
        std::vector<std::string> lines;
        std::string text = read_file(path);
        std::size_t start = 0;
        while (start < text.size()) {
          auto end = text.find('\n', start);
          if (end == std::string::npos) end = text.size();
          lines.push_back(text.substr(start, end - start));
          start = end + 1;
        }
        return lines;
      };
      const auto hyps = split(bl_hyp), refs = split(bl_ref);
      const auto segs = corpus_stats(hyps, refs);
      const auto b = bleu_from_stats(sum_stats(segs));
      std::cout << "BLEU " << b.score << "\n";
      json stats = json::array();
      for (const auto& s : segs) stats.push_back(to_json(s));
      return json{{"bleu", to_json(b)}, {"segments", segs.size()}, {"hyp", git_file_hash(bl_hyp)},
                  {"ref", git_file_hash(bl_ref)}, {"segment_stats", stats}};
    };
  });

  // significance
  auto* sig = app.add_subcommand("significance", "paired bootstrap test between two evaluation reports");
  std::string sig_a, sig_b;
  std::uint64_t sig_seed = 1;
  int sig_resamples = 1000;
  double sig_alpha = 0.05;
  sig->add_option("--a", sig_a, "report of system A")->required()->check(CLI::ExistingFile);
  sig->add_option("--b", sig_b, "report of system B")->required()->check(CLI::ExistingFile);
  sig->add_option("--seed", sig_seed, "resampling seed")->capture_default_str();
  sig->add_option("--resamples", sig_resamples, "number of resamples")->capture_default_str();
  sig->add_option("--alpha", sig_alpha, "significance level")->capture_default_str();
  report_opt(sig);
  sig->callback([&] {
    action = [&] {
      const auto a = segment_stats_from_report(json::parse(read_file(sig_a)));
      const auto b = segment_stats_from_report(json::parse(read_file(sig_b)));
      const auto r = bootstrap(a, b, sig_resamples, sig_seed);
      std::cout << "A " << r.observed_a << "  B " << r.observed_b << "  winner " << r.winner << "  p " << r.p_value
                << (r.significant(sig_alpha) ? "  significant" : "") << "\n";
      auto j = to_json(r);
      j["significant"] = r.significant(sig_alpha);
      j["alpha"] = sig_alpha;
      j["seed"] = sig_seed;
      return j;
    };
  });

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "run a full experiment from a JSON config (cached per stage)");
  std::string pl_config, pl_out;
  pl->add_option("--config", pl_config, "experiment config JSON")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", pl_out, "experiment directory")->required();
  report_opt(pl);
  pl->callback([&] {
    action = [&] {
      const auto cfg = load_experiment_config(pl_config);
      const auto r = run_pipeline(cfg, pl_out, &std::cerr);
      std::cout << r.summary_table;
      json stages = json::array();
      for (const auto& s : r.stages) stages.push_back({{"stage", s.name}, {"ran", s.ran}, {"key", s.key}, {"seconds", s.seconds}});
      return json{{"summary", r.summary}, {"stages", stages}};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    // name unknown flags even when another error (e.g. a missing option) came first
    const auto extra = app.remaining(true);
    if (!extra.empty() && !dynamic_cast<const CLI::ExtrasError*>(&e)) {
      std::cerr << "The following arguments were not expected: " << CLI::detail::join(extra, " ") << "\n";
      return 1;
    }
    app.exit(e);
    return 1;
  }
  try {
    write_report(report_path, action());
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kValidation ? 1 : 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
