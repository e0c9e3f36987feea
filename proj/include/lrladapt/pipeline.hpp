#pragma once

// The end-to-end experiment: corpus -> subword -> lm -> select -> pretrain ->
// zeroshot -> adapt -> eval -> baseline -> summary.
//
// Every stage writes into its own directory under the experiment directory
// and finishes with a `stage.json` holding its cache key, the config hash, the
// files it produced and its report. A stage is skipped when its key matches
// and all of its outputs are present; once a stage reruns, every stage that
// depends on it reruns too. Stochastic stages draw their seeds from the
// global seed with derive_seed(seed, "<stage>-<purpose>").

#include <chrono>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/experiment.hpp"
#include "lrladapt/synth.hpp"

namespace lrladapt {

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::optional<fs::path> manifest;  // existing corpus, or
  std::optional<FamilySpec> synth;   // a generated family
  LangTag lrl{"lrl"};
  std::vector<LangTag> hrls;           // empty: every other train bitext
  std::optional<LangTag> closest_hrl;  // empty: lowest mean PP under the LRL LM
  int merges = 8000;
  int spare_slots = 2;
  int lm_merges = 8000;
  LmOptions lm;
  std::vector<Strategy> strategies{Strategy::kPplx, Strategy::kOne, Strategy::kFam, Strategy::kRand};
  std::optional<std::size_t> budget;  // empty: size of the closest pool
  ModelConfig model = model_preset("desk");
  std::vector<Direction> pretrain_directions{Direction::kToPivot, Direction::kFromPivot};
  TrainConfig pretrain;
  std::vector<AdaptMode> modes{AdaptMode::kDir, AdaptMode::kDyn};
  std::vector<int> dyn_candidates{1000, 2000, 4000, 8000};
  TrainConfig adapt;
  std::vector<Direction> directions{Direction::kToPivot, Direction::kFromPivot};
  TranslateOptions translate;
  bool zero_shot = true;
  bool baseline = true;
  int baseline_merges = 8000;
};

namespace detail {

template <typename T, typename F>
nlohmann::json names(const std::vector<T>& xs, F name) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& x : xs) j.push_back(name(x));
  return j;
}

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail_validation(where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) fail_validation("unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json corpus = json::object();
  if (c.manifest) corpus["manifest"] = c.manifest->string();
  if (c.synth) corpus["synth"] = to_json(*c.synth);
  auto tags = [](const LangTag& l) { return l.code(); };
  auto dirs = [](Direction d) { return to_string(d); };
  json train_pre = to_json(c.pretrain);
  train_pre["directions"] = detail::names(c.pretrain_directions, dirs);
  return {{"name", c.name},
          {"seed", c.seed},
          {"corpus", corpus},
          {"lrl", c.lrl.code()},
          {"hrls", detail::names(c.hrls, tags)},
          {"closest_hrl", c.closest_hrl ? json(c.closest_hrl->code()) : json(nullptr)},
          {"subword", {{"merges", c.merges}, {"spare_slots", c.spare_slots}}},
          {"lm", {{"merges", c.lm_merges}, {"order", c.lm.order}, {"discount", c.lm.discount},
                  {"unk", c.lm.unk == UnkMode::kSingleton ? "singleton" : "none"}}},
          {"selection", {{"strategies", detail::names(c.strategies, [](Strategy s) { return to_string(s); })},
                         {"budget", c.budget ? json(*c.budget) : json(nullptr)}}},
          {"model", to_json(c.model)},
          {"pretrain", train_pre},
          {"adapt", {{"modes", detail::names(c.modes, [](AdaptMode m) { return to_string(m); })},
                     {"candidates", c.dyn_candidates},
                     {"train", to_json(c.adapt)}}},
          {"eval", {{"directions", detail::names(c.directions, dirs)},
                    {"beam", c.translate.beam},
                    {"max_len", c.translate.max_len},
                    {"zero_shot", c.zero_shot}}},
          {"baseline", {{"enabled", c.baseline}, {"merges", c.baseline_merges}}}};
}

inline void validate(const ExperimentConfig& c) {
  if (c.manifest.has_value() == c.synth.has_value()) fail_validation("corpus needs exactly one of 'manifest' or 'synth'");
  if (c.manifest && !fs::exists(*c.manifest)) fail_validation("corpus manifest " + c.manifest->string() + " does not exist");
  if (c.synth) {
    validate(*c.synth);
    if (c.synth->base != c.lrl) fail_validation("lrl '" + c.lrl.code() + "' is not the synthetic family's base language");
  }
  if (c.merges < 0 || c.lm_merges < 0 || c.baseline_merges < 0) fail_validation("merge counts must be >= 0");
  if (c.spare_slots < 1) fail_validation("subword.spare_slots must be >= 1 so the LRL tag has a slot");
  if (c.strategies.empty()) fail_validation("selection.strategies is empty");
  if (c.modes.empty()) fail_validation("adapt.modes is empty");
  if (c.directions.empty() || c.pretrain_directions.empty()) fail_validation("direction lists must be non-empty");
  for (auto m : c.modes)
    if (m == AdaptMode::kDyn && c.dyn_candidates.empty()) fail_validation("adapt.candidates is empty");
  if (c.budget && *c.budget < 1) fail_validation("selection.budget must be >= 1");
  if (c.translate.beam < 1 || c.translate.max_len < 1) fail_validation("eval beam and max_len must be >= 1");
  for (const auto& h : c.hrls)
    if (h == c.lrl) fail_validation("the LRL cannot also be an HRL pool");
  validate(c.pretrain);
  validate(c.adapt);
  auto model = c.model;
  model.vocab_size = std::max(model.vocab_size, 5);  // filled in from the subword model later
  validate(model);
}

// Relative manifest paths resolve against `base_dir` (the config's directory).
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  using detail::check_keys;
  ExperimentConfig c;
  try {
    check_keys(j, "config", {"name", "seed", "corpus", "lrl", "hrls", "closest_hrl", "subword", "lm", "selection", "model",
                             "pretrain", "adapt", "eval", "baseline"});
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    const auto& corpus = j.at("corpus");
    check_keys(corpus, "corpus", {"manifest", "synth"});
    if (corpus.contains("manifest")) {
      fs::path p = corpus["manifest"].get<std::string>();
      c.manifest = p.is_absolute() ? p : base_dir / p;
    }
    if (corpus.contains("synth")) c.synth = family_spec_from_json(corpus["synth"]);
    c.lrl = LangTag(j.value("lrl", c.synth ? c.synth->base.code() : std::string("lrl")));
    for (const auto& h : j.value("hrls", nlohmann::json::array())) c.hrls.emplace_back(h.get<std::string>());
    if (j.contains("closest_hrl") && !j["closest_hrl"].is_null()) c.closest_hrl = LangTag(j["closest_hrl"].get<std::string>());
    if (j.contains("subword")) {
      const auto& s = j["subword"];
      check_keys(s, "subword", {"merges", "spare_slots"});
      c.merges = s.value("merges", c.merges);
      c.spare_slots = s.value("spare_slots", c.spare_slots);
    }
    if (j.contains("lm")) {
      const auto& s = j["lm"];
      check_keys(s, "lm", {"merges", "order", "discount", "unk"});
      c.lm_merges = s.value("merges", c.lm_merges);
      c.lm.order = s.value("order", c.lm.order);
      c.lm.discount = s.value("discount", c.lm.discount);
      const auto unk = s.value("unk", std::string("singleton"));
      if (unk != "singleton" && unk != "none") fail_validation("lm.unk must be 'singleton' or 'none'");
      c.lm.unk = unk == "singleton" ? UnkMode::kSingleton : UnkMode::kNone;
    }
    if (j.contains("selection")) {
      const auto& s = j["selection"];
      check_keys(s, "selection", {"strategies", "budget"});
      if (s.contains("strategies")) {
        c.strategies.clear();
        for (const auto& x : s["strategies"]) c.strategies.push_back(parse_strategy(x.get<std::string>()));
      }
      if (s.contains("budget") && !s["budget"].is_null()) c.budget = s["budget"].get<std::size_t>();
    }
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("pretrain")) {
      auto p = j["pretrain"];
      if (p.contains("directions")) {
        c.pretrain_directions.clear();
        for (const auto& d : p["directions"]) c.pretrain_directions.push_back(parse_direction(d.get<std::string>()));
        p.erase("directions");
      }
      c.pretrain = train_config_from_json(p);
    }
    if (j.contains("adapt")) {
      const auto& a = j["adapt"];
      check_keys(a, "adapt", {"modes", "candidates", "train"});
      if (a.contains("modes")) {
        c.modes.clear();
        for (const auto& m : a["modes"]) c.modes.push_back(parse_adapt_mode(m.get<std::string>()));
      }
      if (a.contains("candidates")) c.dyn_candidates = a["candidates"].get<std::vector<int>>();
      if (a.contains("train")) c.adapt = train_config_from_json(a["train"]);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      check_keys(e, "eval", {"directions", "beam", "max_len", "zero_shot"});
      if (e.contains("directions")) {
        c.directions.clear();
        for (const auto& d : e["directions"]) c.directions.push_back(parse_direction(d.get<std::string>()));
      }
      c.translate.beam = e.value("beam", c.translate.beam);
      c.translate.max_len = e.value("max_len", c.translate.max_len);
      c.zero_shot = e.value("zero_shot", c.zero_shot);
    }
    if (j.contains("baseline")) {
      const auto& b = j["baseline"];
      check_keys(b, "baseline", {"enabled", "merges"});
      c.baseline = b.value("enabled", c.baseline);
      c.baseline_merges = b.value("merges", c.baseline_merges);
    }
  } catch (const nlohmann::json::exception& e) {
    fail_validation(std::string("experiment config: ") + e.what());
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail_validation("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

inline std::string config_hash(const ExperimentConfig& c) { return sha1_hex(to_json(c).dump()); }

struct StageOutcome {
  std::string name;
  bool ran = false;
  std::string key;
  double seconds = 0.0;
};

struct PipelineResult {
  std::vector<StageOutcome> stages;
  nlohmann::json summary;
  std::string summary_table;
};

struct StageContext {
  fs::path dir;
  nlohmann::json report = nlohmann::json::object();
  std::vector<std::string> outputs;  // relative to `dir`

  void output(const std::string& rel) { outputs.push_back(rel); }
};

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, fs::path dir) : cfg_(std::move(cfg)), dir_(std::move(dir)) {
    validate(cfg_);
    plan();
  }

  std::vector<std::string> stage_names() const {
    std::vector<std::string> out;
    for (const auto& s : stages_) out.push_back(s.name);
    return out;
  }

  PipelineResult run(std::ostream* log = nullptr) {
    fs::create_directories(dir_);
    const auto chash = config_hash(cfg_);
    write_file(dir_ / "config.json", to_json(cfg_).dump(2) + "\n");
    PipelineResult result;
    std::map<std::string, std::string> keys;
    std::set<std::string> reran;
    for (const auto& st : stages_) {
      nlohmann::json key_src{{"stage", st.name}, {"config", st.config}};
      bool forced = false;
      for (const auto& d : st.deps) {
        key_src["deps"][d] = keys.at(d);
        forced = forced || reran.count(d);
      }
      const auto key = sha1_hex(key_src.dump());
      keys[st.name] = key;
      const auto sdir = dir_ / st.name;
      if (!forced && up_to_date(sdir, key)) {
        result.stages.push_back({st.name, false, key, 0.0});
        if (log) *log << "[" << st.name << "] cached\n";
        continue;
      }
      fs::remove_all(sdir);
      fs::create_directories(sdir);
      StageContext ctx{sdir, nlohmann::json::object(), {}};
      const auto t0 = std::chrono::steady_clock::now();
      if (log) *log << "[" << st.name << "] running\n" << std::flush;
      auto record = [&](const std::string& status) {
        nlohmann::json j{{"stage", st.name}, {"key", key},         {"config_hash", chash}, {"status", status},
                         {"deps", st.deps},  {"config", st.config}, {"outputs", ctx.outputs}, {"report", ctx.report}};
        write_file(sdir / "stage.json", j.dump(2) + "\n");
      };
      try {
        st.body(ctx);
      } catch (const Error& e) {
        ctx.report["error"] = e.what();
        record("failed");
        throw Error(e.kind(), "stage '" + st.name + "' failed: " + e.what() + " (report: " + (sdir / "stage.json").string() + ")");
      } catch (const std::exception& e) {
        ctx.report["error"] = e.what();
        record("failed");
        throw Error(ErrorKind::kRuntime, "stage '" + st.name + "' failed: " + e.what() + " (report: " + (sdir / "stage.json").string() + ")");
      }
      record("ok");
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.stages.push_back({st.name, true, key, secs});
      reran.insert(st.name);
      if (log) *log << "[" << st.name << "] done in " << std::fixed << std::setprecision(1) << secs << "s\n" << std::flush;
    }
    result.summary = nlohmann::json::parse(read_file(dir_ / "summary" / "summary.json"));
    result.summary_table = read_file(dir_ / "summary" / "summary.tsv");
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : result.stages) stages.push_back({{"stage", s.name}, {"ran", s.ran}, {"key", s.key}, {"seconds", s.seconds}});
    write_file(dir_ / "pipeline.json", nlohmann::json{{"config_hash", chash}, {"stages", stages}}.dump(2) + "\n");
    return result;
  }

 private:
  struct Stage {
    std::string name;
    std::vector<std::string> deps;
    nlohmann::json config;
    std::function<void(StageContext&)> body;
  };

  struct Data {
    CorpusManifest manifest;
    Bitext lrl_train, lrl_dev, lrl_test;
    std::vector<ScoredPool> pools;  // unscored
  };

  static bool up_to_date(const fs::path& sdir, const std::string& key) {
    const auto f = sdir / "stage.json";
    if (!fs::exists(f)) return false;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(f));
    } catch (const nlohmann::json::exception&) {
      return false;
    }
    if (j.value("key", "") != key || j.value("status", "") != "ok") return false;
    for (const auto& o : j.value("outputs", nlohmann::json::array()))
      if (!fs::exists(sdir / o.get<std::string>())) return false;
    return true;
  }

  std::uint64_t seed(const std::string& purpose) const { return derive_seed(cfg_.seed, purpose); }

  Data load_data() const {
    Data d;
    d.manifest = load_manifest(dir_ / "corpus" / "manifest.json");
    auto need = [&](Role role) -> const ManifestEntry& {
      const auto* e = d.manifest.find(cfg_.lrl, role);
      if (!e) fail_validation("corpus has no " + to_string(role) + " bitext for the LRL '" + cfg_.lrl.code() + "'");
      return *e;
    };
    d.lrl_train = d.manifest.load_bitext(need(Role::kTrain).key);
    if (const auto* dev = d.manifest.find(cfg_.lrl, Role::kDev)) d.lrl_dev = d.manifest.load_bitext(dev->key);
    d.lrl_test = d.manifest.load_bitext(need(Role::kTest).key);
    std::vector<LangTag> hrls = cfg_.hrls;
    if (hrls.empty())
      for (const auto& e : d.manifest.entries)
        if (e.role == Role::kTrain && e.is_bitext() && e.lang != cfg_.lrl) hrls.push_back(e.lang);
    if (hrls.empty()) fail_validation("corpus has no HRL train bitexts");
    for (const auto& h : hrls) {
      const auto* e = d.manifest.find(h, Role::kTrain);
      if (!e) fail_validation("corpus has no train bitext for HRL '" + h.code() + "'");
      d.pools.push_back({e->key, d.manifest.load_bitext(e->key), {}});
    }
    return d;
  }

  std::vector<Bitext> pool_bitexts(const Data& d) const {
    std::vector<Bitext> out;
    for (const auto& p : d.pools) out.push_back(p.bitext);
    return out;
  }

  static void write_train_log(StageContext& ctx, const TrainResult& r) {
    std::string log;
    for (const auto& s : r.log) log += to_json(s).dump() + "\n";
    write_file(ctx.dir / "log.jsonl", log);
    ctx.output("log.jsonl");
    ctx.report["train"] = {{"examples", r.examples},
                           {"dropped_too_long", r.dropped_too_long},
                           {"unk_tokens", r.unk_tokens},
                           {"steps", r.log.size()},
                           {"final_loss", r.log.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.log.back().loss)}};
  }

  void evaluate(StageContext& ctx, Checkpoint& ck, const Bitext& test, bool zero_shot) const {
    EvalConfig ec{cfg_.translate, zero_shot};
    for (auto dir : cfg_.directions) {
      auto c = ck.clone();
      if (zero_shot && dir == Direction::kFromPivot && !c.vocab.find(control_token(cfg_.lrl)))
        assign_control_token(c.vocab, cfg_.lrl);
      auto run = eval_run(c, test, dir, ec);
      const auto stem = to_string(dir);
      write_lines(ctx.dir / (stem + ".hyp"), run.hypotheses);
      write_file(ctx.dir / (stem + ".json"), run.report.dump(2) + "\n");
      ctx.output(stem + ".hyp");
      ctx.output(stem + ".json");
      ctx.report["bleu"][stem] = run.bleu.score;
    }
  }

  static std::string adapt_stage(Strategy s, AdaptMode m) { return "adapt-" + to_string(s) + "-" + to_string(m); }
  static std::string eval_stage(Strategy s, AdaptMode m) { return "eval-" + to_string(s) + "-" + to_string(m); }

  void plan() {
    using nlohmann::json;
    const json full = to_json(cfg_);

    json corpus_cfg = full["corpus"];
    if (cfg_.manifest) {
      // the key follows the corpus contents, not just the path
      const auto m = load_manifest(*cfg_.manifest);
      json hashes = json::object();
      for (const auto& e : m.entries)
        for (const auto& p : {e.path, e.src, e.tgt})
          if (p) hashes[*p] = git_file_hash(m.resolve(*p));
      corpus_cfg["files"] = hashes;
    }
    stages_.push_back({"corpus", {}, corpus_cfg, [this](StageContext& ctx) { stage_corpus(ctx); }});
    stages_.push_back({"subword", {"corpus"}, {{"lrl", full["lrl"]}, {"hrls", full["hrls"]}, {"subword", full["subword"]}},
                       [this](StageContext& ctx) { stage_subword(ctx); }});
    stages_.push_back({"lm", {"corpus"}, {{"lrl", full["lrl"]}, {"hrls", full["hrls"]}, {"lm", full["lm"]}},
                       [this](StageContext& ctx) { stage_lm(ctx); }});
    stages_.push_back({"select", {"lm"},
                       {{"selection", full["selection"]}, {"closest_hrl", full["closest_hrl"]}, {"seed", cfg_.seed}},
                       [this](StageContext& ctx) { stage_select(ctx); }});
    stages_.push_back({"pretrain", {"subword"},
                       {{"model", full["model"]}, {"pretrain", full["pretrain"]}, {"seed", cfg_.seed}},
                       [this](StageContext& ctx) { stage_pretrain(ctx); }});
    if (cfg_.zero_shot)
      stages_.push_back({"zeroshot", {"pretrain"}, {{"eval", full["eval"]}}, [this](StageContext& ctx) { stage_zeroshot(ctx); }});
    for (auto s : cfg_.strategies)
      for (auto m : cfg_.modes) {
        json c{{"strategy", to_string(s)}, {"mode", to_string(m)}, {"adapt", full["adapt"]},
               {"directions", full["eval"]["directions"]}, {"seed", cfg_.seed}};
        stages_.push_back({adapt_stage(s, m), {"pretrain", "select"}, c, [this, s, m](StageContext& ctx) { stage_adapt(ctx, s, m); }});
        stages_.push_back({eval_stage(s, m), {adapt_stage(s, m)}, {{"eval", full["eval"]}},
                           [this, s, m](StageContext& ctx) { stage_eval(ctx, s, m); }});
      }
    if (cfg_.baseline)
      stages_.push_back({"baseline", {"corpus"},
                         {{"model", full["model"]}, {"baseline", full["baseline"]}, {"train", full["adapt"]["train"]},
                          {"eval", full["eval"]}, {"seed", cfg_.seed}},
                         [this](StageContext& ctx) { stage_baseline(ctx); }});
    std::vector<std::string> all;
    for (const auto& s : stages_) all.push_back(s.name);
    stages_.push_back({"summary", all, json::object(), [this](StageContext& ctx) { stage_summary(ctx); }});
  }

  void stage_corpus(StageContext& ctx) const {
    CorpusManifest m;
    if (cfg_.synth) {
      const auto fam = generate_family(*cfg_.synth);
      m = write_family(fam, ctx.dir);
      ctx.output("family.json");
    } else {
      m = load_manifest(*cfg_.manifest);
      for (auto& e : m.entries)
        for (auto* p : {&e.path, &e.src, &e.tgt})
          if (*p) *p = fs::absolute(m.resolve(**p)).string();
      m.base_dir = ctx.dir;
      save_manifest(ctx.dir / "manifest.json", m);
    }
    ctx.output("manifest.json");
    json_sizes(ctx, m);
  }

  static void json_sizes(StageContext& ctx, const CorpusManifest& m) {
    for (const auto& e : m.entries) {
      const auto n = e.is_bitext() ? m.load_bitext(e.key).size() : m.load_mono(e.key).segments.size();
      ctx.report["segments"][e.key] = n;
    }
    ctx.report["pivot"] = m.pivot.code();
  }

  void stage_subword(StageContext& ctx) const {
    const auto d = load_data();
    SubwordOptions opt;
    opt.merges = cfg_.merges;
    opt.spare_control_slots = cfg_.spare_slots;
    opt.control_tokens.push_back(control_token(d.manifest.pivot));
    for (const auto& p : d.pools) opt.control_tokens.push_back(control_token(p.lang()));
    const auto sw = train_joint_subword(both_sides(pool_bitexts(d)), opt);
    save_subword(ctx.dir / "model.json", sw.model);
    save_vocab(ctx.dir / "vocab.tsv", sw.vocab);
    ctx.output("model.json");
    ctx.output("vocab.tsv");
    ctx.report = {{"requested_merges", sw.model.requested_merges},
                  {"merges", sw.model.merges.size()},
                  {"vocab_size", sw.vocab.size()},
                  {"reserved", sw.model.reserved}};
  }

  void stage_lm(StageContext& ctx) const {
    const auto d = load_data();
    const auto lrl_mono = source_side(d.lrl_train);
    SubwordOptions opt;
    opt.merges = cfg_.lm_merges;
    const auto sw = train_subword(lrl_mono, opt);
    const auto lm = train_lm(lrl_mono, sw.model, cfg_.lm);
    save_subword(ctx.dir / "subword.json", sw.model);
    save_lm(ctx.dir / "lm.bin", lm);
    ctx.output("subword.json");
    ctx.output("lm.bin");
    fs::create_directories(ctx.dir / "scores");
    double best = 0.0;
    for (const auto& p : d.pools) {
      const auto scored = score_corpus(lm, sw.model, source_side(p.bitext), p.key);
      const auto rel = "scores/" + p.lang().code() + ".tsv";
      write_file(ctx.dir / rel, scores_to_tsv(scored.segments));
      ctx.output(rel);
      ctx.report["mean_pp"][p.lang().code()] = scored.summary.mean_pp;
      ctx.report["median_pp"][p.lang().code()] = scored.summary.median_pp;
      if (!ctx.report.contains("closest_hrl") || scored.summary.mean_pp < best) {
        best = scored.summary.mean_pp;
        ctx.report["closest_hrl"] = p.lang().code();
      }
    }
    ctx.report["lm_merges"] = sw.model.merges.size();
  }

  LangTag closest_hrl() const {
    if (cfg_.closest_hrl) return *cfg_.closest_hrl;
    const auto j = nlohmann::json::parse(read_file(dir_ / "lm" / "stage.json"));
    return LangTag(j.at("report").at("closest_hrl").get<std::string>());
  }

  void stage_select(StageContext& ctx) const {
    auto d = load_data();
    for (auto& p : d.pools) p.scores = scores_from_tsv(read_file(dir_ / "lm" / "scores" / (p.lang().code() + ".tsv")));
    const auto closest = closest_hrl();
    ctx.report["closest_hrl"] = closest.code();
    for (auto s : cfg_.strategies) {
      SelectionConfig sc;
      sc.strategy = s;
      sc.budget = cfg_.budget;
      sc.closest_hrl = closest;
      if (s == Strategy::kRand) sc.seed = seed("select-rand");
      const auto sel = select(d.pools, sc);
      const auto rel = to_string(s) + ".tsv";
      write_file(ctx.dir / rel, stream_to_tsv(sel.pairs));
      ctx.output(rel);
      auto r = to_json(sel.report);
      r.erase("segments");
      ctx.report["selections"][to_string(s)] = r;
    }
  }

  void stage_pretrain(StageContext& ctx) const {
    const auto d = load_data();
    TrainedSubword sw;
    sw.model = load_subword(dir_ / "subword" / "model.json");
    sw.vocab = build_vocabulary(sw.model);
    auto ck = init_model(cfg_.model, sw, seed("pretrain-init"));
    auto tc = cfg_.pretrain;
    tc.seed = seed("pretrain-train");
    const auto data = universal_stream(pool_bitexts(d), cfg_.pretrain_directions);
    const auto r = train(ck, encode_stream(ck, data), tc);
    save_checkpoint(ctx.dir / "checkpoint", ck);
    ctx.output("checkpoint/header.json");
    write_train_log(ctx, r);
    ctx.report["checkpoint"] = checkpoint_digest(ck);
    ctx.report["step"] = ck.step;
  }

  void stage_zeroshot(StageContext& ctx) const {
    const auto d = load_data();
    auto ck = load_checkpoint(dir_ / "pretrain" / "checkpoint");
    evaluate(ctx, ck, d.lrl_test, true);
  }

  void stage_adapt(StageContext& ctx, Strategy s, AdaptMode m) const {
    const auto d = load_data();
    const auto pre = load_checkpoint(dir_ / "pretrain" / "checkpoint");
    const auto selected = stream_from_tsv(read_file(dir_ / "select" / (to_string(s) + ".tsv")));
    const auto data = adaptation_stream(d.lrl_train, &selected, cfg_.directions);
    const auto name = adapt_stage(s, m);
    AdaptSpec spec{m, cfg_.dyn_candidates, seed(name + "-init"), cfg_.adapt};
    spec.train.seed = seed(name + "-train");
    auto out = adapt_checkpoint(pre, cfg_.lrl, data, spec);
    save_checkpoint(ctx.dir / "checkpoint", out.ck);
    ctx.output("checkpoint/header.json");
    write_train_log(ctx, out.run.train);
    ctx.report["adapt"] = to_json(out.run.report, false);
    ctx.report["data"] = counts_json(data.counts);
    ctx.report["checkpoint"] = checkpoint_digest(out.ck);
  }

  void stage_eval(StageContext& ctx, Strategy s, AdaptMode m) const {
    const auto d = load_data();
    auto ck = load_checkpoint(dir_ / adapt_stage(s, m) / "checkpoint");
    evaluate(ctx, ck, d.lrl_test, false);
  }

  void stage_baseline(StageContext& ctx) const {
    const auto d = load_data();
    const auto data = adaptation_stream(d.lrl_train, nullptr, cfg_.directions);
    auto tc = cfg_.adapt;
    tc.seed = seed("baseline-train");
    TrainResult r;
    auto ck = train_from_scratch(data, cfg_.baseline_merges, cfg_.model, seed("baseline-init"), tc, {}, &r);
    save_checkpoint(ctx.dir / "checkpoint", ck);
    ctx.output("checkpoint/header.json");
    write_train_log(ctx, r);
    evaluate(ctx, ck, d.lrl_test, false);
  }

  nlohmann::json stage_bleu(const std::string& stage) const {
    return nlohmann::json::parse(read_file(dir_ / stage / "stage.json")).at("report").at("bleu");
  }

  void stage_summary(StageContext& ctx) const {
    nlohmann::json rows = nlohmann::json::array();
    auto add = [&](const std::string& strategy, const std::string& mode, const nlohmann::json& bleu) {
      for (auto dir : cfg_.directions)
        rows.push_back({{"strategy", strategy}, {"mode", mode}, {"direction", to_string(dir)}, {"bleu", bleu.at(to_string(dir))}});
    };
    if (cfg_.zero_shot) add("-", "zero-shot", stage_bleu("zeroshot"));
    for (auto s : cfg_.strategies)
      for (auto m : cfg_.modes) add(to_string(s), to_string(m), stage_bleu(eval_stage(s, m)));
    if (cfg_.baseline) add("-", "scratch", stage_bleu("baseline"));
    const nlohmann::json summary{{"name", cfg_.name}, {"config_hash", config_hash(cfg_)}, {"rows", rows}};
    std::ostringstream tsv;
    tsv << "strategy\tmode";
    for (auto dir : cfg_.directions) tsv << "\t" << to_string(dir);
    tsv << "\n";
    for (std::size_t i = 0; i < rows.size(); i += cfg_.directions.size()) {
      tsv << rows[i]["strategy"].get<std::string>() << "\t" << rows[i]["mode"].get<std::string>();
      for (std::size_t k = 0; k < cfg_.directions.size(); ++k)
        tsv << "\t" << std::fixed << std::setprecision(2) << rows[i + k]["bleu"].get<double>();
      tsv << "\n";
    }
    write_file(ctx.dir / "summary.json", summary.dump(2) + "\n");
    write_file(ctx.dir / "summary.tsv", tsv.str());
    ctx.output("summary.json");
    ctx.output("summary.tsv");
    ctx.report = summary;
  }

  ExperimentConfig cfg_;
  fs::path dir_;
  std::vector<Stage> stages_;
};

inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log = nullptr) {
  return Pipeline(cfg, dir).run(log);
}

}  // namespace lrladapt
