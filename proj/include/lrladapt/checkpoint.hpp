#pragma once

// Model configuration and the named-tensor checkpoint of the toy translation
// model. Source and target share one joint vocabulary; with
// `shared_embeddings` the target embedding and the pre-softmax projection are
// the same tensor object.
//
// On disk a checkpoint is a directory:
//   header.json   config, step, training manifest, seed lineage, tensor index
//   tensors/*.f32 raw little-endian float32, row-major
//   vocab.tsv, subword.json

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lrladapt/corpus.hpp"
#include "lrladapt/error.hpp"
#include "lrladapt/rng.hpp"
#include "lrladapt/subword.hpp"
#include "lrladapt/util.hpp"

namespace lrladapt {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  std::string preset = "desk";
  int layers = 2;
  int heads = 4;
  int model_dim = 128;
  int ff_dim = 512;
  double dropout = 0.1;
  bool shared_embeddings = true;
  int max_len = 100;
  int vocab_size = 0;

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (c.layers < 1) fail_validation("model needs at least one layer");
  if (c.heads < 1 || c.model_dim < 1 || c.model_dim % c.heads != 0)
    fail_validation("model_dim " + std::to_string(c.model_dim) + " is not divisible by heads " + std::to_string(c.heads));
  if (c.ff_dim < 1) fail_validation("ff_dim must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail_validation("dropout must lie in [0,1)");
  if (c.max_len < 2) fail_validation("max_len must be >= 2");
  if (c.vocab_size < 5) fail_validation("vocabulary too small for the model");
}

// Named presets; the vocabulary size is filled in from the subword model.
inline ModelConfig model_preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "paper") {
    c.layers = 4, c.heads = 8, c.model_dim = 512, c.ff_dim = 2048, c.dropout = 0.3;
  } else if (name == "desk") {
    c.layers = 2, c.heads = 4, c.model_dim = 128, c.ff_dim = 512, c.dropout = 0.1;
  } else if (name == "harness") {
    c.layers = 1, c.heads = 2, c.model_dim = 48, c.ff_dim = 96, c.dropout = 0.0;
  } else if (name == "micro") {
    c.layers = 2, c.heads = 2, c.model_dim = 8, c.ff_dim = 12, c.dropout = 0.0;
  } else {
    fail_validation("unknown model preset '" + name + "' (paper, desk, harness, micro)");
  }
  return c;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"preset", c.preset},         {"layers", c.layers},   {"heads", c.heads},
          {"model_dim", c.model_dim},   {"ff_dim", c.ff_dim},   {"dropout", c.dropout},
          {"shared_embeddings", c.shared_embeddings}, {"max_len", c.max_len}, {"vocab_size", c.vocab_size}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c = model_preset(j.value("preset", std::string("desk")));
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.shared_embeddings = j.value("shared_embeddings", c.shared_embeddings);
  c.max_len = j.value("max_len", c.max_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  return c;
}

// ---------------------------------------------------------------------------
// tensor layout

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  enum class Init { kEmbedding, kXavier, kOnes, kZeros } init = Init::kXavier;
};

inline constexpr const char* kSrcEmbed = "src_embed";
inline constexpr const char* kTgtEmbed = "tgt_embed";
inline constexpr const char* kOutProj = "out_proj";

inline bool is_vocab_tensor(const std::string& name) { return name == kSrcEmbed || name == kTgtEmbed || name == kOutProj; }

// Every tensor implied by the config, in canonical order. The pre-softmax
// projection is listed even when it aliases the target embedding.
inline std::vector<TensorSpec> tensor_layout(const ModelConfig& c) {
  using I = TensorSpec::Init;
  const int d = c.model_dim, v = c.vocab_size, f = c.ff_dim;
  std::vector<TensorSpec> out{{kSrcEmbed, v, d, I::kEmbedding}, {kTgtEmbed, v, d, I::kEmbedding}, {kOutProj, v, d, I::kEmbedding}};
  auto ln = [&](const std::string& p) {
    out.push_back({p + ".g", 1, d, I::kOnes});
    out.push_back({p + ".b", 1, d, I::kZeros});
  };
  auto attn = [&](const std::string& p) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({p + "." + w, d, d, I::kXavier});
    for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({p + "." + b, 1, d, I::kZeros});
  };
  auto ff = [&](const std::string& p) {
    out.push_back({p + ".w1", d, f, I::kXavier});
    out.push_back({p + ".b1", 1, f, I::kZeros});
    out.push_back({p + ".w2", f, d, I::kXavier});
    out.push_back({p + ".b2", 1, d, I::kZeros});
  };
  for (int l = 0; l < c.layers; ++l) {
    const auto p = "enc." + std::to_string(l);
    ln(p + ".ln1");
    attn(p + ".self");
    ln(p + ".ln2");
    ff(p + ".ff");
  }
  ln("enc.ln");
  for (int l = 0; l < c.layers; ++l) {
    const auto p = "dec." + std::to_string(l);
    ln(p + ".ln1");
    attn(p + ".self");
    ln(p + ".ln2");
    attn(p + ".cross");
    ln(p + ".ln3");
    ff(p + ".ff");
  }
  ln("dec.ln");
  return out;
}

// Scaled-uniform initialization: embeddings U(-1/sqrt(d), 1/sqrt(d)), weight
// matrices U(-a, a) with a = sqrt(6 / (rows + cols)). Each tensor draws from
// its own stream derive_seed(seed, name), row-major, so a single row can be
// regenerated independently (see init_rows).
inline double init_bound(const TensorSpec& t, int model_dim) {
  if (t.init == TensorSpec::Init::kEmbedding) return 1.0 / std::sqrt(static_cast<double>(model_dim));
  return std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
}

template <typename S>
void init_rows(Mat<S>& m, const std::vector<int>& rows, double bound, Rng& rng) {
  for (int r : rows)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// checkpoint

struct SeedRecord {
  std::string stage;
  std::uint64_t seed = 0;
};

struct ManifestRecord {
  LangTag src;
  LangTag tgt;
  std::size_t pairs = 0;
};

template <typename S>
struct BasicCheckpoint {
  ModelConfig config;
  std::map<std::string, std::shared_ptr<Mat<S>>> tensors;
  std::int64_t step = 0;
  std::vector<ManifestRecord> manifest;  // every (src, tgt) pair ever trained on
  std::vector<SeedRecord> seeds;
  Vocabulary vocab;
  SubwordModel subword;

  Mat<S>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail_validation("checkpoint has no tensor '" + name + "'");
    return *it->second;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail_validation("checkpoint has no tensor '" + name + "'");
    return *it->second;
  }

  bool aliased(const std::string& a, const std::string& b) const {
    auto x = tensors.find(a), y = tensors.find(b);
    return x != tensors.end() && y != tensors.end() && x->second == y->second;
  }

  std::set<LangTag> trained_languages() const {
    std::set<LangTag> out;
    for (const auto& m : manifest) {
      out.insert(m.src);
      out.insert(m.tgt);
    }
    return out;
  }

  // Deep copy; aliasing is preserved.
  BasicCheckpoint clone() const {
    BasicCheckpoint c = *this;
    std::map<const Mat<S>*, std::shared_ptr<Mat<S>>> copies;
    for (auto& [name, ptr] : c.tensors) {
      auto it = copies.find(ptr.get());
      if (it == copies.end()) it = copies.emplace(ptr.get(), std::make_shared<Mat<S>>(*ptr)).first;
      ptr = it->second;
    }
    return c;
  }

  template <typename T>
  BasicCheckpoint<T> cast() const {
    BasicCheckpoint<T> c;
    c.config = config;
    c.step = step;
    c.manifest = manifest;
    c.seeds = seeds;
    c.vocab = vocab;
    c.subword = subword;
    std::map<const Mat<S>*, std::shared_ptr<Mat<T>>> copies;
    for (const auto& [name, ptr] : tensors) {
      auto it = copies.find(ptr.get());
      if (it == copies.end()) it = copies.emplace(ptr.get(), std::make_shared<Mat<T>>(ptr->template cast<T>())).first;
      c.tensors[name] = it->second;
    }
    return c;
  }
};

using Checkpoint = BasicCheckpoint<float>;

// Checks every tensor against the shape implied by the config.
template <typename S>
void check_shapes(const BasicCheckpoint<S>& ck) {
  validate(ck.config);
  if (static_cast<std::size_t>(ck.config.vocab_size) != ck.vocab.size())
    fail_validation("config vocab_size " + std::to_string(ck.config.vocab_size) + " differs from vocabulary size " +
                    std::to_string(ck.vocab.size()));
  for (const auto& t : tensor_layout(ck.config)) {
    auto it = ck.tensors.find(t.name);
    if (it == ck.tensors.end()) fail_validation("checkpoint is missing tensor '" + t.name + "'");
    if (it->second->rows() != t.rows || it->second->cols() != t.cols)
      fail_validation("tensor '" + t.name + "' has shape " + std::to_string(it->second->rows()) + "x" +
                      std::to_string(it->second->cols()) + ", expected " + std::to_string(t.rows) + "x" +
                      std::to_string(t.cols));
  }
  if (ck.tensors.size() != tensor_layout(ck.config).size()) fail_validation("checkpoint has unexpected extra tensors");
  if (ck.config.shared_embeddings != ck.aliased(kTgtEmbed, kOutProj))
    fail_validation("shared_embeddings flag disagrees with tensor aliasing of tgt_embed/out_proj");
}

template <typename S = float>
BasicCheckpoint<S> init_model(ModelConfig config, const TrainedSubword& sw, std::uint64_t seed) {
  config.vocab_size = static_cast<int>(sw.vocab.size());
  validate(config);
  BasicCheckpoint<S> ck;
  ck.config = config;
  ck.vocab = sw.vocab;
  ck.subword = sw.model;
  ck.seeds.push_back({"init", seed});
  for (const auto& t : tensor_layout(config)) {
    if (config.shared_embeddings && t.name == kOutProj) {
      ck.tensors[t.name] = ck.tensors.at(kTgtEmbed);
      continue;
    }
    auto m = std::make_shared<Mat<S>>(t.rows, t.cols);
    switch (t.init) {
      case TensorSpec::Init::kOnes: m->setOnes(); break;
      case TensorSpec::Init::kZeros: m->setZero(); break;
      default: {
        Rng rng(derive_seed(seed, t.name));
        std::vector<int> rows(static_cast<std::size_t>(t.rows));
        for (int r = 0; r < t.rows; ++r) rows[static_cast<std::size_t>(r)] = r;
        init_rows(*m, rows, init_bound(t, config.model_dim), rng);
      }
    }
    ck.tensors[t.name] = std::move(m);
  }
  return ck;
}

// Content digest over config, vocabulary and tensor bytes.
template <typename S>
std::string checkpoint_digest(const BasicCheckpoint<S>& ck) {
  std::string buf = to_json(ck.config).dump() + "\n" + vocab_to_tsv(ck.vocab) + serialize(ck.subword);
  for (const auto& [name, ptr] : ck.tensors) {
    buf += name;
    buf += ck.aliased(name, kTgtEmbed) && name != kTgtEmbed ? "=alias" : "";
    const auto* p = reinterpret_cast<const char*>(ptr->data());
    buf.append(p, p + sizeof(S) * static_cast<std::size_t>(ptr->size()));
  }
  return sha1_hex(buf);
}

// ---------------------------------------------------------------------------
// directory format

inline nlohmann::json checkpoint_header(const Checkpoint& ck) {
  nlohmann::json idx = nlohmann::json::array();
  for (const auto& [name, ptr] : ck.tensors) {
    nlohmann::json e{{"name", name}, {"shape", {ptr->rows(), ptr->cols()}}};
    if (name == kOutProj && ck.aliased(kOutProj, kTgtEmbed))
      e["alias_of"] = kTgtEmbed;
    else
      e["file"] = "tensors/" + name + ".f32";
    idx.push_back(std::move(e));
  }
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& m : ck.manifest) manifest.push_back({{"src", m.src.code()}, {"tgt", m.tgt.code()}, {"pairs", m.pairs}});
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : ck.seeds) seeds.push_back({{"stage", s.stage}, {"seed", s.seed}});
  return {{"format", "lrladapt-checkpoint"}, {"version", 1},      {"config", to_json(ck.config)}, {"step", ck.step},
          {"manifest", manifest},           {"seed_lineage", seeds}, {"tensors", idx},           {"dtype", "float32-le"}};
}

inline void save_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  check_shapes(ck);
  static_assert(sizeof(float) == 4);
  fs::create_directories(dir / "tensors");
  for (const auto& [name, ptr] : ck.tensors) {
    if (name == kOutProj && ck.aliased(kOutProj, kTgtEmbed)) continue;
    std::string bytes(sizeof(float) * static_cast<std::size_t>(ptr->size()), '\0');
    std::memcpy(bytes.data(), ptr->data(), bytes.size());
    write_file(dir / "tensors" / (name + ".f32"), bytes);
  }
  save_vocab(dir / "vocab.tsv", ck.vocab);
  save_subword(dir / "subword.json", ck.subword);
  write_file(dir / "header.json", checkpoint_header(ck).dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(read_file(dir / "header.json"));
  } catch (const nlohmann::json::exception& e) {
    fail_validation("malformed checkpoint header in " + dir.string() + ": " + e.what());
  }
  if (h.value("format", "") != "lrladapt-checkpoint" || h.value("version", 0) != 1)
    fail_validation(dir.string() + " is not a version-1 lrladapt checkpoint");
  Checkpoint ck;
  ck.config = model_config_from_json(h.at("config"));
  ck.step = h.at("step").get<std::int64_t>();
  for (const auto& m : h.at("manifest"))
    ck.manifest.push_back({LangTag(m.at("src").get<std::string>()), LangTag(m.at("tgt").get<std::string>()),
                           m.at("pairs").get<std::size_t>()});
  for (const auto& s : h.at("seed_lineage")) ck.seeds.push_back({s.at("stage").get<std::string>(), s.at("seed").get<std::uint64_t>()});
  ck.vocab = load_vocab(dir / "vocab.tsv");
  ck.subword = load_subword(dir / "subword.json");
  std::vector<std::pair<std::string, std::string>> aliases;
  for (const auto& e : h.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    if (e.contains("alias_of")) {
      aliases.emplace_back(name, e.at("alias_of").get<std::string>());
      continue;
    }
    const auto rows = e.at("shape")[0].get<Eigen::Index>(), cols = e.at("shape")[1].get<Eigen::Index>();
    const auto bytes = read_file(dir / e.at("file").get<std::string>());
    if (bytes.size() != sizeof(float) * static_cast<std::size_t>(rows * cols))
      fail_validation("tensor file for '" + name + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(sizeof(float) * static_cast<std::size_t>(rows * cols)));
    auto m = std::make_shared<Mat<float>>(rows, cols);
    std::memcpy(m->data(), bytes.data(), bytes.size());
    ck.tensors[name] = std::move(m);
  }
  for (const auto& [name, target] : aliases) {
    auto it = ck.tensors.find(target);
    if (it == ck.tensors.end()) fail_validation("tensor '" + name + "' aliases missing tensor '" + target + "'");
    ck.tensors[name] = it->second;
  }
  check_shapes(ck);
  return ck;
}

}  // namespace lrladapt
