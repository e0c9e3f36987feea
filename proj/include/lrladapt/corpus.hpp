#pragma once

// Corpus ingestion: language tags, monolingual and parallel corpora, control
// tokens for universal-model training and the JSON corpus manifest.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/error.hpp"
#include "lrladapt/util.hpp"

namespace lrladapt {

using json = nlohmann::json;

class LangTag {
 public:
  LangTag() = default;
  explicit LangTag(std::string code) : code_(std::move(code)) {
    if (code_.empty()) fail_validation("language tag must be non-empty");
    for (char c : code_)
      if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')))
        fail_validation("language tag '" + code_ + "' must be lowercase ASCII letters/digits");
  }

  const std::string& code() const noexcept { return code_; }

  auto operator<=>(const LangTag&) const = default;

 private:
  std::string code_;
};

struct MonoCorpus {
  LangTag lang;
  std::vector<std::string> segments;
};

struct Bitext {
  LangTag src_lang;
  LangTag tgt_lang;
  std::vector<std::pair<std::string, std::string>> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
};

// Per-language bitexts sharing one pivot language (English in TED-style data).
struct MultiParallelPool {
  LangTag pivot;
  std::vector<std::pair<LangTag, Bitext>> entries;  // manifest order

  const Bitext* find(const LangTag& lang) const {
    for (const auto& [l, b] : entries)
      if (l == lang) return &b;
    return nullptr;
  }
};

// One sentence pair of a mixed-language training stream.
struct StreamPair {
  LangTag src_lang;
  LangTag tgt_lang;
  std::string src;
  std::string tgt;

  bool operator==(const StreamPair&) const = default;
};

struct PairStream {
  std::vector<StreamPair> pairs;
  std::vector<std::pair<LangTag, std::size_t>> counts;  // per non-pivot language, first-seen order

  std::size_t size() const noexcept { return pairs.size(); }
};

enum class Direction { kToPivot, kFromPivot };

inline std::string to_string(Direction d) { return d == Direction::kToPivot ? "to-pivot" : "from-pivot"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "to-pivot") return Direction::kToPivot;
  if (s == "from-pivot") return Direction::kFromPivot;
  fail_validation("unknown direction '" + s + "' (expected to-pivot or from-pivot)");
}

// ---------------------------------------------------------------------------
// loading

namespace detail {

inline std::vector<std::string> split_validated_lines(const std::string& bytes, const std::string& name) {
  if (bytes.empty()) fail_validation(name + ": empty file");
  if (auto off = utf8_error_offset(bytes)) fail_validation(name + ": invalid UTF-8 at byte offset " + std::to_string(*off));
  std::vector<std::string> lines;
  std::size_t start = 0;
  std::size_t line_no = 1;
  while (start < bytes.size()) {
    auto end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    auto line = rstrip(std::string_view(bytes).substr(start, end - start));
    if (line.empty()) fail_validation(name + ": blank segment at line " + std::to_string(line_no));
    lines.emplace_back(line);
    start = end + 1;
    ++line_no;
  }
  return lines;
}

}  // namespace detail

inline MonoCorpus load_mono(const fs::path& path, const LangTag& lang) {
  return MonoCorpus{lang, detail::split_validated_lines(read_file(path), path.string())};
}

inline Bitext load_bitext(const fs::path& src_path, const fs::path& tgt_path, const LangTag& src_lang,
                          const LangTag& tgt_lang) {
  if (src_lang == tgt_lang) fail_validation("bitext source and target language are both '" + src_lang.code() + "'");
  auto src = detail::split_validated_lines(read_file(src_path), src_path.string());
  auto tgt = detail::split_validated_lines(read_file(tgt_path), tgt_path.string());
  if (src.size() != tgt.size())
    fail_validation("line-count mismatch: " + src_path.string() + " has " + std::to_string(src.size()) + " lines, " +
                    tgt_path.string() + " has " + std::to_string(tgt.size()));
  Bitext b{src_lang, tgt_lang, {}};
  b.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) b.pairs.emplace_back(std::move(src[i]), std::move(tgt[i]));
  return b;
}

inline void write_mono(const fs::path& path, const MonoCorpus& corpus) { write_lines(path, corpus.segments); }

inline void write_bitext(const fs::path& src_path, const fs::path& tgt_path, const Bitext& b) {
  std::vector<std::string> src, tgt;
  src.reserve(b.size());
  tgt.reserve(b.size());
  for (const auto& [s, t] : b.pairs) {
    src.push_back(s);
    tgt.push_back(t);
  }
  write_lines(src_path, src);
  write_lines(tgt_path, tgt);
}

inline MonoCorpus source_side(const Bitext& b) {
  MonoCorpus m{b.src_lang, {}};
  for (const auto& p : b.pairs) m.segments.push_back(p.first);
  return m;
}

inline MonoCorpus target_side(const Bitext& b) {
  MonoCorpus m{b.tgt_lang, {}};
  for (const auto& p : b.pairs) m.segments.push_back(p.second);
  return m;
}

// ---------------------------------------------------------------------------
// control tokens

inline std::string control_token(const LangTag& lang) { return "<2" + lang.code() + ">"; }

// True for any `<2xx>` surface form.
inline bool is_control_token(std::string_view tok) {
  if (tok.size() < 4 || tok.substr(0, 2) != "<2" || tok.back() != '>') return false;
  for (char c : tok.substr(2, tok.size() - 3))
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '@')) return false;
  return true;
}

inline bool contains_control_token(std::string_view segment) {
  for (const auto& w : split_ws(segment))
    if (is_control_token(w)) return true;
  return false;
}

inline Bitext tag_for_universal(const Bitext& b) {
  const auto tag = control_token(b.tgt_lang);
  Bitext out{b.src_lang, b.tgt_lang, {}};
  out.pairs.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& [s, t] = b.pairs[i];
    if (contains_control_token(s) || contains_control_token(t))
      fail_validation("reserved-token collision: pair " + std::to_string(i) + " already contains a <2xx> token");
    out.pairs.emplace_back(tag + " " + s, t);
  }
  return out;
}

inline Bitext strip_tag(const Bitext& b) {
  const auto prefix = control_token(b.tgt_lang) + " ";
  Bitext out{b.src_lang, b.tgt_lang, {}};
  out.pairs.reserve(b.size());
  for (const auto& [s, t] : b.pairs) {
    if (s.compare(0, prefix.size(), prefix) != 0) fail_validation("segment is missing control token " + prefix);
    out.pairs.emplace_back(s.substr(prefix.size()), t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// pooling

// Concatenates pools sharing a pivot language, oriented per `direction`.
inline PairStream concat_pools(const std::vector<Bitext>& pools, Direction direction) {
  if (pools.empty()) fail_validation("concat_pools: empty pool list");
  // the pivot is the language every pool has in common
  std::optional<LangTag> pivot;
  std::optional<bool> pivot_is_target;
  for (const auto& candidate : {pools.front().src_lang, pools.front().tgt_lang}) {
    bool all = std::all_of(pools.begin(), pools.end(),
                           [&](const Bitext& b) { return b.src_lang == candidate || b.tgt_lang == candidate; });
    if (all && pools.size() > 1) {
      pivot = candidate;
      break;
    }
  }
  if (!pivot) pivot = pools.front().tgt_lang;
  for (const auto& b : pools) {
    if (b.src_lang != *pivot && b.tgt_lang != *pivot)
      fail_validation("concat_pools: pool " + b.src_lang.code() + "-" + b.tgt_lang.code() + " does not contain pivot " +
                      pivot->code());
    const bool is_tgt = b.tgt_lang == *pivot;
    if (pivot_is_target && *pivot_is_target != is_tgt)
      fail_validation("concat_pools: direction " + to_string(direction) +
                      " is inconsistent with mixed pool orientation (pivot " + pivot->code() + ")");
    pivot_is_target = is_tgt;
  }
  PairStream out;
  std::map<LangTag, std::size_t> index;
  for (const auto& b : pools) {
    const bool pivot_tgt = b.tgt_lang == *pivot;
    const LangTag& other = pivot_tgt ? b.src_lang : b.tgt_lang;
    for (const auto& [s, t] : b.pairs) {
      const std::string& other_text = pivot_tgt ? s : t;
      const std::string& pivot_text = pivot_tgt ? t : s;
      if (direction == Direction::kToPivot)
        out.pairs.push_back({other, *pivot, other_text, pivot_text});
      else
        out.pairs.push_back({*pivot, other, pivot_text, other_text});
    }
    auto [it, inserted] = index.emplace(other, out.counts.size());
    if (inserted) out.counts.emplace_back(other, 0);
    out.counts[it->second].second += b.size();
  }
  return out;
}

inline PairStream to_stream(const Bitext& b) {
  PairStream s;
  for (const auto& [src, tgt] : b.pairs) s.pairs.push_back({b.src_lang, b.tgt_lang, src, tgt});
  s.counts.emplace_back(b.src_lang, b.size());
  return s;
}

inline void append(PairStream& into, const PairStream& from) {
  into.pairs.insert(into.pairs.end(), from.pairs.begin(), from.pairs.end());
  for (const auto& [lang, n] : from.counts) {
    auto it = std::find_if(into.counts.begin(), into.counts.end(), [&](const auto& c) { return c.first == lang; });
    if (it == into.counts.end())
      into.counts.emplace_back(lang, n);
    else
      it->second += n;
  }
}

inline json counts_json(const std::vector<std::pair<LangTag, std::size_t>>& counts) {
  json j = json::object();
  for (const auto& [l, n] : counts) j[l.code()] = n;
  return j;
}

// ---------------------------------------------------------------------------
// manifest

enum class Role { kTrain, kDev, kTest };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::kTrain: return "train";
    case Role::kDev: return "dev";
    case Role::kTest: return "test";
  }
  return "train";
}

inline Role parse_role(const std::string& s) {
  if (s == "train") return Role::kTrain;
  if (s == "dev") return Role::kDev;
  if (s == "test") return Role::kTest;
  fail_validation("unknown corpus role '" + s + "'");
}

struct ManifestEntry {
  std::string key;
  LangTag lang;
  Role role = Role::kTrain;
  // monolingual entries set `path`; bitext entries set `src`/`tgt` (lang -> pivot)
  std::optional<std::string> path;
  std::optional<std::string> src;
  std::optional<std::string> tgt;

  bool is_bitext() const { return src.has_value(); }
};

struct CorpusManifest {
  fs::path base_dir;  // relative paths resolve against this
  LangTag pivot;
  std::vector<ManifestEntry> entries;

  const ManifestEntry& at(const std::string& key) const {
    for (const auto& e : entries)
      if (e.key == key) return e;
    fail_validation("manifest has no entry '" + key + "'");
  }

  const ManifestEntry* find(const LangTag& lang, Role role, bool bitext = true) const {
    for (const auto& e : entries)
      if (e.lang == lang && e.role == role && e.is_bitext() == bitext) return &e;
    return nullptr;
  }

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  Bitext load_bitext(const std::string& key) const {
    const auto& e = at(key);
    if (!e.is_bitext()) fail_validation("manifest entry '" + key + "' is not a bitext");
    return lrladapt::load_bitext(resolve(*e.src), resolve(*e.tgt), e.lang, pivot);
  }

  MonoCorpus load_mono(const std::string& key) const {
    const auto& e = at(key);
    if (e.is_bitext()) return source_side(load_bitext(key));
    return lrladapt::load_mono(resolve(*e.path), e.lang);
  }
};

inline void validate(const CorpusManifest& m) {
  std::set<std::string> keys;
  std::set<std::tuple<std::string, Role, bool>> slots;
  for (const auto& e : m.entries) {
    if (e.key.empty()) fail_validation("manifest entry with empty key");
    if (!keys.insert(e.key).second) fail_validation("duplicate manifest key '" + e.key + "'");
    if (!slots.insert({e.lang.code(), e.role, e.is_bitext()}).second)
      fail_validation("language '" + e.lang.code() + "' listed twice for role " + to_string(e.role));
    if (e.is_bitext() == e.path.has_value() || e.src.has_value() != e.tgt.has_value())
      fail_validation("manifest entry '" + e.key + "' needs either path or src+tgt");
    if (e.is_bitext() && e.lang == m.pivot)
      fail_validation("manifest entry '" + e.key + "' pairs the pivot with itself");
  }
}

inline json to_json(const CorpusManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json j{{"key", e.key}, {"lang", e.lang.code()}, {"role", to_string(e.role)}};
    if (e.path) j["path"] = *e.path;
    if (e.src) j["src"] = *e.src;
    if (e.tgt) j["tgt"] = *e.tgt;
    entries.push_back(std::move(j));
  }
  return json{{"version", 1}, {"pivot", m.pivot.code()}, {"entries", std::move(entries)}};
}

inline CorpusManifest manifest_from_json(const json& j, const fs::path& base_dir) {
  CorpusManifest m;
  m.base_dir = base_dir;
  if (j.value("version", 0) != 1) fail_validation("unsupported manifest version");
  m.pivot = LangTag(j.at("pivot").get<std::string>());
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.key = je.at("key").get<std::string>();
    e.lang = LangTag(je.at("lang").get<std::string>());
    e.role = parse_role(je.value("role", std::string("train")));
    if (je.contains("path")) e.path = je["path"].get<std::string>();
    if (je.contains("src")) e.src = je["src"].get<std::string>();
    if (je.contains("tgt")) e.tgt = je["tgt"].get<std::string>();
    m.entries.push_back(std::move(e));
  }
  validate(m);
  return m;
}

inline CorpusManifest load_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail_validation("manifest " + path.string() + ": " + e.what());
  }
  try {
    return manifest_from_json(j, path.parent_path());
  } catch (const json::exception& e) {
    fail_validation("manifest " + path.string() + ": " + e.what());
  }
}

inline void save_manifest(const fs::path& path, const CorpusManifest& m) { write_file(path, to_json(m).dump(2) + "\n"); }

}  // namespace lrladapt
