#pragma once

// Greedy pairwise-merge (BPE-style) subword segmentation.
//
// A whitespace-separated field is split into code points and the last one
// carries the end-of-word marker U+2581, e.g. "aaab" -> a a a b▁. Merges are
// learned greedily by pair frequency; equal counts go to the lexicographically
// smaller merged piece. Because every field ends in a marked piece, decoding
// reconstructs the original spacing exactly.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/corpus.hpp"
#include "lrladapt/error.hpp"
#include "lrladapt/util.hpp"

namespace lrladapt {

inline constexpr std::string_view kWordMarker = "\xE2\x96\x81";  // U+2581
inline constexpr const char* kPad = "<pad>";
inline constexpr const char* kUnk = "<unk>";
inline constexpr const char* kBos = "<s>";
inline constexpr const char* kEos = "</s>";
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr const char* kNormalization = "eow-marker-v1";

// Spare control slots are renamed to a real `<2xx>` tag when an unseen
// language is attached to an existing vocabulary.
inline std::string spare_control_slot(int i) { return "<2@" + std::to_string(i) + ">"; }
inline bool is_spare_control_slot(std::string_view tok) { return tok.size() > 4 && tok.substr(0, 3) == "<2@"; }

inline bool ends_with_marker(std::string_view piece) {
  return piece.size() >= kWordMarker.size() && piece.substr(piece.size() - kWordMarker.size()) == kWordMarker;
}

// Piece inventory with dense ids. Reserved tokens come first, in order:
// <pad> <unk> <s> </s>, control tokens, spare control slots.
class Vocabulary {
 public:
  Vocabulary() = default;

  Vocabulary(std::vector<std::string> pieces, std::size_t reserved_count) : reserved_count_(reserved_count) {
    for (auto& p : pieces) add(std::move(p));
    if (reserved_count_ > pieces_.size()) fail_validation("reserved count exceeds vocabulary size");
  }

  std::size_t size() const noexcept { return pieces_.size(); }
  std::size_t reserved_count() const noexcept { return reserved_count_; }

  const std::string& piece(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
      fail_validation("unknown piece id " + std::to_string(id) + " (vocabulary size " + std::to_string(size()) + ")");
    return pieces_[static_cast<std::size_t>(id)];
  }

  std::optional<int> find(const std::string& piece) const {
    auto it = ids_.find(piece);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  int id_or_unk(const std::string& piece) const { return find(piece).value_or(kUnkId); }

  bool is_reserved(int id) const { return id >= 0 && static_cast<std::size_t>(id) < reserved_count_; }

  const std::vector<std::string>& pieces() const noexcept { return pieces_; }

  // Renames a reserved slot in place; ids are unchanged.
  void rename_reserved(int id, const std::string& new_name) {
    if (!is_reserved(id)) fail_validation("only reserved slots can be renamed");
    if (ids_.count(new_name)) fail_validation("piece '" + new_name + "' already in vocabulary");
    ids_.erase(pieces_[static_cast<std::size_t>(id)]);
    pieces_[static_cast<std::size_t>(id)] = new_name;
    ids_[new_name] = id;
  }

  bool operator==(const Vocabulary& o) const { return pieces_ == o.pieces_ && reserved_count_ == o.reserved_count_; }

 private:
  void add(std::string p) {
    if (ids_.count(p)) return;
    ids_.emplace(p, static_cast<int>(pieces_.size()));
    pieces_.push_back(std::move(p));
  }

  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> ids_;
  std::size_t reserved_count_ = 0;
};

// Assigns `<2lang>` to the first spare slot unless already present. Returns the id.
inline int assign_control_token(Vocabulary& vocab, const LangTag& lang) {
  const auto tok = control_token(lang);
  if (auto id = vocab.find(tok)) return *id;
  for (std::size_t i = 0; i < vocab.reserved_count(); ++i) {
    if (is_spare_control_slot(vocab.pieces()[i])) {
      vocab.rename_reserved(static_cast<int>(i), tok);
      return static_cast<int>(i);
    }
  }
  fail_validation("no spare control-token slot left for " + tok);
}

struct SubwordOptions {
  int merges = 8000;
  std::optional<std::size_t> vocab_size;  // when set, overrides `merges`
  int min_pair_count = 2;
  std::vector<std::string> control_tokens;
  int spare_control_slots = 0;
};

struct SubwordModel {
  std::string normalization = kNormalization;
  std::vector<std::string> reserved;  // full reserved list, in id order
  std::vector<std::string> alphabet;  // sorted initial symbols
  std::vector<std::pair<std::string, std::string>> merges;
  int requested_merges = 0;

  bool operator==(const SubwordModel&) const = default;
};

struct TrainedSubword {
  SubwordModel model;
  Vocabulary vocab;
};

inline Vocabulary build_vocabulary(const SubwordModel& m) {
  std::vector<std::string> pieces = m.reserved;
  pieces.insert(pieces.end(), m.alphabet.begin(), m.alphabet.end());
  for (const auto& [a, b] : m.merges) pieces.push_back(a + b);
  return Vocabulary(std::move(pieces), m.reserved.size());
}

namespace detail {

inline std::vector<std::string> base_reserved(const SubwordOptions& opt) {
  std::vector<std::string> r{kPad, kUnk, kBos, kEos};
  std::vector<std::string> controls = opt.control_tokens;
  std::sort(controls.begin(), controls.end());
  controls.erase(std::unique(controls.begin(), controls.end()), controls.end());
  for (auto& c : controls) {
    if (!is_control_token(c)) fail_validation("'" + c + "' is not a <2xx> control token");
    r.push_back(c);
  }
  for (int i = 0; i < opt.spare_control_slots; ++i) r.push_back(spare_control_slot(i));
  return r;
}

inline bool is_atomic_field(std::string_view field, const std::unordered_set<std::string>* reserved) {
  if (is_control_token(field)) return true;
  return reserved && reserved->count(std::string(field));
}

// Fields of a segment: split on single spaces, empty fields kept.
inline std::vector<std::string_view> fields(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(' ', start);
    if (pos == std::string_view::npos) {
      out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> initial_symbols(std::string_view field) {
  if (field.empty()) return {std::string(kWordMarker)};
  auto chars = utf8_chars(field);
  chars.back() += kWordMarker;
  return chars;
}

inline void check_text(std::string_view text) {
  if (auto off = utf8_error_offset(text)) fail_validation("invalid UTF-8 at byte offset " + std::to_string(*off));
  if (text.find('\n') != std::string_view::npos) fail_validation("segment contains a newline");
  if (text.find(kWordMarker) != std::string_view::npos)
    fail_validation("segment contains the reserved word-boundary marker U+2581");
}

}  // namespace detail

// Learns merges over one or more corpora.
inline TrainedSubword train_subword(const std::vector<const MonoCorpus*>& corpora, const SubwordOptions& opt) {
  if (corpora.empty()) fail_validation("train_subword: no corpus given");
  if (opt.merges < 0) fail_validation("train_subword: negative merge count");
  SubwordModel model;
  model.reserved = detail::base_reserved(opt);
  const std::unordered_set<std::string> reserved_set(model.reserved.begin(), model.reserved.end());

  // word frequencies
  std::map<std::string, std::int64_t> word_freq;
  bool any = false;
  for (const auto* c : corpora) {
    for (const auto& seg : c->segments) {
      detail::check_text(seg);
      any = true;
      for (auto f : detail::fields(seg))
        if (!detail::is_atomic_field(f, &reserved_set)) ++word_freq[std::string(f)];
    }
  }
  if (!any) fail_validation("train_subword: corpus is empty");

  // intern symbols
  std::vector<std::string> sym_str;
  std::unordered_map<std::string, int> sym_id;
  auto intern = [&](const std::string& s) {
    auto [it, ins] = sym_id.emplace(s, static_cast<int>(sym_str.size()));
    if (ins) sym_str.push_back(s);
    return it->second;
  };
  std::vector<std::vector<int>> words;
  std::vector<std::int64_t> freqs;
  std::set<std::string> alphabet;
  for (const auto& [w, n] : word_freq) {
    std::vector<int> syms;
    for (auto& s : detail::initial_symbols(w)) {
      alphabet.insert(s);
      syms.push_back(intern(s));
    }
    words.push_back(std::move(syms));
    freqs.push_back(n);
  }
  model.alphabet.assign(alphabet.begin(), alphabet.end());

  int target = opt.merges;
  if (opt.vocab_size) {
    const std::size_t minimum = model.reserved.size() + model.alphabet.size();
    if (*opt.vocab_size < minimum)
      fail_validation("target vocabulary size " + std::to_string(*opt.vocab_size) +
                      " is smaller than the reserved+character inventory; minimum feasible size is " +
                      std::to_string(minimum));
    target = static_cast<int>(*opt.vocab_size - minimum);
  }
  model.requested_merges = target;

  using PairKey = std::uint64_t;
  auto key = [](int a, int b) { return (static_cast<PairKey>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b); };
  std::unordered_map<PairKey, std::int64_t> pair_count;
  std::unordered_map<PairKey, std::vector<std::size_t>> pair_words;
  // ordered by (count desc, merged piece asc, left asc)
  using Entry = std::tuple<std::int64_t, std::string, std::string, PairKey>;
  std::set<Entry> queue;
  auto entry_for = [&](PairKey k, std::int64_t c) {
    const int a = static_cast<int>(k >> 32), b = static_cast<int>(k & 0xffffffffu);
    return Entry{-c, sym_str[static_cast<std::size_t>(a)] + sym_str[static_cast<std::size_t>(b)],
                 sym_str[static_cast<std::size_t>(a)], k};
  };
  auto adjust = [&](PairKey k, std::int64_t delta) {
    auto& c = pair_count[k];
    if (c > 0) queue.erase(entry_for(k, c));
    c += delta;
    if (c > 0) queue.insert(entry_for(k, c));
  };

  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    const auto& w = words[wi];
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      const auto k = key(w[i], w[i + 1]);
      pair_count[k] += freqs[wi];
      pair_words[k].push_back(wi);
    }
  }
  for (const auto& [k, c] : pair_count)
    if (c > 0) queue.insert(entry_for(k, c));

  while (static_cast<int>(model.merges.size()) < target && !queue.empty()) {
    const auto [neg_count, merged, left, k] = *queue.begin();
    if (-neg_count < opt.min_pair_count) break;
    const int a = static_cast<int>(k >> 32), b = static_cast<int>(k & 0xffffffffu);
    const int c = intern(merged);
    model.merges.emplace_back(sym_str[static_cast<std::size_t>(a)], sym_str[static_cast<std::size_t>(b)]);

    auto affected = std::move(pair_words[k]);
    pair_words.erase(k);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    for (auto wi : affected) {
      auto& w = words[wi];
      bool has = false;
      for (std::size_t i = 0; i + 1 < w.size(); ++i)
        if (w[i] == a && w[i + 1] == b) has = true;
      if (!has) continue;
      const auto f = freqs[wi];
      for (std::size_t i = 0; i + 1 < w.size(); ++i) adjust(key(w[i], w[i + 1]), -f);
      std::vector<int> nw;
      nw.reserve(w.size());
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == a && w[i + 1] == b) {
          nw.push_back(c);
          i += 2;
        } else {
          nw.push_back(w[i]);
          ++i;
        }
      }
      w = std::move(nw);
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        const auto nk = key(w[i], w[i + 1]);
        adjust(nk, f);
        if (nk != k) pair_words[nk].push_back(wi);
      }
    }
    pair_count.erase(k);
  }

  TrainedSubword out{std::move(model), {}};
  out.vocab = build_vocabulary(out.model);
  return out;
}

inline TrainedSubword train_subword(const MonoCorpus& corpus, const SubwordOptions& opt) {
  return train_subword(std::vector<const MonoCorpus*>{&corpus}, opt);
}

// Applies a trained model. Holds the merge-rank table and a per-word cache,
// so keep one per thread.
class SubwordEncoder {
 public:
  explicit SubwordEncoder(const SubwordModel& model) : model_(&model) {
    for (std::size_t r = 0; r < model.merges.size(); ++r) {
      const auto& [a, b] = model.merges[r];
      ranks_.emplace(a + '\x1f' + b, static_cast<int>(r));
    }
    reserved_.insert(model.reserved.begin(), model.reserved.end());
  }

  std::vector<std::string> encode(std::string_view text) const {
    detail::check_text(text);
    std::vector<std::string> out;
    for (auto f : detail::fields(text)) {
      if (detail::is_atomic_field(f, &reserved_)) {
        out.emplace_back(f);
        continue;
      }
      const auto& pieces = encode_word(f);
      out.insert(out.end(), pieces.begin(), pieces.end());
    }
    return out;
  }

  std::vector<int> encode_ids(std::string_view text, const Vocabulary& vocab, std::size_t* unk_count = nullptr) const {
    std::vector<int> ids;
    for (const auto& p : encode(text)) {
      const int id = vocab.id_or_unk(p);
      if (id == kUnkId && unk_count) ++*unk_count;
      ids.push_back(id);
    }
    return ids;
  }

  const std::vector<std::string>& encode_word(std::string_view field) const {
    std::string k(field);
    if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    auto syms = detail::initial_symbols(field);
    while (syms.size() > 1) {
      int best = -1;
      std::size_t best_i = 0;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = ranks_.find(syms[i] + '\x1f' + syms[i + 1]);
        if (it != ranks_.end() && (best < 0 || it->second < best)) {
          best = it->second;
          best_i = i;
        }
      }
      if (best < 0) break;
      const auto a = syms[best_i], b = syms[best_i + 1];
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size();) {
        if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
          next.push_back(a + b);
          i += 2;
        } else {
          next.push_back(std::move(syms[i]));
          ++i;
        }
      }
      syms = std::move(next);
    }
    return cache_.emplace(std::move(k), std::move(syms)).first->second;
  }

  const SubwordModel& model() const { return *model_; }

 private:
  const SubwordModel* model_;
  std::unordered_map<std::string, int> ranks_;
  std::unordered_set<std::string> reserved_;
  mutable std::unordered_map<std::string, std::vector<std::string>> cache_;
};

inline std::vector<std::string> encode(const SubwordModel& model, std::string_view text) {
  return SubwordEncoder(model).encode(text);
}

// Inverse of encode for any piece sequence encode can produce.
inline std::string decode_pieces(const std::vector<std::string>& pieces) {
  std::vector<std::string> fields;
  std::string current;
  bool open = false;
  for (const auto& p : pieces) {
    if (is_control_token(p) || p == kPad || p == kUnk || p == kBos || p == kEos) {
      if (open) {
        fields.push_back(std::move(current));
        current.clear();
        open = false;
      }
      fields.push_back(p);
      continue;
    }
    if (ends_with_marker(p)) {
      current.append(p, 0, p.size() - kWordMarker.size());
      fields.push_back(std::move(current));
      current.clear();
      open = false;
    } else {
      current += p;
      open = true;
    }
  }
  if (open) fields.push_back(std::move(current));
  return join(fields, " ");
}

inline std::string decode_ids(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> pieces;
  pieces.reserve(ids.size());
  for (int id : ids) pieces.push_back(vocab.piece(id));
  return decode_pieces(pieces);
}

// |pieces(a) ∩ pieces(b)| / |pieces(a)|, reserved tokens excluded on both sides.
inline double vocab_overlap(const Vocabulary& a, const Vocabulary& b) {
  std::size_t total = 0, shared = 0;
  for (std::size_t i = a.reserved_count(); i < a.size(); ++i) {
    ++total;
    auto id = b.find(a.pieces()[i]);
    if (id && !b.is_reserved(*id)) ++shared;
  }
  if (total == 0) return 1.0;
  return static_cast<double>(shared) / static_cast<double>(total);
}

struct OverlapRow {
  int requested_merges = 0;
  std::size_t merges = 0;
  std::size_t vocab_size = 0;
  double overlap = 0.0;
};

struct OverlapSearch {
  int best_size = 0;
  std::vector<OverlapRow> table;
  TrainedSubword best;
};

// Trains one model per candidate merge count and keeps the one whose vocabulary
// overlaps most with `pretrained`; ties go to the smaller size.
inline OverlapSearch search_overlap_size(const std::vector<const MonoCorpus*>& corpora, const Vocabulary& pretrained,
                                         std::vector<int> candidates, SubwordOptions opt) {
  if (candidates.empty()) fail_validation("search_overlap_size: empty candidate list");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  OverlapSearch result;
  double best = -1.0;
  opt.vocab_size.reset();
  for (int size : candidates) {
    opt.merges = size;
    auto trained = train_subword(corpora, opt);
    const double ov = vocab_overlap(trained.vocab, pretrained);
    result.table.push_back({size, trained.model.merges.size(), trained.vocab.size(), ov});
    if (ov > best) {
      best = ov;
      result.best_size = size;
      result.best = std::move(trained);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::json to_json(const SubwordModel& m) {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [a, b] : m.merges) merges.push_back({a, b});
  return {{"format", "lrladapt-subword"},   {"version", 1},       {"normalization", m.normalization},
          {"reserved", m.reserved},         {"alphabet", m.alphabet}, {"requested_merges", m.requested_merges},
          {"merges", std::move(merges)}};
}

inline SubwordModel subword_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "lrladapt-subword" || j.value("version", 0) != 1)
    fail_validation("not a version-1 subword model");
  SubwordModel m;
  m.normalization = j.at("normalization").get<std::string>();
  if (m.normalization != kNormalization) fail_validation("unsupported normalization '" + m.normalization + "'");
  m.reserved = j.at("reserved").get<std::vector<std::string>>();
  m.alphabet = j.at("alphabet").get<std::vector<std::string>>();
  m.requested_merges = j.value("requested_merges", 0);
  for (const auto& p : j.at("merges")) m.merges.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  return m;
}

inline std::string serialize(const SubwordModel& m) { return to_json(m).dump(1) + "\n"; }

inline void save_subword(const fs::path& path, const SubwordModel& m) { write_file(path, serialize(m)); }

inline SubwordModel load_subword(const fs::path& path) {
  try {
    return subword_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail_validation(path.string() + ": " + e.what());
  }
}

namespace detail {

inline std::string tsv_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\')
      out += "\\\\";
    else if (c == '\t')
      out += "\\t";
    else if (c == '\n')
      out += "\\n";
    else
      out += c;
  }
  return out;
}

inline std::string tsv_unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      out += n == 't' ? '\t' : n == 'n' ? '\n' : n;
    } else {
      out += s[i];
    }
  }
  return out;
}

}  // namespace detail

// TSV: piece <tab> id, plus a header line recording the reserved count.
inline std::string vocab_to_tsv(const Vocabulary& v) {
  std::string out = "#reserved\t" + std::to_string(v.reserved_count()) + "\n";
  for (std::size_t i = 0; i < v.size(); ++i) out += detail::tsv_escape(v.pieces()[i]) + "\t" + std::to_string(i) + "\n";
  return out;
}

inline Vocabulary vocab_from_tsv(const std::string& text) {
  std::vector<std::string> pieces;
  std::size_t reserved = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string_view::npos) fail_validation("vocabulary TSV line without tab");
    const auto left = line.substr(0, tab);
    const auto right = std::string(line.substr(tab + 1));
    if (left == "#reserved") {
      reserved = std::stoul(right);
      continue;
    }
    if (std::stoul(right) != pieces.size()) fail_validation("vocabulary TSV ids are not dense");
    pieces.push_back(detail::tsv_unescape(left));
  }
  return Vocabulary(std::move(pieces), reserved);
}

inline void save_vocab(const fs::path& path, const Vocabulary& v) { write_file(path, vocab_to_tsv(v)); }
inline Vocabulary load_vocab(const fs::path& path) { return vocab_from_tsv(read_file(path)); }

}  // namespace lrladapt
