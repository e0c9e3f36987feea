#pragma once

// Interpolated absolute-discount n-gram language model over subword pieces,
// and per-segment perplexity scoring.
//
//   P_k(w|h) = max(c(h,w) - D, 0) / c(h) + D * N1+(h.) / c(h) * P_{k-1}(w|h')
//   P_0(w)   = 1 / |V|
//
// where h' drops the oldest context token and contexts never seen in training
// back off directly. Sentences are padded with one <s> and one </s>; </s> is
// predicted and counts toward N.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/corpus.hpp"
#include "lrladapt/error.hpp"
#include "lrladapt/subword.hpp"
#include "lrladapt/util.hpp"

namespace lrladapt {

enum class UnkMode { kSingleton, kNone };

struct LmOptions {
  int order = 4;
  double discount = 0.75;
  UnkMode unk = UnkMode::kSingleton;
};

struct LogProb {
  double logprob = 0.0;  // natural log
  std::size_t tokens = 0;
};

// Anything mapping a piece sequence to a log-probability can drive selection.
class PieceScorer {
 public:
  virtual ~PieceScorer() = default;
  virtual LogProb score(const std::vector<std::string>& pieces) const = 0;
};

inline double perplexity_from(double logprob, std::size_t tokens) {
  if (tokens == 0) fail_validation("perplexity of an empty segment");
  return std::exp(-logprob / static_cast<double>(tokens));
}

class NGramModel final : public PieceScorer {
 public:
  static constexpr int kLmUnk = 0;
  static constexpr int kLmBos = 1;
  static constexpr int kLmEos = 2;

  struct ContextStats {
    std::int64_t total = 0;
    std::unordered_map<int, std::int64_t> next;
  };

  NGramModel() = default;

  // `sentences` are piece sequences without padding.
  static NGramModel train(const std::vector<std::vector<std::string>>& sentences, const LmOptions& opt) {
    if (opt.order < 1) fail_validation("n-gram order must be >= 1");
    if (opt.discount < 0.0 || opt.discount > 1.0) fail_validation("discount must lie in [0,1]");
    std::size_t tokens = 0;
    for (const auto& s : sentences) tokens += s.size();
    if (sentences.empty() || tokens == 0) fail_validation("cannot train a language model on an empty corpus");

    NGramModel m;
    m.opt_ = opt;
    std::map<std::string, std::int64_t> type_count;
    std::size_t longest = 0;
    for (const auto& s : sentences) {
      for (const auto& p : s) ++type_count[p];
      longest = std::max(longest, s.size() + 2);
    }
    if (static_cast<std::size_t>(opt.order) > longest)
      m.warnings_.push_back("order " + std::to_string(opt.order) + " exceeds the longest padded sentence (" +
                            std::to_string(longest) + " tokens)");
    m.words_ = {kUnk, kBos, kEos};
    for (const auto& [w, c] : type_count) {
      if (w == kUnk || w == kBos || w == kEos) continue;
      if (opt.unk == UnkMode::kSingleton && c == 1) continue;
      m.words_.push_back(w);
    }
    m.index_words();

    for (const auto& s : sentences) {
      auto ids = m.padded_ids(s, /*strict=*/false);
      for (std::size_t i = 1; i < ids.size(); ++i) {
        for (int k = 1; k <= opt.order; ++k) {
          if (i + 1 < static_cast<std::size_t>(k)) break;
          m.add_count(std::span<const int>(ids.data() + i + 1 - k, static_cast<std::size_t>(k) - 1), ids[i], 1);
        }
      }
    }
    m.training_tokens_ = tokens;
    return m;
  }

  int order() const noexcept { return opt_.order; }
  const LmOptions& options() const noexcept { return opt_; }
  std::size_t training_tokens() const noexcept { return training_tokens_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  const std::vector<std::string>& words() const noexcept { return words_; }

  // Words that receive probability mass: everything but <s>, and <unk> only
  // when unknown-word mass is enabled.
  std::vector<int> predictable() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
      if (i == kLmBos) continue;
      if (i == kLmUnk && opt_.unk == UnkMode::kNone) continue;
      out.push_back(i);
    }
    return out;
  }

  int word_id(const std::string& w) const {
    auto it = ids_.find(w);
    if (it != ids_.end()) return it->second;
    if (opt_.unk == UnkMode::kNone) fail_validation("piece '" + w + "' is outside the closed LM vocabulary");
    return kLmUnk;
  }

  // P(w | context), context given oldest-first; only the last order-1 ids are used.
  double prob(int w, std::span<const int> context) const {
    const std::size_t keep = std::min(context.size(), static_cast<std::size_t>(opt_.order - 1));
    return prob_rec(w, context.subspan(context.size() - keep));
  }

  double prob(const std::string& w, const std::vector<std::string>& context) const {
    std::vector<int> ctx;
    for (const auto& c : context) ctx.push_back(c == kBos ? kLmBos : word_id(c));
    return prob(word_id(w), ctx);
  }

  LogProb score(const std::vector<std::string>& pieces) const override {
    if (pieces.empty()) fail_validation("perplexity of an empty segment");
    const auto ids = padded_ids(pieces, /*strict=*/true);
    LogProb lp;
    for (std::size_t i = 1; i < ids.size(); ++i) {
      const std::size_t start = i + 1 > static_cast<std::size_t>(opt_.order) ? i + 1 - opt_.order : 0;
      lp.logprob += std::log(prob(ids[i], std::span<const int>(ids.data() + start, i - start)));
      ++lp.tokens;
    }
    return lp;
  }

  // All observed contexts of a given length.
  std::vector<std::vector<int>> contexts(int length) const {
    std::vector<std::vector<int>> out;
    if (length < 0 || length >= opt_.order) return out;
    for (const auto& [k, stats] : tables_[static_cast<std::size_t>(length)]) out.push_back(decode_key(k));
    std::sort(out.begin(), out.end());
    return out;
  }

  // ---- serialization: "LRLM" + u32 version + u64 header length + JSON header,
  // then per order: u64 entry count, entries of (context ids..., word id) as u32 and count as u64.
  std::string serialize() const {
    nlohmann::json header{{"format", "lrladapt-ngram"},
                          {"version", 1},
                          {"order", opt_.order},
                          {"discount", opt_.discount},
                          {"unk", opt_.unk == UnkMode::kSingleton ? "singleton" : "none"},
                          {"training_tokens", training_tokens_},
                          {"words", words_}};
    const auto h = header.dump();
    std::string out = "LRLM";
    put_u32(out, 1);
    put_u64(out, h.size());
    out += h;
    for (int k = 0; k < opt_.order; ++k) {
      std::vector<std::pair<std::string, const ContextStats*>> sorted;
      for (const auto& [key, stats] : tables_[static_cast<std::size_t>(k)]) sorted.emplace_back(key, &stats);
      std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      std::uint64_t n = 0;
      for (const auto& s : sorted) n += s.second->next.size();
      put_u64(out, n);
      for (const auto& [key, stats] : sorted) {
        std::vector<std::pair<int, std::int64_t>> next(stats->next.begin(), stats->next.end());
        std::sort(next.begin(), next.end());
        for (const auto& [w, c] : next) {
          for (int id : decode_key(key)) put_u32(out, static_cast<std::uint32_t>(id));
          put_u32(out, static_cast<std::uint32_t>(w));
          put_u64(out, static_cast<std::uint64_t>(c));
        }
      }
    }
    return out;
  }

  static NGramModel deserialize(const std::string& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (pos + n > bytes.size()) fail_validation("truncated language model file");
    };
    need(4);
    if (bytes.compare(0, 4, "LRLM") != 0) fail_validation("not a language model file (bad magic)");
    pos = 4;
    need(12);
    if (get_u32(bytes, pos) != 1) fail_validation("unsupported language model version");
    const auto hlen = get_u64(bytes, pos);
    need(hlen);
    const auto header = nlohmann::json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    NGramModel m;
    m.opt_.order = header.at("order").get<int>();
    m.opt_.discount = header.at("discount").get<double>();
    m.opt_.unk = header.at("unk").get<std::string>() == "singleton" ? UnkMode::kSingleton : UnkMode::kNone;
    m.training_tokens_ = header.at("training_tokens").get<std::size_t>();
    m.words_ = header.at("words").get<std::vector<std::string>>();
    m.index_words();
    for (int k = 0; k < m.opt_.order; ++k) {
      need(8);
      const auto n = get_u64(bytes, pos);
      std::vector<int> ctx(static_cast<std::size_t>(k));
      for (std::uint64_t e = 0; e < n; ++e) {
        need(4 * (static_cast<std::size_t>(k) + 1) + 8);
        for (auto& c : ctx) c = static_cast<int>(get_u32(bytes, pos));
        const int w = static_cast<int>(get_u32(bytes, pos));
        const auto c = static_cast<std::int64_t>(get_u64(bytes, pos));
        m.add_count(ctx, w, c);
      }
    }
    return m;
  }

 private:
  void index_words() {
    ids_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], static_cast<int>(i));
    tables_.assign(static_cast<std::size_t>(opt_.order), {});
  }

  std::vector<int> padded_ids(const std::vector<std::string>& pieces, bool strict) const {
    std::vector<int> ids{kLmBos};
    for (const auto& p : pieces) {
      auto it = ids_.find(p);
      if (it != ids_.end()) {
        ids.push_back(it->second);
      } else {
        if (strict && opt_.unk == UnkMode::kNone) fail_validation("piece '" + p + "' is outside the closed LM vocabulary");
        ids.push_back(kLmUnk);
      }
    }
    ids.push_back(kLmEos);
    return ids;
  }

  static std::string encode_key(std::span<const int> ctx) {
    std::string k(ctx.size() * 4, '\0');
    for (std::size_t i = 0; i < ctx.size(); ++i) std::memcpy(k.data() + 4 * i, &ctx[i], 4);
    return k;
  }

  static std::vector<int> decode_key(const std::string& k) {
    std::vector<int> ctx(k.size() / 4);
    for (std::size_t i = 0; i < ctx.size(); ++i) std::memcpy(&ctx[i], k.data() + 4 * i, 4);
    return ctx;
  }

  void add_count(std::span<const int> ctx, int w, std::int64_t c) {
    auto& stats = tables_[ctx.size()][encode_key(ctx)];
    stats.total += c;
    stats.next[w] += c;
  }

  double prob_rec(int w, std::span<const int> ctx) const {
    // lower-order estimate first: the recursion bottoms out at the uniform distribution
    const double lower = ctx.empty() ? 1.0 / static_cast<double>(predictable_count()) : prob_rec(w, ctx.subspan(1));
    const auto& table = tables_[ctx.size()];
    auto it = table.find(encode_key(ctx));
    if (it == table.end() || it->second.total == 0) return lower;
    const auto& stats = it->second;
    const double total = static_cast<double>(stats.total);
    auto wit = stats.next.find(w);
    const double c = wit == stats.next.end() ? 0.0 : static_cast<double>(wit->second);
    const double d = opt_.discount;
    return std::max(c - d, 0.0) / total + d * static_cast<double>(stats.next.size()) / total * lower;
  }

  std::size_t predictable_count() const {
    return words_.size() - 1 - (opt_.unk == UnkMode::kNone ? 1 : 0);
  }

  static void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static std::uint32_t get_u32(const std::string& b, std::size_t& pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  static std::uint64_t get_u64(const std::string& b, std::size_t& pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }

  LmOptions opt_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::unordered_map<std::string, ContextStats>> tables_;  // indexed by context length
  std::size_t training_tokens_ = 0;
  std::vector<std::string> warnings_;
};

inline NGramModel train_lm(const MonoCorpus& corpus, const SubwordModel& subword, const LmOptions& opt) {
  if (corpus.segments.empty()) fail_validation("cannot train a language model on an empty corpus");
  SubwordEncoder enc(subword);
  std::vector<std::vector<std::string>> sentences;
  sentences.reserve(corpus.segments.size());
  for (const auto& s : corpus.segments) sentences.push_back(enc.encode(s));
  return NGramModel::train(sentences, opt);
}

inline void save_lm(const fs::path& path, const NGramModel& m) { write_file(path, m.serialize()); }
inline NGramModel load_lm(const fs::path& path) { return NGramModel::deserialize(read_file(path)); }

// ---------------------------------------------------------------------------
// scoring

struct ScoredSegment {
  std::string key;
  std::size_t index = 0;
  std::size_t tokens = 0;
  double logprob = 0.0;
  double pp = 0.0;
};

inline ScoredSegment perplexity(const PieceScorer& scorer, const std::vector<std::string>& pieces,
                                std::string key = {}, std::size_t index = 0) {
  if (pieces.empty()) fail_validation("perplexity of an empty segment");
  const auto lp = scorer.score(pieces);
  return {std::move(key), index, lp.tokens, lp.logprob, perplexity_from(lp.logprob, lp.tokens)};
}

struct ScoreSummary {
  std::size_t segments = 0;
  double mean_pp = 0.0;
  double median_pp = 0.0;
};

struct CorpusScores {
  std::vector<ScoredSegment> segments;
  ScoreSummary summary;
};

inline ScoreSummary summarize(const std::vector<ScoredSegment>& scored) {
  ScoreSummary s;
  s.segments = scored.size();
  if (scored.empty()) return s;
  std::vector<double> pps;
  pps.reserve(scored.size());
  for (const auto& x : scored) pps.push_back(x.pp);
  s.mean_pp = std::accumulate(pps.begin(), pps.end(), 0.0) / static_cast<double>(pps.size());
  std::sort(pps.begin(), pps.end());
  const auto n = pps.size();
  s.median_pp = n % 2 ? pps[n / 2] : 0.5 * (pps[n / 2 - 1] + pps[n / 2]);
  return s;
}

// Scores every segment of `corpus`, encoded with the LM's subword model.
inline CorpusScores score_corpus(const PieceScorer& scorer, const SubwordModel& subword,
                                 const std::vector<std::string>& segments, const std::string& key) {
  SubwordEncoder enc(subword);
  CorpusScores out;
  out.segments.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) out.segments.push_back(perplexity(scorer, enc.encode(segments[i]), key, i));
  out.summary = summarize(out.segments);
  return out;
}

inline CorpusScores score_corpus(const PieceScorer& scorer, const SubwordModel& subword, const MonoCorpus& corpus,
                                 const std::string& key) {
  return score_corpus(scorer, subword, corpus.segments, key);
}

inline std::string scores_to_tsv(const std::vector<ScoredSegment>& scored) {
  std::string out = "key\tindex\tN\tlogprob\tPP\n";
  char buf[128];
  for (const auto& s : scored) {
    std::snprintf(buf, sizeof buf, "\t%zu\t%zu\t%.17g\t%.17g\n", s.index, s.tokens, s.logprob, s.pp);
    out += s.key;
    out += buf;
  }
  return out;
}

inline std::vector<ScoredSegment> scores_from_tsv(const std::string& text) {
  std::vector<ScoredSegment> out;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("key\t", 0) == 0) continue;
    }
    std::vector<std::string> cols;
    std::size_t s = 0;
    while (true) {
      auto t = line.find('\t', s);
      cols.push_back(line.substr(s, t == std::string::npos ? std::string::npos : t - s));
      if (t == std::string::npos) break;
      s = t + 1;
    }
    if (cols.size() != 5) fail_validation("score TSV line needs 5 columns: " + line);
    out.push_back({cols[0], std::stoul(cols[1]), std::stoul(cols[2]), std::stod(cols[3]), std::stod(cols[4])});
  }
  return out;
}

}  // namespace lrladapt
