#pragma once

// Corpus BLEU (4-gram, uniform weights, clipped counts, brevity penalty, no
// smoothing) on whitespace tokens, and paired bootstrap resampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrladapt/error.hpp"
#include "lrladapt/rng.hpp"
#include "lrladapt/util.hpp"

namespace lrladapt {

inline constexpr int kBleuOrder = 4;

// Sufficient statistics of one hypothesis/reference pair.
struct BleuStats {
  std::array<std::int64_t, kBleuOrder> matches{};
  std::array<std::int64_t, kBleuOrder> totals{};
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int n = 0; n < kBleuOrder; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
  }

  bool operator==(const BleuStats&) const = default;
};

struct BleuScore {
  double score = 0.0;  // 0..100
  std::array<double, kBleuOrder> precisions{};
  double brevity_penalty = 1.0;
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;
};

inline BleuStats segment_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  BleuStats s;
  s.hyp_len = static_cast<std::int64_t>(hyp.size());
  s.ref_len = static_cast<std::int64_t>(ref.size());
  for (int n = 1; n <= kBleuOrder; ++n) {
    std::map<std::vector<std::string>, std::int64_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_counts[std::vector<std::string>(ref.begin() + static_cast<std::ptrdiff_t>(i), ref.begin() + static_cast<std::ptrdiff_t>(i + n))];
    std::map<std::vector<std::string>, std::int64_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i)
      ++hyp_counts[std::vector<std::string>(hyp.begin() + static_cast<std::ptrdiff_t>(i), hyp.begin() + static_cast<std::ptrdiff_t>(i + n))];
    std::int64_t total = 0, match = 0;
    for (const auto& [g, c] : hyp_counts) {
      total += c;
      auto it = ref_counts.find(g);
      if (it != ref_counts.end()) match += std::min(c, it->second);
    }
    s.matches[n - 1] = match;
    s.totals[n - 1] = total;
  }
  return s;
}

inline BleuScore bleu_from_stats(const BleuStats& s) {
  BleuScore b;
  b.hyp_len = s.hyp_len;
  b.ref_len = s.ref_len;
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < kBleuOrder; ++n) {
    b.precisions[n] = s.totals[n] > 0 ? static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]) : 0.0;
    if (b.precisions[n] <= 0.0)
      zero = true;
    else
      log_sum += std::log(b.precisions[n]);
  }
  const double c = static_cast<double>(std::max<std::int64_t>(s.hyp_len, 1));
  const double r = static_cast<double>(s.ref_len);
  b.brevity_penalty = c >= r ? 1.0 : std::exp(1.0 - r / c);
  b.score = zero ? 0.0 : 100.0 * b.brevity_penalty * std::exp(log_sum / kBleuOrder);
  return b;
}

inline std::vector<BleuStats> corpus_stats(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size())
    fail_validation("BLEU: " + std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) + " references");
  if (refs.empty()) fail_validation("BLEU: empty test set");
  std::vector<BleuStats> out;
  out.reserve(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto ref = split_ws(refs[i]);
    if (ref.empty()) fail_validation("BLEU: empty reference at line " + std::to_string(i + 1));
    out.push_back(segment_stats(split_ws(hyps[i]), ref));
  }
  return out;
}

inline BleuStats sum_stats(const std::vector<BleuStats>& stats) {
  BleuStats total;
  for (const auto& s : stats) total += s;
  return total;
}

inline BleuScore bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  return bleu_from_stats(sum_stats(corpus_stats(hyps, refs)));
}

inline nlohmann::json to_json(const BleuScore& b) {
  return {{"bleu", b.score},
          {"precisions", b.precisions},
          {"brevity_penalty", b.brevity_penalty},
          {"hyp_len", b.hyp_len},
          {"ref_len", b.ref_len}};
}

inline nlohmann::json to_json(const BleuStats& s) {
  return {{"m", s.matches}, {"t", s.totals}, {"h", s.hyp_len}, {"r", s.ref_len}};
}

inline BleuStats bleu_stats_from_json(const nlohmann::json& j) {
  BleuStats s;
  s.matches = j.at("m").get<std::array<std::int64_t, kBleuOrder>>();
  s.totals = j.at("t").get<std::array<std::int64_t, kBleuOrder>>();
  s.hyp_len = j.at("h").get<std::int64_t>();
  s.ref_len = j.at("r").get<std::int64_t>();
  return s;
}

// ---------------------------------------------------------------------------
// paired bootstrap

struct SignificanceResult {
  double p_value = 1.0;     // for the observed winner
  double p_a_better = 0.5;  // fraction of resamples where A does not beat B (ties count half)
  int resamples = 0;
  double mean_diff = 0.0;  // mean over resamples of BLEU(A) - BLEU(B)
  double observed_a = 0.0;
  double observed_b = 0.0;
  std::string winner = "none";  // "A", "B" or "none"

  bool significant(double alpha = 0.05) const { return winner != "none" && p_value < alpha; }
};

// Each resample draws its segment indices from a seed derived from (seed, resample index).
inline SignificanceResult bootstrap(const std::vector<BleuStats>& a, const std::vector<BleuStats>& b, int resamples,
                                    std::uint64_t seed) {
  if (a.size() != b.size())
    fail_validation("bootstrap: systems were scored on different test sets (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + " segments)");
  if (a.empty()) fail_validation("bootstrap: empty test set");
  if (resamples < 100) fail_validation("bootstrap needs at least 100 resamples");
  SignificanceResult r;
  r.resamples = resamples;
  r.observed_a = bleu_from_stats(sum_stats(a)).score;
  r.observed_b = bleu_from_stats(sum_stats(b)).score;
  const auto n = a.size();
  double a_wins = 0.0, diff_sum = 0.0;
  for (int k = 0; k < resamples; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    BleuStats sa, sb;
    for (std::size_t i = 0; i < n; ++i) {
      const auto idx = rng.below(n);
      sa += a[idx];
      sb += b[idx];
    }
    const double ba = bleu_from_stats(sa).score, bb = bleu_from_stats(sb).score;
    if (ba > bb)
      a_wins += 1.0;
    else if (ba == bb)
      a_wins += 0.5;
    diff_sum += ba - bb;
  }
  r.p_a_better = 1.0 - a_wins / resamples;
  r.mean_diff = diff_sum / resamples;
  if (r.observed_a > r.observed_b) {
    r.winner = "A";
    r.p_value = r.p_a_better;
  } else if (r.observed_b > r.observed_a) {
    r.winner = "B";
    r.p_value = 1.0 - r.p_a_better;
  } else {
    r.p_value = std::max(r.p_a_better, 1.0 - r.p_a_better);
  }
  return r;
}

inline nlohmann::json to_json(const SignificanceResult& r) {
  return {{"p_value", r.p_value},       {"p_a_better", r.p_a_better}, {"resamples", r.resamples},
          {"mean_diff", r.mean_diff},   {"bleu_a", r.observed_a},     {"bleu_b", r.observed_b},
          {"winner", r.winner},         {"significant", r.significant()}};
}

}  // namespace lrladapt
