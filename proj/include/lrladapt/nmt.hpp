#pragma once

// Toy pre-norm Transformer encoder-decoder with hand-written backward pass.
//
// Sentences of a batch are packed row-wise into one matrix so that every
// position-wise product is a single GEMM; attention runs per sentence on row
// ranges of the packed matrices.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lrladapt/checkpoint.hpp"
#include "lrladapt/corpus.hpp"
#include "lrladapt/error.hpp"
#include "lrladapt/rng.hpp"
#include "lrladapt/subword.hpp"

namespace lrladapt {

struct RowSpan {
  Eigen::Index start = 0;
  Eigen::Index len = 0;
};

// Source ids carry the <2xx> tag first and end in </s>; target ids are bare.
struct Example {
  std::vector<int> src;
  std::vector<int> tgt;
};

namespace nn {

template <typename S>
using Col = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Param {
  Mat<S>* w = nullptr;
  Mat<S>* g = nullptr;  // null when gradients are not tracked
};

template <typename S>
struct LnW {
  Param<S> g, b;
};
template <typename S>
struct AttnW {
  Param<S> wq, wk, wv, wo, bq, bk, bv, bo;
};
template <typename S>
struct FfW {
  Param<S> w1, b1, w2, b2;
};
template <typename S>
struct EncLayerW {
  LnW<S> ln1;
  AttnW<S> self;
  LnW<S> ln2;
  FfW<S> ff;
};
template <typename S>
struct DecLayerW {
  LnW<S> ln1;
  AttnW<S> self;
  LnW<S> ln2;
  AttnW<S> cross;
  LnW<S> ln3;
  FfW<S> ff;
};

template <typename S>
struct LnCache {
  Mat<S> xhat;
  Col<S> inv;
};
template <typename S>
struct AttnCache {
  Mat<S> xq, xkv, q, k, v, o;
  std::vector<Mat<S>> probs;  // per (segment, head)
};
template <typename S>
struct FfCache {
  Mat<S> x, h;
};
template <typename S>
struct EncLayerCache {
  LnCache<S> ln1, ln2;
  AttnCache<S> self;
  FfCache<S> ff;
  Mat<S> drop1, drop2;
};
template <typename S>
struct DecLayerCache {
  LnCache<S> ln1, ln2, ln3;
  AttnCache<S> self, cross;
  FfCache<S> ff;
  Mat<S> drop1, drop2, drop3;
};

inline constexpr double kLnEps = 1e-6;

template <typename S>
Mat<S> add_row(const Mat<S>& x, const Mat<S>& b) {
  return x.rowwise() + b.row(0);
}

template <typename S>
Mat<S> ln_forward(const LnW<S>& w, const Mat<S>& x, LnCache<S>& c) {
  const auto n = x.cols();
  Col<S> mean = x.rowwise().mean();
  Mat<S> xc = x.colwise() - mean;
  Col<S> var = xc.rowwise().squaredNorm() / static_cast<S>(n);
  c.inv = (var.array() + static_cast<S>(kLnEps)).rsqrt();
  c.xhat = xc.array().colwise() * c.inv.array();
  Mat<S> y = c.xhat.array().rowwise() * w.g.w->row(0).array();
  return add_row<S>(y, *w.b.w);
}

template <typename S>
Mat<S> ln_backward(const LnW<S>& w, const Mat<S>& dy, const LnCache<S>& c) {
  if (w.g.g) w.g.g->row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (w.b.g) w.b.g->row(0) += dy.colwise().sum();
  const S n = static_cast<S>(dy.cols());
  Mat<S> dxhat = dy.array().rowwise() * w.g.w->row(0).array();
  Col<S> s1 = dxhat.rowwise().sum();
  Col<S> s2 = (dxhat.array() * c.xhat.array()).rowwise().sum();
  Mat<S> dx = (n * dxhat.array() - (c.xhat.array().colwise() * s2.array())).colwise() - s1.array();
  return (dx.array().colwise() * (c.inv.array() / n)).matrix();
}

template <typename S>
Mat<S> attn_forward(const AttnW<S>& w, const Mat<S>& xq, const Mat<S>& xkv, const std::vector<RowSpan>& qs,
                    const std::vector<RowSpan>& ks, int heads, bool causal, AttnCache<S>& c) {
  const auto d = xq.cols();
  const auto dk = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
  c.xq = xq;
  c.xkv = xkv;
  c.q = add_row<S>(xq * *w.wq.w, *w.bq.w);
  c.k = add_row<S>(xkv * *w.wk.w, *w.bk.w);
  c.v = add_row<S>(xkv * *w.wv.w, *w.bv.w);
  c.o.setZero(xq.rows(), d);
  c.probs.resize(qs.size() * static_cast<std::size_t>(heads));
  for (std::size_t i = 0; i < qs.size(); ++i) {
    for (int h = 0; h < heads; ++h) {
      auto qh = c.q.block(qs[i].start, h * dk, qs[i].len, dk);
      auto kh = c.k.block(ks[i].start, h * dk, ks[i].len, dk);
      auto vh = c.v.block(ks[i].start, h * dk, ks[i].len, dk);
      Mat<S>& p = c.probs[i * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
      p.noalias() = (qh * kh.transpose()) * scale;
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        // in causal mode query r sees keys 0..r; the spans are aligned at the start
        const Eigen::Index visible = causal ? std::min<Eigen::Index>(r + 1, p.cols()) : p.cols();
        const S mx = p.row(r).head(visible).maxCoeff();
        S sum = 0;
        for (Eigen::Index j = 0; j < visible; ++j) {
          p(r, j) = std::exp(p(r, j) - mx);
          sum += p(r, j);
        }
        for (Eigen::Index j = 0; j < visible; ++j) p(r, j) /= sum;
        for (Eigen::Index j = visible; j < p.cols(); ++j) p(r, j) = 0;
      }
      c.o.block(qs[i].start, h * dk, qs[i].len, dk).noalias() = p * vh;
    }
  }
  return add_row<S>(c.o * *w.wo.w, *w.bo.w);
}

// Returns d(xq); d(xkv) is added into `dxkv`.
template <typename S>
Mat<S> attn_backward(const AttnW<S>& w, const Mat<S>& dy, const AttnCache<S>& c, const std::vector<RowSpan>& qs,
                     const std::vector<RowSpan>& ks, int heads, Mat<S>& dxkv) {
  const auto d = c.xq.cols();
  const auto dk = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
  if (w.wo.g) w.wo.g->noalias() += c.o.transpose() * dy;
  if (w.bo.g) w.bo.g->row(0) += dy.colwise().sum();
  Mat<S> d_o = dy * w.wo.w->transpose();
  Mat<S> dq = Mat<S>::Zero(c.q.rows(), d), dk_m = Mat<S>::Zero(c.k.rows(), d), dv = Mat<S>::Zero(c.v.rows(), d);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    for (int h = 0; h < heads; ++h) {
      const Mat<S>& p = c.probs[i * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
      auto doh = d_o.block(qs[i].start, h * dk, qs[i].len, dk);
      auto qh = c.q.block(qs[i].start, h * dk, qs[i].len, dk);
      auto kh = c.k.block(ks[i].start, h * dk, ks[i].len, dk);
      auto vh = c.v.block(ks[i].start, h * dk, ks[i].len, dk);
      dv.block(ks[i].start, h * dk, ks[i].len, dk).noalias() += p.transpose() * doh;
      Mat<S> dp = doh * vh.transpose();
      Col<S> rs = (dp.array() * p.array()).rowwise().sum();
      Mat<S> ds = (p.array() * (dp.array().colwise() - rs.array())) * scale;
      dq.block(qs[i].start, h * dk, qs[i].len, dk).noalias() += ds * kh;
      dk_m.block(ks[i].start, h * dk, ks[i].len, dk).noalias() += ds.transpose() * qh;
    }
  }
  if (w.wq.g) w.wq.g->noalias() += c.xq.transpose() * dq;
  if (w.bq.g) w.bq.g->row(0) += dq.colwise().sum();
  if (w.wk.g) w.wk.g->noalias() += c.xkv.transpose() * dk_m;
  if (w.bk.g) w.bk.g->row(0) += dk_m.colwise().sum();
  if (w.wv.g) w.wv.g->noalias() += c.xkv.transpose() * dv;
  if (w.bv.g) w.bv.g->row(0) += dv.colwise().sum();
  dxkv.noalias() += dk_m * w.wk.w->transpose();
  dxkv.noalias() += dv * w.wv.w->transpose();
  return dq * w.wq.w->transpose();
}

template <typename S>
Mat<S> ff_forward(const FfW<S>& w, const Mat<S>& x, FfCache<S>& c) {
  c.x = x;
  c.h = add_row<S>(x * *w.w1.w, *w.b1.w).cwiseMax(static_cast<S>(0));
  return add_row<S>(c.h * *w.w2.w, *w.b2.w);
}

template <typename S>
Mat<S> ff_backward(const FfW<S>& w, const Mat<S>& dy, const FfCache<S>& c) {
  if (w.w2.g) w.w2.g->noalias() += c.h.transpose() * dy;
  if (w.b2.g) w.b2.g->row(0) += dy.colwise().sum();
  Mat<S> dh = dy * w.w2.w->transpose();
  dh = (c.h.array() > static_cast<S>(0)).select(dh, static_cast<S>(0));
  if (w.w1.g) w.w1.g->noalias() += c.x.transpose() * dh;
  if (w.b1.g) w.b1.g->row(0) += dh.colwise().sum();
  return dh * w.w1.w->transpose();
}

// Inverted dropout; an empty mask means identity.
template <typename S>
void dropout(Mat<S>& x, double p, Rng* rng, Mat<S>& mask) {
  if (!rng || p <= 0.0) {
    mask.resize(0, 0);
    return;
  }
  mask.resize(x.rows(), x.cols());
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < p ? S(0) : keep;
  x.array() *= mask.array();
}

template <typename S>
Mat<S> dropout_backward(const Mat<S>& dy, const Mat<S>& mask) {
  if (mask.size() == 0) return dy;
  return dy.cwiseProduct(mask);
}

}  // namespace nn

struct LossStats {
  double loss = 0.0;  // mean label-smoothed cross-entropy per target token
  double nll = 0.0;   // mean negative log-likelihood per target token
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

// Gradients keyed by tensor object, so aliased tensors share one buffer.
template <typename S>
class GradStore {
 public:
  explicit GradStore(const BasicCheckpoint<S>& ck) {
    for (const auto& [name, ptr] : ck.tensors)
      if (!grads_.count(ptr.get())) grads_.emplace(ptr.get(), Mat<S>::Zero(ptr->rows(), ptr->cols()));
  }
  Mat<S>* of(const Mat<S>* w) { return &grads_.at(w); }
  void zero() {
    for (auto& [_, g] : grads_) g.setZero();
  }
  std::map<const Mat<S>*, Mat<S>>& all() { return grads_; }

 private:
  std::map<const Mat<S>*, Mat<S>> grads_;
};

template <typename S>
class Transformer {
 public:
  explicit Transformer(BasicCheckpoint<S>& ck, GradStore<S>* grads = nullptr) : ck_(&ck), cfg_(ck.config) {
    check_shapes(ck);
    auto p = [&](const std::string& name) {
      Mat<S>* w = &ck.at(name);
      return nn::Param<S>{w, grads ? grads->of(w) : nullptr};
    };
    auto ln = [&](const std::string& x) { return nn::LnW<S>{p(x + ".g"), p(x + ".b")}; };
    auto attn = [&](const std::string& x) {
      return nn::AttnW<S>{p(x + ".wq"), p(x + ".wk"), p(x + ".wv"), p(x + ".wo"),
                          p(x + ".bq"), p(x + ".bk"), p(x + ".bv"), p(x + ".bo")};
    };
    auto ff = [&](const std::string& x) { return nn::FfW<S>{p(x + ".w1"), p(x + ".b1"), p(x + ".w2"), p(x + ".b2")}; };
    src_emb_ = p(kSrcEmbed);
    tgt_emb_ = p(kTgtEmbed);
    out_ = p(kOutProj);
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto e = "enc." + std::to_string(l);
      enc_.push_back({ln(e + ".ln1"), attn(e + ".self"), ln(e + ".ln2"), ff(e + ".ff")});
      const auto x = "dec." + std::to_string(l);
      dec_.push_back({ln(x + ".ln1"), attn(x + ".self"), ln(x + ".ln2"), attn(x + ".cross"), ln(x + ".ln3"), ff(x + ".ff")});
    }
    enc_ln_ = ln("enc.ln");
    dec_ln_ = ln("dec.ln");
    const int d = cfg_.model_dim;
    const int positions = cfg_.max_len + 2;
    pe_.resize(positions, d);
    for (int pos = 0; pos < positions; ++pos)
      for (int i = 0; i < d; i += 2) {
        const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
        pe_(pos, i) = static_cast<S>(std::sin(angle));
        if (i + 1 < d) pe_(pos, i + 1) = static_cast<S>(std::cos(angle));
      }
  }

  const ModelConfig& config() const { return cfg_; }

  // Mean label-smoothed cross-entropy over the batch; accumulates gradients
  // into the store when one was given. `rng` drives dropout (null disables it).
  LossStats loss(const std::vector<const Example*>& batch, double label_smoothing, Rng* rng, bool backward) {
    Forward f;
    std::vector<std::vector<int>> src, dec_in;
    std::vector<int> gold;
    for (const auto* ex : batch) {
      check_ids(ex->src);
      check_ids(ex->tgt);
      src.push_back(ex->src);
      std::vector<int> in{kBosId};
      in.insert(in.end(), ex->tgt.begin(), ex->tgt.end());
      dec_in.push_back(std::move(in));
      gold.insert(gold.end(), ex->tgt.begin(), ex->tgt.end());
      gold.push_back(kEosId);
    }
    const double p_drop = rng ? cfg_.dropout : 0.0;
    encode(src, f, p_drop, rng);
    std::vector<RowSpan> ks = f.src_spans;
    decode(dec_in, ks, f, p_drop, rng);

    const Mat<S>& out = *out_.w;
    Mat<S> logits = f.dec_out * out.transpose();
    const auto n = logits.rows();
    const auto v = logits.cols();
    LossStats st;
    st.tokens = static_cast<std::size_t>(n);
    const double ls = label_smoothing;
    Mat<S> dlogits(n, v);
    for (Eigen::Index r = 0; r < n; ++r) {
      auto row = logits.row(r);
      Eigen::Index arg = 0;
      const S mx = row.maxCoeff(&arg);
      const double lse = static_cast<double>(mx) + std::log((row.array() - mx).exp().template cast<double>().sum());
      const int y = gold[static_cast<std::size_t>(r)];
      const double logp_y = static_cast<double>(row(y)) - lse;
      const double mean_logp = static_cast<double>(row.template cast<double>().sum()) / static_cast<double>(v) - lse;
      st.nll -= logp_y;
      st.loss -= (1.0 - ls) * logp_y + ls * mean_logp;
      if (arg == y) ++st.correct;
      if (backward) {
        for (Eigen::Index j = 0; j < v; ++j)
          dlogits(r, j) = static_cast<S>(std::exp(static_cast<double>(row(j)) - lse) - ls / static_cast<double>(v));
        dlogits(r, y) -= static_cast<S>(1.0 - ls);
      }
    }
    st.loss /= static_cast<double>(n);
    st.nll /= static_cast<double>(n);
    if (!backward) return st;

    dlogits /= static_cast<S>(n);
    if (out_.g) out_.g->noalias() += dlogits.transpose() * f.dec_out;
    Mat<S> d_dec = dlogits * out;
    Mat<S> d_enc = Mat<S>::Zero(f.enc_out.rows(), f.enc_out.cols());
    decode_backward(d_dec, f, d_enc);
    encode_backward(d_enc, f);
    return st;
  }

  // ---- inference

  struct EncodedSource {
    Mat<S> out;
    std::vector<RowSpan> spans;
  };

  EncodedSource encode_only(const std::vector<std::vector<int>>& src) {
    Forward f;
    encode(src, f, 0.0, nullptr);
    return {std::move(f.enc_out), std::move(f.src_spans)};
  }

  // Log-probabilities of the next token after each prefix; prefix i attends to
  // encoder rows kv[i].
  Mat<S> next_logprobs(const EncodedSource& enc, const std::vector<std::vector<int>>& prefixes, const std::vector<RowSpan>& kv) {
    Forward f;
    f.enc_out = enc.out;
    decode(prefixes, kv, f, 0.0, nullptr);
    Mat<S> last(static_cast<Eigen::Index>(prefixes.size()), cfg_.model_dim);
    for (std::size_t i = 0; i < prefixes.size(); ++i) {
      const auto& sp = f.tgt_spans[i];
      last.row(static_cast<Eigen::Index>(i)) = f.dec_out.row(sp.start + sp.len - 1);
    }
    Mat<S> logits = last * out_.w->transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const S mx = logits.row(r).maxCoeff();
      const S lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
      logits.row(r).array() -= lse;
    }
    return logits;
  }

 private:
  struct Forward {
    std::vector<RowSpan> src_spans, tgt_spans;
    std::vector<int> src_ids, tgt_ids;
    std::vector<int> src_pos, tgt_pos;
    Mat<S> drop_src, drop_tgt;
    std::vector<nn::EncLayerCache<S>> enc;
    nn::LnCache<S> enc_ln;
    Mat<S> enc_out;
    std::vector<RowSpan> kv_spans;
    std::vector<nn::DecLayerCache<S>> dec;
    nn::LnCache<S> dec_ln;
    Mat<S> dec_out;
  };

  void check_ids(const std::vector<int>& ids) const {
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        fail_validation("token id " + std::to_string(id) + " outside the vocabulary (size " + std::to_string(cfg_.vocab_size) + ")");
  }

  Mat<S> embed(const Mat<S>& table, const std::vector<std::vector<int>>& seqs, std::vector<RowSpan>& spans,
               std::vector<int>& ids, std::vector<int>& pos) const {
    Eigen::Index total = 0;
    spans.clear();
    ids.clear();
    pos.clear();
    for (const auto& s : seqs) {
      if (s.empty()) fail_validation("empty sequence in batch");
      if (static_cast<int>(s.size()) > cfg_.max_len + 2)
        fail_validation("sequence of " + std::to_string(s.size()) + " tokens exceeds the model's max length");
      spans.push_back({total, static_cast<Eigen::Index>(s.size())});
      total += static_cast<Eigen::Index>(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        ids.push_back(s[i]);
        pos.push_back(static_cast<int>(i));
      }
    }
    const S scale = static_cast<S>(std::sqrt(static_cast<double>(cfg_.model_dim)));
    Mat<S> x(total, cfg_.model_dim);
    for (Eigen::Index r = 0; r < total; ++r)
      x.row(r) = table.row(ids[static_cast<std::size_t>(r)]) * scale + pe_.row(pos[static_cast<std::size_t>(r)]);
    return x;
  }

  void embed_backward(const nn::Param<S>& table, const Mat<S>& dx, const std::vector<int>& ids) const {
    if (!table.g) return;
    const S scale = static_cast<S>(std::sqrt(static_cast<double>(cfg_.model_dim)));
    for (Eigen::Index r = 0; r < dx.rows(); ++r) table.g->row(ids[static_cast<std::size_t>(r)]) += dx.row(r) * scale;
  }

  void encode(const std::vector<std::vector<int>>& src, Forward& f, double p, Rng* rng) {
    Mat<S> x = embed(*src_emb_.w, src, f.src_spans, f.src_ids, f.src_pos);
    nn::dropout(x, p, rng, f.drop_src);
    f.enc.resize(enc_.size());
    for (std::size_t l = 0; l < enc_.size(); ++l) {
      auto& c = f.enc[l];
      const auto& w = enc_[l];
      const Mat<S> n1 = nn::ln_forward(w.ln1, x, c.ln1);
      Mat<S> a = nn::attn_forward(w.self, n1, n1, f.src_spans, f.src_spans, cfg_.heads, false, c.self);
      nn::dropout(a, p, rng, c.drop1);
      x += a;
      Mat<S> h = nn::ff_forward(w.ff, nn::ln_forward(w.ln2, x, c.ln2), c.ff);
      nn::dropout(h, p, rng, c.drop2);
      x += h;
    }
    f.enc_out = nn::ln_forward(enc_ln_, x, f.enc_ln);
  }

  void encode_backward(const Mat<S>& d_out, Forward& f) {
    Mat<S> dx = nn::ln_backward(enc_ln_, d_out, f.enc_ln);
    for (std::size_t l = enc_.size(); l-- > 0;) {
      auto& c = f.enc[l];
      const auto& w = enc_[l];
      Mat<S> dh = nn::dropout_backward(dx, c.drop2);
      dx += nn::ln_backward(w.ln2, nn::ff_backward(w.ff, dh, c.ff), c.ln2);
      Mat<S> da = nn::dropout_backward(dx, c.drop1);
      Mat<S> dkv = Mat<S>::Zero(dx.rows(), dx.cols());
      Mat<S> dq = nn::attn_backward(w.self, da, c.self, f.src_spans, f.src_spans, cfg_.heads, dkv);
      dx += nn::ln_backward(w.ln1, Mat<S>(dq + dkv), c.ln1);
    }
    embed_backward(src_emb_, nn::dropout_backward(dx, f.drop_src), f.src_ids);
  }

  void decode(const std::vector<std::vector<int>>& tgt, const std::vector<RowSpan>& kv, Forward& f, double p, Rng* rng) {
    Mat<S> y = embed(*tgt_emb_.w, tgt, f.tgt_spans, f.tgt_ids, f.tgt_pos);
    f.kv_spans = kv;
    nn::dropout(y, p, rng, f.drop_tgt);
    f.dec.resize(dec_.size());
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      auto& c = f.dec[l];
      const auto& w = dec_[l];
      const Mat<S> n1 = nn::ln_forward(w.ln1, y, c.ln1);
      Mat<S> a = nn::attn_forward(w.self, n1, n1, f.tgt_spans, f.tgt_spans, cfg_.heads, true, c.self);
      nn::dropout(a, p, rng, c.drop1);
      y += a;
      Mat<S> b = nn::attn_forward(w.cross, nn::ln_forward(w.ln2, y, c.ln2), f.enc_out, f.tgt_spans, f.kv_spans,
                                  cfg_.heads, false, c.cross);
      nn::dropout(b, p, rng, c.drop2);
      y += b;
      Mat<S> h = nn::ff_forward(w.ff, nn::ln_forward(w.ln3, y, c.ln3), c.ff);
      nn::dropout(h, p, rng, c.drop3);
      y += h;
    }
    f.dec_out = nn::ln_forward(dec_ln_, y, f.dec_ln);
  }

  void decode_backward(const Mat<S>& d_out, Forward& f, Mat<S>& d_enc) {
    Mat<S> dy = nn::ln_backward(dec_ln_, d_out, f.dec_ln);
    for (std::size_t l = dec_.size(); l-- > 0;) {
      auto& c = f.dec[l];
      const auto& w = dec_[l];
      dy += nn::ln_backward(w.ln3, nn::ff_backward(w.ff, nn::dropout_backward(dy, c.drop3), c.ff), c.ln3);
      Mat<S> db = nn::dropout_backward(dy, c.drop2);
      Mat<S> dq = nn::attn_backward(w.cross, db, c.cross, f.tgt_spans, f.kv_spans, cfg_.heads, d_enc);
      dy += nn::ln_backward(w.ln2, dq, c.ln2);
      Mat<S> da = nn::dropout_backward(dy, c.drop1);
      Mat<S> dkv = Mat<S>::Zero(dy.rows(), dy.cols());
      Mat<S> dq1 = nn::attn_backward(w.self, da, c.self, f.tgt_spans, f.tgt_spans, cfg_.heads, dkv);
      dy += nn::ln_backward(w.ln1, Mat<S>(dq1 + dkv), c.ln1);
    }
    embed_backward(tgt_emb_, nn::dropout_backward(dy, f.drop_tgt), f.tgt_ids);
  }

  BasicCheckpoint<S>* ck_;
  ModelConfig cfg_;
  nn::Param<S> src_emb_, tgt_emb_, out_;
  std::vector<nn::EncLayerW<S>> enc_;
  std::vector<nn::DecLayerW<S>> dec_;
  nn::LnW<S> enc_ln_, dec_ln_;
  Mat<S> pe_;
};

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
  int batch_tokens = 4096;
  int warmup = 8000;
  double lr_constant = 2.0;
  int max_steps = 1000;
  std::optional<double> dropout;  // overrides the model's rate when set
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  bool continue_schedule = true;  // false restarts warmup at this call's first step
};

inline void validate(const TrainConfig& c) {
  if (c.warmup < 1) fail_validation("warmup must be >= 1");
  if (c.batch_tokens < 1) fail_validation("batch_tokens must be >= 1");
  if (c.max_steps < 0) fail_validation("max_steps must be >= 0");
  if (c.label_smoothing < 0.0 || c.label_smoothing >= 1.0) fail_validation("label smoothing must lie in [0,1)");
  if (c.dropout && !(*c.dropout >= 0.0 && *c.dropout < 1.0)) fail_validation("dropout must lie in [0,1)");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"batch_tokens", c.batch_tokens}, {"warmup", c.warmup},   {"lr_constant", c.lr_constant},
                   {"max_steps", c.max_steps},       {"label_smoothing", c.label_smoothing},
                   {"seed", c.seed},                 {"beta1", c.beta1},     {"beta2", c.beta2},
                   {"adam_eps", c.adam_eps},         {"continue_schedule", c.continue_schedule}};
  j["dropout"] = c.dropout ? nlohmann::json(*c.dropout) : nlohmann::json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_tokens = j.value("batch_tokens", c.batch_tokens);
  c.warmup = j.value("warmup", c.warmup);
  c.lr_constant = j.value("lr_constant", c.lr_constant);
  c.max_steps = j.value("max_steps", c.max_steps);
  if (j.contains("dropout") && !j["dropout"].is_null()) c.dropout = j["dropout"].get<double>();
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.continue_schedule = j.value("continue_schedule", c.continue_schedule);
  return c;
}

// Linear warmup to step `warmup`, then inverse square root decay.
inline double learning_rate(std::int64_t step, int model_dim, int warmup, double constant) {
  const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
  return constant * std::pow(static_cast<double>(model_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(warmup, -1.5));
}

// Tokenized training data plus the accounting of what was left out.
struct EncodedStream {
  std::vector<Example> examples;
  std::vector<ManifestRecord> manifest;
  std::size_t dropped_too_long = 0;
  std::size_t unk_tokens = 0;
};

template <typename S>
std::vector<int> encode_source(const BasicCheckpoint<S>& ck, const SubwordEncoder& enc, const LangTag& tgt_lang,
                               const std::string& text, std::size_t* unk) {
  const auto tag = control_token(tgt_lang);
  auto tag_id = ck.vocab.find(tag);
  if (!tag_id || !ck.vocab.is_reserved(*tag_id))
    fail_validation("control token " + tag + " is not registered in the vocabulary");
  std::vector<int> ids{*tag_id};
  auto body = enc.encode_ids(text, ck.vocab, unk);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(kEosId);
  return ids;
}

template <typename S>
EncodedStream encode_stream(const BasicCheckpoint<S>& ck, const PairStream& stream) {
  SubwordEncoder enc(ck.subword);
  EncodedStream out;
  std::map<std::pair<LangTag, LangTag>, std::size_t> counts;
  std::vector<std::pair<LangTag, LangTag>> order;
  for (const auto& p : stream.pairs) {
    Example ex;
    ex.src = encode_source(ck, enc, p.tgt_lang, p.src, &out.unk_tokens);
    ex.tgt = enc.encode_ids(p.tgt, ck.vocab, &out.unk_tokens);
    // the source carries tag and </s>; the decoder sees <s> + target and predicts target + </s>
    if (static_cast<int>(ex.src.size()) - 2 > ck.config.max_len || static_cast<int>(ex.tgt.size()) > ck.config.max_len) {
      ++out.dropped_too_long;
      continue;
    }
    auto key = std::make_pair(p.src_lang, p.tgt_lang);
    if (!counts.count(key)) order.push_back(key);
    ++counts[key];
    out.examples.push_back(std::move(ex));
  }
  for (const auto& k : order) out.manifest.push_back({k.first, k.second, counts[k]});
  return out;
}

struct StepLog {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::size_t tokens = 0;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::size_t dropped_too_long = 0;
  std::size_t unk_tokens = 0;
  std::size_t examples = 0;
};

inline nlohmann::json to_json(const StepLog& s) {
  return {{"step", s.step}, {"lr", s.lr}, {"loss", s.loss}, {"tokens", s.tokens}};
}

// Batches of whole sentences: consecutive examples of a seeded shuffle are
// added while the padded token count (sentences x longest side) stays within
// `batch_tokens`. A new shuffle starts at every epoch.
class BatchStream {
 public:
  BatchStream(const std::vector<Example>& data, int batch_tokens, std::uint64_t seed)
      : data_(&data), batch_tokens_(batch_tokens), rng_(seed) {
    if (data.empty()) fail_validation("no training examples");
    order_.resize(data.size());
    reshuffle();
  }

  std::vector<const Example*> next() {
    std::vector<const Example*> batch;
    std::size_t longest = 0;
    while (true) {
      if (pos_ == order_.size()) {
        if (!batch.empty()) break;
        reshuffle();
      }
      const auto& ex = (*data_)[order_[pos_]];
      const std::size_t len = std::max(ex.src.size(), ex.tgt.size() + 1);
      const std::size_t cost = std::max(longest, len) * (batch.size() + 1);
      if (!batch.empty() && cost > static_cast<std::size_t>(batch_tokens_)) break;
      longest = std::max(longest, len);
      batch.push_back(&ex);
      ++pos_;
    }
    return batch;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
    pos_ = 0;
  }

  const std::vector<Example>* data_;
  int batch_tokens_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// Called after every optimizer step with the run-local step number.
template <typename S>
using StepHook = std::function<void(int step, BasicCheckpoint<S>& ck)>;

// Adam with the warmup/inverse-sqrt schedule. Adam moments start fresh on
// every call. The learning rate follows the
// checkpoint's global step unless `continue_schedule` is off.
template <typename S>
TrainResult train(BasicCheckpoint<S>& ck, const EncodedStream& data, const TrainConfig& cfg,
                  std::type_identity_t<StepHook<S>> hook = {}) {
  validate(cfg);
  TrainResult res;
  res.dropped_too_long = data.dropped_too_long;
  res.unk_tokens = data.unk_tokens;
  res.examples = data.examples.size();
  if (cfg.max_steps == 0) return res;
  if (data.examples.empty()) fail_validation("no training examples left after length filtering");
  if (cfg.dropout) ck.config.dropout = *cfg.dropout;
  GradStore<S> grads(ck);
  Transformer<S> model(ck, &grads);
  std::map<const Mat<S>*, std::pair<Mat<S>, Mat<S>>> moments;
  for (auto& [w, g] : grads.all()) moments.emplace(w, std::make_pair(Mat<S>::Zero(g.rows(), g.cols()), Mat<S>::Zero(g.rows(), g.cols())));
  BatchStream batches(data.examples, cfg.batch_tokens, derive_seed(cfg.seed, "batches"));
  Rng drop_rng(derive_seed(cfg.seed, "dropout"));
  ck.seeds.push_back({"train@" + std::to_string(ck.step), cfg.seed});
  for (int step = 1; step <= cfg.max_steps; ++step) {
    grads.zero();
    const auto batch = batches.next();
    const auto st = model.loss(batch, cfg.label_smoothing, &drop_rng, true);
    const std::int64_t sched = cfg.continue_schedule ? ck.step + 1 : step;
    const double lr = learning_rate(sched, ck.config.model_dim, cfg.warmup, cfg.lr_constant);
    const double c1 = 1.0 - std::pow(cfg.beta1, step), c2 = 1.0 - std::pow(cfg.beta2, step);
    for (auto& [w, g] : grads.all()) {
      auto& [m, v] = moments.at(w);
      m = static_cast<S>(cfg.beta1) * m + static_cast<S>(1.0 - cfg.beta1) * g;
      v = static_cast<S>(cfg.beta2) * v + static_cast<S>(1.0 - cfg.beta2) * g.cwiseProduct(g);
      auto* param = const_cast<Mat<S>*>(w);
      param->array() -= static_cast<S>(lr) * (m.array() / static_cast<S>(c1)) /
                        ((v.array() / static_cast<S>(c2)).sqrt() + static_cast<S>(cfg.adam_eps));
    }
    ++ck.step;
    res.log.push_back({ck.step, lr, st.loss, st.tokens});
    if (hook) hook(step, ck);
  }
  for (const auto& m : data.manifest) {
    auto it = std::find_if(ck.manifest.begin(), ck.manifest.end(),
                           [&](const ManifestRecord& r) { return r.src == m.src && r.tgt == m.tgt; });
    if (it == ck.manifest.end())
      ck.manifest.push_back(m);
    else
      it->pairs += m.pairs;
  }
  return res;
}

// ---------------------------------------------------------------------------
// decoding

struct Hypothesis {
  std::vector<int> ids;  // without <s>; ends in </s> when finished
  double logprob = 0.0;
  bool finished = false;

  // length-normalized score (exponent 1)
  double score() const { return logprob / static_cast<double>(std::max<std::size_t>(ids.size(), 1)); }
};

template <typename S>
std::vector<Hypothesis> greedy_decode(Transformer<S>& model, const std::vector<std::vector<int>>& src, int max_len) {
  auto enc = model.encode_only(src);
  std::vector<Hypothesis> hyps(src.size());
  std::vector<std::size_t> live(src.size());
  std::iota(live.begin(), live.end(), std::size_t{0});
  for (int t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    std::vector<RowSpan> kv;
    for (auto i : live) {
      std::vector<int> p{kBosId};
      p.insert(p.end(), hyps[i].ids.begin(), hyps[i].ids.end());
      prefixes.push_back(std::move(p));
      kv.push_back(enc.spans[i]);
    }
    const auto lp = model.next_logprobs(enc, prefixes, kv);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < live.size(); ++k) {
      Eigen::Index arg = 0;
      const double best = static_cast<double>(lp.row(static_cast<Eigen::Index>(k)).maxCoeff(&arg));
      auto& h = hyps[live[k]];
      h.ids.push_back(static_cast<int>(arg));
      h.logprob += best;
      if (arg == kEosId)
        h.finished = true;
      else
        still.push_back(live[k]);
    }
    live = std::move(still);
  }
  return hyps;
}

// Length-normalized beam search. The greedy path is kept as a candidate, so
// the returned score is never below the greedy score; width 1 is greedy.
template <typename S>
Hypothesis beam_decode(Transformer<S>& model, const std::vector<int>& src, int beam, int max_len) {
  if (beam < 1) fail_validation("beam width must be >= 1");
  const auto greedy = greedy_decode(model, {src}, max_len).front();
  if (beam == 1) return greedy;
  auto enc = model.encode_only({src});
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> done;
  for (int t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    std::vector<RowSpan> kv;
    for (const auto& h : live) {
      std::vector<int> p{kBosId};
      p.insert(p.end(), h.ids.begin(), h.ids.end());
      prefixes.push_back(std::move(p));
      kv.push_back(enc.spans[0]);
    }
    const auto lp = model.next_logprobs(enc, prefixes, kv);
    std::vector<Hypothesis> cand;
    for (std::size_t k = 0; k < live.size(); ++k) {
      auto row = lp.row(static_cast<Eigen::Index>(k));
      std::vector<int> idx(static_cast<std::size_t>(row.size()));
      std::iota(idx.begin(), idx.end(), 0);
      const auto top = std::min<std::size_t>(static_cast<std::size_t>(beam), idx.size());
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                        [&](int a, int b) { return row(a) > row(b) || (row(a) == row(b) && a < b); });
      for (std::size_t j = 0; j < top; ++j) {
        Hypothesis h = live[k];
        h.ids.push_back(idx[j]);
        h.logprob += static_cast<double>(row(idx[j]));
        h.finished = idx[j] == kEosId;
        cand.push_back(std::move(h));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.logprob > b.logprob; });
    live.clear();
    for (auto& h : cand) {
      if (static_cast<int>(live.size()) >= beam) break;
      if (h.finished)
        done.push_back(std::move(h));
      else
        live.push_back(std::move(h));
    }
    if (static_cast<int>(done.size()) >= beam) break;
  }
  for (auto& h : live) done.push_back(std::move(h));
  done.push_back(greedy);
  return *std::max_element(done.begin(), done.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score() < b.score(); });
}

// Strips a trailing </s> and maps ids back to text.
inline std::string hypothesis_text(const Hypothesis& h, const Vocabulary& vocab) {
  std::vector<int> ids = h.ids;
  if (!ids.empty() && ids.back() == kEosId) ids.pop_back();
  std::vector<std::string> pieces;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    pieces.push_back(vocab.piece(id));
  }
  return decode_pieces(pieces);
}

struct TranslateOptions {
  int beam = 5;
  int max_len = 100;
  std::size_t batch_sentences = 64;
};

// Translates `sources` into `tgt_lang`.
template <typename S>
std::vector<std::string> translate(BasicCheckpoint<S>& ck, const std::vector<std::string>& sources, const LangTag& tgt_lang,
                                   const TranslateOptions& opt) {
  if (sources.empty()) fail_validation("translate: empty source");
  if (opt.beam < 1) fail_validation("beam width must be >= 1");
  Transformer<S> model(ck);
  SubwordEncoder enc(ck.subword);
  std::vector<std::vector<int>> src;
  for (const auto& s : sources) {
    auto ids = encode_source(ck, enc, tgt_lang, s, nullptr);
    if (static_cast<int>(ids.size()) > ck.config.max_len + 2) {
      ids.resize(static_cast<std::size_t>(ck.config.max_len + 1));
      ids.push_back(kEosId);
    }
    src.push_back(std::move(ids));
  }
  const int max_len = std::min(opt.max_len, ck.config.max_len + 1);
  std::vector<std::string> out;
  out.reserve(src.size());
  if (opt.beam == 1) {
    for (std::size_t b = 0; b < src.size(); b += opt.batch_sentences) {
      std::vector<std::vector<int>> chunk(src.begin() + static_cast<std::ptrdiff_t>(b),
                                          src.begin() + static_cast<std::ptrdiff_t>(std::min(src.size(), b + opt.batch_sentences)));
      for (const auto& h : greedy_decode(model, chunk, max_len)) out.push_back(hypothesis_text(h, ck.vocab));
    }
  } else {
    for (const auto& s : src) out.push_back(hypothesis_text(beam_decode(model, s, opt.beam, max_len), ck.vocab));
  }
  return out;
}

struct ZeroShotReport {
  LangTag test_lang;
  Direction direction = Direction::kToPivot;
  std::vector<ManifestRecord> training_manifest;
};

inline nlohmann::json to_json(const ZeroShotReport& r) {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& x : r.training_manifest) m.push_back({{"src", x.src.code()}, {"tgt", x.tgt.code()}, {"pairs", x.pairs}});
  return {{"zero_shot", true}, {"test_lang", r.test_lang.code()}, {"direction", to_string(r.direction)}, {"training_manifest", m}};
}

struct ZeroShotResult {
  std::vector<std::string> hypotheses;
  ZeroShotReport report;
};

// Translates a test language the checkpoint has never been trained on. In the
// from-pivot direction the language's tag must already own a vocabulary slot
// (see assign_control_token).
template <typename S>
ZeroShotResult zero_shot_translate(BasicCheckpoint<S>& ck, const Bitext& test, Direction dir, const TranslateOptions& opt) {
  const LangTag lang = test.src_lang;
  const auto seen = ck.trained_languages();
  if (seen.count(lang))
    fail_validation("zero-shot evaluation refused: '" + lang.code() + "' is in the checkpoint's training manifest");
  std::vector<std::string> sources;
  for (const auto& [s, t] : test.pairs) sources.push_back(dir == Direction::kToPivot ? s : t);
  ZeroShotResult r;
  r.hypotheses = translate(ck, sources, dir == Direction::kToPivot ? test.tgt_lang : lang, opt);
  r.report = {lang, dir, ck.manifest};
  return r;
}

}  // namespace lrladapt
