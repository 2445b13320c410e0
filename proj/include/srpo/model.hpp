#ifndef SRPO_MODEL_HPP_
#define SRPO_MODEL_HPP_

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "srpo/autodiff.hpp"
#include "srpo/core.hpp"
#include "srpo/rng.hpp"

// A tiny pre-norm causal transformer with learned positional embeddings and
// an untied output head. Two forward implementations share the same formulas:
// a plain one (sampling, evaluation, teacher scoring) and a tape one
// (training); a test asserts they agree to machine precision.

namespace srpo {

struct Distribution {
  std::vector<double> logprobs;  // log-softmax over V; logsumexp == 0
};

// ---- parameter layout -------------------------------------------------------

namespace layout {

struct Tensor {
  std::size_t off = 0;
  std::size_t size = 0;
};

// per-layer tensor order
enum LayerTensor {
  kLn1G, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kLn2G, kLn2B, kWUp, kBUp, kWDown, kBDown, kLayerTensorCount
};

struct Layout {
  ModelConfig cfg;
  Tensor tok_emb, pos_emb, lnf_g, lnf_b, w_out, b_out;
  std::vector<std::array<Tensor, kLayerTensorCount>> layers;
  std::size_t total = 0;
};

inline Layout make_layout(const ModelConfig& cfg) {
  Layout lo;
  lo.cfg = cfg;
  const std::size_t V = cfg.vocab_size, d = cfg.embed_dim,
                    m = static_cast<std::size_t>(cfg.mlp_expansion) * d;
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    Tensor t{off, n};
    off += n;
    return t;
  };
  lo.tok_emb = take(V * d);
  lo.pos_emb = take(static_cast<std::size_t>(cfg.context_len) * d);
  lo.layers.resize(cfg.num_layers);
  for (auto& L : lo.layers) {
    L[kLn1G] = take(d);
    L[kLn1B] = take(d);
    L[kWq] = take(d * d);
    L[kBq] = take(d);
    L[kWk] = take(d * d);
    L[kBk] = take(d);
    L[kWv] = take(d * d);
    L[kBv] = take(d);
    L[kWo] = take(d * d);
    L[kBo] = take(d);
    L[kLn2G] = take(d);
    L[kLn2B] = take(d);
    L[kWUp] = take(m * d);
    L[kBUp] = take(m);
    L[kWDown] = take(d * m);
    L[kBDown] = take(d);
  }
  lo.lnf_g = take(d);
  lo.lnf_b = take(d);
  lo.w_out = take(V * d);
  lo.b_out = take(V);
  lo.total = off;
  return lo;
}

}  // namespace layout

inline std::size_t param_count(const ModelConfig& cfg) {
  return layout::make_layout(cfg).total;
}

// Flat ordered vector of all trainable scalars; the layout supplies the
// structured view over the same storage.
struct PolicyParams {
  ModelConfig cfg;
  std::vector<double> flat;

  const layout::Layout& layout() const {
    if (layout_.total == 0) layout_ = layout::make_layout(cfg);
    return layout_;
  }

 private:
  mutable layout::Layout layout_;
};

inline PolicyParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const layout::Layout lo = layout::make_layout(cfg);
  PolicyParams p;
  p.cfg = cfg;
  p.flat.assign(lo.total, 0.0);
  Rng rng = derive_rng(seed, 0, 0, stream::kInit);
  const double d = cfg.embed_dim;
  const double m = cfg.mlp_expansion * d;
  auto fill = [&](const layout::Tensor& t, double scale) {
    for (std::size_t i = 0; i < t.size; ++i)
      p.flat[t.off + i] = scale * rng.normal();
  };
  auto ones = [&](const layout::Tensor& t) {
    for (std::size_t i = 0; i < t.size; ++i) p.flat[t.off + i] = 1.0;
  };
  fill(lo.tok_emb, 0.1);
  fill(lo.pos_emb, 0.1);
  for (const auto& L : lo.layers) {
    ones(L[layout::kLn1G]);
    fill(L[layout::kWq], 1.0 / std::sqrt(d));
    fill(L[layout::kWk], 1.0 / std::sqrt(d));
    fill(L[layout::kWv], 1.0 / std::sqrt(d));
    fill(L[layout::kWo], 0.5 / std::sqrt(d));
    ones(L[layout::kLn2G]);
    fill(L[layout::kWUp], 1.0 / std::sqrt(d));
    fill(L[layout::kWDown], 0.5 / std::sqrt(m));
  }
  ones(lo.lnf_g);
  fill(lo.w_out, 0.1 / std::sqrt(d));
  return p;
}

// ---- plain forward ----------------------------------------------------------

namespace detail {

using Vec = std::vector<double>;

inline Vec layer_norm_plain(const Vec& x, const double* g, const double* b) {
  constexpr double kEps = 1e-5;
  const int n = static_cast<int>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + kEps);
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = g[i] * (x[i] - mean) * inv + b[i];
  return out;
}

inline Vec affine_plain(const double* w, const double* b, const Vec& x,
                        int rows, int cols) {
  Vec out(rows);
  for (int r = 0; r < rows; ++r) {
    double s = b[r];
    const double* row = w + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) s += row[c] * x[c];
    out[r] = s;
  }
  return out;
}

inline double gelu_plain(double x) {
  constexpr double k = 0.7978845608028653558799;
  const double u = k * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline Vec log_softmax_plain(const Vec& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

// Hidden states after all layers (before the final LayerNorm) for every
// position of `context`.
inline std::vector<Vec> transformer_states(const PolicyParams& p,
                                           const TokenSeq& context) {
  const ModelConfig& cfg = p.cfg;
  const layout::Layout& lo = p.layout();
  const int T = static_cast<int>(context.size());
  if (T < 1) throw std::runtime_error("forward: empty context");
  if (T > cfg.context_len) throw std::runtime_error("forward: context too long");
  const int d = cfg.embed_dim;
  const int H = cfg.num_heads;
  const int dh = d / H;
  const int m = cfg.mlp_expansion * d;
  const double* F = p.flat.data();

  std::vector<Vec> h(T, Vec(d));
  for (int t = 0; t < T; ++t) {
    const TokenId tokid = context[t];
    if (tokid < 0 || tokid >= cfg.vocab_size)
      throw std::runtime_error("forward: token id out of vocabulary");
    const double* te = F + lo.tok_emb.off + static_cast<std::size_t>(tokid) * d;
    const double* pe = F + lo.pos_emb.off + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) h[t][i] = te[i] + pe[i];
  }

  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& L : p.layout().layers) {
    std::vector<Vec> q(T), k(T), v(T);
    for (int t = 0; t < T; ++t) {
      const Vec a = layer_norm_plain(h[t], F + L[layout::kLn1G].off,
                                     F + L[layout::kLn1B].off);
      q[t] = affine_plain(F + L[layout::kWq].off, F + L[layout::kBq].off, a, d, d);
      k[t] = affine_plain(F + L[layout::kWk].off, F + L[layout::kBk].off, a, d, d);
      v[t] = affine_plain(F + L[layout::kWv].off, F + L[layout::kBv].off, a, d, d);
    }
    for (int t = 0; t < T; ++t) {
      Vec ctx(d, 0.0);
      for (int head = 0; head < H; ++head) {
        const int o = head * dh;
        Vec scores(t + 1);
        double mx = -1e300;
        for (int j = 0; j <= t; ++j) {
          double s = 0.0;
          for (int i = 0; i < dh; ++i) s += q[t][o + i] * k[j][o + i];
          scores[j] = s * inv_scale;
          mx = std::max(mx, scores[j]);
        }
        double sum = 0.0;
        for (int j = 0; j <= t; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        for (int j = 0; j <= t; ++j) {
          const double a = scores[j] / sum;
          for (int i = 0; i < dh; ++i) ctx[o + i] += a * v[j][o + i];
        }
      }
      const Vec attn = affine_plain(F + L[layout::kWo].off,
                                    F + L[layout::kBo].off, ctx, d, d);
      for (int i = 0; i < d; ++i) h[t][i] += attn[i];
    }
    for (int t = 0; t < T; ++t) {
      const Vec a = layer_norm_plain(h[t], F + L[layout::kLn2G].off,
                                     F + L[layout::kLn2B].off);
      Vec u = affine_plain(F + L[layout::kWUp].off, F + L[layout::kBUp].off,
                           a, m, d);
      for (auto& x : u) x = gelu_plain(x);
      const Vec down = affine_plain(F + L[layout::kWDown].off,
                                    F + L[layout::kBDown].off, u, d, m);
      for (int i = 0; i < d; ++i) h[t][i] += down[i];
    }
  }
  return h;
}

inline Vec head_logprobs(const PolicyParams& p, const Vec& hidden) {
  const layout::Layout& lo = p.layout();
  const double* F = p.flat.data();
  const Vec f = layer_norm_plain(hidden, F + lo.lnf_g.off, F + lo.lnf_b.off);
  const Vec logits = affine_plain(F + lo.w_out.off, F + lo.b_out.off, f,
                                  p.cfg.vocab_size, p.cfg.embed_dim);
  return log_softmax_plain(logits);
}

}  // namespace detail

// Log-softmax over V for the position after `context`. Pure function.
inline Distribution next_token_distribution(const PolicyParams& params,
                                            const TokenSeq& context) {
  const auto h = detail::transformer_states(params, context);
  return Distribution{detail::head_logprobs(params, h.back())};
}

// Element t is the distribution over response[t] given prefix + response[<t].
// Teacher scoring passes the enriched prefix here.
inline std::vector<Distribution> score_trajectory(const PolicyParams& params,
                                                  const TokenSeq& prefix,
                                                  const TokenSeq& response) {
  if (prefix.empty()) throw std::runtime_error("score_trajectory: empty prefix");
  if (response.empty())
    throw std::runtime_error("score_trajectory: empty response");
  const int P = static_cast<int>(prefix.size());
  const int T = static_cast<int>(response.size());
  if (P + T > params.cfg.context_len + 1)
    throw std::runtime_error("score_trajectory: length overflow");
  TokenSeq seq = prefix;
  seq.insert(seq.end(), response.begin(), response.end() - 1);
  const auto h = detail::transformer_states(params, seq);
  std::vector<Distribution> out;
  out.reserve(T);
  for (int t = 0; t < T; ++t)
    out.push_back({detail::head_logprobs(params, h[P - 1 + t])});
  return out;
}

// Ancestral sampling with temperature scaling then nucleus truncation.
// behavior_logprobs record the UNTRUNCATED temperature-1 policy for each
// emitted token. Temperature below 1e-6 degenerates to greedy argmax.
inline Rollout sample_rollout(const PolicyParams& params, const TokenSeq& prompt,
                              int max_len, double temperature, double top_p,
                              Rng& rng, TokenId eos) {
  if (!(temperature >= 0)) throw std::runtime_error("sample_rollout: bad temperature");
  if (!(top_p > 0 && top_p <= 1)) throw std::runtime_error("sample_rollout: bad top_p");
  Rollout r;
  r.prompt = prompt;
  TokenSeq ctx = prompt;
  const int V = params.cfg.vocab_size;
  for (int step = 0; step < max_len; ++step) {
    const Distribution d = next_token_distribution(params, ctx);
    TokenId chosen;
    if (temperature < 1e-6) {
      chosen = 0;
      for (int i = 1; i < V; ++i)
        if (d.logprobs[i] > d.logprobs[chosen]) chosen = static_cast<TokenId>(i);
    } else {
      std::vector<double> probs(V);
      double mx = -1e300;
      for (int i = 0; i < V; ++i) mx = std::max(mx, d.logprobs[i] / temperature);
      double sum = 0.0;
      for (int i = 0; i < V; ++i) {
        probs[i] = std::exp(d.logprobs[i] / temperature - mx);
        sum += probs[i];
      }
      for (auto& x : probs) x /= sum;
      // nucleus: smallest prefix of the probability-sorted vocabulary whose
      // mass reaches top_p
      std::vector<int> order(V);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return probs[a] > probs[b]; });
      double mass = 0.0;
      int keep = 0;
      while (keep < V) {
        mass += probs[order[keep]];
        ++keep;
        if (mass >= top_p - 1e-12) break;
      }
      double u = rng.uniform() * mass;
      chosen = static_cast<TokenId>(order[keep - 1]);
      for (int i = 0; i < keep; ++i) {
        u -= probs[order[i]];
        if (u <= 0) {
          chosen = static_cast<TokenId>(order[i]);
          break;
        }
      }
    }
    r.response.push_back(chosen);
    r.behavior_logprobs.push_back(d.logprobs[chosen]);
    ctx.push_back(chosen);
    if (chosen == eos) break;
  }
  return r;
}

// theta_T <- (1 - alpha) theta_T + alpha theta_S
inline PolicyParams ema_update(const PolicyParams& teacher,
                               const PolicyParams& student, double alpha) {
  if (teacher.flat.size() != student.flat.size())
    throw std::runtime_error("ema_update: shape mismatch");
  if (alpha < 0 || alpha > 1) throw std::runtime_error("ema_update: alpha out of [0,1]");
  PolicyParams out = teacher;
  for (std::size_t i = 0; i < out.flat.size(); ++i)
    out.flat[i] = (1.0 - alpha) * teacher.flat[i] + alpha * student.flat[i];
  return out;
}

// ---- tape forward -----------------------------------------------------------

// Node ids of every parameter tensor on a tape, in layout order.
struct TapeModel {
  ad::Tape* tape = nullptr;
  const PolicyParams* params = nullptr;
  int tok_emb = -1, pos_emb = -1, lnf_g = -1, lnf_b = -1, w_out = -1, b_out = -1;
  std::vector<std::array<int, layout::kLayerTensorCount>> layers;
};

inline TapeModel tape_model(ad::Tape& tape, const PolicyParams& p) {
  const layout::Layout& lo = p.layout();
  auto leaf = [&](const layout::Tensor& t) {
    return tape.leaf(ad::Vec(p.flat.begin() + t.off,
                             p.flat.begin() + t.off + t.size));
  };
  TapeModel tm;
  tm.tape = &tape;
  tm.params = &p;
  tm.tok_emb = leaf(lo.tok_emb);
  tm.pos_emb = leaf(lo.pos_emb);
  tm.layers.resize(lo.layers.size());
  for (std::size_t l = 0; l < lo.layers.size(); ++l)
    for (int t = 0; t < layout::kLayerTensorCount; ++t)
      tm.layers[l][t] = leaf(lo.layers[l][t]);
  tm.lnf_g = leaf(lo.lnf_g);
  tm.lnf_b = leaf(lo.lnf_b);
  tm.w_out = leaf(lo.w_out);
  tm.b_out = leaf(lo.b_out);
  return tm;
}

// Hidden-state nodes (before the final LayerNorm) for every position.
inline std::vector<int> tape_transformer_states(const TapeModel& tm,
                                                const TokenSeq& context) {
  ad::Tape& tape = *tm.tape;
  const ModelConfig& cfg = tm.params->cfg;
  const int T = static_cast<int>(context.size());
  if (T < 1 || T > cfg.context_len)
    throw std::runtime_error("tape forward: bad context length");
  const int d = cfg.embed_dim;
  const int H = cfg.num_heads;
  const int dh = d / H;
  const int m = cfg.mlp_expansion * d;

  std::vector<int> h(T);
  for (int t = 0; t < T; ++t) {
    const int te = tape.embed_row(tm.tok_emb, context[t], d);
    const int pe = tape.embed_row(tm.pos_emb, t, d);
    h[t] = tape.add(te, pe);
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& L : tm.layers) {
    std::vector<int> q(T), k(T), v(T);
    for (int t = 0; t < T; ++t) {
      const int a = tape.layer_norm(h[t], L[layout::kLn1G], L[layout::kLn1B]);
      q[t] = tape.affine(L[layout::kWq], L[layout::kBq], a, d, d);
      k[t] = tape.affine(L[layout::kWk], L[layout::kBk], a, d, d);
      v[t] = tape.affine(L[layout::kWv], L[layout::kBv], a, d, d);
    }
    // per-head slices, reused across query positions
    std::vector<std::vector<int>> kh(H, std::vector<int>(T)),
        vh(H, std::vector<int>(T));
    for (int head = 0; head < H; ++head)
      for (int t = 0; t < T; ++t) {
        kh[head][t] = tape.slice(k[t], head * dh, dh);
        vh[head][t] = tape.slice(v[t], head * dh, dh);
      }
    for (int t = 0; t < T; ++t) {
      std::vector<int> heads(H);
      for (int head = 0; head < H; ++head) {
        const int qh = tape.slice(q[t], head * dh, dh);
        std::vector<int> keys(kh[head].begin(), kh[head].begin() + t + 1);
        std::vector<int> vals(vh[head].begin(), vh[head].begin() + t + 1);
        const int scores = tape.attn_scores(qh, std::move(keys), inv_scale);
        const int att = tape.softmax(scores);
        heads[head] = tape.mix(att, std::move(vals));
      }
      const int ctx = tape.concat(heads);
      const int attn = tape.affine(L[layout::kWo], L[layout::kBo], ctx, d, d);
      h[t] = tape.add(h[t], attn);
    }
    for (int t = 0; t < T; ++t) {
      const int a = tape.layer_norm(h[t], L[layout::kLn2G], L[layout::kLn2B]);
      const int up = tape.affine(L[layout::kWUp], L[layout::kBUp], a, m, d);
      const int act = tape.gelu(up);
      const int down = tape.affine(L[layout::kWDown], L[layout::kBDown], act, d, m);
      h[t] = tape.add(h[t], down);
    }
  }
  return h;
}

// Raw logit node for one hidden-state node.
inline int tape_logits(const TapeModel& tm, int hidden) {
  ad::Tape& tape = *tm.tape;
  const ModelConfig& cfg = tm.params->cfg;
  const int f = tape.layer_norm(hidden, tm.lnf_g, tm.lnf_b);
  return tape.affine(tm.w_out, tm.b_out, f, cfg.vocab_size, cfg.embed_dim);
}

inline int tape_logprobs(const TapeModel& tm, int hidden) {
  return tm.tape->log_softmax(tape_logits(tm, hidden));
}

// Per-response-position logit nodes, mirroring score_trajectory.
inline std::vector<int> tape_score_logits(const TapeModel& tm,
                                          const TokenSeq& prefix,
                                          const TokenSeq& response) {
  TokenSeq seq = prefix;
  seq.insert(seq.end(), response.begin(), response.end() - 1);
  const auto h = tape_transformer_states(tm, seq);
  const int P = static_cast<int>(prefix.size());
  std::vector<int> out;
  out.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t)
    out.push_back(tape_logits(tm, h[P - 1 + static_cast<int>(t)]));
  return out;
}

// Scatters tape gradients of every parameter tensor back into flat order.
inline std::vector<double> collect_flat_grad(const TapeModel& tm) {
  const layout::Layout& lo = tm.params->layout();
  std::vector<double> g(lo.total, 0.0);
  auto put = [&](const layout::Tensor& t, int node) {
    const ad::Vec& gn = tm.tape->grad(node);
    for (std::size_t i = 0; i < t.size; ++i) g[t.off + i] = gn[i];
  };
  put(lo.tok_emb, tm.tok_emb);
  put(lo.pos_emb, tm.pos_emb);
  for (size_t l = 0; l < lo.layers.size(); ++l)
    for (int t = 0; t < layout::kLayerTensorCount; ++t)
      put(lo.layers[l][t], tm.layers[l][t]);
  put(lo.lnf_g, tm.lnf_g);
  put(lo.lnf_b, tm.lnf_b);
  put(lo.w_out, tm.w_out);
  put(lo.b_out, tm.b_out);
  return g;
}

// Exact reverse-mode gradient of a scalar loss built from the tape ops.
struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

inline LossAndGrad loss_gradient(
    const PolicyParams& params,
    const std::function<int(ad::Tape&, const TapeModel&)>& loss_evaluator) {
  ad::Tape tape;
  const TapeModel tm = tape_model(tape, params);
  const int root = loss_evaluator(tape, tm);
  LossAndGrad out;
  out.loss = tape.val(root)[0];
  if (!std::isfinite(out.loss))
    throw std::runtime_error("loss_gradient: non-finite loss");
  tape.backward(root);
  out.grad = collect_flat_grad(tm);
  return out;
}

// ---- checkpoint records -----------------------------------------------------
// Record format: one-line JSON header, '\n', then the flat parameter vector as
// little-endian 64-bit floats.

inline void write_param_record(std::ostream& os, const PolicyParams& p,
                               const std::string& role, long step,
                               std::uint64_t seed) {
  nlohmann::json header = {{"role", role},
                           {"step", step},
                           {"seed", seed},
                           {"count", p.flat.size()},
                           {"model", to_json(p.cfg)}};
  os << header.dump() << "\n";
  os.write(reinterpret_cast<const char*>(p.flat.data()),
           static_cast<std::streamsize>(p.flat.size() * sizeof(double)));
}

struct ParamRecord {
  nlohmann::json header;
  PolicyParams params;
};

inline ParamRecord read_param_record(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("checkpoint: missing record header");
  ParamRecord rec;
  rec.header = nlohmann::json::parse(line);
  rec.params.cfg = model_config_from_json(rec.header.at("model"));
  const std::size_t count = rec.header.at("count").get<std::size_t>();
  if (count != param_count(rec.params.cfg))
    throw std::runtime_error("checkpoint: parameter count mismatch");
  rec.params.flat.resize(count);
  is.read(reinterpret_cast<char*>(rec.params.flat.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated record payload");
  return rec;
}

}  // namespace srpo

#endif  // SRPO_MODEL_HPP_
