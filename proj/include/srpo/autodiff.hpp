#ifndef SRPO_AUTODIFF_HPP_
#define SRPO_AUTODIFF_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

// Reverse-mode autodiff over vector-valued nodes. One tape per loss
// evaluation; nodes are appended in topological order and walked backward
// once, in reverse, so the summation order of gradient accumulation is fixed
// and deterministic.

namespace srpo::ad {

using Vec = std::vector<double>;

class Tape {
 public:
  struct Node {
    Vec val;
    Vec grad;
    std::function<void(Tape&)> back;  // empty for leaves
  };

  int leaf(Vec v) {
    nodes_.push_back({std::move(v), {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Vec& val(int id) const { return nodes_[id].val; }
  Vec& grad(int id) { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise / vector ops -------------------------------------------

  int add(int a, int b) {
    const Vec& x = val(a);
    const Vec& y = val(b);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return push(std::move(out), [a, b](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      t.bump(a, g);
      t.bump(b, g);
    });
  }

  int mul(int a, int b) {
    const Vec& x = val(a);
    const Vec& y = val(b);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return push(std::move(out), [a, b](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& x = t.val(a);
      const Vec& y = t.val(b);
      Vec& ga = t.grad_of(a);
      Vec& gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * y[i];
        gb[i] += g[i] * x[i];
      }
    });
  }

  int scale(int a, double c) {
    Vec out = val(a);
    for (auto& v : out) v *= c;
    return push(std::move(out), [a, c](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      Vec& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }

  int add_const(int a, const Vec& c) {
    Vec out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
    return push(std::move(out),
                [a](Tape& t) { t.bump(a, t.grad(t.cur_)); });
  }

  int vlog(int a) {
    Vec out = val(a);
    for (auto& v : out) v = std::log(v);
    return push(std::move(out), [a](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& x = t.val(a);
      Vec& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    });
  }

  int vexp(int a) {
    Vec out = val(a);
    for (auto& v : out) v = std::exp(v);
    const int id = push(std::move(out), [a](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& y = t.val(t.cur_);
      Vec& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
    return id;
  }

  // y = W x + b. W is a node whose value is a row-major (rows x cols) matrix.
  int affine(int w, int b, int x, int rows, int cols) {
    const Vec& wm = val(w);
    const Vec& bv = val(b);
    const Vec& xv = val(x);
    Vec out(rows);
    for (int r = 0; r < rows; ++r) {
      double s = bv[r];
      const double* row = wm.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) s += row[c] * xv[c];
      out[r] = s;
    }
    return push(std::move(out), [w, b, x, rows, cols](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& wm = t.val(w);
      const Vec& xv = t.val(x);
      Vec& gw = t.grad_of(w);
      Vec& gb = t.grad_of(b);
      Vec& gx = t.grad_of(x);
      for (int r = 0; r < rows; ++r) {
        const double gr = g[r];
        gb[r] += gr;
        double* gwrow = gw.data() + static_cast<std::size_t>(r) * cols;
        const double* wrow = wm.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          gwrow[c] += gr * xv[c];
          gx[c] += gr * wrow[c];
        }
      }
    });
  }

  // y = row `row` of the (rows x cols) table node.
  int embed_row(int table, int row, int cols) {
    const Vec& tm = val(table);
    Vec out(tm.begin() + static_cast<std::size_t>(row) * cols,
            tm.begin() + static_cast<std::size_t>(row + 1) * cols);
    return push(std::move(out), [table, row, cols](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      Vec& gt = t.grad_of(table);
      for (int c = 0; c < cols; ++c)
        gt[static_cast<std::size_t>(row) * cols + c] += g[c];
    });
  }

  int slice(int a, int off, int len) {
    const Vec& x = val(a);
    Vec out(x.begin() + off, x.begin() + off + len);
    return push(std::move(out), [a, off, len](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      Vec& ga = t.grad_of(a);
      for (int i = 0; i < len; ++i) ga[off + i] += g[i];
    });
  }

  int gather(int a, std::vector<int> idx) {
    const Vec& x = val(a);
    Vec out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
    return push(std::move(out), [a, idx = std::move(idx)](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      Vec& ga = t.grad_of(a);
      for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    });
  }

  int concat(const std::vector<int>& parts) {
    Vec out;
    for (int p : parts) {
      const Vec& x = val(p);
      out.insert(out.end(), x.begin(), x.end());
    }
    return push(std::move(out), [parts](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      std::size_t off = 0;
      for (int p : parts) {
        Vec& gp = t.grad_of(p);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        off += gp.size();
      }
    });
  }

  // LayerNorm with learnable gain/bias, population variance, eps 1e-5.
  int layer_norm(int x, int gain, int bias) {
    constexpr double kEps = 1e-5;
    const Vec& xv = val(x);
    const Vec& gv = val(gain);
    const Vec& bv = val(bias);
    const int n = static_cast<int>(xv.size());
    double mean = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
    double var = 0.0;
    for (double v : xv) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kEps);
    Vec out(n);
    for (int i = 0; i < n; ++i) out[i] = gv[i] * (xv[i] - mean) * inv + bv[i];
    return push(std::move(out), [x, gain, bias, mean, inv](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& xv = t.val(x);
      const Vec& gv = t.val(gain);
      const int n = static_cast<int>(xv.size());
      Vec& gx = t.grad_of(x);
      Vec& gg = t.grad_of(gain);
      Vec& gb = t.grad_of(bias);
      Vec dxhat(n);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int i = 0; i < n; ++i) {
        const double xhat = (xv[i] - mean) * inv;
        dxhat[i] = g[i] * gv[i];
        sum_dxhat += dxhat[i];
        sum_dxhat_xhat += dxhat[i] * xhat;
        gg[i] += g[i] * xhat;
        gb[i] += g[i];
      }
      for (int i = 0; i < n; ++i) {
        const double xhat = (xv[i] - mean) * inv;
        gx[i] += inv * (dxhat[i] - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
      }
    });
  }

  // tanh-approximation GELU
  int gelu(int x) {
    const Vec& xv = val(x);
    Vec out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = gelu_fwd(xv[i]);
    return push(std::move(out), [x](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& xv = t.val(x);
      Vec& gx = t.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * gelu_grad(xv[i]);
    });
  }

  int softmax(int x) {
    const Vec& xv = val(x);
    Vec out(xv.size());
    const double mx = *std::max_element(xv.begin(), xv.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      out[i] = std::exp(xv[i] - mx);
      sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return push(std::move(out), [x](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& y = t.val(t.cur_);
      Vec& gx = t.grad_of(x);
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += y[i] * (g[i] - dot);
    });
  }

  int log_softmax(int x) {
    const Vec& xv = val(x);
    const double mx = *std::max_element(xv.begin(), xv.end());
    double sum = 0.0;
    for (double v : xv) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    Vec out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] - lse;
    return push(std::move(out), [x](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& y = t.val(t.cur_);
      Vec& gx = t.grad_of(x);
      double gsum = 0.0;
      for (double v : g) gsum += v;
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] - std::exp(y[i]) * gsum;
    });
  }

  // Scaled dot-product scores of one query against a list of keys:
  // out[j] = dot(q, k_j) * inv_scale.
  int attn_scores(int q, std::vector<int> keys, double inv_scale) {
    const Vec& qv = val(q);
    Vec out(keys.size());
    for (std::size_t j = 0; j < keys.size(); ++j) {
      const Vec& kv = val(keys[j]);
      double s = 0.0;
      for (std::size_t i = 0; i < qv.size(); ++i) s += qv[i] * kv[i];
      out[j] = s * inv_scale;
    }
    return push(std::move(out),
                [q, keys = std::move(keys), inv_scale](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& qv = t.val(q);
      Vec& gq = t.grad_of(q);
      for (std::size_t j = 0; j < keys.size(); ++j) {
        const double gj = g[j] * inv_scale;
        const Vec& kv = t.val(keys[j]);
        Vec& gk = t.grad_of(keys[j]);
        for (std::size_t i = 0; i < qv.size(); ++i) {
          gq[i] += gj * kv[i];
          gk[i] += gj * qv[i];
        }
      }
    });
  }

  // out = sum_j weights[j] * vec_j (attention read-out).
  int mix(int weights, std::vector<int> vecs) {
    const Vec& wv = val(weights);
    Vec out(val(vecs[0]).size(), 0.0);
    for (std::size_t j = 0; j < vecs.size(); ++j) {
      const Vec& v = val(vecs[j]);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[j] * v[i];
    }
    return push(std::move(out), [weights, vecs = std::move(vecs)](Tape& t) {
      const Vec& g = t.grad(t.cur_);
      const Vec& wv = t.val(weights);
      Vec& gw = t.grad_of(weights);
      for (std::size_t j = 0; j < vecs.size(); ++j) {
        const Vec& v = t.val(vecs[j]);
        Vec& gv = t.grad_of(vecs[j]);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc += g[i] * v[i];
          gv[i] += wv[j] * g[i];
        }
        gw[j] += acc;
      }
    });
  }

  // ---- scalar ops (size-1 nodes) ------------------------------------------

  int scalar(double v) { return leaf({v}); }

  int sum(int a) {
    const Vec& x = val(a);
    const double s = std::accumulate(x.begin(), x.end(), 0.0);
    return push({s}, [a](Tape& t) {
      const double g = t.grad(t.cur_)[0];
      Vec& ga = t.grad_of(a);
      for (auto& v : ga) v += g;
    });
  }

  // dot of a node with a constant vector
  int dot_const(int a, Vec c) {
    const Vec& x = val(a);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * c[i];
    return push({s}, [a, c = std::move(c)](Tape& t) {
      const double g = t.grad(t.cur_)[0];
      Vec& ga = t.grad_of(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * c[i];
    });
  }

  int dot(int a, int b) {
    const Vec& x = val(a);
    const Vec& y = val(b);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return push({s}, [a, b](Tape& t) {
      const double g = t.grad(t.cur_)[0];
      const Vec& x = t.val(a);
      const Vec& y = t.val(b);
      Vec& ga = t.grad_of(a);
      Vec& gb = t.grad_of(b);
      for (std::size_t i = 0; i < x.size(); ++i) {
        ga[i] += g * y[i];
        gb[i] += g * x[i];
      }
    });
  }

  int pick(int a, int i) { return slice(a, i, 1); }

  int s_exp(int a) { return vexp(a); }
  int s_neg(int a) { return scale(a, -1.0); }
  int s_addc(int a, double c) { return add_const(a, Vec{c}); }

  // min of two scalars; ties take the first argument's gradient.
  int s_min(int a, int b) {
    const double x = val(a)[0];
    const double y = val(b)[0];
    const bool first = x <= y;
    return push({first ? x : y}, [a, b, first](Tape& t) {
      const double g = t.grad(t.cur_)[0];
      t.grad_of(first ? a : b)[0] += g;
    });
  }

  // clamp to [lo, hi]; zero gradient outside the interval.
  int s_clip(int a, double lo, double hi) {
    const double x = val(a)[0];
    const double y = std::clamp(x, lo, hi);
    const bool inside = x > lo && x < hi;
    return push({y}, [a, inside](Tape& t) {
      if (inside) t.grad_of(a)[0] += t.grad(t.cur_)[0];
    });
  }

  int sum_scalars(const std::vector<int>& ids) {
    double s = 0.0;
    for (int id : ids) s += val(id)[0];
    return push({s}, [ids](Tape& t) {
      const double g = t.grad(t.cur_)[0];
      for (int id : ids) t.grad_of(id)[0] += g;
    });
  }

  // ---- backward ------------------------------------------------------------

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every node.
  void backward(int root) {
    if (val(root).size() != 1)
      throw std::runtime_error("backward: root must be scalar");
    for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
    nodes_[root].grad[0] = 1.0;
    for (int i = root; i >= 0; --i) {
      if (!nodes_[i].back) continue;
      cur_ = i;
      nodes_[i].back(*this);
    }
  }

 private:
  static double gelu_fwd(double x) {
    constexpr double k = 0.7978845608028653558799;  // sqrt(2/pi)
    const double u = k * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
  }
  static double gelu_grad(double x) {
    constexpr double k = 0.7978845608028653558799;
    const double u = k * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
  }

  int push(Vec v, std::function<void(Tape&)> back) {
    nodes_.push_back({std::move(v), {}, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Vec& grad_of(int id) { return nodes_[id].grad; }

  void bump(int id, const Vec& g) {
    Vec& ga = nodes_[id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  }

  std::vector<Node> nodes_;
  int cur_ = -1;
};

}  // namespace srpo::ad

#endif  // SRPO_AUTODIFF_HPP_
