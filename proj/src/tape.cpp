#include "qulab/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace qulab {

namespace {

// c[m x n] += a[m x k] * b[k x n]
void matmul_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
void matmul_acc_bt(const float* a, const float* b, float* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * n;
    float* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float* brow = b + static_cast<size_t>(p) * n;
      float acc = 0.0f;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void matmul_acc_at(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    const float* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      float* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

float gelu_fwd(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752440f));
}

float gelu_grad(float x) {
  const double xd = x;
  const double cdf = 0.5 * (1.0 + std::erf(xd * 0.70710678118654752440));
  const double pdf = 0.39894228040143267794 * std::exp(-0.5 * xd * xd);
  return static_cast<float>(cdf + xd * pdf);
}

float logsigmoid_fwd(float x) {
  // -softplus(-x), stable on both tails
  if (x >= 0.0f) return -std::log1p(std::exp(-static_cast<double>(x)));
  return x - static_cast<float>(std::log1p(std::exp(static_cast<double>(x))));
}

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = recording_ && requires_grad;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void()> backward_fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = recording_ && requires_grad;
  if (node.requires_grad) node.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

void Tape::check(Var v) const {
  if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size())) {
    throw std::logic_error("tape: invalid var handle");
  }
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[static_cast<size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[static_cast<size_t>(v.id)].requires_grad;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.value.shape());
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  Tensor& dst = grad_buf(id);
  float* d = dst.data();
  const float* s = g.data();
  const int64_t n = dst.size();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

const Tensor& Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  if (!backward_done_) throw std::logic_error("tape: grad() before backward()");
  if (!n.grad_alloc) {
    Node& mut = const_cast<Node&>(n);
    mut.grad = Tensor(n.value.shape());
    mut.grad_alloc = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (!recording_) throw std::logic_error("tape: backward() without recording");
  if (backward_done_) throw std::logic_error("tape: backward() may run once per tape");
  const Node& ln = nodes_[static_cast<size_t>(loss.id)];
  if (ln.value.size() != 1) throw std::invalid_argument("tape: backward() needs a scalar loss");

  grad_buf(loss.id)[0] = 1.0f;
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad_alloc && n.backward_fn) n.backward_fn();
  }
  backward_done_ = true;
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch " + ta.shape_str() + " x " +
                                tb.shape_str());
  }
  const int m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  matmul_acc(ta.data(), tb.data(), out.data(), m, k, n);
  const bool rg = requires_grad(a) || requires_grad(b);
  const int32_t aid = a.id, bid = b.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, aid, bid, out_id, m, k, n]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    if (nodes_[static_cast<size_t>(aid)].requires_grad) {
      matmul_acc_bt(g.data(), val(bid).data(), grad_buf(aid).data(), m, n, k);
    }
    if (nodes_[static_cast<size_t>(bid)].requires_grad) {
      matmul_acc_at(val(aid).data(), g.data(), grad_buf(bid).data(), m, k, n);
    }
  });
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch");
  Tensor out(ta.shape());
  const int64_t n = ta.size();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] + tb[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  const int32_t aid = a.id, bid = b.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, aid, bid, out_id]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    if (nodes_[static_cast<size_t>(aid)].requires_grad) accumulate(aid, g);
    if (nodes_[static_cast<size_t>(bid)].requires_grad) accumulate(bid, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  if (!ta.same_shape(tb)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out(ta.shape());
  const int64_t n = ta.size();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] - tb[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  const int32_t aid = a.id, bid = b.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, aid, bid, out_id]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    if (nodes_[static_cast<size_t>(aid)].requires_grad) accumulate(aid, g);
    if (nodes_[static_cast<size_t>(bid)].requires_grad) {
      Tensor& gb = grad_buf(bid);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out(ta.shape());
  const int64_t n = ta.size();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] * tb[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  const int32_t aid = a.id, bid = b.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, aid, bid, out_id]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    if (nodes_[static_cast<size_t>(aid)].requires_grad) {
      Tensor& ga = grad_buf(aid);
      const Tensor& tb2 = val(bid);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb2[i];
    }
    if (nodes_[static_cast<size_t>(bid)].requires_grad) {
      Tensor& gb = grad_buf(bid);
      const Tensor& ta2 = val(aid);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ta2[i];
    }
  });
}

Var Tape::scale(Var a, float s) {
  check(a);
  const Tensor& ta = val(a.id);
  Tensor out(ta.shape());
  const int64_t n = ta.size();
  for (int64_t i = 0; i < n; ++i) out[i] = ta[i] * s;
  const int32_t aid = a.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(a), [this, aid, out_id, s]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    Tensor& ga = grad_buf(aid);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var Tape::add_bias(Var a, Var bias) {
  check(a);
  check(bias);
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(bias.id);
  if (ta.rank() != 2 || tb.rank() != 1 || ta.cols() != tb.dim(0)) {
    throw std::invalid_argument("add_bias: shape mismatch");
  }
  const int m = ta.rows(), n = ta.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at2(i, j) = ta.at2(i, j) + tb[j];
  }
  const bool rg = requires_grad(a) || requires_grad(bias);
  const int32_t aid = a.id, bid = bias.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, aid, bid, out_id, m, n]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    if (nodes_[static_cast<size_t>(aid)].requires_grad) accumulate(aid, g);
    if (nodes_[static_cast<size_t>(bid)].requires_grad) {
      Tensor& gb = grad_buf(bid);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) gb[j] += g.at2(i, j);
      }
    }
  });
}

Var Tape::transpose(Var a) {
  check(a);
  const Tensor& ta = val(a.id);
  if (ta.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
  const int m = ta.rows(), n = ta.cols();
  Tensor out({n, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at2(j, i) = ta.at2(i, j);
  }
  const int32_t aid = a.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(a), [this, aid, out_id, m, n]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    Tensor& ga = grad_buf(aid);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) ga.at2(i, j) += g.at2(j, i);
    }
  });
}

Var Tape::slice_cols(Var a, int start, int n) {
  check(a);
  const Tensor& ta = val(a.id);
  if (ta.rank() != 2 || start < 0 || n <= 0 || start + n > ta.cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  const int m = ta.rows();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    std::memcpy(out.data() + static_cast<size_t>(i) * n,
                ta.data() + static_cast<size_t>(i) * ta.cols() + start,
                sizeof(float) * static_cast<size_t>(n));
  }
  const int32_t aid = a.id;
  const int cols = ta.cols();
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(a), [this, aid, out_id, start, n, m, cols]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    Tensor& ga = grad_buf(aid);
    for (int i = 0; i < m; ++i) {
      float* dst = ga.data() + static_cast<size_t>(i) * cols + start;
      const float* src = g.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  int m = -1, total = 0;
  bool rg = false;
  for (Var p : parts) {
    check(p);
    const Tensor& t = val(p.id);
    if (t.rank() != 2) throw std::invalid_argument("concat_cols: rank-2 tensors required");
    if (m < 0) m = t.rows();
    if (t.rows() != m) throw std::invalid_argument("concat_cols: row count mismatch");
    total += t.cols();
    rg = rg || requires_grad(p);
  }
  Tensor out({m, total});
  int off = 0;
  for (Var p : parts) {
    const Tensor& t = val(p.id);
    for (int i = 0; i < m; ++i) {
      std::memcpy(out.data() + static_cast<size_t>(i) * total + off,
                  t.data() + static_cast<size_t>(i) * t.cols(),
                  sizeof(float) * static_cast<size_t>(t.cols()));
    }
    off += t.cols();
  }
  std::vector<int32_t> ids;
  std::vector<int> widths;
  for (Var p : parts) {
    ids.push_back(p.id);
    widths.push_back(val(p.id).cols());
  }
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, ids, widths, out_id, m, total]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    int off2 = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      if (nodes_[static_cast<size_t>(ids[p])].requires_grad) {
        Tensor& gp = grad_buf(ids[p]);
        for (int i = 0; i < m; ++i) {
          const float* src = g.data() + static_cast<size_t>(i) * total + off2;
          float* dst = gp.data() + static_cast<size_t>(i) * widths[p];
          for (int j = 0; j < widths[p]; ++j) dst[j] += src[j];
        }
      }
      off2 += widths[p];
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  int n = -1, total = 0;
  bool rg = false;
  for (Var p : parts) {
    check(p);
    const Tensor& t = val(p.id);
    if (t.rank() != 2) throw std::invalid_argument("concat_rows: rank-2 tensors required");
    if (n < 0) n = t.cols();
    if (t.cols() != n) throw std::invalid_argument("concat_rows: column count mismatch");
    total += t.rows();
    rg = rg || requires_grad(p);
  }
  Tensor out({total, n});
  int off = 0;
  for (Var p : parts) {
    const Tensor& t = val(p.id);
    std::memcpy(out.data() + static_cast<size_t>(off) * n, t.data(),
                sizeof(float) * static_cast<size_t>(t.size()));
    off += t.rows();
  }
  std::vector<int32_t> ids;
  std::vector<int> heights;
  for (Var p : parts) {
    ids.push_back(p.id);
    heights.push_back(val(p.id).rows());
  }
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, ids, heights, out_id, n]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    int off2 = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      if (nodes_[static_cast<size_t>(ids[p])].requires_grad) {
        Tensor& gp = grad_buf(ids[p]);
        const float* src = g.data() + static_cast<size_t>(off2) * n;
        for (int64_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
      }
      off2 += heights[p];
    }
  });
}

Var Tape::embedding_lookup(Var table, const std::vector<int>& ids) {
  check(table);
  const Tensor& tt = val(table.id);
  if (tt.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be rank 2");
  const int v = tt.rows(), d = tt.cols();
  for (int id : ids) {
    if (id < 0 || id >= v) throw std::out_of_range("embedding_lookup: id out of range");
  }
  const int t = static_cast<int>(ids.size());
  if (t == 0) throw std::invalid_argument("embedding_lookup: empty id list");
  Tensor out({t, d});
  for (int i = 0; i < t; ++i) {
    std::memcpy(out.data() + static_cast<size_t>(i) * d,
                tt.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d,
                sizeof(float) * static_cast<size_t>(d));
  }
  const int32_t tid = table.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(table), [this, tid, out_id, ids, t, d]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    Tensor& gt = grad_buf(tid);
    for (int i = 0; i < t; ++i) {
      float* dst = gt.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d;
      const float* src = g.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
  check(x);
  check(gain);
  check(bias);
  const Tensor& tx = val(x.id);
  const Tensor& tg = val(gain.id);
  const Tensor& tb = val(bias.id);
  if (tx.rank() != 2 || tg.rank() != 1 || tb.rank() != 1 || tg.dim(0) != tx.cols() ||
      tb.dim(0) != tx.cols()) {
    throw std::invalid_argument("layer_norm: shape mismatch");
  }
  constexpr double kEps = 1e-5;
  const int m = tx.rows(), n = tx.cols();
  Tensor out({m, n});
  std::vector<float> rstd(static_cast<size_t>(m));
  std::vector<float> xhat(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const float* row = tx.data() + static_cast<size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double dv = row[j] - mean;
      var += dv * dv;
    }
    var /= n;
    const float rs = static_cast<float>(1.0 / std::sqrt(var + kEps));
    rstd[static_cast<size_t>(i)] = rs;
    float* xh = xhat.data() + static_cast<size_t>(i) * n;
    float* orow = out.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      xh[j] = static_cast<float>((row[j] - mean) * rs);
      orow[j] = xh[j] * tg[j] + tb[j];
    }
  }
  const bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  const int32_t xid = x.id, gid = gain.id, bid = bias.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg,
              [this, xid, gid, bid, out_id, m, n, rstd = std::move(rstd),
               xhat = std::move(xhat)]() {
                const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
                const Tensor& tg2 = val(gid);
                if (nodes_[static_cast<size_t>(gid)].requires_grad) {
                  Tensor& gg = grad_buf(gid);
                  for (int i = 0; i < m; ++i) {
                    const float* xh = xhat.data() + static_cast<size_t>(i) * n;
                    const float* grow = g.data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) gg[j] += grow[j] * xh[j];
                  }
                }
                if (nodes_[static_cast<size_t>(bid)].requires_grad) {
                  Tensor& gb = grad_buf(bid);
                  for (int i = 0; i < m; ++i) {
                    const float* grow = g.data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) gb[j] += grow[j];
                  }
                }
                if (nodes_[static_cast<size_t>(xid)].requires_grad) {
                  Tensor& gx = grad_buf(xid);
                  for (int i = 0; i < m; ++i) {
                    const float* xh = xhat.data() + static_cast<size_t>(i) * n;
                    const float* grow = g.data() + static_cast<size_t>(i) * n;
                    float* gxrow = gx.data() + static_cast<size_t>(i) * n;
                    double sum_gy = 0.0, sum_gy_xhat = 0.0;
                    for (int j = 0; j < n; ++j) {
                      const double gy = static_cast<double>(grow[j]) * tg2[j];
                      sum_gy += gy;
                      sum_gy_xhat += gy * xh[j];
                    }
                    const double mean_gy = sum_gy / n;
                    const double mean_gy_xhat = sum_gy_xhat / n;
                    const float rs = rstd[static_cast<size_t>(i)];
                    for (int j = 0; j < n; ++j) {
                      const double gy = static_cast<double>(grow[j]) * tg2[j];
                      gxrow[j] += static_cast<float>(rs * (gy - mean_gy - xh[j] * mean_gy_xhat));
                    }
                  }
                }
              });
}

Var Tape::gelu(Var x) {
  check(x);
  const Tensor& tx = val(x.id);
  Tensor out(tx.shape());
  for (int64_t i = 0; i < tx.size(); ++i) out[i] = gelu_fwd(tx[i]);
  const int32_t xid = x.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, xid, out_id]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    const Tensor& tx2 = val(xid);
    Tensor& gx = grad_buf(xid);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_grad(tx2[i]);
  });
}

Var Tape::exp(Var x) {
  check(x);
  const Tensor& tx = val(x.id);
  Tensor out(tx.shape());
  for (int64_t i = 0; i < tx.size(); ++i) out[i] = std::exp(tx[i]);
  const int32_t xid = x.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, xid, out_id]() {
    const Node& on = nodes_[static_cast<size_t>(out_id)];
    const Tensor& g = on.grad;
    Tensor& gx = grad_buf(xid);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * on.value[i];
  });
}

Var Tape::logsigmoid(Var x) {
  check(x);
  const Tensor& tx = val(x.id);
  Tensor out(tx.shape());
  for (int64_t i = 0; i < tx.size(); ++i) out[i] = logsigmoid_fwd(tx[i]);
  const int32_t xid = x.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, xid, out_id]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    const Tensor& tx2 = val(xid);
    Tensor& gx = grad_buf(xid);
    for (int64_t i = 0; i < g.size(); ++i) {
      // d/dx log sigma(x) = sigma(-x)
      const double s = 1.0 / (1.0 + std::exp(static_cast<double>(tx2[i])));
      gx[i] += g[i] * static_cast<float>(s);
    }
  });
}

Var Tape::softmax_rows(Var x) {
  check(x);
  const Tensor& tx = val(x.id);
  if (tx.rank() < 1) throw std::invalid_argument("softmax_rows: rank >= 1 required");
  const int n = tx.rank() == 1 ? tx.dim(0) : tx.cols();
  const int m = static_cast<int>(tx.size() / n);
  Tensor out(tx.shape());
  for (int i = 0; i < m; ++i) {
    const float* row = tx.data() + static_cast<size_t>(i) * n;
    float* orow = out.data() + static_cast<size_t>(i) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      orow[j] = static_cast<float>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int j = 0; j < n; ++j) orow[j] = static_cast<float>(orow[j] * inv);
  }
  const int32_t xid = x.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, xid, out_id, m, n]() {
    const Node& on = nodes_[static_cast<size_t>(out_id)];
    const Tensor& g = on.grad;
    Tensor& gx = grad_buf(xid);
    for (int i = 0; i < m; ++i) {
      const float* y = on.value.data() + static_cast<size_t>(i) * n;
      const float* grow = g.data() + static_cast<size_t>(i) * n;
      float* gxrow = gx.data() + static_cast<size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += static_cast<double>(grow[j]) * y[j];
      for (int j = 0; j < n; ++j) {
        gxrow[j] += static_cast<float>(y[j] * (grow[j] - dot));
      }
    }
  });
}

Var Tape::log_softmax_rows(Var x) {
  check(x);
  const Tensor& tx = val(x.id);
  if (tx.rank() < 1) throw std::invalid_argument("log_softmax_rows: rank >= 1 required");
  const int n = tx.rank() == 1 ? tx.dim(0) : tx.cols();
  const int m = static_cast<int>(tx.size() / n);
  Tensor out(tx.shape());
  for (int i = 0; i < m; ++i) {
    const float* row = tx.data() + static_cast<size_t>(i) * n;
    float* orow = out.data() + static_cast<size_t>(i) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = static_cast<double>(mx) + std::log(denom);
    for (int j = 0; j < n; ++j) orow[j] = static_cast<float>(row[j] - lse);
  }
  const int32_t xid = x.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, xid, out_id, m, n]() {
    const Node& on = nodes_[static_cast<size_t>(out_id)];
    const Tensor& g = on.grad;
    Tensor& gx = grad_buf(xid);
    for (int i = 0; i < m; ++i) {
      const float* lp = on.value.data() + static_cast<size_t>(i) * n;
      const float* grow = g.data() + static_cast<size_t>(i) * n;
      float* gxrow = gx.data() + static_cast<size_t>(i) * n;
      double gsum = 0.0;
      for (int j = 0; j < n; ++j) gsum += grow[j];
      for (int j = 0; j < n; ++j) {
        gxrow[j] += static_cast<float>(grow[j] - std::exp(static_cast<double>(lp[j])) * gsum);
      }
    }
  });
}

Var Tape::token_logprobs(Var logits, const std::vector<int>& targets) {
  check(logits);
  const Tensor& tl = val(logits.id);
  if (tl.rank() != 2) throw std::invalid_argument("token_logprobs: logits must be rank 2");
  const int t = tl.rows(), v = tl.cols();
  if (static_cast<int>(targets.size()) != t) {
    throw std::invalid_argument("token_logprobs: one target per logits row required");
  }
  for (int id : targets) {
    if (id < 0 || id >= v) throw std::out_of_range("token_logprobs: target id out of range");
  }
  Tensor out({t});
  // Softmax probabilities are kept for the backward pass.
  std::vector<float> probs(static_cast<size_t>(t) * v);
  for (int i = 0; i < t; ++i) {
    const float* row = tl.data() + static_cast<size_t>(i) * v;
    float* prow = probs.data() + static_cast<size_t>(i) * v;
    float mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      prow[j] = static_cast<float>(e);
      denom += e;
    }
    const double lse = static_cast<double>(mx) + std::log(denom);
    const double inv = 1.0 / denom;
    for (int j = 0; j < v; ++j) prow[j] = static_cast<float>(prow[j] * inv);
    out[i] = static_cast<float>(row[targets[static_cast<size_t>(i)]] - lse);
  }
  const int32_t lid = logits.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), requires_grad(logits),
              [this, lid, out_id, targets, t, v, probs = std::move(probs)]() {
                const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
                Tensor& gl = grad_buf(lid);
                for (int i = 0; i < t; ++i) {
                  const float gi = g[i];
                  if (gi == 0.0f) continue;
                  const float* prow = probs.data() + static_cast<size_t>(i) * v;
                  float* grow = gl.data() + static_cast<size_t>(i) * v;
                  for (int j = 0; j < v; ++j) grow[j] -= gi * prow[j];
                  grow[targets[static_cast<size_t>(i)]] += gi;
                }
              });
}

Var Tape::sum(Var x) {
  check(x);
  const Tensor& tx = val(x.id);
  double acc = 0.0;
  for (int64_t i = 0; i < tx.size(); ++i) acc += tx[i];
  const int32_t xid = x.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(Tensor::scalar(static_cast<float>(acc)), requires_grad(x), [this, xid, out_id]() {
    const float g = nodes_[static_cast<size_t>(out_id)].grad[0];
    Tensor& gx = grad_buf(xid);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var Tape::mean(Var x) {
  check(x);
  const Tensor& tx = val(x.id);
  const int64_t n = tx.size();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += tx[i];
  const int32_t xid = x.id;
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))), requires_grad(x),
              [this, xid, out_id, n]() {
                const float g = nodes_[static_cast<size_t>(out_id)].grad[0] / static_cast<float>(n);
                Tensor& gx = grad_buf(xid);
                for (int64_t i = 0; i < n; ++i) gx[i] += g;
              });
}

Var Tape::stack_scalars(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("stack_scalars: empty input");
  bool rg = false;
  Tensor out({static_cast<int>(scalars.size())});
  std::vector<int32_t> ids;
  for (size_t i = 0; i < scalars.size(); ++i) {
    check(scalars[i]);
    const Tensor& t = val(scalars[i].id);
    if (t.size() != 1) throw std::invalid_argument("stack_scalars: scalar inputs required");
    out[static_cast<int64_t>(i)] = t[0];
    rg = rg || requires_grad(scalars[i]);
    ids.push_back(scalars[i].id);
  }
  const int32_t out_id = static_cast<int32_t>(nodes_.size());
  return push(std::move(out), rg, [this, ids, out_id]() {
    const Tensor& g = nodes_[static_cast<size_t>(out_id)].grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (nodes_[static_cast<size_t>(ids[i])].requires_grad) {
        grad_buf(ids[i])[0] += g[static_cast<int64_t>(i)];
      }
    }
  });
}

Var Tape::cross_entropy_logits(Var logits, const std::vector<int>& targets) {
  return scale(mean(token_logprobs(logits, targets)), -1.0f);
}

}  // namespace qulab
