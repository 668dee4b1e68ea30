#include "acvi/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "acvi/errors.hpp"

namespace acvi {

namespace {

template <typename S>
void check_finite_array(const Array<S>& a, const char* op) {
  for (const S& v : a.data) {
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + ": non-finite output");
  }
}

template <typename S>
Tape<S>& same_tape(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.tape() != b.tape())
    throw Error("operands recorded on different tapes");
  return *a.tape();
}

template <typename S>
void require_equal_shape(const Tensor<S>& a, const Tensor<S>& b,
                         const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// C[m x n] += A[m x k] * B[k x n]
template <typename S>
void gemm_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    S* ci = c + i * n;
    const S* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const S s = ai[p];
      const S* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename S>
void gemm_nt_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    S* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const S* bj = b + j * k;
      S acc = S(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename S>
void gemm_tn_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    const S* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S s = ai[p];
      S* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += s * bi[j];
    }
  }
}

template <typename S, typename F, typename D>
Tensor<S> unary_op(Tensor<S> a, const char* name, F f, D deriv) {
  Tape<S>& t = *a.tape();
  const Array<S>& x = a.value();
  Array<S> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const bool rec = t.grad_enabled && a.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node();
    bw = [a_id, deriv](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& xv = tp.value(a_id);
      const Array<S>& yv = tp.value(out);
      Array<S>& ga = tp.grad_buffer(a_id);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * deriv(xv[i], yv[i]);
    };
  }
  return t.make(std::move(y), rec, std::move(bw), name);
}

// Elementwise binary with per-element derivative selectors.
template <typename S, typename F, typename DA, typename DB>
Tensor<S> binary_op(Tensor<S> a, Tensor<S> b, const char* name, F f, DA da,
                    DB db) {
  Tape<S>& t = same_tape(a, b);
  require_equal_shape(a, b, name);
  const Array<S>& xa = a.value();
  const Array<S>& xb = b.value();
  Array<S> y(xa.shape);
  for (std::size_t i = 0; i < xa.size(); ++i) y[i] = f(xa[i], xb[i]);
  const bool rec =
      t.grad_enabled && (a.requires_grad() || b.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node(), b_id = b.node();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    bw = [a_id, b_id, need_a, need_b, da, db](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& va = tp.value(a_id);
      const Array<S>& vb = tp.value(b_id);
      if (need_a) {
        Array<S>& ga = tp.grad_buffer(a_id);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * da(va[i], vb[i]);
      }
      if (need_b) {
        Array<S>& gb = tp.grad_buffer(b_id);
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] += g[i] * db(va[i], vb[i]);
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), name);
}

}  // namespace

template <typename S>
Tensor<S> Tape<S>::make(Array<S> value, bool requires_grad, BackwardFn backward,
                        const char* op_name) {
  if (check_finite) check_finite_array(value, op_name);
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor<S>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename S>
Array<S>& Tape<S>::grad_buffer(int node) {
  Node& n = nodes_[node];
  if (n.grad.data.empty()) n.grad = Array<S>(n.value.shape);
  return n.grad;
}

template <typename S>
const Array<S>& Tape<S>::grad(const Tensor<S>& t) {
  return grad_buffer(t.node());
}

template <typename S>
void Tape<S>::backward(const Tensor<S>& loss) {
  if (loss.tape() != this) throw Error("backward: loss not on this tape");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(loss.shape()));
  grad_buffer(loss.node()).data[0] = S(1);
  // Nodes with an empty gradient buffer received no contribution from the
  // loss and are skipped; this keeps accumulation in strict tape order.
  for (int i = loss.node(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.data.empty()) n.backward(*this, i);
  }
}

template <typename S>
void Tape<S>::zero_grads() {
  for (Node& n : nodes_) n.grad = Array<S>();
}

template <typename S>
void Tape<S>::clear() {
  nodes_.clear();
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
  return binary_op(
      a, b, "add", [](S x, S y) { return x + y; },
      [](S, S) { return S(1); }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
  return binary_op(
      a, b, "sub", [](S x, S y) { return x - y; },
      [](S, S) { return S(1); }, [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
  return binary_op(
      a, b, "mul", [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <typename S>
Tensor<S> emin(Tensor<S> a, Tensor<S> b) {
  // Subgradient convention: ties route to the first argument.
  return binary_op(
      a, b, "emin", [](S x, S y) { return x <= y ? x : y; },
      [](S x, S y) { return x <= y ? S(1) : S(0); },
      [](S x, S y) { return y < x ? S(1) : S(0); });
}

template <typename S>
Tensor<S> add_scalar(Tensor<S> a, S c) {
  return unary_op(
      a, "add_scalar", [c](S x) { return x + c; },
      [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> mul_scalar(Tensor<S> a, S c) {
  return unary_op(
      a, "mul_scalar", [c](S x) { return x * c; },
      [c](S, S) { return c; });
}

template <typename S>
Tensor<S> scale(Tensor<S> a, Tensor<S> s) {
  Tape<S>& t = same_tape(a, s);
  if (s.size() != 1)
    throw ShapeError("scale: scale factor must be a one-element tensor, got " +
                     shape_str(s.shape()));
  const Array<S>& xa = a.value();
  const S sv = s.value()[0];
  Array<S> y(xa.shape);
  for (std::size_t i = 0; i < xa.size(); ++i) y[i] = xa[i] * sv;
  const bool rec = t.grad_enabled && (a.requires_grad() || s.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node(), s_id = s.node();
    const bool need_a = a.requires_grad(), need_s = s.requires_grad();
    bw = [a_id, s_id, need_a, need_s](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& va = tp.value(a_id);
      const S vs = tp.value(s_id)[0];
      if (need_a) {
        Array<S>& ga = tp.grad_buffer(a_id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vs;
      }
      if (need_s) {
        Array<S>& gs = tp.grad_buffer(s_id);
        S acc = S(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
        gs[0] += acc;
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "scale");
}

template <typename S>
Tensor<S> tanh(Tensor<S> a) {
  return unary_op(
      a, "tanh", [](S x) { return std::tanh(x); },
      [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> sigmoid(Tensor<S> a) {
  return unary_op(
      a, "sigmoid",
      [](S x) {
        // Stable in both tails.
        if (x >= S(0)) {
          const S e = std::exp(-x);
          return S(1) / (S(1) + e);
        }
        const S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> relu(Tensor<S> a) {
  return unary_op(
      a, "relu", [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> exp(Tensor<S> a) {
  return unary_op(
      a, "exp", [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(Tensor<S> a) {
  for (const S& v : a.value().data) {
    if (!(v > S(0)))
      throw DomainError("log: non-positive input " +
                        std::to_string(static_cast<double>(v)));
  }
  return unary_op(
      a, "log", [](S x) { return std::log(x); },
      [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> softplus(Tensor<S> a) {
  return unary_op(
      a, "softplus",
      [](S x) {
        if (x > S(30)) return x;
        return std::log1p(std::exp(x));
      },
      [](S x, S) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        const S e = std::exp(x);
        return e / (S(1) + e);
      });
}

template <typename S>
Tensor<S> neg(Tensor<S> a) {
  return unary_op(
      a, "neg", [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> clamp_min(Tensor<S> a, S floor) {
  return unary_op(
      a, "clamp_min", [floor](S x) { return x > floor ? x : floor; },
      [floor](S x, S) { return x > floor ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
  Tape<S>& t = same_tape(a, b);
  const Array<S>& A = a.value();
  const Array<S>& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) +
                     " vs " + shape_str(B.shape));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Array<S> y({m, n});
  gemm_acc(A.data.data(), B.data.data(), y.data.data(), m, k, n);
  const bool rec = t.grad_enabled && (a.requires_grad() || b.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node(), b_id = b.node();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    bw = [=](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& va = tp.value(a_id);
      const Array<S>& vb = tp.value(b_id);
      if (need_a)  // dA += G * B^T
        gemm_nt_acc(g.data.data(), vb.data.data(),
                    tp.grad_buffer(a_id).data.data(), m, n, k);
      if (need_b)  // dB += A^T * G
        gemm_tn_acc(va.data.data(), g.data.data(),
                    tp.grad_buffer(b_id).data.data(), m, k, n);
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "matmul");
}

template <typename S>
Tensor<S> matmul_nt(Tensor<S> a, Tensor<S> b) {
  Tape<S>& t = same_tape(a, b);
  const Array<S>& A = a.value();
  const Array<S>& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(A.shape) +
                     " vs " + shape_str(B.shape));
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Array<S> y({m, n});
  gemm_nt_acc(A.data.data(), B.data.data(), y.data.data(), m, k, n);
  const bool rec = t.grad_enabled && (a.requires_grad() || b.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node(), b_id = b.node();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    bw = [=](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& va = tp.value(a_id);
      const Array<S>& vb = tp.value(b_id);
      if (need_a)  // dA += G * B
        gemm_acc(g.data.data(), vb.data.data(),
                 tp.grad_buffer(a_id).data.data(), m, n, k);
      if (need_b)  // dB += G^T * A
        gemm_tn_acc(g.data.data(), va.data.data(),
                    tp.grad_buffer(b_id).data.data(), m, n, k);
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "matmul_nt");
}

template <typename S>
Tensor<S> matvec(Tensor<S> m, Tensor<S> v) {
  Tape<S>& t = same_tape(m, v);
  const Array<S>& M = m.value();
  const Array<S>& x = v.value();
  if (M.rank() != 2 || x.rank() != 1 || M.cols() != x.size())
    throw ShapeError("matvec: incompatible shapes " + shape_str(M.shape) +
                     " vs " + shape_str(x.shape));
  const std::size_t rows = M.rows(), cols = M.cols();
  Array<S> y({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    const S* mi = M.data.data() + i * cols;
    S acc = S(0);
    for (std::size_t j = 0; j < cols; ++j) acc += mi[j] * x[j];
    y[i] = acc;
  }
  const bool rec = t.grad_enabled && (m.requires_grad() || v.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int m_id = m.node(), v_id = v.node();
    const bool need_m = m.requires_grad(), need_v = v.requires_grad();
    bw = [=](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& Mv = tp.value(m_id);
      const Array<S>& xv = tp.value(v_id);
      if (need_m) {
        Array<S>& gm = tp.grad_buffer(m_id);
        for (std::size_t i = 0; i < rows; ++i) {
          const S gi = g[i];
          S* gmi = gm.data.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) gmi[j] += gi * xv[j];
        }
      }
      if (need_v) {
        Array<S>& gv = tp.grad_buffer(v_id);
        for (std::size_t i = 0; i < rows; ++i) {
          const S gi = g[i];
          const S* mi = Mv.data.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) gv[j] += gi * mi[j];
        }
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "matvec");
}

template <typename S>
Tensor<S> dot(Tensor<S> a, Tensor<S> b) {
  Tape<S>& t = same_tape(a, b);
  require_equal_shape(a, b, "dot");
  const Array<S>& xa = a.value();
  const Array<S>& xb = b.value();
  S acc = S(0);
  for (std::size_t i = 0; i < xa.size(); ++i) acc += xa[i] * xb[i];
  const bool rec = t.grad_enabled && (a.requires_grad() || b.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node(), b_id = b.node();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    bw = [=](Tape<S>& tp, int out) {
      const S g = tp.grad_buffer(out)[0];
      const Array<S>& va = tp.value(a_id);
      const Array<S>& vb = tp.value(b_id);
      if (need_a) {
        Array<S>& ga = tp.grad_buffer(a_id);
        for (std::size_t i = 0; i < va.size(); ++i) ga[i] += g * vb[i];
      }
      if (need_b) {
        Array<S>& gb = tp.grad_buffer(b_id);
        for (std::size_t i = 0; i < va.size(); ++i) gb[i] += g * va[i];
      }
    };
  }
  return t.make(Array<S>::scalar(acc), rec, std::move(bw), "dot");
}

template <typename S>
Tensor<S> sum(Tensor<S> a) {
  Tape<S>& t = *a.tape();
  const Array<S>& x = a.value();
  S acc = S(0);
  for (const S& v : x.data) acc += v;
  const bool rec = t.grad_enabled && a.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node();
    bw = [a_id](Tape<S>& tp, int out) {
      const S g = tp.grad_buffer(out)[0];
      Array<S>& ga = tp.grad_buffer(a_id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  }
  return t.make(Array<S>::scalar(acc), rec, std::move(bw), "sum");
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape<S>& t = *parts[0].tape();
  std::size_t total = 0;
  bool rec = false;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw Error("operands recorded on different tapes");
    if (p.value().rank() != 1)
      throw ShapeError("concat: rank-1 operands required, got " +
                       shape_str(p.shape()));
    total += p.size();
    rec = rec || p.requires_grad();
  }
  rec = rec && t.grad_enabled;
  Array<S> y({total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Array<S>& v = p.value();
    std::copy(v.data.begin(), v.data.end(), y.data.begin() + off);
    off += v.size();
  }
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    std::vector<int> ids;
    std::vector<std::size_t> sizes;
    std::vector<char> needs;
    for (const auto& p : parts) {
      ids.push_back(p.node());
      sizes.push_back(p.size());
      needs.push_back(p.requires_grad() ? 1 : 0);
    }
    bw = [ids, sizes, needs](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      std::size_t off2 = 0;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (needs[p]) {
          Array<S>& gp = tp.grad_buffer(ids[p]);
          for (std::size_t i = 0; i < sizes[p]; ++i) gp[i] += g[off2 + i];
        }
        off2 += sizes[p];
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "concat");
}

template <typename S>
Tensor<S> slice(Tensor<S> a, std::size_t start, std::size_t len) {
  Tape<S>& t = *a.tape();
  const Array<S>& x = a.value();
  if (x.rank() != 1 || start + len > x.size())
    throw ShapeError("slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for " +
                     shape_str(x.shape));
  Array<S> y({len});
  std::copy(x.data.begin() + start, x.data.begin() + start + len,
            y.data.begin());
  const bool rec = t.grad_enabled && a.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node();
    bw = [a_id, start, len](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      Array<S>& ga = tp.grad_buffer(a_id);
      for (std::size_t i = 0; i < len; ++i) ga[start + i] += g[i];
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "slice");
}

template <typename S>
Tensor<S> row(Tensor<S> m, std::size_t i) {
  Tape<S>& t = *m.tape();
  const Array<S>& M = m.value();
  if (M.rank() != 2 || i >= M.rows())
    throw ShapeError("row: index " + std::to_string(i) + " out of range for " +
                     shape_str(M.shape));
  const std::size_t cols = M.cols();
  Array<S> y({cols});
  std::copy(M.data.begin() + i * cols, M.data.begin() + (i + 1) * cols,
            y.data.begin());
  const bool rec = t.grad_enabled && m.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int m_id = m.node();
    bw = [m_id, i, cols](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      Array<S>& gm = tp.grad_buffer(m_id);
      for (std::size_t j = 0; j < cols; ++j) gm[i * cols + j] += g[j];
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "row");
}

template <typename S>
Tensor<S> gather_rows(Tensor<S> m, const std::vector<int>& ids) {
  Tape<S>& t = *m.tape();
  const Array<S>& M = m.value();
  if (M.rank() != 2)
    throw ShapeError("gather_rows: matrix required, got " +
                     shape_str(M.shape));
  const std::size_t cols = M.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= M.rows())
      throw DomainError("gather_rows: row id " + std::to_string(id) +
                        " out of range for " + shape_str(M.shape));
  }
  Array<S> y({ids.size(), cols});
  for (std::size_t n = 0; n < ids.size(); ++n)
    std::copy(M.data.begin() + ids[n] * cols,
              M.data.begin() + (ids[n] + 1) * cols, y.data.begin() + n * cols);
  const bool rec = t.grad_enabled && m.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int m_id = m.node();
    bw = [m_id, ids, cols](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      Array<S>& gm = tp.grad_buffer(m_id);
      for (std::size_t n = 0; n < ids.size(); ++n)
        for (std::size_t j = 0; j < cols; ++j)
          gm[ids[n] * cols + j] += g[n * cols + j];
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "gather_rows");
}

template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no operands");
  Tape<S>& t = *rows[0].tape();
  const std::size_t cols = rows[0].size();
  bool rec = false;
  for (const auto& r : rows) {
    if (r.tape() != &t) throw Error("operands recorded on different tapes");
    if (r.value().rank() != 1 || r.size() != cols)
      throw ShapeError("stack_rows: row shape mismatch " +
                       shape_str(rows[0].shape()) + " vs " +
                       shape_str(r.shape()));
    rec = rec || r.requires_grad();
  }
  rec = rec && t.grad_enabled;
  Array<S> y({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Array<S>& v = rows[i].value();
    std::copy(v.data.begin(), v.data.end(), y.data.begin() + i * cols);
  }
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    std::vector<int> ids;
    std::vector<char> needs;
    for (const auto& r : rows) {
      ids.push_back(r.node());
      needs.push_back(r.requires_grad() ? 1 : 0);
    }
    bw = [ids, needs, cols](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!needs[i]) continue;
        Array<S>& gr = tp.grad_buffer(ids[i]);
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j];
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "stack_rows");
}

template <typename S>
Tensor<S> rows_weighted_sum(Tensor<S> m, Tensor<S> w) {
  Tape<S>& t = same_tape(m, w);
  const Array<S>& M = m.value();
  const Array<S>& W = w.value();
  if (M.rank() != 2 || W.rank() != 1 || M.rows() != W.size())
    throw ShapeError("rows_weighted_sum: incompatible shapes " +
                     shape_str(M.shape) + " vs " + shape_str(W.shape));
  const std::size_t n = M.rows(), d = M.cols();
  Array<S> y({d});
  for (std::size_t i = 0; i < n; ++i) {
    const S wi = W[i];
    const S* mi = M.data.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) y[j] += wi * mi[j];
  }
  const bool rec = t.grad_enabled && (m.requires_grad() || w.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int m_id = m.node(), w_id = w.node();
    const bool need_m = m.requires_grad(), need_w = w.requires_grad();
    bw = [=](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& Mv = tp.value(m_id);
      const Array<S>& Wv = tp.value(w_id);
      if (need_m) {
        Array<S>& gm = tp.grad_buffer(m_id);
        for (std::size_t i = 0; i < n; ++i) {
          const S wi = Wv[i];
          S* gmi = gm.data.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) gmi[j] += wi * g[j];
        }
      }
      if (need_w) {
        Array<S>& gw = tp.grad_buffer(w_id);
        for (std::size_t i = 0; i < n; ++i) {
          const S* mi = Mv.data.data() + i * d;
          S acc = S(0);
          for (std::size_t j = 0; j < d; ++j) acc += mi[j] * g[j];
          gw[i] += acc;
        }
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "rows_weighted_sum");
}

template <typename S>
Tensor<S> add_rowvec(Tensor<S> m, Tensor<S> v) {
  Tape<S>& t = same_tape(m, v);
  const Array<S>& M = m.value();
  const Array<S>& x = v.value();
  if (M.rank() != 2 || x.rank() != 1 || M.cols() != x.size())
    throw ShapeError("add_rowvec: incompatible shapes " + shape_str(M.shape) +
                     " vs " + shape_str(x.shape));
  const std::size_t n = M.rows(), d = M.cols();
  Array<S> y({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = M[i * d + j] + x[j];
  const bool rec = t.grad_enabled && (m.requires_grad() || v.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int m_id = m.node(), v_id = v.node();
    const bool need_m = m.requires_grad(), need_v = v.requires_grad();
    bw = [=](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      if (need_m) {
        Array<S>& gm = tp.grad_buffer(m_id);
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
      }
      if (need_v) {
        Array<S>& gv = tp.grad_buffer(v_id);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gv[j] += g[i * d + j];
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "add_rowvec");
}

template <typename S>
Tensor<S> outer(Tensor<S> u, Tensor<S> v) {
  Tape<S>& t = same_tape(u, v);
  const Array<S>& a = u.value();
  const Array<S>& b = v.value();
  if (a.rank() != 1 || b.rank() != 1)
    throw ShapeError("outer: rank-1 operands required, got " +
                     shape_str(a.shape) + " and " + shape_str(b.shape));
  const std::size_t n = a.size(), d = b.size();
  Array<S> y({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = a[i] * b[j];
  const bool rec = t.grad_enabled && (u.requires_grad() || v.requires_grad());
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int u_id = u.node(), v_id = v.node();
    const bool need_u = u.requires_grad(), need_v = v.requires_grad();
    bw = [=](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& av = tp.value(u_id);
      const Array<S>& bv = tp.value(v_id);
      if (need_u) {
        Array<S>& gu = tp.grad_buffer(u_id);
        for (std::size_t i = 0; i < n; ++i) {
          S acc = S(0);
          for (std::size_t j = 0; j < d; ++j) acc += g[i * d + j] * bv[j];
          gu[i] += acc;
        }
      }
      if (need_v) {
        Array<S>& gv = tp.grad_buffer(v_id);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gv[j] += g[i * d + j] * av[i];
      }
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "outer");
}

template <typename S>
Tensor<S> row_sum(Tensor<S> m) {
  Tape<S>& t = *m.tape();
  const Array<S>& M = m.value();
  if (M.rank() != 2)
    throw ShapeError("row_sum: matrix required, got " + shape_str(M.shape));
  const std::size_t n = M.rows(), d = M.cols();
  Array<S> y({n});
  for (std::size_t i = 0; i < n; ++i) {
    S acc = S(0);
    for (std::size_t j = 0; j < d; ++j) acc += M[i * d + j];
    y[i] = acc;
  }
  const bool rec = t.grad_enabled && m.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int m_id = m.node();
    bw = [m_id, n, d](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      Array<S>& gm = tp.grad_buffer(m_id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gm[i * d + j] += g[i];
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "row_sum");
}

template <typename S>
Tensor<S> pick(Tensor<S> a, std::size_t i) {
  Tape<S>& t = *a.tape();
  const Array<S>& x = a.value();
  if (i >= x.size())
    throw ShapeError("pick: index " + std::to_string(i) +
                     " out of range for " + shape_str(x.shape));
  const bool rec = t.grad_enabled && a.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node();
    bw = [a_id, i](Tape<S>& tp, int out) {
      tp.grad_buffer(a_id)[i] += tp.grad_buffer(out)[0];
    };
  }
  return t.make(Array<S>::scalar(x[i]), rec, std::move(bw), "pick");
}

template <typename S>
Tensor<S> pad_to(Tensor<S> a, std::size_t total, std::size_t offset) {
  Tape<S>& t = *a.tape();
  const Array<S>& x = a.value();
  if (x.rank() != 1 || offset + x.size() > total)
    throw ShapeError("pad_to: " + shape_str(x.shape) + " at offset " +
                     std::to_string(offset) + " does not fit in " +
                     std::to_string(total));
  Array<S> y({total});
  std::copy(x.data.begin(), x.data.end(), y.data.begin() + offset);
  const bool rec = t.grad_enabled && a.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int a_id = a.node();
    const std::size_t len = x.size();
    bw = [a_id, offset, len](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      Array<S>& ga = tp.grad_buffer(a_id);
      for (std::size_t i = 0; i < len; ++i) ga[i] += g[offset + i];
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "pad_to");
}

template <typename S>
Tensor<S> scatter_add(const std::vector<int>& ids, Tensor<S> values,
                      std::size_t total) {
  Tape<S>& t = *values.tape();
  const Array<S>& x = values.value();
  if (x.rank() != 1 || x.size() != ids.size())
    throw ShapeError("scatter_add: " + std::to_string(ids.size()) +
                     " ids vs values " + shape_str(x.shape));
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= total)
      throw DomainError("scatter_add: id " + std::to_string(id) +
                        " out of range [0, " + std::to_string(total) + ")");
  }
  Array<S> y({total});
  for (std::size_t i = 0; i < ids.size(); ++i) y[ids[i]] += x[i];
  const bool rec = t.grad_enabled && values.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int v_id = values.node();
    bw = [v_id, ids](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      Array<S>& gv = tp.grad_buffer(v_id);
      for (std::size_t i = 0; i < ids.size(); ++i) gv[i] += g[ids[i]];
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "scatter_add");
}

// ---------------------------------------------------------------------------
// Masked ops

namespace {

template <typename S>
void check_mask(const Array<S>& x, const Mask& mask, const char* op) {
  if (mask.size() != x.size())
    throw ShapeError(std::string(op) + ": mask size " +
                     std::to_string(mask.size()) + " vs " +
                     shape_str(x.shape));
  for (std::uint8_t m : mask)
    if (m) return;
  throw MaskError(std::string(op) + ": all positions masked");
}

}  // namespace

template <typename S>
Tensor<S> masked_softmax(Tensor<S> x, const Mask& mask) {
  Tape<S>& t = *x.tape();
  const Array<S>& v = x.value();
  if (v.rank() != 1)
    throw ShapeError("masked_softmax: rank-1 input required, got " +
                     shape_str(v.shape));
  check_mask(v, mask, "masked_softmax");
  S mx = -std::numeric_limits<S>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i] && v[i] > mx) mx = v[i];
  Array<S> y(v.shape);
  S z = S(0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask[i]) {
      y[i] = std::exp(v[i] - mx);
      z += y[i];
    }
  }
  for (std::size_t i = 0; i < v.size(); ++i)
    y[i] = mask[i] ? y[i] / z : S(0);
  const bool rec = t.grad_enabled && x.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int x_id = x.node();
    bw = [x_id, mask](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      const Array<S>& yv = tp.value(out);
      Array<S>& gx = tp.grad_buffer(x_id);
      S s = S(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) s += yv[i] * g[i];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) gx[i] += yv[i] * (g[i] - s);
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "masked_softmax");
}

template <typename S>
Tensor<S> mask_sentinel(Tensor<S> x, const Mask& mask) {
  Tape<S>& t = *x.tape();
  const Array<S>& v = x.value();
  check_mask(v, mask, "mask_sentinel");
  Array<S> y(v.shape);
  for (std::size_t i = 0; i < v.size(); ++i)
    y[i] = mask[i] ? v[i] : S(-1e9);
  const bool rec = t.grad_enabled && x.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int x_id = x.node();
    bw = [x_id, mask](Tape<S>& tp, int out) {
      const Array<S>& g = tp.grad_buffer(out);
      Array<S>& gx = tp.grad_buffer(x_id);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) gx[i] += g[i];
    };
  }
  return t.make(std::move(y), rec, std::move(bw), "mask_sentinel");
}

template <typename S>
Tensor<S> masked_logsumexp(Tensor<S> x, const Mask& mask) {
  Tape<S>& t = *x.tape();
  const Array<S>& v = x.value();
  if (v.rank() != 1)
    throw ShapeError("masked_logsumexp: rank-1 input required, got " +
                     shape_str(v.shape));
  check_mask(v, mask, "masked_logsumexp");
  S mx = -std::numeric_limits<S>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i] && v[i] > mx) mx = v[i];
  S z = S(0);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i]) z += std::exp(v[i] - mx);
  const S lse = mx + std::log(z);
  const bool rec = t.grad_enabled && x.requires_grad();
  typename Tape<S>::BackwardFn bw;
  if (rec) {
    const int x_id = x.node();
    bw = [x_id, mask](Tape<S>& tp, int out) {
      const S g = tp.grad_buffer(out)[0];
      const S o = tp.value(out)[0];
      const Array<S>& xv = tp.value(x_id);
      Array<S>& gx = tp.grad_buffer(x_id);
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (mask[i]) gx[i] += g * std::exp(xv[i] - o);
    };
  }
  return t.make(Array<S>::scalar(lse), rec, std::move(bw), "masked_logsumexp");
}

// ---------------------------------------------------------------------------
// Explicit instantiations for the two supported widths: standard (float, used
// for training) and wide (double, used by gradient checks and oracles).

template class Tape<float>;
template class Tape<double>;

#define ACVI_INSTANTIATE_OPS(S)                                               \
  template Tensor<S> add(Tensor<S>, Tensor<S>);                              \
  template Tensor<S> sub(Tensor<S>, Tensor<S>);                              \
  template Tensor<S> mul(Tensor<S>, Tensor<S>);                              \
  template Tensor<S> emin(Tensor<S>, Tensor<S>);                             \
  template Tensor<S> add_scalar(Tensor<S>, S);                               \
  template Tensor<S> mul_scalar(Tensor<S>, S);                               \
  template Tensor<S> scale(Tensor<S>, Tensor<S>);                            \
  template Tensor<S> tanh(Tensor<S>);                                        \
  template Tensor<S> sigmoid(Tensor<S>);                                     \
  template Tensor<S> relu(Tensor<S>);                                        \
  template Tensor<S> exp(Tensor<S>);                                         \
  template Tensor<S> log(Tensor<S>);                                         \
  template Tensor<S> softplus(Tensor<S>);                                    \
  template Tensor<S> neg(Tensor<S>);                                         \
  template Tensor<S> clamp_min(Tensor<S>, S);                                \
  template Tensor<S> matmul(Tensor<S>, Tensor<S>);                           \
  template Tensor<S> matmul_nt(Tensor<S>, Tensor<S>);                        \
  template Tensor<S> matvec(Tensor<S>, Tensor<S>);                           \
  template Tensor<S> dot(Tensor<S>, Tensor<S>);                              \
  template Tensor<S> sum(Tensor<S>);                                         \
  template Tensor<S> concat(const std::vector<Tensor<S>>&);                  \
  template Tensor<S> slice(Tensor<S>, std::size_t, std::size_t);             \
  template Tensor<S> row(Tensor<S>, std::size_t);                            \
  template Tensor<S> gather_rows(Tensor<S>, const std::vector<int>&);        \
  template Tensor<S> stack_rows(const std::vector<Tensor<S>>&);              \
  template Tensor<S> rows_weighted_sum(Tensor<S>, Tensor<S>);                \
  template Tensor<S> add_rowvec(Tensor<S>, Tensor<S>);                       \
  template Tensor<S> outer(Tensor<S>, Tensor<S>);                            \
  template Tensor<S> row_sum(Tensor<S>);                                     \
  template Tensor<S> pick(Tensor<S>, std::size_t);                           \
  template Tensor<S> pad_to(Tensor<S>, std::size_t, std::size_t);            \
  template Tensor<S> scatter_add(const std::vector<int>&, Tensor<S>,         \
                                 std::size_t);                               \
  template Tensor<S> masked_softmax(Tensor<S>, const Mask&);                 \
  template Tensor<S> mask_sentinel(Tensor<S>, const Mask&);                  \
  template Tensor<S> masked_logsumexp(Tensor<S>, const Mask&);

ACVI_INSTANTIATE_OPS(float)
ACVI_INSTANTIATE_OPS(double)

#undef ACVI_INSTANTIATE_OPS

}  // namespace acvi
