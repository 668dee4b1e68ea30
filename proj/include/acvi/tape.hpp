#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "acvi/array.hpp"

namespace acvi {

template <typename S>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; invalidated when the
// tape is cleared. A default-constructed Tensor is null.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<S>* tape, int node) : tape_(tape), node_(node) {}

  bool defined() const { return tape_ != nullptr; }
  const Array<S>& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  int node() const { return node_; }
  Tape<S>* tape() const { return tape_; }

 private:
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

// Records tensor-level operations for reverse-mode differentiation. Nodes are
// appended in evaluation order, so the list is already topologically sorted;
// backward() walks it in reverse, which also fixes the gradient accumulation
// order. A tape and its tensors belong to one thread.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // When false, ops still compute values but record no backward closures
  // (decode-time forward passes).
  bool grad_enabled = true;
  // When true, every op output is scanned for NaN/Inf and raises.
  bool check_finite = true;

  // Backward closure: receives the tape and the id of the node it belongs
  // to, reads that node's gradient and accumulates into its inputs' buffers.
  using BackwardFn = std::function<void(Tape<S>&, int)>;

  Tensor<S> leaf(Array<S> value, bool requires_grad = false) {
    return make(std::move(value), requires_grad, nullptr, "leaf");
  }
  Tensor<S> constant(Array<S> value) { return leaf(std::move(value), false); }
  Tensor<S> scalar(S v, bool requires_grad = false) {
    return leaf(Array<S>::scalar(v), requires_grad);
  }

  // Core extension point: ops (including test-only ones) append nodes here.
  // `backward` may be null for leaves or when no input needs gradients.
  Tensor<S> make(Array<S> value, bool requires_grad, BackwardFn backward,
                 const char* op_name);

  const Array<S>& value(int node) const { return nodes_[node].value; }
  bool requires_grad(int node) const { return nodes_[node].requires_grad; }

  // Gradient of the last backward() w.r.t. this node; zeros if untouched.
  const Array<S>& grad(const Tensor<S>& t);
  Array<S>& grad_buffer(int node);  // allocates (zeroed) on first use

  // Reverse sweep from a scalar loss. Seeds d(loss)/d(loss) = 1 and runs the
  // recorded closures in reverse node order. Throws ShapeError on non-scalar.
  void backward(const Tensor<S>& loss);

  void zero_grads();
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array<S> value;
    Array<S> grad;  // empty until needed
    bool requires_grad = false;
    BackwardFn backward;
  };
  // deque: references returned by value()/grad_buffer() must survive
  // subsequent node creation (ops routinely hold them across make()).
  std::deque<Node> nodes_;

  friend class Tensor<S>;
};

template <typename S>
const Array<S>& Tensor<S>::value() const {
  return tape_->value(node_);
}

template <typename S>
bool Tensor<S>::requires_grad() const {
  return tape_->requires_grad(node_);
}

// ---------------------------------------------------------------------------
// Recorded operations. All of them validate shapes and raise ShapeError with
// both shapes in the message. Elementwise binaries require equal shapes; the
// only implicit promotion anywhere is scalar-with-tensor via the *_scalar and
// scale() forms.

template <typename S> Tensor<S> add(Tensor<S> a, Tensor<S> b);
template <typename S> Tensor<S> sub(Tensor<S> a, Tensor<S> b);
template <typename S> Tensor<S> mul(Tensor<S> a, Tensor<S> b);
template <typename S> Tensor<S> emin(Tensor<S> a, Tensor<S> b);
template <typename S> Tensor<S> add_scalar(Tensor<S> a, S c);
template <typename S> Tensor<S> mul_scalar(Tensor<S> a, S c);
// Elementwise a * s where s is a one-element tensor (both differentiable).
template <typename S> Tensor<S> scale(Tensor<S> a, Tensor<S> s);

template <typename S> Tensor<S> tanh(Tensor<S> a);
template <typename S> Tensor<S> sigmoid(Tensor<S> a);
template <typename S> Tensor<S> relu(Tensor<S> a);
template <typename S> Tensor<S> exp(Tensor<S> a);
template <typename S> Tensor<S> log(Tensor<S> a);  // DomainError on x <= 0
template <typename S> Tensor<S> softplus(Tensor<S> a);
template <typename S> Tensor<S> neg(Tensor<S> a);
template <typename S> Tensor<S> clamp_min(Tensor<S> a, S floor);

template <typename S> Tensor<S> matmul(Tensor<S> a, Tensor<S> b);
// a [m x k] times b^T where b is [n x k]; avoids materializing transposes.
template <typename S> Tensor<S> matmul_nt(Tensor<S> a, Tensor<S> b);
template <typename S> Tensor<S> matvec(Tensor<S> m, Tensor<S> v);
template <typename S> Tensor<S> dot(Tensor<S> a, Tensor<S> b);
template <typename S> Tensor<S> sum(Tensor<S> a);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts);
template <typename S> Tensor<S> slice(Tensor<S> a, std::size_t start, std::size_t len);
template <typename S> Tensor<S> row(Tensor<S> m, std::size_t i);
template <typename S> Tensor<S> gather_rows(Tensor<S> m, const std::vector<int>& ids);
template <typename S> Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows);
// sum_i w_i * row_i(m): the weighted average at the heart of attention.
template <typename S> Tensor<S> rows_weighted_sum(Tensor<S> m, Tensor<S> w);
template <typename S> Tensor<S> add_rowvec(Tensor<S> m, Tensor<S> v);
template <typename S> Tensor<S> outer(Tensor<S> u, Tensor<S> v);
template <typename S> Tensor<S> row_sum(Tensor<S> m);
template <typename S> Tensor<S> pick(Tensor<S> a, std::size_t i);
template <typename S> Tensor<S> pad_to(Tensor<S> a, std::size_t total, std::size_t offset);
// out[ids[i]] += values[i]; ids may repeat. MaskError on out-of-range ids.
template <typename S> Tensor<S> scatter_add(const std::vector<int>& ids,
                                            Tensor<S> values, std::size_t total);

// Masked positions come out exactly zero; the rest is a max-subtracted
// softmax over the unmasked entries. MaskError when everything is masked.
template <typename S> Tensor<S> masked_softmax(Tensor<S> x, const Mask& mask);
// Scores with masked entries replaced by a -1e9 sentinel (no gradient there).
template <typename S> Tensor<S> mask_sentinel(Tensor<S> x, const Mask& mask);
template <typename S> Tensor<S> masked_logsumexp(Tensor<S> x, const Mask& mask);

}  // namespace acvi
