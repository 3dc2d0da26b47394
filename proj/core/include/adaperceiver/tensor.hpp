#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adaperceiver/errors.hpp"

namespace adaperceiver {

using Index = int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of scalars S (float for training, double for
// gradient checking). Values are immutable after the producing operation
// finishes; only the grad buffer is written afterwards, by Tape::backward.
template <typename S>
struct TensorNodeT {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same numel as value
  bool requires_grad = false;
};

template <typename S>
class TensorT {
 public:
  using Node = TensorNodeT<S>;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, S fill, bool requires_grad = false);
  static TensorT from(Shape shape, std::vector<S> data, bool requires_grad = false);
  static TensorT scalar(S v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
  Index numel() const { return static_cast<Index>(node_->value.size()); }

  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Grad buffer, allocating zeros on first access.
  std::vector<S>& grad();
  const std::vector<S>& grad() const;
  void zero_grad();

  S item() const;
  S at(std::initializer_list<Index> idx) const;

  std::shared_ptr<Node> node() const { return node_; }

 private:
  explicit TensorT(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Reverse-mode tape. Primitive applications are recorded in execution order,
// which is a topological order by construction; backward() replays them in
// reverse. A tape is single-owner: never share one across threads.
template <typename S>
class TapeT {
 public:
  using NodePtr = std::shared_ptr<TensorNodeT<S>>;

  struct Record {
    std::vector<NodePtr> inputs;
    NodePtr output;
    std::function<void()> backward;
  };

  void record(std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward);

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every recorded
  // node that requires grad. Leaves not reachable from `loss` end with zero
  // grad. `loss` must be scalar.
  void backward(const TensorT<S>& loss);

  size_t size() const { return records_.size(); }
  void clear();

 private:
  std::vector<Record> records_;
  std::vector<NodePtr> creation_order_;  // outputs, for the topological check
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;
using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// Boolean permission matrix used by masked_softmax (rows x cols, row-major).
struct MaskMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<uint8_t> allow;

  static MaskMatrix all_true(Index rows, Index cols);
  bool at(Index r, Index c) const { return allow[static_cast<size_t>(r * cols + c)] != 0; }
};

namespace ops {

// Primitive set of the differentiation engine: matmul, add, mul, gelu,
// masked_softmax, layer_norm, slice, concat, broadcast, reduce-sum/mean,
// transpose, plus the structural reshape and two fused loss heads
// (cross_entropy, policy_gradient_loss) that carry hand-derived gradients.
// Every primitive takes the recording tape first; pass nullptr to run
// forward-only.

template <typename S>
TensorT<S> matmul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

template <typename S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

template <typename S>
TensorT<S> mul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

// tanh-approximate GeLU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
template <typename S>
TensorT<S> gelu(TapeT<S>* tape, const TensorT<S>& x);

// Row-stabilized softmax over the last axis restricted to permitted entries;
// forbidden entries are exactly zero. The mask spans the last two axes and is
// broadcast over leading axes. Throws AllMaskedRow if a mask row is empty.
template <typename S>
TensorT<S> masked_softmax(TapeT<S>* tape, const TensorT<S>& scores, const MaskMatrix& mask);

template <typename S>
TensorT<S> layer_norm(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, S eps);

template <typename S>
TensorT<S> slice(TapeT<S>* tape, const TensorT<S>& x, int axis, Index start, Index len);

template <typename S>
TensorT<S> concat(TapeT<S>* tape, const std::vector<TensorT<S>>& xs, int axis);

// numpy-style right-aligned broadcast to `target`.
template <typename S>
TensorT<S> broadcast_to(TapeT<S>* tape, const TensorT<S>& x, const Shape& target);

// axis < 0 reduces all axes to a scalar.
template <typename S>
TensorT<S> reduce_sum(TapeT<S>* tape, const TensorT<S>& x, int axis = -1, bool keepdim = false);

template <typename S>
TensorT<S> reduce_mean(TapeT<S>* tape, const TensorT<S>& x, int axis = -1, bool keepdim = false);

template <typename S>
TensorT<S> transpose(TapeT<S>* tape, const TensorT<S>& x, int axis0 = -2, int axis1 = -1);

template <typename S>
TensorT<S> reshape(TapeT<S>* tape, const TensorT<S>& x, Shape target);

// Mean over the batch of label-smoothed cross-entropy; optional per-sample
// weights (not differentiated). logits: [B, C].
template <typename S>
TensorT<S> cross_entropy(TapeT<S>* tape, const TensorT<S>& logits,
                         const std::vector<int>& labels, S smoothing = S(0),
                         const std::vector<S>* sample_weights = nullptr);

// REINFORCE surrogate: mean_i [-adv_i * log pi(a_i|x_i)] - ent_coef * mean_i H(pi_i).
template <typename S>
TensorT<S> policy_gradient_loss(TapeT<S>* tape, const TensorT<S>& logits,
                                const std::vector<int>& actions,
                                const std::vector<S>& advantages, S ent_coef = S(0));

// --- composites ------------------------------------------------------------

// y = x @ W^T + b with W stored [out, in]; b may be undefined.
template <typename S>
TensorT<S> linear(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& weight,
                  const TensorT<S>& bias);

template <typename S>
TensorT<S> scale(TapeT<S>* tape, const TensorT<S>& x, S c);

template <typename S>
TensorT<S> sub(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

// Softmax over the last axis (all-true mask).
template <typename S>
TensorT<S> softmax(TapeT<S>* tape, const TensorT<S>& x);

}  // namespace ops

// Softmax probabilities of one logit row (no autodiff); used by policies.
template <typename S>
std::vector<S> softmax_row(const std::vector<S>& logits);

template <typename S>
bool all_finite(const TensorT<S>& t);

extern template struct TensorNodeT<float>;
extern template struct TensorNodeT<double>;
extern template class TensorT<float>;
extern template class TensorT<double>;
extern template class TapeT<float>;
extern template class TapeT<double>;

}  // namespace adaperceiver
