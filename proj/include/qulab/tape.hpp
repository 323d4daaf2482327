#ifndef QULAB_TAPE_HPP_
#define QULAB_TAPE_HPP_

#include <functional>
#include <vector>

#include "qulab/tensor.hpp"

namespace qulab {

// Handle into a Tape; cheap to copy, only meaningful for the tape that
// produced it.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over an op record. Creation order is a topological
// order of the computation graph, so backward() walks the record in reverse.
// A Tape is single-threaded and non-relocatable.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(float v) { return constant(Tensor::scalar(v)); }

  // ---- differentiable ops ----
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float s);
  Var add_bias(Var a, Var bias);  // [m x n] + [n], broadcast over rows
  Var transpose(Var a);
  Var slice_cols(Var a, int start, int n);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var embedding_lookup(Var table, const std::vector<int>& ids);
  Var layer_norm(Var x, Var gain, Var bias);  // normalizes each row
  Var gelu(Var x);
  Var exp(Var x);
  Var logsigmoid(Var x);
  Var softmax_rows(Var x);
  Var log_softmax_rows(Var x);
  // Per-position log-probability of the target ids under row-wise softmax.
  // logits [T x V], targets.size() == T, result [T].
  Var token_logprobs(Var logits, const std::vector<int>& targets);
  Var sum(Var x);   // scalar
  Var mean(Var x);  // scalar
  Var stack_scalars(const std::vector<Var>& scalars);

  // Mean negative log-likelihood of targets under the logits rows.
  Var cross_entropy_logits(Var logits, const std::vector<int>& targets);

  // ---- gradients ----
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Valid after backward(); zero tensor for parameters the loss never
  // reached. Only nodes created with requires_grad (or derived from them)
  // carry gradients.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    bool is_leaf = false;
    std::function<void()> backward_fn;
  };

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& grad_buf(int id);
  void accumulate(int id, const Tensor& g);
  Var push(Tensor value, bool requires_grad, std::function<void()> backward_fn);
  void check(Var v) const;

  std::vector<Node> nodes_;
  bool recording_;
  bool backward_done_ = false;
  Tensor zero_dummy_;
};

}  // namespace qulab

#endif  // QULAB_TAPE_HPP_
