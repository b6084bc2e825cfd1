#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mta/matrix.hpp"

// Minimal reverse-mode differentiation over row-major matrices.
// Every op records its inputs and a closure that pushes the output gradient
// back; backward() walks the graph in reverse topological order. Graphs are
// rebuilt on every forward pass and released with the last Var handle.
namespace mta::ag {

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix<T>& g);
  Matrix<T>& grad_buffer();  // zero-initialised on first use
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Matrix<T> value) { return Var(std::move(value), false); }
  static Var parameter(Matrix<T> value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Matrix<T>(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T item() const { return node_->value[0]; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf.
template <typename T>
void backward(const Var<T>& root);

// ---- linear algebra -------------------------------------------------------
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);     // a b
template <typename T> Var<T> matmul_bt(const Var<T>& a, const Var<T>& b);  // a b^T
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> hadamard(const Var<T>& a, const Var<T>& b);
/// Adds a 1 x cols row vector to every row.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <typename T> Var<T> scale(const Var<T>& a, T factor);

// ---- pointwise ------------------------------------------------------------
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);

// ---- normalisation / attention -------------------------------------------
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Row softmax. When `allowed` is non-null it is a rows*cols 0/1 mask; masked
/// entries get probability 0. Every row must allow at least one entry.
template <typename T>
Var<T> softmax_rows(const Var<T>& x, const std::vector<std::uint8_t>* allowed = nullptr);

// ---- structural -----------------------------------------------------------
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count);
template <typename T> Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count);
template <typename T> Var<T> gather_rows(const Var<T>& a, const std::vector<std::size_t>& index);
/// Mean over consecutive groups of `group` rows: [g*group x n] -> [g x n].
template <typename T> Var<T> group_mean_rows(const Var<T>& a, std::size_t group);

// ---- spatial (feature maps are [H*W x C]) ---------------------------------
template <typename T>
Var<T> im2col(const Var<T>& x, std::size_t height, std::size_t width, std::size_t kernel,
              std::size_t stride, std::size_t pad);
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t height, std::size_t width, std::size_t factor);

// ---- reductions / scalars -------------------------------------------------
template <typename T> Var<T> sum_all(const Var<T>& a);
/// sum_i weights[i] * scalars[i]; every input must be 1x1.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& weights);
/// Wraps an externally differentiated scalar function of `input`: the node
/// carries `value`, and backward adds upstream * `grad_wrt_input` into input.
template <typename T>
Var<T> external_scalar(const Var<T>& input, T value, Matrix<T> grad_wrt_input);

// ---- plain matrix kernels shared with non-differentiable code -------------
template <typename T> Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);
template <typename T> Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b);
template <typename T> Matrix<T> matmul_at(const Matrix<T>& a, const Matrix<T>& b);  // a^T b

}  // namespace mta::ag
