#include "mta/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace mta::ag {

template <typename T>
Matrix<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Matrix<T>(value.rows(), value.cols());
  return grad;
}

template <typename T>
void Node<T>::accumulate(const Matrix<T>& g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template <typename T>
Var<T>::Var(Matrix<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Builds the output node; inputs and the backward closure are only retained
// when at least one input needs a gradient.
template <typename T, typename Fn>
Var<T> make_op(Matrix<T> value, std::vector<NodePtr<T>> inputs, Fn&& fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in->requires_grad;
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward_fn = std::forward<Fn>(fn);
  }
  return Var<T>(node);
}

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be 1x1");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

// ---- plain kernels --------------------------------------------------------

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<T> out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a(i, p);
      if (av == T(0)) continue;
      const T* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.cols() == b.cols(), "matmul_bt: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Matrix<T> out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b.data() + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
Matrix<T> matmul_at(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.rows() == b.rows(), "matmul_at: inner dimensions differ");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Matrix<T> out(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const T* ar = a.data() + p * m;
    const T* br = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ar[i];
      if (av == T(0)) continue;
      T* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto an = a.node(), bn = b.node();
  return make_op<T>(matmul(a.value(), b.value()), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) an->accumulate(matmul_bt(self.grad, bn->value));
    if (bn->requires_grad) bn->accumulate(matmul_at(an->value, self.grad));
  });
}

template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
  auto an = a.node(), bn = b.node();
  return make_op<T>(matmul_bt(a.value(), b.value()), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) an->accumulate(matmul(self.grad, bn->value));
    if (bn->requires_grad) bn->accumulate(matmul_at(self.grad, an->value));
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  require(a.value().same_shape(b.value()), "hadamard: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Matrix<T> out = a.value();
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) += row.value()[c];
  auto an = a.node(), rn = row.node();
  return make_op<T>(std::move(out), {an, rn}, [an, rn](Node<T>& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (rn->requires_grad) {
      auto& g = rn->grad_buffer();
      const std::size_t n = g.cols();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad(r, c);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Matrix<T> out = a.value();
  for (auto& v : out.storage()) v *= factor;
  auto an = a.node();
  return make_op<T>(std::move(out), {an}, [an, factor](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

// ---- pointwise ------------------------------------------------------------

template <typename T>
Var<T> relu(const Var<T>& a) {
  Matrix<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  auto an = a.node();
  return make_op<T>(std::move(out), {an}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (an->value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  // exact erf form
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  Matrix<T> out = a.value();
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  auto an = a.node();
  return make_op<T>(std::move(out), {an}, [an, inv_sqrt2, inv_sqrt2pi](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = an->value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      g[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Matrix<T> out = a.value();
  for (auto& v : out.storage()) v = std::tanh(v);
  auto an = a.node();
  auto result = make_op<T>(std::move(out), {an}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
  return result;
}

// ---- normalisation / attention -------------------------------------------

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t rows = x.rows(), n = x.cols();
  require(gamma.cols() == n && beta.cols() == n, "layer_norm: affine shape mismatch");
  Matrix<T> xhat(rows, n), out(rows, n);
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.value().row(r);
    T mean = T(0);
    for (T v : xr) mean += v;
    mean /= T(n);
    T var = T(0);
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xr[c] - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gamma.value()[c] + beta.value()[c];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op<T>(std::move(out), {xn, gn, bn},
                    [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    const std::size_t rows = xhat.rows(), n = xhat.cols();
    if (gn->requires_grad || bn->requires_grad) {
      auto& gg = gn->grad_buffer();
      auto& gb = bn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          gg[c] += self.grad(r, c) * xhat(r, c);
          gb[c] += self.grad(r, c);
        }
    }
    if (xn->requires_grad) {
      auto& gx = xn->grad_buffer();
      std::vector<T> dxhat(n);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_d = T(0), mean_dx = T(0);
        for (std::size_t c = 0; c < n; ++c) {
          dxhat[c] = self.grad(r, c) * gn->value[c];
          mean_d += dxhat[c];
          mean_dx += dxhat[c] * xhat(r, c);
        }
        mean_d /= T(n);
        mean_dx /= T(n);
        for (std::size_t c = 0; c < n; ++c)
          gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
      }
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x, const std::vector<std::uint8_t>* allowed) {
  const std::size_t rows = x.rows(), n = x.cols();
  require(!allowed || allowed->size() == rows * n, "softmax_rows: mask shape mismatch");
  Matrix<T> out(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (!allowed || (*allowed)[r * n + c]) mx = std::max(mx, x.value()(r, c));
    require(std::isfinite(mx) || !allowed, "softmax_rows: row with no allowed entry");
    T total = T(0);
    for (std::size_t c = 0; c < n; ++c) {
      if (allowed && !(*allowed)[r * n + c]) continue;
      out(r, c) = std::exp(x.value()(r, c) - mx);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < n; ++c) out(r, c) /= total;
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {xn}, [xn](Node<T>& self) {
    auto& g = xn->grad_buffer();
    const std::size_t rows = self.value.rows(), n = self.value.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t c = 0; c < n; ++c) dot += self.grad(r, c) * self.value(r, c);
      for (std::size_t c = 0; c < n; ++c) g(r, c) += self.value(r, c) * (self.grad(r, c) - dot);
    }
  });
}

// ---- structural -----------------------------------------------------------

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<T> out(rows, n);
  std::vector<NodePtr<T>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.data() + offset * n);
    offset += p.rows();
    nodes.push_back(p.node());
  }
  return make_op<T>(std::move(out), nodes, [nodes](Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& in : nodes) {
      const std::size_t count = in->value.size();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < count; ++i) g[i] += self.grad[offset + i];
      }
      offset += count;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    n += p.cols();
  }
  Matrix<T> out(rows, n);
  std::vector<NodePtr<T>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, offset + c) = p.value()(r, c);
    offset += p.cols();
    nodes.push_back(p.node());
  }
  return make_op<T>(std::move(out), nodes, [nodes](Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& in : nodes) {
      const std::size_t w = in->value.cols();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) g(r, c) += self.grad(r, offset + c);
      }
      offset += w;
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.rows(), "slice_rows: out of range");
  const std::size_t n = a.cols();
  Matrix<T> out(count, n);
  std::copy(a.value().data() + begin * n, a.value().data() + (begin + count) * n, out.data());
  auto an = a.node();
  return make_op<T>(std::move(out), {an}, [an, begin](Node<T>& self) {
    auto& g = an->grad_buffer();
    const std::size_t offset = begin * g.cols();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.cols(), "slice_cols: out of range");
  Matrix<T> out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a.value()(r, begin + c);
  auto an = a.node();
  return make_op<T>(std::move(out), {an}, [an, begin](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) g(r, begin + c) += self.grad(r, c);
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<std::size_t>& index) {
  const std::size_t n = a.cols();
  Matrix<T> out(index.size(), n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < a.rows(), "gather_rows: index out of range");
    for (std::size_t c = 0; c < n; ++c) out(r, c) = a.value()(index[r], c);
  }
  auto an = a.node();
  return make_op<T>(std::move(out), {an}, [an, index](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(index[r], c) += self.grad(r, c);
  });
}

template <typename T>
Var<T> group_mean_rows(const Var<T>& a, std::size_t group) {
  require(group > 0 && a.rows() % group == 0, "group_mean_rows: rows not divisible by group");
  const std::size_t groups = a.rows() / group, n = a.cols();
  Matrix<T> out(groups, n);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r / group, c) += a.value()(r, c) / T(group);
  auto an = a.node();
  return make_op<T>(std::move(out), {an}, [an, group](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += self.grad(r / group, c) / T(group);
  });
}

// ---- spatial --------------------------------------------------------------

template <typename T>
Var<T> im2col(const Var<T>& x, std::size_t height, std::size_t width, std::size_t kernel,
              std::size_t stride, std::size_t pad) {
  require(x.rows() == height * width, "im2col: pixel count mismatch");
  const std::size_t channels = x.cols();
  const std::size_t out_h = (height + 2 * pad - kernel) / stride + 1;
  const std::size_t out_w = (width + 2 * pad - kernel) / stride + 1;
  const std::size_t patch = kernel * kernel * channels;
  // source pixel index per (output row, kernel tap), or -1 for padding
  std::vector<std::ptrdiff_t> source(out_h * out_w * kernel * kernel, -1);
  Matrix<T> out(out_h * out_w, patch);
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox)
      for (std::size_t ky = 0; ky < kernel; ++ky)
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
          const std::size_t orow = oy * out_w + ox, tap = ky * kernel + kx;
          if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(height) || ix >= std::ptrdiff_t(width)) continue;
          const std::size_t src = std::size_t(iy) * width + std::size_t(ix);
          source[orow * kernel * kernel + tap] = std::ptrdiff_t(src);
          for (std::size_t c = 0; c < channels; ++c) out(orow, tap * channels + c) = x.value()(src, c);
        }
  auto xn = x.node();
  const std::size_t taps = kernel * kernel;
  return make_op<T>(std::move(out), {xn}, [xn, source = std::move(source), taps, channels](Node<T>& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t orow = 0; orow < self.grad.rows(); ++orow)
      for (std::size_t tap = 0; tap < taps; ++tap) {
        const std::ptrdiff_t src = source[orow * taps + tap];
        if (src < 0) continue;
        for (std::size_t c = 0; c < channels; ++c) g(std::size_t(src), c) += self.grad(orow, tap * channels + c);
      }
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t height, std::size_t width, std::size_t factor) {
  require(x.rows() == height * width, "upsample_nearest: pixel count mismatch");
  const std::size_t n = x.cols(), out_w = width * factor;
  Matrix<T> out(height * factor * out_w, n);
  for (std::size_t y = 0; y < height * factor; ++y)
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const std::size_t src = (y / factor) * width + xx / factor;
      for (std::size_t c = 0; c < n; ++c) out(y * out_w + xx, c) = x.value()(src, c);
    }
  auto xn = x.node();
  return make_op<T>(std::move(out), {xn}, [xn, width, factor](Node<T>& self) {
    auto& g = xn->grad_buffer();
    const std::size_t out_w = width * factor, n = g.cols();
    for (std::size_t r = 0; r < self.grad.rows(); ++r) {
      const std::size_t y = r / out_w, xx = r % out_w;
      const std::size_t src = (y / factor) * width + xx / factor;
      for (std::size_t c = 0; c < n; ++c) g(src, c) += self.grad(r, c);
    }
  });
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T total = T(0);
  for (T v : a.value().storage()) total += v;
  auto an = a.node();
  return make_op<T>(Matrix<T>(1, 1, total), {an}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (auto& v : g.storage()) v += self.grad[0];
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& weights) {
  require(scalars.size() == weights.size(), "weighted_sum: size mismatch");
  T total = T(0);
  std::vector<NodePtr<T>> nodes;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(scalars[i].rows() == 1 && scalars[i].cols() == 1, "weighted_sum: inputs must be 1x1");
    total += weights[i] * scalars[i].item();
    nodes.push_back(scalars[i].node());
  }
  return make_op<T>(Matrix<T>(1, 1, total), nodes, [nodes, weights](Node<T>& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->grad_buffer()[0] += weights[i] * self.grad[0];
  });
}

template <typename T>
Var<T> external_scalar(const Var<T>& input, T value, Matrix<T> grad_wrt_input) {
  require(grad_wrt_input.same_shape(input.value()), "external_scalar: gradient shape mismatch");
  auto in = input.node();
  return make_op<T>(Matrix<T>(1, 1, value), {in}, [in, g = std::move(grad_wrt_input)](Node<T>& self) {
    auto& buf = in->grad_buffer();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += up * g[i];
  });
}

#define MTA_INSTANTIATE_AUTOGRAD(T)                                                                 \
  template struct Node<T>;                                                                          \
  template class Var<T>;                                                                            \
  template void backward<T>(const Var<T>&);                                                         \
  template Matrix<T> matmul<T>(const Matrix<T>&, const Matrix<T>&);                                 \
  template Matrix<T> matmul_bt<T>(const Matrix<T>&, const Matrix<T>&);                              \
  template Matrix<T> matmul_at<T>(const Matrix<T>&, const Matrix<T>&);                              \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> matmul_bt<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                             \
  template Var<T> hadamard<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> scale<T>(const Var<T>&, T);                                                       \
  template Var<T> relu<T>(const Var<T>&);                                                           \
  template Var<T> gelu<T>(const Var<T>&);                                                           \
  template Var<T> tanh<T>(const Var<T>&);                                                           \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                    \
  template Var<T> softmax_rows<T>(const Var<T>&, const std::vector<std::uint8_t>*);                 \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                       \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                       \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                           \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);                           \
  template Var<T> gather_rows<T>(const Var<T>&, const std::vector<std::size_t>&);                   \
  template Var<T> group_mean_rows<T>(const Var<T>&, std::size_t);                                   \
  template Var<T> im2col<T>(const Var<T>&, std::size_t, std::size_t, std::size_t, std::size_t,      \
                            std::size_t);                                                           \
  template Var<T> upsample_nearest<T>(const Var<T>&, std::size_t, std::size_t, std::size_t);        \
  template Var<T> sum_all<T>(const Var<T>&);                                                        \
  template Var<T> weighted_sum<T>(const std::vector<Var<T>>&, const std::vector<T>&);               \
  template Var<T> external_scalar<T>(const Var<T>&, T, Matrix<T>);

MTA_INSTANTIATE_AUTOGRAD(float)
MTA_INSTANTIATE_AUTOGRAD(double)

}  // namespace mta::ag
