#include "plex/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace plex::tensor {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Creates the result node. It joins the active tape only when a tape is active and
// some input requires grad; otherwise the op runs in inference mode.
template <typename T>
NodePtr<T> make_result(Shape shape, std::initializer_list<const Tensor<T>*> inputs, const char* op) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(numel_of(shape), T{0});
  node->shape = std::move(shape);
  node->op = op;
  Tape<T>* tape = active_tape<T>();
  if (tape != nullptr) {
    for (const Tensor<T>* in : inputs) {
      if (in->requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    for (const Tensor<T>* in : inputs) {
      node->parents.push_back(in->node_ptr());
    }
  }
  return node;
}

template <typename T>
Tensor<T> finish(NodePtr<T> node, std::function<void(Node<T>&)> fn) {
  if (node->requires_grad) {
    node->backward_fn = std::move(fn);
    active_tape<T>()->record(node);
  }
  return Tensor<T>(std::move(node));
}

// Parent's grad buffer, or nullptr when that parent does not take gradients.
template <typename T>
T* parent_grad(Node<T>& node, std::size_t i) {
  Node<T>& p = *node.parents[i];
  return p.requires_grad ? p.ensure_grad() : nullptr;
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

// c[m x n] += a[m x k] * b[k x n]; inner loop is a contiguous axpy.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) {
        continue;
      }
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[c * rows + r] = x[r * cols + c];
    }
  }
  return out;
}

template <typename T>
void check_finite(std::span<const T> v, const char* op) {
  for (T x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite input");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  auto out = make_result<T>({m, n}, {&a, &b}, "matmul");
  gemm_acc(a.data().data(), b.data().data(), out->value.data(), m, k, n);
  return finish<T>(out, [m, k, n](Node<T>& self) {
    const Node<T>& an = *self.parents[0];
    const Node<T>& bn = *self.parents[1];
    const T* g = self.grad.data();
    if (T* ga = parent_grad(self, 0)) {
      // dA = G * B^T
      auto bt = transposed(bn.value.data(), k, n);
      gemm_acc(g, bt.data(), ga, m, n, k);
    }
    if (T* gb = parent_grad(self, 1)) {
      // dB = A^T * G
      auto at = transposed(an.value.data(), m, k);
      gemm_acc(at.data(), g, gb, k, m, n);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto out = make_result<T>({c, r}, {&x}, "transpose");
  out->value = transposed(x.data().data(), r, c);
  return finish<T>(out, [r, c](Node<T>& self) {
    if (T* gx = parent_grad(self, 0)) {
      auto back = transposed(self.grad.data(), c, r);
      for (std::size_t i = 0; i < back.size(); ++i) {
        gx[i] += back[i];
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  auto out = make_result<T>(a.shape(), {&a, &b}, "add");
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = a[i] + b[i];
  }
  return finish<T>(out, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t p = 0; p < 2; ++p) {
      if (T* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < n; ++i) {
          g[i] += self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  auto out = make_result<T>(a.shape(), {&a, &b}, "sub");
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = a[i] - b[i];
  }
  return finish<T>(out, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        g[i] += self.grad[i];
      }
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        g[i] -= self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  auto out = make_result<T>(a.shape(), {&a, &b}, "mul");
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = a[i] * b[i];
  }
  return finish<T>(out, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        g[i] += self.grad[i] * bv[i];
      }
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        g[i] += self.grad[i] * av[i];
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  auto out = make_result<T>(x.shape(), {&x}, "scale");
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = x[i] * factor;
  }
  return finish<T>(out, [factor](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * factor;
      }
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "add_row");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (bias.numel() != d) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " vs rows of width " + std::to_string(d));
  }
  auto out = make_result<T>(x.shape(), {&x, &bias}, "add_row");
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out->value[r * d + c] = x[r * d + c] + bias[c];
    }
  }
  return finish<T>(out, [n, d](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n * d; ++i) {
        g[i] += self.grad[i];
      }
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          g[c] += self.grad[r * d + c];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = make_result<T>(x.shape(), {&x}, "relu");
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = x[i] > T{0} ? x[i] : T{0};
  }
  return finish<T>(out, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > T{0}) {
          g[i] += self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kAlpha = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kBeta = static_cast<T>(0.044715);
  auto out = make_result<T>(x.shape(), {&x}, "gelu");
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    const T v = x[i];
    out->value[i] = T{0.5} * v * (T{1} + std::tanh(kAlpha * (v + kBeta * v * v * v)));
  }
  return finish<T>(out, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T v = xv[i];
        const T th = std::tanh(kAlpha * (v + kBeta * v * v * v));
        const T dinner = kAlpha * (T{1} + T{3} * kBeta * v * v);
        const T d = T{0.5} * (T{1} + th) + T{0.5} * v * (T{1} - th * th) * dinner;
        g[i] += self.grad[i] * d;
      }
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  auto out = make_result<T>(x.shape(), {&x}, "tanh");
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = std::tanh(x[i]);
  }
  return finish<T>(out, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T y = self.value[i];
        g[i] += self.grad[i] * (T{1} - y * y);
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(s));
  }
  check_finite(x.data(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto out = make_result<T>(s, {&x}, "softmax");
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(x[base + k * inner] - mx);
        out->value[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out->value[base + k * inner] /= total;
    }
  }
  return finish<T>(out, [outer, inner, len](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t k = 0; k < len; ++k) {
            dot += self.grad[base + k * inner] * self.value[base + k * inner];
          }
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = base + k * inner;
            g[idx] += self.value[idx] * (self.grad[idx] - dot);
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!(eps > T{0})) {
    throw ContractError("layer_norm: eps must be positive");
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine parameters must have width " + std::to_string(d));
  }
  auto out = make_result<T>(x.shape(), {&x, &gamma, &beta}, "layer_norm");
  // normalized values and inverse std per row, kept for backward
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * is;
      (*xhat)[r * d + c] = h;
      out->value[r * d + c] = h * gamma[c] + beta[c];
    }
  }
  return finish<T>(out, [rows, d, xhat, inv_std](Node<T>& self) {
    const auto& gv = self.parents[1]->value;
    T* gx = parent_grad(self, 0);
    T* gg = parent_grad(self, 1);
    T* gb = parent_grad(self, 2);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* go = self.grad.data() + r * d;
      const T* h = xhat->data() + r * d;
      if (gg || gb) {
        for (std::size_t c = 0; c < d; ++c) {
          if (gg) gg[c] += go[c] * h[c];
          if (gb) gb[c] += go[c];
        }
      }
      if (gx) {
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = go[c] * gv[c];
          mean_dh += dh;
          mean_dh_h += dh * h[c];
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        const T is = (*inv_std)[r];
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = go[c] * gv[c];
          gx[r * d + c] += is * (dh - mean_dh - h[c] * mean_dh_h);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto out = make_result<T>({1}, {&x}, "sum");
  T total = 0;
  for (T v : x.data()) total += v;
  out->value[0] = total;
  return finish<T>(out, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> sum_sq_error(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same(pred.shape(), target.shape(), "sum_sq_error");
  auto out = make_result<T>({1}, {&pred, &target}, "sum_sq_error");
  T total = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const T diff = pred[i] - target[i];
    total += diff * diff;
  }
  out->value[0] = total;
  return finish<T>(out, [](Node<T>& self) {
    const auto& pv = self.parents[0]->value;
    const auto& tv = self.parents[1]->value;
    const T g0 = self.grad[0];
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < pv.size(); ++i) g[i] += T{2} * (pv[i] - tv[i]) * g0;
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < pv.size(); ++i) g[i] -= T{2} * (pv[i] - tv[i]) * g0;
    }
  });
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return Tensor<T>::from(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), false);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  auto out = make_result<T>(std::move(shape), {&x}, "reshape");
  std::copy(x.data().begin(), x.data().end(), out->value.begin());
  return finish<T>(out, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x.shape(), 2, "slice_rows");
  if (begin > end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_string(x.shape()));
  }
  const std::size_t d = x.dim(1);
  auto out = make_result<T>({end - begin, d}, {&x}, "slice_rows");
  std::copy(x.data().begin() + begin * d, x.data().begin() + end * d, out->value.begin());
  return finish<T>(out, [begin, d](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x.shape(), 2, "slice_cols");
  if (begin > end || end > x.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1), w = end - begin;
  auto out = make_result<T>({n, w}, {&x}, "slice_cols");
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < w; ++c) out->value[r * w + c] = x[r * d + begin + c];
  }
  return finish<T>(out, [n, d, w, begin](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < w; ++c) g[r * d + begin + c] += self.grad[r * w + c];
      }
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) {
    throw DimensionError("concat_rows: no inputs");
  }
  const std::size_t d = parts.front().shape().back();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() > 2 || p.shape().back() != d) {
      throw DimensionError("concat_rows: incompatible part " + shape_string(p.shape()));
    }
    offsets.push_back(rows * d);
    rows += p.numel() / d;
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = {rows, d};
  node->value.resize(rows * d);
  node->op = "concat_rows";
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i].data().begin(), parts[i].data().end(), node->value.begin() + offsets[i]);
  }
  bool any = false;
  if (active_tape<T>() != nullptr) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (!any) {
    return Tensor<T>(std::move(node));
  }
  node->requires_grad = true;
  for (const auto& p : parts) node->parents.push_back(p.node_ptr());
  return finish<T>(node, [offsets](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (T* g = parent_grad(self, i)) {
        const std::size_t n = self.parents[i]->value.size();
        for (std::size_t k = 0; k < n; ++k) g[k] += self.grad[offsets[i] + k];
      }
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) {
    throw DimensionError("concat_cols: no inputs");
  }
  const std::size_t n = parts.front().rank() == 2 ? parts.front().dim(0) : 1;
  std::size_t width = 0;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    const std::size_t pn = p.rank() == 2 ? p.dim(0) : 1;
    if (p.rank() > 2 || pn != n) {
      throw DimensionError("concat_cols: incompatible part " + shape_string(p.shape()));
    }
    offsets.push_back(width);
    widths.push_back(p.numel() / n);
    width += p.numel() / n;
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = {n, width};
  node->value.resize(n * width);
  node->op = "concat_cols";
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < widths[i]; ++c) {
        node->value[r * width + offsets[i] + c] = parts[i][r * widths[i] + c];
      }
    }
  }
  bool any = false;
  if (active_tape<T>() != nullptr) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (!any) {
    return Tensor<T>(std::move(node));
  }
  node->requires_grad = true;
  for (const auto& p : parts) node->parents.push_back(p.node_ptr());
  return finish<T>(node, [offsets, widths, n, width](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (T* g = parent_grad(self, i)) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) g[r * widths[i] + c] += self.grad[r * width + offsets[i] + c];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> index_rows(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  require_rank(table.shape(), 2, "index_rows");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  for (auto idx : indices) {
    if (idx >= rows) {
      throw RangeError("index_rows: index " + std::to_string(idx) + " >= table rows " + std::to_string(rows));
    }
  }
  auto out = make_result<T>({indices.size(), d}, {&table}, "index_rows");
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(table.data().begin() + indices[r] * d, d, out->value.begin() + r * d);
  }
  return finish<T>(out, [indices, d](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < indices.size(); ++r) {
        for (std::size_t c = 0; c < d; ++c) g[indices[r] * d + c] += self.grad[r * d + c];
      }
    }
  });
}

template <typename T>
Tensor<T> relative_gather(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "relative_gather");
  const std::size_t n = x.dim(0), span = x.dim(1);
  auto out = make_result<T>({n, n}, {&x}, "relative_gather");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const std::size_t dist = i - j;
      if (dist < span) out->value[i * n + j] = x[i * span + dist];
    }
  }
  return finish<T>(out, [n, span](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const std::size_t dist = i - j;
          if (dist < span) g[i * span + dist] += self.grad[i * n + j];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  require_rank(x.shape(), 4, "conv2d");
  require_rank(weight.shape(), 4, "conv2d");
  const std::size_t batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t cout = weight.dim(0), ksize = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != ksize) {
    throw DimensionError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  }
  if (bias.numel() != cout) {
    throw DimensionError("conv2d: bias must have " + std::to_string(cout) + " entries");
  }
  if (stride == 0 || height + 2 * pad < ksize || width + 2 * pad < ksize) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t oh = (height + 2 * pad - ksize) / stride + 1;
  const std::size_t ow = (width + 2 * pad - ksize) / stride + 1;
  const std::size_t patch = cin * ksize * ksize;
  const std::size_t cols = batch * oh * ow;

  // col[patch x cols]; column s = (n, oy, ox)
  auto col = std::make_shared<std::vector<T>>(patch * cols, T{0});
  const T* xv = x.data().data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < ksize; ++ky) {
      for (std::size_t kx = 0; kx < ksize; ++kx) {
        T* crow = col->data() + ((c * ksize + ky) * ksize + kx) * cols;
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(height)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(width)) continue;
              crow[(n * oh + oy) * ow + ox] = xv[((n * cin + c) * height + iy) * width + ix];
            }
          }
        }
      }
    }
  }
  std::vector<T> prod(cout * cols, T{0});
  gemm_acc(weight.data().data(), col->data(), prod.data(), cout, patch, cols);

  auto out = make_result<T>({batch, cout, oh, ow}, {&x, &weight, &bias}, "conv2d");
  const std::size_t plane = oh * ow;
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t s = 0; s < plane; ++s) {
        out->value[(n * cout + o) * plane + s] = prod[o * cols + n * plane + s] + bias[o];
      }
    }
  }
  return finish<T>(out, [=](Node<T>& self) {
    // dOut rearranged to [cout x cols]
    std::vector<T> gout(cout * cols);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t s = 0; s < plane; ++s) gout[o * cols + n * plane + s] = self.grad[(n * cout + o) * plane + s];
      }
    }
    if (T* gb = parent_grad(self, 2)) {
      for (std::size_t o = 0; o < cout; ++o) {
        T total = 0;
        for (std::size_t s = 0; s < cols; ++s) total += gout[o * cols + s];
        gb[o] += total;
      }
    }
    if (T* gw = parent_grad(self, 1)) {
      auto colt = transposed(col->data(), patch, cols);
      gemm_acc(gout.data(), colt.data(), gw, cout, cols, patch);
    }
    if (T* gx = parent_grad(self, 0)) {
      const auto& wv = self.parents[1]->value;
      auto wt = transposed(wv.data(), cout, patch);
      std::vector<T> gcol(patch * cols, T{0});
      gemm_acc(wt.data(), gout.data(), gcol.data(), patch, cout, cols);
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ky = 0; ky < ksize; ++ky) {
          for (std::size_t kx = 0; kx < ksize; ++kx) {
            const T* crow = gcol.data() + ((c * ksize + ky) * ksize + kx) * cols;
            for (std::size_t n = 0; n < batch; ++n) {
              for (std::size_t oy = 0; oy < oh; ++oy) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                if (iy < 0 || iy >= static_cast<long>(height)) continue;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                  if (ix < 0 || ix >= static_cast<long>(width)) continue;
                  gx[((n * cin + c) * height + iy) * width + ix] += crow[(n * oh + oy) * ow + ox];
                }
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng) {
  if (p <= T{0}) {
    return x;
  }
  if (p >= T{1}) {
    throw ContractError("dropout: p must be < 1");
  }
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const T keep_scale = T{1} / (T{1} - p);
  for (auto& m : *mask) m = unif(rng) < static_cast<double>(p) ? T{0} : keep_scale;
  auto out = make_result<T>(x.shape(), {&x}, "dropout");
  for (std::size_t i = 0; i < x.numel(); ++i) out->value[i] = x[i] * (*mask)[i];
  return finish<T>(out, [mask](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    }
  });
}

#define PLEX_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> transpose(const Tensor<T>&);                                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                                          \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> gelu(const Tensor<T>&);                                                              \
  template Tensor<T> tanh(const Tensor<T>&);                                                              \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                 \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> sum_sq_error(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> stop_gradient(const Tensor<T>&);                                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                              \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                              \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                          \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                          \
  template Tensor<T> index_rows(const Tensor<T>&, const std::vector<std::size_t>&);                       \
  template Tensor<T> relative_gather(const Tensor<T>&);                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> dropout(const Tensor<T>&, T, Rng&);

PLEX_INSTANTIATE_OPS(float)
PLEX_INSTANTIATE_OPS(double)

#undef PLEX_INSTANTIATE_OPS

}  // namespace plex::tensor
