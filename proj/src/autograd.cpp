#include "heed/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

namespace heed::ag {

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using MapA = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CMapA = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(values.begin(), values.end());
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  std::vector<T> v(shape_numel(shape), T(0));
  return constant(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1)
    throw ShapeError("item: tensor of shape " + shape_str(node_->shape) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
Tensor<T> Graph<T>::record(const char* op, Shape shape, Buffer<T> value,
                           std::vector<std::shared_ptr<Node<T>>> inputs) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
  n->inputs = std::move(inputs);
  nodes_.push_back(n);
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Graph<T>::matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  std::size_t batch = 1;
  bool ok = false;
  if (sa.size() == 2 && sb.size() == 2) ok = sa[1] == sb[0];
  if (sa.size() == 3 && sb.size() == 3) {
    ok = sa[0] == sb[0] && sa[2] == sb[1];
    batch = sa[0];
  }
  if (!ok) shape_fail("matmul", "incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t r = sa.size();
  const Eigen::Index m = static_cast<Eigen::Index>(sa[r - 2]);
  const Eigen::Index k = static_cast<Eigen::Index>(sa[r - 1]);
  const Eigen::Index n = static_cast<Eigen::Index>(sb[r - 1]);
  Shape out_shape = sa;
  out_shape.back() = sb.back();
  Buffer<T> out(batch * static_cast<std::size_t>(m * n));
  for (std::size_t i = 0; i < batch; ++i) {
    CMapM<T> A(a.data().data() + i * m * k, m, k);
    CMapM<T> B(b.data().data() + i * k * n, k, n);
    MapM<T> C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  Tensor<T> res = record("matmul", std::move(out_shape), std::move(out), {a.handle(), b.handle()});
  Node<T>* self = res.node();
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  self->backward = [self, na, nb, batch, m, k, n] {
    for (std::size_t i = 0; i < batch; ++i) {
      CMapM<T> G(self->grad.data() + i * m * n, m, n);
      if (na->requires_grad) {
        CMapM<T> B(nb->value.data() + i * k * n, k, n);
        MapM<T> dA(na->grad_buffer().data() + i * m * k, m, k);
        dA.noalias() += G * B.transpose();
      }
      if (nb->requires_grad) {
        CMapM<T> A(na->value.data() + i * m * k, m, k);
        MapM<T> dB(nb->grad_buffer().data() + i * k * n, k, n);
        dB.noalias() += A.transpose() * G;
      }
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    shape_fail("add", "shape mismatch " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor<T> res = record("add", a.shape(), std::move(out), {a.handle(), b.handle()});
  Node<T>* self = res.node();
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  self->backward = [self, na, nb] {
    for (Node<T>* in : {na, nb}) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || last_dim(x.shape()) != bias.dim(0))
    shape_fail("add_bias",
               "shape mismatch " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t k = bias.dim(0);
  Buffer<T> out(x.data().begin(), x.data().end());
  const auto ek = static_cast<Eigen::Index>(k);
  const auto rows = static_cast<Eigen::Index>(k ? out.size() / k : 0);
  MapM<T>(out.data(), rows, ek).rowwise() += CMapA<T>(bias.data().data(), ek).matrix().transpose();
  Tensor<T> res = record("add_bias", x.shape(), std::move(out), {x.handle(), bias.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  Node<T>* nb = bias.node();
  self->backward = [self, nx, nb, k] {
    if (nx->requires_grad) {
      auto& g = nx->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
    }
    if (nb->requires_grad) {
      const auto ek = static_cast<Eigen::Index>(k);
      const auto rows = static_cast<Eigen::Index>(k ? self->grad.size() / k : 0);
      MapA<T>(nb->grad_buffer().data(), ek) +=
          CMapM<T>(self->grad.data(), rows, ek).colwise().sum().transpose().array();
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::mul_scalar(const Tensor<T>& a, T s) {
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  Tensor<T> res = record("mul_scalar", a.shape(), std::move(out), {a.handle()});
  Node<T>* self = res.node();
  Node<T>* na = a.node();
  self->backward = [self, na, s] {
    if (!na->requires_grad) return;
    auto& g = na->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * s;
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::concat_last_dim(std::span<const Tensor<T>> parts) {
  if (parts.empty()) shape_fail("concat_last_dim", "no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) shape_fail("concat_last_dim", "scalar input");
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    if (pl.empty()) shape_fail("concat_last_dim", "scalar input");
    pl.pop_back();
    if (pl != lead)
      shape_fail("concat_last_dim", "leading dims differ " + shape_str(parts[0].shape()) +
                                        " vs " + shape_str(p.shape()));
    widths.push_back(p.shape().back());
    total += p.shape().back();
    inputs.push_back(p.handle());
  }
  const std::size_t rows = shape_numel(lead);
  Buffer<T> out(rows * total);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const T* src = parts[p].data().data() + r * widths[p];
      std::copy(src, src + widths[p], out.data() + r * total + off);
      off += widths[p];
    }
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> res = record("concat_last_dim", std::move(out_shape), std::move(out), inputs);
  Node<T>* self = res.node();
  self->backward = [self, widths, rows, total] {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      Node<T>* in = self->inputs[p].get();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[p]; ++c)
            g[r * widths[p] + c] += self->grad[r * total + off + c];
      }
      off += widths[p];
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::embedding_lookup(const Tensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) shape_fail("embedding_lookup", "table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside vocabulary of " +
                              std::to_string(vocab));
  }
  Buffer<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const T* src = table.data().data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(src, src + d, out.data() + i * d);
  }
  Tensor<T> res = record("embedding_lookup", {ids.size(), d}, std::move(out), {table.handle()});
  Node<T>* self = res.node();
  Node<T>* nt = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  self->backward = [self, nt, idv = std::move(idv), d] {
    if (!nt->requires_grad) return;
    auto& g = nt->grad_buffer();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      T* dst = g.data() + static_cast<std::size_t>(idv[i]) * d;
      const T* src = self->grad.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::softmax_last_dim(const Tensor<T>& x) {
  if (x.rank() == 0) shape_fail("softmax_last_dim", "scalar input");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(k, 1);
  Buffer<T> out(x.size());
  const auto ek = static_cast<Eigen::Index>(k);
  for (std::size_t r = 0; r < rows; ++r) {
    CMapA<T> in(x.data().data() + r * k, ek);
    MapA<T> o(out.data() + r * k, ek);
    o = (in - in.maxCoeff()).exp();
    o /= o.sum();
  }
  Tensor<T> res = record("softmax_last_dim", x.shape(), std::move(out), {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx, rows, k] {
    if (!nx->requires_grad) return;
    auto& g = nx->grad_buffer();
    const auto ek = static_cast<Eigen::Index>(k);
    for (std::size_t r = 0; r < rows; ++r) {
      CMapA<T> y(self->value.data() + r * k, ek);
      CMapA<T> dy(self->grad.data() + r * k, ek);
      MapA<T>(g.data() + r * k, ek) += y * (dy - (dy * y).sum());
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                               T eps) {
  if (x.rank() == 0 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.dim(0) != x.shape().back() || beta.dim(0) != x.shape().back())
    shape_fail("layer_norm", "shape mismatch x " + shape_str(x.shape()) + ", gamma " +
                                 shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  Buffer<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (in[c] - mu) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = h * gamma.data()[c] + beta.data()[c];
    }
  }
  Tensor<T> res = record("layer_norm", x.shape(), std::move(out),
                         {x.handle(), gamma.handle(), beta.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  Node<T>* ng = gamma.node();
  Node<T>* nb = beta.node();
  self->backward = [self, nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                    d] {
    const Buffer<T>& dy = self->grad;
    if (ng->requires_grad) {
      auto& g = ng->grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i) g[i % d] += dy[i] * xhat[i];
    }
    if (nb->requires_grad) {
      auto& g = nb->grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i) g[i % d] += dy[i];
    }
    if (!nx->requires_grad) return;
    auto& gx = nx->grad_buffer();
    const T inv_d = T(1) / static_cast<T>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      T mean_g = 0;
      T mean_gx = 0;
      for (std::size_t c = 0; c < d; ++c) {
        const T gc = dy[r * d + c] * ng->value[c];
        mean_g += gc;
        mean_gx += gc * xhat[r * d + c];
      }
      mean_g *= inv_d;
      mean_gx *= inv_d;
      for (std::size_t c = 0; c < d; ++c) {
        const T gc = dy[r * d + c] * ng->value[c];
        gx[r * d + c] += inv_std[r] * (gc - mean_g - xhat[r * d + c] * mean_gx);
      }
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const auto n = static_cast<Eigen::Index>(x.size());
  CMapA<T> v(x.data().data(), n);
  // Phi(x), kept for the backward pass.
  auto cdf = std::make_shared<Buffer<T>>(x.size());
  MapA<T> c(cdf->data(), n);
  c = T(0.5) * (T(1) + (v * inv_sqrt2).erf());
  Buffer<T> out(x.size());
  MapA<T>(out.data(), n) = v * c;
  Tensor<T> res = record("gelu", x.shape(), std::move(out), {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx, cdf, n] {
    if (!nx->requires_grad) return;
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    CMapA<T> v(nx->value.data(), n);
    CMapA<T> c(cdf->data(), n);
    CMapA<T> dy(self->grad.data(), n);
    MapA<T>(nx->grad_buffer().data(), n) += dy * (c + v * inv_sqrt_2pi * (T(-0.5) * v.square()).exp());
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::tanh(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  Tensor<T> res = record("tanh", x.shape(), std::move(out), {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx] {
    if (!nx->requires_grad) return;
    auto& g = nx->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self->value[i];
      g[i] += self->grad[i] * (T(1) - y * y);
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::cross_entropy_rows(const Tensor<T>& gold, const Tensor<T>& probs) {
  if (gold.shape() != probs.shape() || probs.rank() == 0)
    shape_fail("cross_entropy_rows",
               "shape mismatch " + shape_str(gold.shape()) + " vs " + shape_str(probs.shape()));
  constexpr T kFloor = T(1e-12);
  const std::size_t k = probs.shape().back();
  const std::size_t rows = probs.size() / k;
  Buffer<T> out(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      const T g = gold.data()[r * k + c];
      if (g != T(0)) out[r] -= g * std::log(std::max(probs.data()[r * k + c], kFloor));
    }
  Shape out_shape = probs.shape();
  out_shape.pop_back();
  Tensor<T> res =
      record("cross_entropy_rows", std::move(out_shape), std::move(out), {probs.handle()});
  Node<T>* self = res.node();
  Node<T>* np = probs.node();
  std::vector<T> gv(gold.data().begin(), gold.data().end());
  self->backward = [self, np, gv = std::move(gv), k, rows] {
    if (!np->requires_grad) return;
    auto& g = np->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t i = r * k + c;
        const T p = np->value[i];
        if (gv[i] != T(0) && p > kFloor) g[i] -= self->grad[r] * gv[i] / p;
      }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::frobenius_norm(const Tensor<T>& x, T eps) {
  if (x.rank() < 2) shape_fail("frobenius_norm", "needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t block = x.shape()[x.rank() - 1] * x.shape()[x.rank() - 2];
  const std::size_t count = x.size() / std::max<std::size_t>(block, 1);
  Buffer<T> out(count);
  for (std::size_t b = 0; b < count; ++b) {
    T s = 0;
    for (std::size_t i = 0; i < block; ++i) {
      const T v = x.data()[b * block + i];
      s += v * v;
    }
    out[b] = std::sqrt(s + eps);
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  Tensor<T> res = record("frobenius_norm", std::move(out_shape), std::move(out), {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx, block, count] {
    if (!nx->requires_grad) return;
    auto& g = nx->grad_buffer();
    for (std::size_t b = 0; b < count; ++b) {
      const T scale = self->grad[b] / self->value[b];
      for (std::size_t i = 0; i < block; ++i) g[b * block + i] += scale * nx->value[b * block + i];
    }
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::transpose_last_two(const Tensor<T>& x) {
  if (x.rank() < 2) shape_fail("transpose_last_two", "needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.rank();
  const std::size_t m = x.shape()[r - 2];
  const std::size_t n = x.shape()[r - 1];
  const std::size_t batch = x.size() / std::max<std::size_t>(m * n, 1);
  Buffer<T> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = x.data()[b * m * n + i * n + j];
  Shape out_shape = x.shape();
  std::swap(out_shape[r - 1], out_shape[r - 2]);
  Tensor<T> res = record("transpose_last_two", std::move(out_shape), std::move(out), {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx, batch, m, n] {
    if (!nx->requires_grad) return;
    auto& g = nx->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          g[b * m * n + i * n + j] += self->grad[b * m * n + j * m + i];
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> res = record("sum", {}, {s}, {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx] {
    if (!nx->requires_grad) return;
    for (T& g : nx->grad_buffer()) g += self->grad[0];
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::mean(const Tensor<T>& x) {
  if (x.size() == 0) shape_fail("mean", "empty input");
  T s = 0;
  for (T v : x.data()) s += v;
  const T inv = T(1) / static_cast<T>(x.size());
  Tensor<T> res = record("mean", {}, {s * inv}, {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx, inv] {
    if (!nx->requires_grad) return;
    for (T& g : nx->grad_buffer()) g += self->grad[0] * inv;
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> res = record("reshape", std::move(shape),
                         Buffer<T>(x.data().begin(), x.data().end()), {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx] {
    if (!nx->requires_grad) return;
    auto& g = nx->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
  };
  return res;
}

template <typename T>
Tensor<T> Graph<T>::l2_normalize_last_dim(const Tensor<T>& x, T eps) {
  if (x.rank() == 0) shape_fail("l2_normalize_last_dim", "scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
  Buffer<T> out(x.size());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < d; ++c) s += x.data()[r * d + c] * x.data()[r * d + c];
    norms[r] = std::sqrt(s + eps);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x.data()[r * d + c] / norms[r];
  }
  Tensor<T> res = record("l2_normalize_last_dim", x.shape(), std::move(out), {x.handle()});
  Node<T>* self = res.node();
  Node<T>* nx = x.node();
  self->backward = [self, nx, norms = std::move(norms), rows, d] {
    if (!nx->requires_grad) return;
    auto& g = nx->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self->value.data() + r * d;
      const T* dy = self->grad.data() + r * d;
      T dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += y[c] * dy[c];
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += (dy[c] - y[c] * dot) / norms[r];
    }
  };
  return res;
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  Node<T>* root = loss.node();
  root->grad_buffer()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>* n = it->get();
    if (!n->requires_grad || n->grad.empty() || !n->backward) continue;
    n->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_with_numeric(const LossFn& f, const std::vector<GradProbe>& probes,
                                     const std::vector<std::vector<double>>& analytic, double h,
                                     double tol, Stencil stencil) {
  if (analytic.size() != probes.size())
    throw std::invalid_argument("compare_with_numeric: one gradient vector per probe required");
  const auto eval = [&] {
    Graph<double> g;
    return f(g).item();
  };
  GradCheckReport report;
  report.tol = tol;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    Tensor<double> param = probes[p].param;
    std::vector<std::size_t> idx = probes[p].indices;
    if (idx.empty())
      for (std::size_t i = 0; i < param.size(); ++i) idx.push_back(i);
    GradCheckEntry e;
    e.name = probes[p].name;
    for (std::size_t i : idx) {
      double& v = param.mutable_data()[i];
      const double saved = v;
      v = saved + h;
      const double up1 = eval();
      v = saved - h;
      const double down1 = eval();
      double numeric = (up1 - down1) / (2 * h);
      if (stencil == Stencil::FivePoint) {
        v = saved + 2 * h;
        const double up2 = eval();
        v = saved - 2 * h;
        const double down2 = eval();
        numeric = (8 * (up1 - down1) - (up2 - down2)) / (12 * h);
      }
      v = saved;
      const double a = analytic[p].empty() ? 0.0 : analytic[p].at(i);
      const double err = relative_error(a, numeric);
      if (err > e.max_rel_err || e.checked == 0) {
        e.max_rel_err = err;
        e.worst_index = i;
        e.analytic = a;
        e.numeric = numeric;
      }
      ++e.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.entries.push_back(std::move(e));
  }
  return report;
}

GradCheckReport finite_diff_check(const LossFn& f, const std::vector<GradProbe>& probes, double h,
                                  double tol, Stencil stencil) {
  for (auto probe : probes) probe.param.zero_grad();
  {
    Graph<double> g;
    g.backward(f(g));
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& probe : probes) {
    auto grad = probe.param.grad();
    analytic.emplace_back(grad.begin(), grad.end());
  }
  return compare_with_numeric(f, probes, analytic, h, tol, stencil);
}

}  // namespace heed::ag
