#pragma once

// Minimal reverse-mode differentiation over dense row-major arrays.
//
// A Graph records every op result in creation order; backward() walks the
// record in reverse. Parameters are leaf tensors that live outside any graph
// and accumulate gradients across backward calls until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace heed::ag {

// Tensor storage. A fixed base alignment makes Eigen's vectorized loops peel
// the same scalar head on every run, so results depend on shapes only and
// not on where the allocator placed the buffer.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until first touched
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backward;

  Buffer<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape);
  // Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::size_t flat) const { return node_->value.at(flat); }

  // Empty span when no gradient has reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
class Graph {
 public:
  // (m,k)x(k,n) or batched (b,m,k)x(b,k,n).
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  // x (...,k) + bias (k)
  Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
  Tensor<T> mul_scalar(const Tensor<T>& a, T s);
  Tensor<T> concat_last_dim(std::span<const Tensor<T>> parts);
  // table (V,d), ids in [0,V) -> (n,d)
  Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids);
  Tensor<T> softmax_last_dim(const Tensor<T>& x);
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       T eps = T(1e-5));
  Tensor<T> gelu(const Tensor<T>& x);
  Tensor<T> tanh(const Tensor<T>& x);
  // Per row: -sum_k G_k log(max(P_k, 1e-12)). G is treated as a constant.
  Tensor<T> cross_entropy_rows(const Tensor<T>& gold, const Tensor<T>& probs);
  // sqrt(sum x^2 + eps) over the last two dims.
  Tensor<T> frobenius_norm(const Tensor<T>& x, T eps = T(1e-12));
  Tensor<T> transpose_last_two(const Tensor<T>& x);
  Tensor<T> mean(const Tensor<T>& x);
  Tensor<T> sum(const Tensor<T>& x);
  Tensor<T> reshape(const Tensor<T>& x, Shape shape);
  // x / sqrt(sum x^2 + eps) along the last dim.
  Tensor<T> l2_normalize_last_dim(const Tensor<T>& x, T eps = T(1e-12));

  // loss must be a single-element tensor.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  Tensor<T> record(const char* op, Shape shape, Buffer<T> value,
                   std::vector<std::shared_ptr<Node<T>>> inputs);

  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

// ---- finite-difference oracle (64-bit) ----

struct GradProbe {
  std::string name;
  Tensor<double> param;
  // Flat indices to perturb; empty means every element.
  std::vector<std::size_t> indices;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0;
  double tol = 0;
  bool pass() const { return max_rel_err <= tol; }
};

using LossFn = std::function<Tensor<double>(Graph<double>&)>;

double relative_error(double analytic, double numeric);

// Central differences: (f(x+h) - f(x-h)) / 2h, or the fourth-order five-point
// rule. The five-point rule at a larger h keeps round-off well below tiny
// gradient entries in deep graphs, where the three-point rule at h=1e-5 sits
// right at the 1e-4 relative tolerance.
enum class Stencil { ThreePoint, FivePoint };

// Against the engine's own backward.
GradCheckReport finite_diff_check(const LossFn& f, const std::vector<GradProbe>& probes,
                                  double h = 1e-5, double tol = 1e-4,
                                  Stencil stencil = Stencil::ThreePoint);

// Against caller-supplied gradients (full-size per probe).
GradCheckReport compare_with_numeric(const LossFn& f, const std::vector<GradProbe>& probes,
                                     const std::vector<std::vector<double>>& analytic,
                                     double h = 1e-5, double tol = 1e-4,
                                     Stencil stencil = Stencil::ThreePoint);

}  // namespace heed::ag
