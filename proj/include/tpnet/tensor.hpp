#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tpnet/errors.hpp"

namespace tpnet {

// Dense row-major real array participating in reverse-mode differentiation.
// Values are immutable after construction; only the grad buffer mutates.
// Rank 1 and 2 cover everything the networks need; elementwise ops accept
// any rank. A scalar is a rank-1 tensor of size 1.

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_size(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  // Leaf with requires_grad set; the unit of learnable state.
  static Tensor param(Shape shape);
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int size() const { return static_cast<int>(node_->values.size()); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  // Rank-2 accessors.
  int rows() const;
  int cols() const;

  double value() const;  // scalar only
  double at(int i) const { return node_->values[static_cast<size_t>(i)]; }
  double at(int r, int c) const;
  std::span<const double> values() const { return node_->values; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  std::span<const double> grad() const;
  double grad_at(int i) const;
  void zero_grad();

  // In-place value update for optimizer steps. Deliberately not recorded on
  // any tape; use only on leaves between forward passes.
  void apply_update(const std::vector<double>& delta);
  void set_values(const std::vector<double>& values);

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;

  friend class GradTape;
  friend Tensor make_op_output(Shape shape, std::vector<double> values,
                               const std::vector<Tensor>& inputs);
};

// Ordered record of primitive ops with backward closures. Ops record onto the
// innermost active tape of the current thread; replaying entries in reverse
// applies the chain rule. Tapes on separate threads are fully independent.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();
  void record(std::function<void()> backward);
  std::size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  // accumulate across calls until zero_grad; loss must be scalar.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
  GradTape* prev_ = nullptr;
};

// ---- primitive operations -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// add supports equal shapes and [m,n] + [n] row broadcast (bias add).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, equal shapes
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);

// axis: 0 = down columns, 1 = along rows (rank 2); rank 1 uses axis 0.
Tensor softmax(const Tensor& a, int axis);
// mask is a same-shape 0/1 tensor; masked entries get weight exactly 0.
// Every slice along `axis` must keep at least one allowed entry.
Tensor masked_softmax(const Tensor& a, const Tensor& mask, int axis);

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine (gamma, beta), both of last-axis length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor sum(const Tensor& a);        // -> scalar
Tensor mean(const Tensor& a);       // -> scalar
Tensor mean_rows(const Tensor& a);  // [m,n] -> [n]

Tensor reshape(const Tensor& a, Shape shape);               // same element count

Tensor concat_cols(const Tensor& a, const Tensor& b);       // [m,p]+[m,q] -> [m,p+q]
Tensor concat_rows(const std::vector<Tensor>& parts);       // k x [1,n] or [mi,n]
Tensor slice_cols(const Tensor& a, int c0, int c1);         // [m,n] -> [m,c1-c0]
Tensor row(const Tensor& a, int r);                         // [m,n] -> [1,n]

}  // namespace tpnet
