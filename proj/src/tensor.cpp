#include "tpnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace tpnet {

namespace {

thread_local GradTape* g_active_tape = nullptr;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                       " and " + shape_str(b));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got shape " +
                         shape_str(t.shape()));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  auto n = std::make_shared<TensorNode>();
  int sz = shape_size(shape);
  n->shape = std::move(shape);
  n->values.assign(static_cast<size_t>(sz), v);
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  int sz = shape_size(shape);
  if (static_cast<size_t>(sz) != values.size())
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::param(Shape shape) {
  Tensor t = zeros(std::move(shape));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

int Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

int Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

double Tensor::value() const {
  if (size() != 1)
    throw ContractError("value(): tensor of shape " + shape_str(shape()) +
                        " is not scalar");
  return node_->values[0];
}

double Tensor::at(int r, int c) const {
  require_rank2(*this, "at");
  return node_->values[static_cast<size_t>(r) * node_->shape[1] + c];
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::grad_at(int i) const {
  node_->ensure_grad();
  return node_->grad[static_cast<size_t>(i)];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::apply_update(const std::vector<double>& delta) {
  if (delta.size() != node_->values.size())
    throw DimensionError("apply_update: size mismatch");
  for (size_t i = 0; i < delta.size(); ++i) node_->values[i] += delta[i];
}

void Tensor::set_values(const std::vector<double>& values) {
  if (values.size() != node_->values.size())
    throw DimensionError("set_values: size mismatch");
  node_->values = values;
}

// ---- tape -----------------------------------------------------------------

GradTape::GradTape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::function<void()> backward) {
  entries_.push_back(std::move(backward));
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a defined scalar tensor");
  auto node = loss.node();
  node->ensure_grad();
  node->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

// Creates the output of a primitive. Sets requires_grad if any input needs
// gradients and a tape is listening; callers then record the closure.
Tensor make_op_output(Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (GradTape::active()) {
    for (const Tensor& in : inputs) {
      if (in.requires_grad()) {
        out.node_->requires_grad = true;
        break;
      }
    }
  }
  return out;
}

namespace {

bool tracked(const Tensor& out) {
  return out.requires_grad() && GradTape::active() != nullptr;
}

// Shorthand for unary elementwise primitives: fn computes value, dfn the
// local derivative from (x, y).
template <typename F, typename DF>
Tensor unary_elementwise(const Tensor& a, F fn, DF dfn) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x = fn(x);
  Tensor out = make_op_output(a.shape(), std::move(v), {a});
  if (tracked(out)) {
    auto an = a.node();
    auto on = out.node();
    GradTape::active()->record([an, on, dfn] {
      an->ensure_grad();
      for (size_t i = 0; i < an->values.size(); ++i)
        an->grad[i] += on->grad[i] * dfn(an->values[i], on->values[i]);
    });
  }
  return out;
}

}  // namespace

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_mismatch("matmul", a.shape(), b.shape());

  std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      for (int j = 0; j < n; ++j)
        v[static_cast<size_t>(i) * n + j] += aip * bv[static_cast<size_t>(p) * n + j];
    }

  Tensor out = make_op_output({m, n}, std::move(v), {a, b});
  if (tracked(out)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([an, bn, on, m, k, n] {
      // dA += dC * B^T, dB += A^T * dC
      if (an->requires_grad) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
              acc += on->grad[static_cast<size_t>(i) * n + j] *
                     bn->values[static_cast<size_t>(p) * n + j];
            an->grad[static_cast<size_t>(i) * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += an->values[static_cast<size_t>(i) * k + p] *
                     on->grad[static_cast<size_t>(i) * n + j];
            bn->grad[static_cast<size_t>(p) * n + j] += acc;
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const int m = a.rows(), n = a.cols();
  std::vector<double> v(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<size_t>(j) * m + i] = a.at(i, j);
  Tensor out = make_op_output({n, m}, std::move(v), {a});
  if (tracked(out)) {
    auto an = a.node(), on = out.node();
    GradTape::active()->record([an, on, m, n] {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<size_t>(i) * n + j] +=
              on->grad[static_cast<size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> v(a.values().begin(), a.values().end());
    for (int i = 0; i < b.size(); ++i) v[static_cast<size_t>(i)] += b.at(i);
    Tensor out = make_op_output(a.shape(), std::move(v), {a, b});
    if (tracked(out)) {
      auto an = a.node(), bn = b.node(), on = out.node();
      GradTape::active()->record([an, bn, on] {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i];
        }
      });
    }
    return out;
  }
  // Row broadcast: [m,n] + [n].
  if (a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) {
    const int m = a.rows(), n = a.cols();
    std::vector<double> v(a.values().begin(), a.values().end());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) v[static_cast<size_t>(i) * n + j] += b.at(j);
    Tensor out = make_op_output(a.shape(), std::move(v), {a, b});
    if (tracked(out)) {
      auto an = a.node(), bn = b.node(), on = out.node();
      GradTape::active()->record([an, bn, on, m, n] {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              bn->grad[static_cast<size_t>(j)] += on->grad[static_cast<size_t>(i) * n + j];
        }
      });
    }
    return out;
  }
  shape_mismatch("add", a.shape(), b.shape());
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  std::vector<double> v(a.values().begin(), a.values().end());
  for (int i = 0; i < b.size(); ++i) v[static_cast<size_t>(i)] *= b.at(i);
  Tensor out = make_op_output(a.shape(), std::move(v), {a, b});
  if (tracked(out)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i)
          an->grad[i] += on->grad[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < bn->grad.size(); ++i)
          bn->grad[i] += on->grad[i] * an->values[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary_elementwise(
      a,
      [](double x) {
        // log(1+e^x) without overflow
        return x > 30.0 ? x : std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor square(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

namespace {

// Shared softmax core over contiguous strided slices. mask==nullptr means all
// entries allowed.
Tensor softmax_impl(const Tensor& a, const Tensor* mask, int axis) {
  if (a.rank() < 1 || a.rank() > 2)
    throw DimensionError("softmax: rank must be 1 or 2, got " + shape_str(a.shape()));
  if (mask && mask->shape() != a.shape())
    shape_mismatch("masked_softmax", a.shape(), mask->shape());
  const bool rank1 = a.rank() == 1;
  if (rank1 && axis != 0)
    throw DimensionError("softmax: axis out of range for rank-1 tensor");
  if (!rank1 && axis != 0 && axis != 1)
    throw DimensionError("softmax: axis out of range");

  const int rows = rank1 ? 1 : a.rows();
  const int cols = rank1 ? a.size() : a.cols();
  // slice iteration: axis==1 (or rank1) -> per-row slices; axis==0 -> per-column
  const int n_slices = (rank1 || axis == 1) ? rows : cols;
  const int slice_len = (rank1 || axis == 1) ? cols : rows;
  const bool row_slices = rank1 || axis == 1;
  const auto index = [row_slices, cols](int s, int i) -> size_t {
    if (row_slices) return static_cast<size_t>(s) * cols + i;
    return static_cast<size_t>(i) * cols + s;
  };

  std::vector<double> v(a.values().begin(), a.values().end());
  for (int s = 0; s < n_slices; ++s) {
    double mx = -std::numeric_limits<double>::infinity();
    int allowed = 0;
    for (int i = 0; i < slice_len; ++i) {
      if (mask && mask->at(static_cast<int>(index(s, i))) == 0.0) continue;
      ++allowed;
      mx = std::max(mx, a.at(static_cast<int>(index(s, i))));
    }
    if (mask && allowed == 0)
      throw ContractError("masked_softmax: a slice has no allowed entries");
    double total = 0.0;
    for (int i = 0; i < slice_len; ++i) {
      const size_t ix = index(s, i);
      if (mask && mask->at(static_cast<int>(ix)) == 0.0) {
        v[ix] = 0.0;
        continue;
      }
      v[ix] = std::exp(a.at(static_cast<int>(ix)) - mx);
      total += v[ix];
    }
    for (int i = 0; i < slice_len; ++i) v[index(s, i)] /= total;
  }

  std::vector<Tensor> inputs = {a};
  Tensor out = make_op_output(a.shape(), std::move(v), inputs);
  if (tracked(out)) {
    auto an = a.node(), on = out.node();
    GradTape::active()->record([an, on, n_slices, slice_len, index] {
      an->ensure_grad();
      for (int s = 0; s < n_slices; ++s) {
        double dot = 0.0;
        for (int i = 0; i < slice_len; ++i) {
          const size_t ix = index(s, i);
          dot += on->grad[ix] * on->values[ix];
        }
        for (int i = 0; i < slice_len; ++i) {
          const size_t ix = index(s, i);
          an->grad[ix] += on->values[ix] * (on->grad[ix] - dot);
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) { return softmax_impl(a, nullptr, axis); }

Tensor masked_softmax(const Tensor& a, const Tensor& mask, int axis) {
  return softmax_impl(a, &mask, axis);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1 || x.rank() > 2)
    throw DimensionError("layer_norm: rank must be 1 or 2");
  const int n = x.rank() == 2 ? x.cols() : x.size();
  const int m = x.rank() == 2 ? x.rows() : 1;
  if (gamma.size() != n || beta.size() != n)
    throw DimensionError("layer_norm: affine size " + std::to_string(gamma.size()) +
                         " does not match feature width " + std::to_string(n));

  std::vector<double> v(static_cast<size_t>(m) * n);
  std::vector<double> xhat(static_cast<size_t>(m) * n);
  std::vector<double> inv_sigma(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x.at(i * n + j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x.at(i * n + j) - mu;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      const size_t ix = static_cast<size_t>(i) * n + j;
      xhat[ix] = (x.at(static_cast<int>(ix)) - mu) * is;
      v[ix] = gamma.at(j) * xhat[ix] + beta.at(j);
    }
  }

  Tensor out = make_op_output(x.shape(), std::move(v), {x, gamma, beta});
  if (tracked(out)) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    GradTape::active()->record(
        [xn, gn, bn, on, m, n, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
          for (int i = 0; i < m; ++i) {
            // dxhat = dy * gamma; dx via the standard fused expression
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int j = 0; j < n; ++j) {
              const size_t ix = static_cast<size_t>(i) * n + j;
              const double dxh = on->grad[ix] * gn->values[static_cast<size_t>(j)];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[ix];
            }
            mean_dxhat /= n;
            mean_dxhat_xhat /= n;
            if (xn->requires_grad) {
              xn->ensure_grad();
              for (int j = 0; j < n; ++j) {
                const size_t ix = static_cast<size_t>(i) * n + j;
                const double dxh = on->grad[ix] * gn->values[static_cast<size_t>(j)];
                xn->grad[ix] += inv_sigma[static_cast<size_t>(i)] *
                                (dxh - mean_dxhat - xhat[ix] * mean_dxhat_xhat);
              }
            }
            if (gn->requires_grad) {
              gn->ensure_grad();
              for (int j = 0; j < n; ++j) {
                const size_t ix = static_cast<size_t>(i) * n + j;
                gn->grad[static_cast<size_t>(j)] += on->grad[ix] * xhat[ix];
              }
            }
            if (bn->requires_grad) {
              bn->ensure_grad();
              for (int j = 0; j < n; ++j)
                bn->grad[static_cast<size_t>(j)] +=
                    on->grad[static_cast<size_t>(i) * n + j];
            }
          }
        });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double total = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  Tensor out = make_op_output({1}, {total}, {a});
  if (tracked(out)) {
    auto an = a.node(), on = out.node();
    GradTape::active()->record([an, on] {
      an->ensure_grad();
      for (double& g : an->grad) g += on->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / a.size()); }

Tensor mean_rows(const Tensor& a) {
  require_rank2(a, "mean_rows");
  const int m = a.rows(), n = a.cols();
  std::vector<double> v(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[static_cast<size_t>(j)] += a.at(i, j);
  for (double& x : v) x /= m;
  Tensor out = make_op_output({n}, std::move(v), {a});
  if (tracked(out)) {
    auto an = a.node(), on = out.node();
    GradTape::active()->record([an, on, m, n] {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<size_t>(i) * n + j] += on->grad[static_cast<size_t>(j)] / m;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  std::vector<double> v(a.values().begin(), a.values().end());
  Tensor out = make_op_output(std::move(shape), std::move(v), {a});
  if (tracked(out)) {
    auto an = a.node(), on = out.node();
    GradTape::active()->record([an, on] {
      an->ensure_grad();
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) shape_mismatch("concat_cols", a.shape(), b.shape());
  const int m = a.rows(), p = a.cols(), q = b.cols();
  std::vector<double> v(static_cast<size_t>(m) * (p + q));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) v[static_cast<size_t>(i) * (p + q) + j] = a.at(i, j);
    for (int j = 0; j < q; ++j) v[static_cast<size_t>(i) * (p + q) + p + j] = b.at(i, j);
  }
  Tensor out = make_op_output({m, p + q}, std::move(v), {a, b});
  if (tracked(out)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([an, bn, on, m, p, q] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < p; ++j)
            an->grad[static_cast<size_t>(i) * p + j] +=
                on->grad[static_cast<size_t>(i) * (p + q) + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < q; ++j)
            bn->grad[static_cast<size_t>(i) * q + j] +=
                on->grad[static_cast<size_t>(i) * (p + q) + p + j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input");
  const int n = parts[0].cols();
  int m = 0;
  for (const Tensor& t : parts) {
    require_rank2(t, "concat_rows");
    if (t.cols() != n) shape_mismatch("concat_rows", parts[0].shape(), t.shape());
    m += t.rows();
  }
  std::vector<double> v;
  v.reserve(static_cast<size_t>(m) * n);
  for (const Tensor& t : parts)
    v.insert(v.end(), t.values().begin(), t.values().end());
  Tensor out = make_op_output({m, n}, std::move(v), parts);
  if (tracked(out)) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& t : parts) nodes.push_back(t.node());
    auto on = out.node();
    GradTape::active()->record([nodes, on, n] {
      size_t off = 0;
      for (const auto& pn : nodes) {
        const size_t cnt = pn->values.size();
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (size_t i = 0; i < cnt; ++i) pn->grad[i] += on->grad[off + i];
        }
        off += cnt;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require_rank2(a, "slice_cols");
  if (c0 < 0 || c1 > a.cols() || c0 >= c1)
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for shape " +
                         shape_str(a.shape()));
  const int m = a.rows(), n = a.cols(), w = c1 - c0;
  std::vector<double> v(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) v[static_cast<size_t>(i) * w + j] = a.at(i, c0 + j);
  Tensor out = make_op_output({m, w}, std::move(v), {a});
  if (tracked(out)) {
    auto an = a.node(), on = out.node();
    GradTape::active()->record([an, on, m, n, w, c0] {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          an->grad[static_cast<size_t>(i) * n + c0 + j] +=
              on->grad[static_cast<size_t>(i) * w + j];
    });
  }
  return out;
}

Tensor row(const Tensor& a, int r) {
  require_rank2(a, "row");
  if (r < 0 || r >= a.rows())
    throw DimensionError("row: index " + std::to_string(r) + " out of range for " +
                         shape_str(a.shape()));
  const int n = a.cols();
  std::vector<double> v(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) v[static_cast<size_t>(j)] = a.at(r, j);
  Tensor out = make_op_output({1, n}, std::move(v), {a});
  if (tracked(out)) {
    auto an = a.node(), on = out.node();
    GradTape::active()->record([an, on, r, n] {
      an->ensure_grad();
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<size_t>(r) * n + j] += on->grad[static_cast<size_t>(j)];
    });
  }
  return out;
}

}  // namespace tpnet
