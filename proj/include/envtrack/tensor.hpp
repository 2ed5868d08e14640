#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "envtrack/rng.hpp"

namespace envtrack {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool leaf = true;
};

inline void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in result");
    }
  }
}

}  // namespace detail

// Dense row-major tensor of doubles. The handle copies cheaply (copies share
// the node) and node contents are treated as immutable once any op has
// consumed the tensor. Gradients never live here; they belong to the Tape
// that recorded the ops, so independent tapes can run concurrently against
// shared parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    Tensor t = make(std::move(shape), requires_grad, true);
    t.node_->value.assign(static_cast<std::size_t>(shape_numel(t.node_->shape)), v);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    Tensor t = make(std::move(shape), requires_grad, true);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(t.node_->shape)) {
      throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(t.node_->shape));
    }
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false) {
    Tensor t = make(std::move(shape), requires_grad, true);
    const std::int64_t n = shape_numel(t.node_->shape);
    t.node_->value.resize(static_cast<std::size_t>(n));
    for (auto& x : t.node_->value) x = rng.uniform(lo, hi);
    return t;
  }

  // Output factory for op implementations: non-leaf, value sized to shape.
  static Tensor result(Shape shape, bool requires_grad) {
    Tensor t = make(std::move(shape), requires_grad, false);
    t.node_->value.assign(static_cast<std::size_t>(shape_numel(t.node_->shape)), 0.0);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  const std::vector<double>& data() const { return node_->value; }
  // For filling freshly created tensors; never mutate a tensor an op has seen.
  std::vector<double>& mutable_data() { return node_->value; }

  double operator()(int i) const { return node_->value[static_cast<std::size_t>(i)]; }
  double operator()(int i, int j) const {
    return node_->value[static_cast<std::size_t>(i) * node_->shape[1] + j];
  }
  double operator()(int i, int j, int k) const {
    const auto& s = node_->shape;
    return node_->value[(static_cast<std::size_t>(i) * s[1] + j) * s[2] + k];
  }

  double item() const {
    if (size() != 1) {
      throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(size()) +
                                  " elements, expected 1");
    }
    return node_->value[0];
  }

  Tensor clone(bool requires_grad) const {
    Tensor t = make(node_->shape, requires_grad, true);
    t.node_->value = node_->value;
    return t;
  }

  const detail::TensorNode* node() const { return node_.get(); }

 private:
  static Tensor make(Shape shape, bool requires_grad, bool leaf) {
    for (int d : shape) {
      if (d <= 0) {
        throw std::invalid_argument("Tensor: extents must be positive, got " + shape_str(shape));
      }
    }
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->requires_grad = requires_grad;
    t.node_->leaf = leaf;
    return t;
  }

  std::shared_ptr<detail::TensorNode> node_;
};

// Gradients produced by one backward pass, keyed by tensor identity.
// Every requires-grad leaf that entered the tape gets an entry, zeros if the
// loss did not depend on it.
class GradientMap {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.node()) != 0; }

  const std::vector<double>& at(const Tensor& t) const {
    auto it = grads_.find(t.node());
    if (it == grads_.end()) {
      throw std::invalid_argument("GradientMap: tensor not tracked by this tape");
    }
    return it->second;
  }

  std::vector<double> get_or_zeros(const Tensor& t) const {
    auto it = grads_.find(t.node());
    if (it != grads_.end()) return it->second;
    return std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
  }

  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const detail::TensorNode*, std::vector<double>> grads_;
};

// Records the backward rule of every op applied through it, in execution
// order (inputs of a record always precede it on the tape). backward() plays
// the records once each, in reverse, accumulating into tape-owned buffers;
// summing over all paths falls out of the accumulation. One tape is
// single-threaded; distinct tapes share nothing mutable.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const std::vector<Tensor>& inputs, std::function<void(Tape&)> backward) {
    for (const Tensor& in : inputs) {
      if (in.defined() && in.requires_grad() && in.is_leaf() &&
          seen_leaves_.insert(in.node()).second) {
        tracked_leaves_.push_back(in);
      }
    }
    records_.push_back(std::move(backward));
  }

  std::size_t num_records() const { return records_.size(); }

  GradientMap backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw std::invalid_argument(
          "Tape::backward: loss must be a scalar, got shape " +
          (loss.defined() ? shape_str(loss.shape()) : std::string("(undefined)")));
    }
    grads_.clear();
    grads_[loss.node()] = {1.0};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      (*it)(*this);
    }
    GradientMap out;
    for (const Tensor& t : tracked_leaves_) {
      auto it = grads_.find(t.node());
      if (it != grads_.end()) {
        out.grads_[t.node()] = std::move(it->second);
      } else {
        out.grads_[t.node()] =
            std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
      }
    }
    grads_.clear();
    return out;
  }

  // Accumulation buffer for a tensor, created zeroed on first use.
  std::vector<double>& grad(const Tensor& t) {
    auto it = grads_.find(t.node());
    if (it == grads_.end()) {
      it = grads_.emplace(t.node(), std::vector<double>(static_cast<std::size_t>(t.size()), 0.0))
               .first;
    }
    return it->second;
  }

  // Null when nothing has accumulated for this tensor (not on a loss path).
  const std::vector<double>* find_grad(const Tensor& t) const {
    auto it = grads_.find(t.node());
    return it == grads_.end() ? nullptr : &it->second;
  }

 private:
  std::vector<std::function<void(Tape&)>> records_;
  std::vector<Tensor> tracked_leaves_;
  std::unordered_set<const detail::TensorNode*> seen_leaves_;
  std::unordered_map<const detail::TensorNode*, std::vector<double>> grads_;
};

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c = Tensor::result({m, n}, a.requires_grad() || b.requires_grad());
  {
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.mutable_data().data();
    for (int i = 0; i < m; ++i) {
      for (int t = 0; t < k; ++t) {
        const double av = ad[i * k + t];
        const double* brow = bd + static_cast<std::size_t>(t) * n;
        double* crow = cd + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  detail::check_finite("matmul", c.data());
  if (!c.requires_grad()) return c;
  tape.record({a, b}, [a, b, c, m, k, n](Tape& tp) {
    const std::vector<double>* gc = tp.find_grad(c);
    if (!gc) return;
    const double* g = gc->data();
    if (a.requires_grad()) {
      auto& ga = tp.grad(a);
      const double* bd = b.data().data();
      for (int i = 0; i < m; ++i) {
        for (int t = 0; t < k; ++t) {
          const double* grow = g + static_cast<std::size_t>(i) * n;
          const double* brow = bd + static_cast<std::size_t>(t) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + t] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      auto& gb = tp.grad(b);
      const double* ad = a.data().data();
      for (int t = 0; t < k; ++t) {
        for (int i = 0; i < m; ++i) {
          const double av = ad[static_cast<std::size_t>(i) * k + t];
          const double* grow = g + static_cast<std::size_t>(i) * n;
          double* gbrow = gb.data() + static_cast<std::size_t>(t) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
  return c;
}

// Valid (no padding) strided cross-correlation over the time axis.
// x is (c_in x T), kernels (c_out x c_in x K), bias (c_out); the output is
// (c_out x T_out) with T_out = floor((T - K) / stride) + 1.
inline Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias,
                     int stride) {
  if (x.ndim() != 2 || kernels.ndim() != 3) {
    throw std::invalid_argument("conv1d: expected 2-D input and 3-D kernels, got " +
                                shape_str(x.shape()) + " and " + shape_str(kernels.shape()));
  }
  const int c_in = x.dim(0), T = x.dim(1);
  const int c_out = kernels.dim(0), K = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw std::invalid_argument("conv1d: kernel channel count " + std::to_string(kernels.dim(1)) +
                                " does not match input channels " + std::to_string(c_in));
  }
  if (bias.ndim() != 1 || bias.dim(0) != c_out) {
    throw std::invalid_argument("conv1d: bias shape " + shape_str(bias.shape()) +
                                " does not match " + std::to_string(c_out) + " output channels");
  }
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (T < K) {
    throw std::invalid_argument("conv1d: input length " + std::to_string(T) +
                                " is shorter than kernel length " + std::to_string(K));
  }
  const int T_out = (T - K) / stride + 1;
  const bool rg = x.requires_grad() || kernels.requires_grad() || bias.requires_grad();
  Tensor y = Tensor::result({c_out, T_out}, rg);

  // Repack input time-major and kernels as (k, c) blocks so every output
  // sample is a single contiguous dot product of length c_in * K.
  auto time_major = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(T) * c_in);
  {
    const double* xd = x.data().data();
    double* xt = time_major->data();
    for (int c = 0; c < c_in; ++c) {
      for (int t = 0; t < T; ++t) xt[static_cast<std::size_t>(t) * c_in + c] = xd[static_cast<std::size_t>(c) * T + t];
    }
  }
  const int block = c_in * K;
  std::vector<double> wt(static_cast<std::size_t>(c_out) * block);
  {
    const double* wd = kernels.data().data();
    for (int f = 0; f < c_out; ++f) {
      for (int c = 0; c < c_in; ++c) {
        for (int k = 0; k < K; ++k) {
          wt[static_cast<std::size_t>(f) * block + static_cast<std::size_t>(k) * c_in + c] =
              wd[(static_cast<std::size_t>(f) * c_in + c) * K + k];
        }
      }
    }
  }
  {
    const double* xt = time_major->data();
    const double* bd = bias.data().data();
    double* yd = y.mutable_data().data();
    for (int f = 0; f < c_out; ++f) {
      const double* wf = wt.data() + static_cast<std::size_t>(f) * block;
      for (int s = 0; s < T_out; ++s) {
        const double* xb = xt + static_cast<std::size_t>(s) * stride * c_in;
        double acc = bd[f];
        for (int i = 0; i < block; ++i) acc += wf[i] * xb[i];
        yd[static_cast<std::size_t>(f) * T_out + s] = acc;
      }
    }
  }
  detail::check_finite("conv1d", y.data());
  if (!rg) return y;

  tape.record({x, kernels, bias}, [x, kernels, bias, y, time_major, stride, c_in, T, c_out, K,
                                   T_out, block](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    const double* g = gy->data();
    if (bias.requires_grad()) {
      auto& gb = tp.grad(bias);
      for (int f = 0; f < c_out; ++f) {
        double acc = 0.0;
        for (int s = 0; s < T_out; ++s) acc += g[static_cast<std::size_t>(f) * T_out + s];
        gb[static_cast<std::size_t>(f)] += acc;
      }
    }
    if (kernels.requires_grad()) {
      std::vector<double> gwt(static_cast<std::size_t>(c_out) * block, 0.0);
      const double* xt = time_major->data();
      for (int f = 0; f < c_out; ++f) {
        double* gwf = gwt.data() + static_cast<std::size_t>(f) * block;
        for (int s = 0; s < T_out; ++s) {
          const double gv = g[static_cast<std::size_t>(f) * T_out + s];
          if (gv == 0.0) continue;
          const double* xb = xt + static_cast<std::size_t>(s) * stride * c_in;
          for (int i = 0; i < block; ++i) gwf[i] += gv * xb[i];
        }
      }
      auto& gw = tp.grad(kernels);
      for (int f = 0; f < c_out; ++f) {
        for (int c = 0; c < c_in; ++c) {
          for (int k = 0; k < K; ++k) {
            gw[(static_cast<std::size_t>(f) * c_in + c) * K + k] +=
                gwt[static_cast<std::size_t>(f) * block + static_cast<std::size_t>(k) * c_in + c];
          }
        }
      }
    }
    if (x.requires_grad()) {
      std::vector<double> gxt(static_cast<std::size_t>(T) * c_in, 0.0);
      std::vector<double> wt2(static_cast<std::size_t>(c_out) * block);
      const double* wd = kernels.data().data();
      for (int f = 0; f < c_out; ++f) {
        for (int c = 0; c < c_in; ++c) {
          for (int k = 0; k < K; ++k) {
            wt2[static_cast<std::size_t>(f) * block + static_cast<std::size_t>(k) * c_in + c] =
                wd[(static_cast<std::size_t>(f) * c_in + c) * K + k];
          }
        }
      }
      for (int f = 0; f < c_out; ++f) {
        const double* wf = wt2.data() + static_cast<std::size_t>(f) * block;
        for (int s = 0; s < T_out; ++s) {
          const double gv = g[static_cast<std::size_t>(f) * T_out + s];
          if (gv == 0.0) continue;
          double* xb = gxt.data() + static_cast<std::size_t>(s) * stride * c_in;
          for (int i = 0; i < block; ++i) xb[i] += gv * wf[i];
        }
      }
      auto& gx = tp.grad(x);
      for (int c = 0; c < c_in; ++c) {
        for (int t = 0; t < T; ++t) {
          gx[static_cast<std::size_t>(c) * T + t] += gxt[static_cast<std::size_t>(t) * c_in + c];
        }
      }
    }
  });
  return y;
}

enum class Activation { kSigmoid, kTanh, kRelu };

inline Tensor activation(Tape& tape, const Tensor& x, Activation kind) {
  Tensor y = Tensor::result(x.shape(), x.requires_grad());
  const double* xd = x.data().data();
  double* yd = y.mutable_data().data();
  const std::size_t n = x.data().size();
  switch (kind) {
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) yd[i] = 1.0 / (1.0 + std::exp(-xd[i]));
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < n; ++i) yd[i] = std::tanh(xd[i]);
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < n; ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
      break;
  }
  detail::check_finite("activation", y.data());
  if (!x.requires_grad()) return y;
  tape.record({x}, [x, y, kind, n](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    auto& gx = tp.grad(x);
    const double* g = gy->data();
    const double* yd = y.data().data();
    const double* xd = x.data().data();
    switch (kind) {
      case Activation::kSigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * yd[i] * (1.0 - yd[i]);
        break;
      case Activation::kTanh:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - yd[i] * yd[i]);
        break;
      case Activation::kRelu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += xd[i] > 0.0 ? g[i] : 0.0;
        break;
    }
  });
  return y;
}

inline Tensor sigmoid(Tape& t, const Tensor& x) { return activation(t, x, Activation::kSigmoid); }
inline Tensor tanh_op(Tape& t, const Tensor& x) { return activation(t, x, Activation::kTanh); }
inline Tensor relu(Tape& t, const Tensor& x) { return activation(t, x, Activation::kRelu); }

// Scales every column of a (d x n) matrix to unit Euclidean length. The
// divisor is max(norm, 1e-12), so an all-zero column passes through as zeros
// instead of dividing by zero.
inline constexpr double kNormalizeEpsilon = 1e-12;

inline Tensor unit_normalize_columns(Tape& tape, const Tensor& m) {
  if (m.ndim() != 2) {
    throw std::invalid_argument("unit_normalize_columns: expected 2-D input, got " +
                                shape_str(m.shape()));
  }
  const int d = m.dim(0), n = m.dim(1);
  Tensor y = Tensor::result({d, n}, m.requires_grad());
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  {
    const double* md = m.data().data();
    double* yd = y.mutable_data().data();
    for (int j = 0; j < n; ++j) {
      double sq = 0.0;
      for (int i = 0; i < d; ++i) {
        const double v = md[static_cast<std::size_t>(i) * n + j];
        sq += v * v;
      }
      const double r = std::sqrt(sq);
      const double div = r > kNormalizeEpsilon ? r : kNormalizeEpsilon;
      (*norms)[static_cast<std::size_t>(j)] = div;
      for (int i = 0; i < d; ++i) {
        yd[static_cast<std::size_t>(i) * n + j] = md[static_cast<std::size_t>(i) * n + j] / div;
      }
    }
  }
  detail::check_finite("unit_normalize_columns", y.data());
  if (!m.requires_grad()) return y;
  tape.record({m}, [m, y, norms, d, n](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    auto& gm = tp.grad(m);
    const double* g = gy->data();
    const double* yd = y.data().data();
    for (int j = 0; j < n; ++j) {
      const double div = (*norms)[static_cast<std::size_t>(j)];
      if (div > kNormalizeEpsilon) {
        // y = x / ||x||: dx = (g - (g . y) y) / ||x||
        double dot = 0.0;
        for (int i = 0; i < d; ++i) {
          dot += g[static_cast<std::size_t>(i) * n + j] * yd[static_cast<std::size_t>(i) * n + j];
        }
        for (int i = 0; i < d; ++i) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          gm[idx] += (g[idx] - dot * yd[idx]) / div;
        }
      } else {
        // Below epsilon the divisor is the constant epsilon.
        for (int i = 0; i < d; ++i) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          gm[idx] += g[idx] / kNormalizeEpsilon;
        }
      }
    }
  });
  return y;
}

inline Tensor transpose(Tape& tape, const Tensor& m) {
  if (m.ndim() != 2) {
    throw std::invalid_argument("transpose: expected 2-D input, got " + shape_str(m.shape()));
  }
  const int r = m.dim(0), c = m.dim(1);
  Tensor y = Tensor::result({c, r}, m.requires_grad());
  {
    const double* md = m.data().data();
    double* yd = y.mutable_data().data();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) yd[static_cast<std::size_t>(j) * r + i] = md[static_cast<std::size_t>(i) * c + j];
    }
  }
  if (!m.requires_grad()) return y;
  tape.record({m}, [m, y, r, c](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    auto& gm = tp.grad(m);
    const double* g = gy->data();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) gm[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
    }
  });
  return y;
}

namespace detail {
inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}
}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  Tensor y = Tensor::result(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) y.mutable_data()[i] = a.data()[i] + b.data()[i];
  detail::check_finite("add", y.data());
  if (!y.requires_grad()) return y;
  tape.record({a, b}, [a, b, y, n](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    if (a.requires_grad()) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < n; ++i) ga[i] += (*gy)[i];
    }
    if (b.requires_grad()) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < n; ++i) gb[i] += (*gy)[i];
    }
  });
  return y;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  Tensor y = Tensor::result(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) y.mutable_data()[i] = a.data()[i] * b.data()[i];
  detail::check_finite("mul", y.data());
  if (!y.requires_grad()) return y;
  tape.record({a, b}, [a, b, y, n](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    if (a.requires_grad()) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < n; ++i) ga[i] += (*gy)[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < n; ++i) gb[i] += (*gy)[i] * a.data()[i];
    }
  });
  return y;
}

// y[i, j] = m[i, j] + b[i]; the bias vector is broadcast over columns.
inline Tensor add_col_bias(Tape& tape, const Tensor& m, const Tensor& b) {
  if (m.ndim() != 2 || b.ndim() != 1 || b.dim(0) != m.dim(0)) {
    throw std::invalid_argument("add_col_bias: shape mismatch " + shape_str(m.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const int d = m.dim(0), n = m.dim(1);
  Tensor y = Tensor::result({d, n}, m.requires_grad() || b.requires_grad());
  {
    const double* md = m.data().data();
    const double* bd = b.data().data();
    double* yd = y.mutable_data().data();
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < n; ++j) {
        yd[static_cast<std::size_t>(i) * n + j] = md[static_cast<std::size_t>(i) * n + j] + bd[i];
      }
    }
  }
  detail::check_finite("add_col_bias", y.data());
  if (!y.requires_grad()) return y;
  tape.record({m, b}, [m, b, y, d, n](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    const double* g = gy->data();
    if (m.requires_grad()) {
      auto& gm = tp.grad(m);
      const std::size_t total = static_cast<std::size_t>(d) * n;
      for (std::size_t i = 0; i < total; ++i) gm[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = tp.grad(b);
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g[static_cast<std::size_t>(i) * n + j];
        gb[static_cast<std::size_t>(i)] += acc;
      }
    }
  });
  return y;
}

// Per-column dot product of two (d x n) matrices, yielding a length-n vector.
inline Tensor colwise_dot(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("colwise_dot", a, b);
  if (a.ndim() != 2) {
    throw std::invalid_argument("colwise_dot: expected 2-D inputs, got " + shape_str(a.shape()));
  }
  const int d = a.dim(0), n = a.dim(1);
  Tensor y = Tensor::result({n}, a.requires_grad() || b.requires_grad());
  {
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* yd = y.mutable_data().data();
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) {
        acc += ad[static_cast<std::size_t>(i) * n + j] * bd[static_cast<std::size_t>(i) * n + j];
      }
      yd[j] = acc;
    }
  }
  detail::check_finite("colwise_dot", y.data());
  if (!y.requires_grad()) return y;
  tape.record({a, b}, [a, b, y, d, n](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    const double* g = gy->data();
    if (a.requires_grad()) {
      auto& ga = tp.grad(a);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < n; ++j) {
          ga[static_cast<std::size_t>(i) * n + j] += g[j] * b.data()[static_cast<std::size_t>(i) * n + j];
        }
      }
    }
    if (b.requires_grad()) {
      auto& gb = tp.grad(b);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < n; ++j) {
          gb[static_cast<std::size_t>(i) * n + j] += g[j] * a.data()[static_cast<std::size_t>(i) * n + j];
        }
      }
    }
  });
  return y;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = Tensor::result({1}, x.requires_grad());
  y.mutable_data()[0] = acc;
  detail::check_finite("sum", y.data());
  if (!x.requires_grad()) return y;
  tape.record({x}, [x, y](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    auto& gx = tp.grad(x);
    const double g = (*gy)[0];
    for (auto& v : gx) v += g;
  });
  return y;
}

inline Tensor mean(Tape& tape, const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = Tensor::result({1}, x.requires_grad());
  y.mutable_data()[0] = acc * inv;
  detail::check_finite("mean", y.data());
  if (!x.requires_grad()) return y;
  tape.record({x}, [x, y, inv](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    auto& gx = tp.grad(x);
    const double g = (*gy)[0] * inv;
    for (auto& v : gx) v += g;
  });
  return y;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Central-difference check of analytic gradients. f evaluates the scalar
// objective from scratch for a given parameter list; the numeric side uses
// nothing but those evaluations, so it stays independent of whatever autodiff
// produced `analytic`. Returns the worst relative error across coordinates,
// with denominator max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(const std::function<double(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& params,
                                const std::vector<std::vector<double>>& analytic, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (analytic.size() != params.size()) {
    throw std::invalid_argument("finite_diff_check: analytic gradient count mismatch");
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (analytic[p].size() != params[p].data().size()) {
      throw std::invalid_argument("finite_diff_check: analytic gradient size mismatch at param " +
                                  std::to_string(p));
    }
    for (std::size_t i = 0; i < params[p].data().size(); ++i) {
      std::vector<Tensor> work = params;
      Tensor plus = params[p].clone(params[p].requires_grad());
      plus.mutable_data()[i] += h;
      work[p] = plus;
      const double fp = f(work);
      Tensor minus = params[p].clone(params[p].requires_grad());
      minus.mutable_data()[i] -= h;
      work[p] = minus;
      const double fm = f(work);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("finite_diff_check: objective returned a non-finite value");
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace envtrack
