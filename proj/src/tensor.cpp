#include "ovv/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace ovv {

using detail::Node;

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

// Result node of an operation over `inputs`.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = make_node(std::move(shape), std::move(value));
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void accumulate(Node& target, std::size_t index, double g) {
  if (!target.requires_grad) return;
  if (target.grad.empty()) target.grad.assign(target.value.size(), 0.0);
  target.grad[index] += g;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) {
    throw Error(ErrorCategory::invalid_argument, std::string(op) + ": undefined tensor");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw Error(ErrorCategory::shape_mismatch, std::string(op) + ": shapes " +
                                                   shape_string(a.shape()) + " and " +
                                                   shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  require_defined(a, op);
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(a.shape(), std::move(out), {&a}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(p, i, self.grad[i] * deriv(p.value[i], self.value[i]));
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> values(shape_size(shape), 0.0);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorCategory::invalid_argument, "tensor dimensions must be positive");
  }
  if (shape_size(shape) != values.size()) {
    throw Error(ErrorCategory::shape_mismatch,
                "tensor shape " + shape_string(shape) + " does not hold " +
                    std::to_string(values.size()) + " values");
  }
  auto node = make_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw Error(ErrorCategory::invalid_argument, "axis out of range for " + shape_string(shape()));
  }
  return shape()[axis];
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw Error(ErrorCategory::shape_mismatch, "item() on non-scalar " + shape_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * shape().back() + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return from(shape(), node_->value, node_->requires_grad);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

// ---------------------------------------------------------------------------
// Operations

Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_defined(input, "affine");
  require_defined(weight, "affine");
  require_defined(bias, "affine");
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 ||
      input.dim(1) != weight.dim(0) || weight.dim(1) != bias.dim(0)) {
    throw Error(ErrorCategory::shape_mismatch,
                "affine: input " + shape_string(input.shape()) + ", weight " +
                    shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t n = input.dim(0), d_in = input.dim(1), d_out = weight.dim(1);
  auto x = input.data();
  auto w = weight.data();
  auto b = bias.data();
  std::vector<double> out(n * d_out);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &out[i * d_out];
    std::copy(b.begin(), b.end(), row);
    for (std::size_t k = 0; k < d_in; ++k) {
      const double xik = x[i * d_in + k];
      if (xik == 0.0) continue;
      const double* wk = &w[k * d_out];
      for (std::size_t j = 0; j < d_out; ++j) row[j] += xik * wk[j];
    }
  }
  return make_result(Shape{n, d_out}, std::move(out), {&input, &weight, &bias},
                     [n, d_in, d_out](Node& self) {
                       Node& xn = *self.parents[0];
                       Node& wn = *self.parents[1];
                       Node& bn = *self.parents[2];
                       const auto& g = self.grad;
                       if (xn.requires_grad) {
                         if (xn.grad.empty()) xn.grad.assign(xn.value.size(), 0.0);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t k = 0; k < d_in; ++k) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < d_out; ++j)
                               acc += g[i * d_out + j] * wn.value[k * d_out + j];
                             xn.grad[i * d_in + k] += acc;
                           }
                       }
                       if (wn.requires_grad) {
                         if (wn.grad.empty()) wn.grad.assign(wn.value.size(), 0.0);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t k = 0; k < d_in; ++k) {
                             const double xik = xn.value[i * d_in + k];
                             if (xik == 0.0) continue;
                             for (std::size_t j = 0; j < d_out; ++j)
                               wn.grad[k * d_out + j] += xik * g[i * d_out + j];
                           }
                       }
                       if (bn.requires_grad) {
                         if (bn.grad.empty()) bn.grad.assign(bn.value.size(), 0.0);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d_out; ++j) bn.grad[j] += g[i * d_out + j];
                       }
                     });
}

Tensor apply_activation(const Tensor& input, Activation kind) {
  require_defined(input, "activation");
  for (double v : input.data()) {
    if (!std::isfinite(v)) throw Error(ErrorCategory::non_finite, "activation: non-finite input");
  }
  switch (kind) {
    case Activation::relu:
      return unary(
          input, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
          [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::sigmoid:
      return unary(
          input, "sigmoid",
          [](double v) {
            // Split by sign so exp never overflows.
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
          },
          [](double, double y) { return y * (1.0 - y); });
    case Activation::softmax: {
      const std::size_t cols = input.shape().back();
      const std::size_t rows = input.size() / cols;
      auto x = input.data();
      std::vector<double> out(x.size());
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x[r * cols];
        double* yr = &out[r * cols];
        const double mx = *std::max_element(xr, xr + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (yr[c] = std::exp(xr[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
      }
      return make_result(input.shape(), std::move(out), {&input}, [rows, cols](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &self.value[r * cols];
          const double* g = &self.grad[r * cols];
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (std::size_t c = 0; c < cols; ++c) accumulate(p, r * cols + c, y[c] * (g[c] - dot));
        }
      });
    }
  }
  throw Error(ErrorCategory::invalid_argument, "unknown activation");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(*self.parents[0], i, self.grad[i]);
      accumulate(*self.parents[1], i, self.grad[i]);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(*self.parents[0], i, self.grad[i]);
      accumulate(*self.parents[1], i, -self.grad[i]);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(pa, i, self.grad[i] * pb.value[i]);
      accumulate(pb, i, self.grad[i] * pa.value[i]);
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, "abs", [](double v) { return std::fabs(v); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double v) { return v * v; }, [](double x, double) { return 2.0 * x; });
}

Tensor log_clamped(const Tensor& a, double eps) {
  return unary(
      a, "log", [eps](double v) { return std::log(std::max(v, eps)); },
      [eps](double x, double) { return x > eps ? 1.0 / x : 0.0; });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result(Shape{1}, {total}, {&a}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < p.value.size(); ++i) accumulate(p, i, self.grad[0]);
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor binary_cross_entropy_sum(const Tensor& probs, std::span<const double> targets,
                                double pos_weight, double neg_weight, double eps) {
  require_defined(probs, "binary_cross_entropy");
  if (targets.size() != probs.size()) {
    throw Error(ErrorCategory::shape_mismatch, "binary_cross_entropy: " +
                                                   std::to_string(targets.size()) +
                                                   " targets for " + std::to_string(probs.size()) +
                                                   " probabilities");
  }
  std::vector<double> t(targets.begin(), targets.end());
  double total = 0.0;
  auto p = probs.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], eps, 1.0 - eps);
    total -= pos_weight * t[i] * std::log(pc) + neg_weight * (1.0 - t[i]) * std::log(1.0 - pc);
  }
  return make_result(Shape{1}, {total}, {&probs},
                     [t = std::move(t), pos_weight, neg_weight, eps](Node& self) {
                       Node& pn = *self.parents[0];
                       const double g = self.grad[0];
                       for (std::size_t i = 0; i < pn.value.size(); ++i) {
                         const double v = pn.value[i];
                         if (v < eps || v > 1.0 - eps) continue;  // clamped: flat
                         const double d = -pos_weight * t[i] / v + neg_weight * (1.0 - t[i]) / (1.0 - v);
                         accumulate(pn, i, g * d);
                       }
                     });
}

void backward(const Tensor& root) {
  require_defined(root, "backward");
  if (root.size() != 1) {
    throw Error(ErrorCategory::shape_mismatch,
                "backward: root must be a scalar, got " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node& r = *root.node();
  if (r.grad.empty()) r.grad.assign(1, 0.0);
  r.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    if (n.backward) n.backward(n);
  }
}

// ---------------------------------------------------------------------------
// SGD

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCategory::config, "learning_rate must be positive");
  }
  if (decay_epoch == 0) throw Error(ErrorCategory::config, "decay_epoch must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw Error(ErrorCategory::config, "decay_factor must lie in (0, 1]");
  }
}

double learning_rate_at(const SgdConfig& cfg, std::size_t epoch) {
  if (epoch <= cfg.decay_epoch) return cfg.learning_rate;
  return cfg.learning_rate *
         std::pow(cfg.decay_factor, static_cast<double>(epoch - cfg.decay_epoch));
}

void sgd_step(std::span<Tensor> params, const SgdConfig& cfg, std::size_t epoch) {
  const double lr = learning_rate_at(cfg, epoch);
  for (Tensor& p : params) {
    auto g = p.grad();
    if (g.empty()) continue;
    auto v = p.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[4] = {'O', 'V', 'V', 'T'};

template <typename T>
void put(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    if (bytes_.size() - pos_ < sizeof(U)) {
      throw Error(ErrorCategory::format, "parameter payload truncated at byte " + std::to_string(pos_));
    }
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCategory::format, "parameter payload truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_params(std::span<const Tensor> params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kParamFormatVersion);
  put<std::uint64_t>(out, params.size());
  for (const Tensor& t : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

std::vector<Tensor> deserialize_params(std::string_view payload, bool requires_grad) {
  Reader in(payload);
  if (in.take(4) != std::string_view(kMagic, 4)) {
    throw Error(ErrorCategory::format, "not a parameter payload (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kParamFormatVersion) {
    throw Error(ErrorCategory::format, "unsupported parameter format version " + std::to_string(version));
  }
  const auto count = in.get<std::uint64_t>();
  std::vector<Tensor> params;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto rank = in.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw Error(ErrorCategory::format, "implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.get<std::uint64_t>();
      if (d == 0) throw Error(ErrorCategory::format, "zero tensor dimension");
    }
    const std::size_t n = shape_size(shape);
    if (n > in.remaining() / 8) throw Error(ErrorCategory::format, "parameter payload truncated");
    std::vector<double> values(n);
    for (auto& v : values) v = in.get<double>();
    params.push_back(Tensor::from(std::move(shape), std::move(values), requires_grad));
  }
  if (in.remaining() != 0) throw Error(ErrorCategory::format, "trailing bytes after parameter payload");
  return params;
}

void load_params_into(std::span<Tensor> params, std::string_view payload) {
  auto loaded = deserialize_params(payload, false);
  if (loaded.size() != params.size()) {
    throw Error(ErrorCategory::format, "checkpoint holds " + std::to_string(loaded.size()) +
                                           " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (loaded[i].shape() != params[i].shape()) {
      throw Error(ErrorCategory::shape_mismatch, "checkpoint tensor " + std::to_string(i) +
                                                     " has shape " + shape_string(loaded[i].shape()) +
                                                     ", model expects " + shape_string(params[i].shape()));
    }
    auto dst = params[i].mutable_data();
    std::copy(loaded[i].data().begin(), loaded[i].data().end(), dst.begin());
  }
}

}  // namespace ovv
