#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovv/error.hpp"

namespace ovv {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

// One vertex of the dynamic graph. Operations create a node holding their
// result, strong references to their inputs and a closure that pushes the
// node's gradient into those inputs.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional gradient tracking.
///
/// Copies are shallow: two Tensor values may refer to the same storage.
/// Use clone() for an independent leaf copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  // Writable view. Only meaningful for leaves; mutating an interior node
  // does not re-run anything downstream.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  // Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  // Independent leaf with the same values and requires_grad flag.
  Tensor clone() const;
  // Independent leaf with the same values and no gradient tracking.
  Tensor detach() const;

  // Internal: used by operations to wire the graph.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Operations. Every result tracks gradients iff at least one input does.

/// out[i,j] = sum_k input[i,k] * weight[k,j] + bias[j]
Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias);

enum class Activation { relu, sigmoid, softmax };

Tensor apply_activation(const Tensor& input, Activation kind);
inline Tensor relu(const Tensor& x) { return apply_activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return apply_activation(x, Activation::sigmoid); }
inline Tensor softmax(const Tensor& x) { return apply_activation(x, Activation::softmax); }

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// log(clamp(a, eps, inf)); the gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& a, double eps);

/// Weighted binary cross-entropy summed over all elements of `probs`:
///   -sum( pos_weight * t * log(p) + neg_weight * (1 - t) * log(1 - p) )
/// with p clamped to [eps, 1 - eps]. `targets` must match probs.size().
Tensor binary_cross_entropy_sum(const Tensor& probs, std::span<const double> targets,
                                double pos_weight, double neg_weight, double eps);

/// Reverse sweep from a scalar root. Gradients accumulate into every tensor
/// of the graph that requires them (parameters included).
void backward(const Tensor& root);

// ---------------------------------------------------------------------------
// Optimizer

struct SgdConfig {
  double learning_rate = 0.001;
  std::size_t decay_epoch = 100;
  double decay_factor = 0.98;

  void validate() const;
};

/// learning_rate * decay_factor^max(0, epoch - decay_epoch)
double learning_rate_at(const SgdConfig& cfg, std::size_t epoch);

/// p <- p - lr(epoch) * grad(p), then zero every gradient.
void sgd_step(std::span<Tensor> params, const SgdConfig& cfg, std::size_t epoch);

// ---------------------------------------------------------------------------
// Parameter (de)serialization.
//
// Layout, little-endian:
//   "OVVT" | u32 version | u64 count | count x (u32 rank | rank x u64 dim | f64 values...)

inline constexpr std::uint32_t kParamFormatVersion = 1;

std::string serialize_params(std::span<const Tensor> params);
std::vector<Tensor> deserialize_params(std::string_view payload, bool requires_grad = true);
// Overwrites `params` in place; shapes must match exactly.
void load_params_into(std::span<Tensor> params, std::string_view payload);

}  // namespace ovv
