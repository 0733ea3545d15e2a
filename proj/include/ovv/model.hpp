#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovv/tensor.hpp"

namespace ovv {

/// Elementwise distance between the two branch embeddings.
enum class Phi {
  vad,  // |h_i - h_j|
  vsd,  // (h_i - h_j)^2
};

std::string_view to_string(Phi phi);
Phi parse_phi(std::string_view text);

Tensor distance_phi(const Tensor& h_i, const Tensor& h_j, Phi phi);

struct ModelDims {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 64;
  std::size_t embedding_dim = 32;
  Phi phi = Phi::vad;
};

/// Multi-task twin network.
///
/// A two-layer ReLU backbone maps an input to an embedding h. A single
/// classification head turns h into p = sigmoid(w_c.h + b_c) for each input
/// of a pair; a similarity head turns Phi(h_i, h_j) into
/// q = sigmoid(w_s.Phi + b_s), the probability that the two inputs belong to
/// different classes. Both branches run the very same parameter tensors.
class TwinModel {
 public:
  TwinModel() = default;
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
  TwinModel(const ModelDims& dims, std::uint64_t seed);

  struct SingleOutput {
    Tensor embedding;    // [n, e]
    Tensor probability;  // [n, 1]
  };

  struct PairOutput {
    Tensor p_i;  // [n, 1]
    Tensor p_j;  // [n, 1]
    Tensor q;    // [n, 1]
  };

  /// Batched: rows of `x` are independent inputs of width input_dim.
  SingleOutput forward_single(const Tensor& x) const;
  PairOutput forward_pair(const Tensor& x_i, const Tensor& x_j) const;
  /// q for precomputed embeddings (rows paired up).
  Tensor similarity(const Tensor& h_i, const Tensor& h_j) const;

  // Convenience for one unbatched input.
  double predict(std::span<const double> x) const;

  const ModelDims& dims() const { return dims_; }

  /// Order: backbone W1 b1 W2 b2, classification W b, similarity W b.
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::span<Tensor> classifier_parameters();

  /// Deep copy with independent storage.
  TwinModel clone() const;
  /// Copies every parameter value from `other` (same dims required).
  void assign_from(const TwinModel& other);
  void zero_grad();

  /// Stable digest of all parameter bits; used to prove a model is untouched.
  std::uint64_t fingerprint() const;

  // Checkpoint: "OVVM" | u32 version | u8 phi | u64 input | u64 hidden | u64 embedding | param payload
  std::string serialize() const;
  static TwinModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static TwinModel load(const std::filesystem::path& path);

 private:
  Tensor backbone(const Tensor& x) const;

  ModelDims dims_;
  std::vector<Tensor> params_;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Packs rows of features into an [n, d] tensor (no gradient).
Tensor stack_rows(std::span<const std::vector<double>* const> rows);
Tensor stack_rows(std::span<const std::vector<double>> rows);

}  // namespace ovv
