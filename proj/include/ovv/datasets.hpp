#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ovv/error.hpp"

namespace ovv {

/// One labeled example. For the binary task label 0 is healthy and 1 is the
/// positive (disease) class; multi-class data uses 0..k-1.
struct LabeledSample {
  std::string id;
  std::vector<double> features;
  int label = 0;
  std::string patient_id;
};

struct UnlabeledSample {
  std::string id;
  std::vector<double> features;
};

std::vector<UnlabeledSample> strip_labels(std::span<const LabeledSample> samples);

/// Per-class counts, index = class label.
struct ClassCounts {
  std::vector<std::size_t> n;

  std::size_t total() const;
  std::size_t operator[](std::size_t c) const { return n.at(c); }
};

ClassCounts count_classes(std::span<const LabeledSample> samples, std::size_t num_classes = 2);

// ---------------------------------------------------------------------------
// Synthetic data

/// Two Gaussian classes. Class 0 is centred on the origin and class 1 at
/// `separation` along the all-ones diagonal; each class may additionally be
/// split into `modes` sub-clusters whose offsets come from `layout_seed`, so
/// several calls with different `seed`s draw from one fixed distribution.
struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t n0 = 100;
  std::size_t n1 = 10;
  std::size_t dim = 8;
  double separation = 2.0;
  double noise = 1.0;
  // Patients per class; samples are dealt round-robin. 0 = one patient per sample.
  std::size_t patients_per_class = 0;
  std::size_t modes = 1;
  double mode_spread = 0.0;
  std::uint64_t layout_seed = 0;
  std::string id_prefix = "s";
};

std::vector<LabeledSample> gen_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// File-based data
//
// Index CSV: a header line, then `id,path,label,patient_id,split` rows.
// Paths resolve relative to the index file. `label` may be empty (or -1)
// only on rows whose split is "unlabeled".
//
// Feature files:
//   *.pgm        binary 8-bit P5 image, pixels scaled to [0, 1]
//   anything else  u64 little-endian count followed by that many f64 values

enum class DataErrorKind {
  missing_file,
  malformed_row,
  label_out_of_range,
  duplicate_id,
  bad_feature_file,
  dimension_mismatch,
};

std::string_view to_string(DataErrorKind kind);

class DataError : public Error {
 public:
  DataError(DataErrorKind kind, const std::string& what)
      : Error(kind == DataErrorKind::missing_file ? ErrorCategory::io : ErrorCategory::data,
              std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  DataErrorKind kind() const noexcept { return kind_; }

 private:
  DataErrorKind kind_;
};

struct IndexedSample {
  LabeledSample sample;
  std::string split;
  bool labeled = true;
};

std::vector<IndexedSample> load_index(const std::filesystem::path& index_path,
                                      std::size_t num_classes = 2);

std::vector<double> load_feature_file(const std::filesystem::path& path);
void write_raw_features(const std::filesystem::path& path, std::span<const double> values);

// ---------------------------------------------------------------------------
// Splitting and sampling

/// Patient-disjoint partitions of sample ids, in the order the fractions
/// were given (conventionally train, validation, test).
struct SplitSpec {
  std::vector<std::vector<std::string>> partitions;
};

SplitSpec split_by_patient(std::span<const LabeledSample> samples, std::span<const double> fractions,
                           std::uint64_t seed);

/// Keeps one uniformly chosen sample per patient, preserving input order.
std::vector<LabeledSample> select_one_per_patient(std::span<const LabeledSample> samples,
                                                  std::uint64_t seed);

/// C(n, 2); 0 for n < 2.
std::uint64_t count_pairs(std::uint64_t n);

/// Unordered pairs left after removing same-patient pairs.
std::uint64_t count_cross_patient_pairs(std::span<const LabeledSample> samples);

struct SamplePair {
  std::size_t i = 0;
  std::size_t j = 0;
  bool same_class = false;
};

using PairBatch = std::vector<SamplePair>;

/// Draws `batch_pairs` index pairs into `samples`, never pairing two samples
/// of one patient. With `balance`, same-class and cross-class pairs are
/// equally likely whenever both kinds exist.
PairBatch sample_pairs(std::span<const LabeledSample> samples, std::size_t batch_pairs,
                       std::uint64_t seed, bool balance);

/// m reference indices (into the labeled pool) and m target indices (into
/// the unlabeled pool) for one self-training step.
struct SslBatch {
  std::vector<std::size_t> references;
  std::vector<std::size_t> targets;
};

/// One epoch of batches: every target is used at most once (a trailing
/// remainder smaller than m is dropped); references are redrawn per batch.
std::vector<SslBatch> make_ssl_batches(std::span<const LabeledSample> labeled,
                                       std::span<const UnlabeledSample> unlabeled, std::size_t m,
                                       std::uint64_t seed);

}  // namespace ovv
