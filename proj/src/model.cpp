#include "ovv/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ovv/random.hpp"

namespace ovv {

std::string_view to_string(Phi phi) { return phi == Phi::vad ? "vad" : "vsd"; }

Phi parse_phi(std::string_view text) {
  if (text == "vad" || text == "VAD") return Phi::vad;
  if (text == "vsd" || text == "VSD") return Phi::vsd;
  throw Error(ErrorCategory::config, "unknown phi '" + std::string(text) + "' (expected vad or vsd)");
}

Tensor distance_phi(const Tensor& h_i, const Tensor& h_j, Phi phi) {
  const Tensor diff = sub(h_i, h_j);
  return phi == Phi::vad ? abs(diff) : square(diff);
}

namespace {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

TwinModel::TwinModel(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.embedding_dim == 0) {
    throw Error(ErrorCategory::invalid_argument, "model dimensions must be positive");
  }
  Rng rng(derive_seed(seed, 0x30de1u));
  const std::size_t d = dims.input_dim, h = dims.hidden_dim, e = dims.embedding_dim;
  params_.push_back(init_uniform({d, h}, d, rng));
  params_.push_back(init_uniform({h}, d, rng));
  params_.push_back(init_uniform({h, e}, h, rng));
  params_.push_back(init_uniform({e}, h, rng));
  params_.push_back(init_uniform({e, 1}, e, rng));
  params_.push_back(init_uniform({1}, e, rng));
  params_.push_back(init_uniform({e, 1}, e, rng));
  params_.push_back(init_uniform({1}, e, rng));
}

Tensor TwinModel::backbone(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != dims_.input_dim) {
    throw Error(ErrorCategory::shape_mismatch, "model expects inputs of width " +
                                                   std::to_string(dims_.input_dim) + ", got " +
                                                   shape_string(x.shape()));
  }
  const Tensor hidden = relu(affine(x, params_[0], params_[1]));
  return relu(affine(hidden, params_[2], params_[3]));
}

TwinModel::SingleOutput TwinModel::forward_single(const Tensor& x) const {
  Tensor h = backbone(x);
  Tensor p = sigmoid(affine(h, params_[4], params_[5]));
  return {std::move(h), std::move(p)};
}

Tensor TwinModel::similarity(const Tensor& h_i, const Tensor& h_j) const {
  return sigmoid(affine(distance_phi(h_i, h_j, dims_.phi), params_[6], params_[7]));
}

TwinModel::PairOutput TwinModel::forward_pair(const Tensor& x_i, const Tensor& x_j) const {
  auto a = forward_single(x_i);
  auto b = forward_single(x_j);
  Tensor q = similarity(a.embedding, b.embedding);
  return {std::move(a.probability), std::move(b.probability), std::move(q)};
}

double TwinModel::predict(std::span<const double> x) const {
  const Tensor in = Tensor::from({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  return forward_single(in).probability.item();
}

std::span<Tensor> TwinModel::classifier_parameters() { return std::span<Tensor>(params_).first(6); }

TwinModel TwinModel::clone() const {
  TwinModel copy;
  copy.dims_ = dims_;
  for (const auto& p : params_) copy.params_.push_back(p.clone());
  return copy;
}

void TwinModel::assign_from(const TwinModel& other) {
  if (other.params_.size() != params_.size()) {
    throw Error(ErrorCategory::shape_mismatch, "assign_from: parameter count differs");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (other.params_[k].shape() != params_[k].shape()) {
      throw Error(ErrorCategory::shape_mismatch, "assign_from: parameter shapes differ");
    }
    auto src = other.params_[k].data();
    std::copy(src.begin(), src.end(), params_[k].mutable_data().begin());
  }
}

void TwinModel::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::uint64_t TwinModel::fingerprint() const {
  // FNV-1a over the raw parameter bits.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    for (double v : p.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

namespace {

void put_u64(std::string& out, std::uint64_t v, int bytes = 8) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in, std::size_t at, int bytes = 8) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[at + i])} << (8 * i);
  return v;
}

constexpr std::size_t kHeaderSize = 4 + 4 + 1 + 3 * 8;

}  // namespace

std::string TwinModel::serialize() const {
  std::string out = "OVVM";
  put_u64(out, kModelFormatVersion, 4);
  out.push_back(static_cast<char>(dims_.phi == Phi::vad ? 0 : 1));
  put_u64(out, dims_.input_dim);
  put_u64(out, dims_.hidden_dim);
  put_u64(out, dims_.embedding_dim);
  out += serialize_params(params_);
  return out;
}

TwinModel TwinModel::deserialize(std::string_view bytes) {
  if (bytes.size() < kHeaderSize || bytes.substr(0, 4) != "OVVM") {
    throw Error(ErrorCategory::format, "not a model checkpoint");
  }
  const auto version = get_u64(bytes, 4, 4);
  if (version != kModelFormatVersion) {
    throw Error(ErrorCategory::format, "unsupported model checkpoint version " + std::to_string(version));
  }
  const auto phi_tag = static_cast<unsigned char>(bytes[8]);
  if (phi_tag > 1) throw Error(ErrorCategory::format, "bad phi tag in checkpoint");
  ModelDims dims;
  dims.phi = phi_tag == 0 ? Phi::vad : Phi::vsd;
  dims.input_dim = get_u64(bytes, 9);
  dims.hidden_dim = get_u64(bytes, 17);
  dims.embedding_dim = get_u64(bytes, 25);
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.embedding_dim == 0 ||
      dims.input_dim > (1u << 24) || dims.hidden_dim > (1u << 16) || dims.embedding_dim > (1u << 16)) {
    throw Error(ErrorCategory::format, "implausible model dimensions in checkpoint");
  }
  TwinModel model(dims, 0);
  load_params_into(model.params_, bytes.substr(kHeaderSize));
  return model;
}

void TwinModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::io, "cannot write checkpoint " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TwinModel TwinModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::io, "cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

Tensor stack_rows(std::span<const std::vector<double>* const> rows) {
  if (rows.empty()) throw Error(ErrorCategory::invalid_argument, "stack_rows: no rows");
  const std::size_t d = rows.front()->size();
  std::vector<double> values;
  values.reserve(rows.size() * d);
  for (const auto* r : rows) {
    if (r->size() != d) throw Error(ErrorCategory::shape_mismatch, "stack_rows: ragged rows");
    values.insert(values.end(), r->begin(), r->end());
  }
  return Tensor::from({rows.size(), d}, std::move(values));
}

Tensor stack_rows(std::span<const std::vector<double>> rows) {
  std::vector<const std::vector<double>*> ptrs;
  ptrs.reserve(rows.size());
  for (const auto& r : rows) ptrs.push_back(&r);
  return stack_rows(std::span<const std::vector<double>* const>(ptrs));
}

}  // namespace ovv
