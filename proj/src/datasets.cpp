#include "ovv/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ovv/random.hpp"

namespace ovv {

namespace fs = std::filesystem;

std::vector<UnlabeledSample> strip_labels(std::span<const LabeledSample> samples) {
  std::vector<UnlabeledSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, s.features});
  return out;
}

std::size_t ClassCounts::total() const { return std::accumulate(n.begin(), n.end(), std::size_t{0}); }

ClassCounts count_classes(std::span<const LabeledSample> samples, std::size_t num_classes) {
  ClassCounts counts{std::vector<std::size_t>(num_classes, 0)};
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw DataError(DataErrorKind::label_out_of_range, "sample " + s.id);
    }
    ++counts.n[static_cast<std::size_t>(s.label)];
  }
  return counts;
}

// ---------------------------------------------------------------------------

std::vector<LabeledSample> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n0 == 0 || spec.n1 == 0 || spec.dim == 0) {
    throw Error(ErrorCategory::invalid_argument, "gen_synthetic: n0, n1 and dim must be >= 1");
  }
  if (spec.modes == 0) throw Error(ErrorCategory::invalid_argument, "gen_synthetic: modes must be >= 1");

  // Fixed geometry: class centres and sub-cluster offsets.
  const double axis = 1.0 / std::sqrt(static_cast<double>(spec.dim));
  Rng layout(derive_seed(spec.layout_seed, 0x1a70u));
  std::vector<std::vector<double>> centres[2];
  for (int c = 0; c < 2; ++c) {
    for (std::size_t k = 0; k < spec.modes; ++k) {
      std::vector<double> centre(spec.dim, c == 1 ? spec.separation * axis : 0.0);
      if (spec.modes > 1) {
        for (double& v : centre) v += spec.mode_spread * layout.normal();
      }
      centres[c].push_back(std::move(centre));
    }
  }

  Rng rng(derive_seed(spec.seed, 0x5a3bu));
  std::vector<LabeledSample> out;
  out.reserve(spec.n0 + spec.n1);
  const std::size_t counts[2] = {spec.n0, spec.n1};
  std::size_t serial = 0;
  for (int c = 0; c < 2; ++c) {
    const std::size_t patients =
        spec.patients_per_class == 0 ? counts[c] : std::min(spec.patients_per_class, counts[c]);
    for (std::size_t k = 0; k < counts[c]; ++k) {
      LabeledSample s;
      s.id = spec.id_prefix + std::to_string(serial++);
      s.label = c;
      s.patient_id = spec.id_prefix + "p" + std::to_string(c) + "_" + std::to_string(k % patients);
      const auto& centre = centres[c][rng.index(spec.modes)];
      s.features.resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d) s.features[d] = centre[d] + spec.noise * rng.normal();
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::missing_file: return "missing file";
    case DataErrorKind::malformed_row: return "malformed row";
    case DataErrorKind::label_out_of_range: return "label out of range";
    case DataErrorKind::duplicate_id: return "duplicate id";
    case DataErrorKind::bad_feature_file: return "bad feature file";
    case DataErrorKind::dimension_mismatch: return "dimension mismatch";
  }
  return "data error";
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream in(line);
  std::string field;
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorKind::missing_file, path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Next whitespace-delimited PGM header token, skipping '#' comments.
std::string pgm_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

std::vector<double> parse_pgm(const std::string& bytes, const fs::path& path) {
  std::size_t pos = 0;
  try {
    if (pgm_token(bytes, pos) != "P5") throw DataError(DataErrorKind::bad_feature_file, path.string() + ": not a P5 PGM");
    const long width = std::stol(pgm_token(bytes, pos));
    const long height = std::stol(pgm_token(bytes, pos));
    const long maxval = std::stol(pgm_token(bytes, pos));
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
      throw DataError(DataErrorKind::bad_feature_file, path.string() + ": unsupported PGM header");
    }
    ++pos;  // single whitespace before raster
    const auto n = static_cast<std::size_t>(width * height);
    if (bytes.size() < pos + n) throw DataError(DataErrorKind::bad_feature_file, path.string() + ": truncated raster");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
    }
    return out;
  } catch (const std::logic_error&) {
    throw DataError(DataErrorKind::bad_feature_file, path.string() + ": malformed PGM header");
  }
}

std::vector<double> parse_raw(const std::string& bytes, const fs::path& path) {
  if (bytes.size() < 8) throw DataError(DataErrorKind::bad_feature_file, path.string() + ": missing length prefix");
  std::uint64_t count = 0;
  for (int i = 0; i < 8; ++i) count |= std::uint64_t{static_cast<unsigned char>(bytes[i])} << (8 * i);
  if (count == 0 || (bytes.size() - 8) / 8 != count || (bytes.size() - 8) % 8 != 0) {
    throw DataError(DataErrorKind::bad_feature_file,
                    path.string() + ": length prefix " + std::to_string(count) + " disagrees with file size");
  }
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{static_cast<unsigned char>(bytes[8 + 8 * k + i])} << (8 * i);
    out[k] = std::bit_cast<double>(bits);
    if (!std::isfinite(out[k])) throw DataError(DataErrorKind::bad_feature_file, path.string() + ": non-finite value");
  }
  return out;
}

}  // namespace

std::vector<double> load_feature_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (path.extension() == ".pgm") return parse_pgm(bytes, path);
  return parse_raw(bytes, path);
}

void write_raw_features(const fs::path& path, std::span<const double> values) {
  std::string out;
  out.reserve(8 + 8 * values.size());
  auto put = [&out](std::uint64_t bits) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  };
  put(values.size());
  for (double v : values) put(std::bit_cast<std::uint64_t>(v));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<IndexedSample> load_index(const fs::path& index_path, std::size_t num_classes) {
  std::ifstream in(index_path);
  if (!in) throw DataError(DataErrorKind::missing_file, index_path.string());
  const fs::path base = index_path.parent_path();

  std::vector<IndexedSample> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 || trim(line).empty()) continue;  // header
    const auto where = index_path.string() + ":" + std::to_string(line_no);
    auto fields = split_csv(line);
    if (fields.size() != 5 || fields[0].empty() || fields[1].empty() || fields[3].empty()) {
      throw DataError(DataErrorKind::malformed_row, where + ": expected id,path,label,patient_id,split");
    }
    IndexedSample row;
    row.sample.id = fields[0];
    row.sample.patient_id = fields[3];
    row.split = fields[4];
    if (fields[2].empty() || fields[2] == "-1") {
      if (row.split != "unlabeled") {
        throw DataError(DataErrorKind::malformed_row, where + ": missing label outside the unlabeled split");
      }
      row.labeled = false;
      row.sample.label = -1;
    } else {
      long label = 0;
      std::size_t used = 0;
      try {
        label = std::stol(fields[2], &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (used != fields[2].size()) throw DataError(DataErrorKind::malformed_row, where + ": label is not an integer");
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
        throw DataError(DataErrorKind::label_out_of_range,
                        where + ": label " + fields[2] + " not in [0, " + std::to_string(num_classes) + ")");
      }
      row.sample.label = static_cast<int>(label);
    }
    if (!ids.insert(row.sample.id).second) throw DataError(DataErrorKind::duplicate_id, where + ": " + row.sample.id);
    row.sample.features = load_feature_file(base / fields[1]);
    if (dim == 0) dim = row.sample.features.size();
    if (row.sample.features.size() != dim) {
      throw DataError(DataErrorKind::dimension_mismatch,
                      where + ": " + std::to_string(row.sample.features.size()) + " features, expected " +
                          std::to_string(dim));
    }
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------

SplitSpec split_by_patient(std::span<const LabeledSample> samples, std::span<const double> fractions,
                           std::uint64_t seed) {
  if (fractions.empty()) throw Error(ErrorCategory::invalid_argument, "split_by_patient: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw Error(ErrorCategory::invalid_argument, "split_by_patient: negative fraction");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw Error(ErrorCategory::invalid_argument, "split_by_patient: fractions must sum to 1");
  }

  std::vector<std::string> patients;
  std::unordered_map<std::string, std::vector<std::string>> members;
  for (const auto& s : samples) {
    auto [it, fresh] = members.try_emplace(s.patient_id);
    if (fresh) patients.push_back(s.patient_id);
    it->second.push_back(s.id);
  }
  const std::size_t parts = fractions.size();
  if (patients.size() < parts) {
    throw Error(ErrorCategory::invalid_argument, "split_by_patient: " + std::to_string(patients.size()) +
                                                     " patients cannot fill " + std::to_string(parts) +
                                                     " partitions");
  }

  // Largest-remainder apportionment, then make sure no partition is empty.
  const auto np = static_cast<double>(patients.size());
  std::vector<std::size_t> quota(parts);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < parts; ++k) {
    const double exact = fractions[k] * np;
    quota[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < patients.size(); ++r, ++assigned) ++quota[remainders[r % parts].second];
  for (std::size_t k = 0; k < parts; ++k) {
    if (quota[k] == 0) {
      auto donor = std::max_element(quota.begin(), quota.end());
      --*donor;
      quota[k] = 1;
    }
  }

  Rng rng(derive_seed(seed, 0x5917u));
  rng.shuffle(patients.begin(), patients.end());
  SplitSpec split;
  split.partitions.resize(parts);
  std::size_t next = 0;
  for (std::size_t k = 0; k < parts; ++k) {
    for (std::size_t q = 0; q < quota[k]; ++q, ++next) {
      const auto& ids = members[patients[next]];
      split.partitions[k].insert(split.partitions[k].end(), ids.begin(), ids.end());
    }
  }
  return split;
}

std::vector<LabeledSample> select_one_per_patient(std::span<const LabeledSample> samples,
                                                  std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < samples.size(); ++i) by_patient[samples[i].patient_id].push_back(i);
  Rng rng(derive_seed(seed, 0x0e1u));
  std::vector<std::size_t> keep;
  for (const auto& [patient, idx] : by_patient) keep.push_back(idx[rng.index(idx.size())]);
  std::sort(keep.begin(), keep.end());
  std::vector<LabeledSample> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(samples[i]);
  return out;
}

std::uint64_t count_pairs(std::uint64_t n) { return n < 2 ? 0 : n * (n - 1) / 2; }

std::uint64_t count_cross_patient_pairs(std::span<const LabeledSample> samples) {
  std::unordered_map<std::string, std::uint64_t> per_patient;
  for (const auto& s : samples) ++per_patient[s.patient_id];
  std::uint64_t same = 0;
  for (const auto& [p, n] : per_patient) same += count_pairs(n);
  return count_pairs(samples.size()) - same;
}

namespace {

bool has_cross_patient_pair(std::span<const std::size_t> a, std::span<const std::size_t> b,
                            std::span<const LabeledSample> samples) {
  // True unless every sample in a and b belongs to one patient.
  if (a.empty() || b.empty()) return false;
  const auto& first = samples[a.front()].patient_id;
  for (auto idx : {a, b})
    for (std::size_t k : idx)
      if (samples[k].patient_id != first) return true;
  return false;
}

}  // namespace

PairBatch sample_pairs(std::span<const LabeledSample> samples, std::size_t batch_pairs, std::uint64_t seed,
                       bool balance) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);

  // Which pair kinds can be drawn at all, and how to pick a class (pair)
  // for each kind with probability proportional to its pair count.
  std::vector<std::pair<int, double>> same_classes;
  std::vector<std::tuple<int, int, double>> cross_classes;
  for (const auto& [c, idx] : by_class) {
    if (idx.size() >= 2) {
      std::set<std::string> pats;
      for (auto k : idx) pats.insert(samples[k].patient_id);
      if (pats.size() >= 2) same_classes.emplace_back(c, static_cast<double>(count_pairs(idx.size())));
    }
    for (const auto& [c2, idx2] : by_class) {
      if (c2 <= c) continue;
      if (has_cross_patient_pair(idx, idx2, samples)) {
        cross_classes.emplace_back(c, c2, static_cast<double>(idx.size()) * static_cast<double>(idx2.size()));
      }
    }
  }
  if (same_classes.empty() && cross_classes.empty()) {
    throw Error(ErrorCategory::data, "sample_pairs: every candidate pair shares a patient");
  }

  Rng rng(derive_seed(seed, 0xa125u));
  const auto pick_weighted = [&rng](const auto& items, auto weight) -> const auto& {
    double total = 0.0;
    for (const auto& it : items) total += weight(it);
    double r = rng.uniform() * total;
    for (const auto& it : items) {
      r -= weight(it);
      if (r < 0.0) return it;
    }
    return items.back();
  };

  constexpr std::size_t kMaxAttempts = 1'000'000;
  PairBatch out;
  out.reserve(batch_pairs);
  std::size_t attempts = 0;
  while (out.size() < batch_pairs) {
    if (++attempts > kMaxAttempts) throw Error(ErrorCategory::data, "sample_pairs: exclusion rejected too many draws");
    std::size_t i = 0, j = 0;
    if (balance) {
      bool want_same = rng.uniform() < 0.5;
      if (same_classes.empty()) want_same = false;
      if (cross_classes.empty()) want_same = true;
      if (want_same) {
        const auto& idx = by_class[pick_weighted(same_classes, [](const auto& e) { return e.second; }).first];
        i = idx[rng.index(idx.size())];
        j = idx[rng.index(idx.size())];
      } else {
        const auto& [a, b, w] = pick_weighted(cross_classes, [](const auto& e) { return std::get<2>(e); });
        i = by_class[a][rng.index(by_class[a].size())];
        j = by_class[b][rng.index(by_class[b].size())];
        if (rng.uniform() < 0.5) std::swap(i, j);
      }
    } else {
      i = rng.index(samples.size());
      j = rng.index(samples.size());
    }
    if (i == j || samples[i].patient_id == samples[j].patient_id) continue;
    out.push_back({i, j, samples[i].label == samples[j].label});
  }
  return out;
}

std::vector<SslBatch> make_ssl_batches(std::span<const LabeledSample> labeled,
                                       std::span<const UnlabeledSample> unlabeled, std::size_t m,
                                       std::uint64_t seed) {
  if (m == 0) throw Error(ErrorCategory::invalid_argument, "make_ssl_batches: m must be >= 1");
  if (m > labeled.size() || m > unlabeled.size()) {
    throw Error(ErrorCategory::invalid_argument,
                "make_ssl_batches: m=" + std::to_string(m) + " exceeds labeled (" + std::to_string(labeled.size()) +
                    ") or unlabeled (" + std::to_string(unlabeled.size()) + ") pool");
  }
  Rng rng(derive_seed(seed, 0x55bu));
  std::vector<std::size_t> targets(unlabeled.size());
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  rng.shuffle(targets.begin(), targets.end());
  std::vector<std::size_t> refs(labeled.size());
  std::iota(refs.begin(), refs.end(), std::size_t{0});

  std::vector<SslBatch> batches;
  for (std::size_t start = 0; start + m <= targets.size(); start += m) {
    SslBatch b;
    b.targets.assign(targets.begin() + static_cast<std::ptrdiff_t>(start),
                     targets.begin() + static_cast<std::ptrdiff_t>(start + m));
    // Partial Fisher-Yates: first m slots become the draw.
    for (std::size_t k = 0; k < m; ++k) std::swap(refs[k], refs[k + rng.index(refs.size() - k)]);
    b.references.assign(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(m));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace ovv
