#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ovv/datasets.hpp"

using namespace ovv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ovv_datasets_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

LabeledSample sample(std::string id, int label, std::string patient) {
  return {std::move(id), {0.0}, label, std::move(patient)};
}

DataErrorKind index_error(const fs::path& index) {
  try {
    load_index(index);
  } catch (const DataError& e) {
    return e.kind();
  }
  FAIL("index accepted");
  return DataErrorKind::malformed_row;
}

}  // namespace

TEST_CASE("synthetic generator counts and determinism") {
  SyntheticSpec spec;
  const auto a = gen_synthetic(spec);
  CHECK(a.size() == 110);
  CHECK(std::count_if(a.begin(), a.end(), [](const auto& s) { return s.label == 0; }) == 100);
  const auto b = gen_synthetic(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].id == b[k].id);
    CHECK(a[k].features == b[k].features);
  }
  spec.seed = 2;
  CHECK(gen_synthetic(spec)[0].features != a[0].features);
}

TEST_CASE("synthetic class means follow the separation") {
  SyntheticSpec spec;
  spec.n0 = 4000;
  spec.n1 = 4000;
  spec.dim = 4;
  spec.separation = 0.0;
  auto mean_gap = [](const std::vector<LabeledSample>& data) {
    std::vector<double> m[2] = {std::vector<double>(4, 0.0), std::vector<double>(4, 0.0)};
    for (const auto& s : data)
      for (std::size_t d = 0; d < 4; ++d) m[s.label][d] += s.features[d] / 4000.0;
    double gap = 0.0;
    for (std::size_t d = 0; d < 4; ++d) gap += (m[1][d] - m[0][d]) * (m[1][d] - m[0][d]);
    return std::sqrt(gap);
  };
  CHECK(mean_gap(gen_synthetic(spec)) < 0.1);
  spec.separation = 3.0;
  CHECK(mean_gap(gen_synthetic(spec)) == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("synthetic patients") {
  SyntheticSpec spec;
  spec.patients_per_class = 4;
  const auto data = gen_synthetic(spec);
  std::set<std::string> patients;
  for (const auto& s : data) patients.insert(s.patient_id);
  CHECK(patients.size() == 8);
  spec.patients_per_class = 0;
  patients.clear();
  for (const auto& s : gen_synthetic(spec)) patients.insert(s.patient_id);
  CHECK(patients.size() == 110);
}

TEST_CASE("index loading") {
  const auto dir = scratch("index");
  fs::create_directories(dir / "f");
  write_raw_features(dir / "f/a.bin", std::vector<double>{1.0, 2.0});
  write_raw_features(dir / "f/b.bin", std::vector<double>{3.0, 4.0});
  write_file(dir / "f/c.pgm", std::string("P5\n2 1\n255\n") + char(0) + char(255));
  write_file(dir / "index.csv",
             "id,path,label,patient_id,split\n"
             "a,f/a.bin,0,p1,train\n"
             "b,f/b.bin,1,p2,test\n"
             "c,f/c.pgm,,p3,unlabeled\n");
  const auto rows = load_index(dir / "index.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].sample.features == std::vector<double>{1.0, 2.0});
  CHECK(rows[1].sample.label == 1);
  CHECK(rows[1].split == "test");
  CHECK_FALSE(rows[2].labeled);
  CHECK(rows[2].sample.features == std::vector<double>{0.0, 1.0});

  write_file(dir / "bad_label.csv", "id,path,label,patient_id,split\na,f/a.bin,7,p1,train\n");
  CHECK(index_error(dir / "bad_label.csv") == DataErrorKind::label_out_of_range);
  write_file(dir / "dup.csv", "id,path,label,patient_id,split\na,f/a.bin,0,p1,train\na,f/b.bin,1,p2,train\n");
  CHECK(index_error(dir / "dup.csv") == DataErrorKind::duplicate_id);
  write_file(dir / "missing.csv", "id,path,label,patient_id,split\na,f/zz.bin,0,p1,train\n");
  CHECK(index_error(dir / "missing.csv") == DataErrorKind::missing_file);
  write_file(dir / "short.csv", "id,path,label,patient_id,split\na,f/a.bin,0\n");
  CHECK(index_error(dir / "short.csv") == DataErrorKind::malformed_row);
  write_file(dir / "nolabel.csv", "id,path,label,patient_id,split\na,f/a.bin,,p1,train\n");
  CHECK(index_error(dir / "nolabel.csv") == DataErrorKind::malformed_row);
  write_file(dir / "f/odd.pgm", "P5\n2 2\n255\n");
  write_file(dir / "badpgm.csv", "id,path,label,patient_id,split\na,f/odd.pgm,0,p1,train\n");
  CHECK(index_error(dir / "badpgm.csv") == DataErrorKind::bad_feature_file);
  write_raw_features(dir / "f/c3.bin", std::vector<double>{1.0, 2.0, 3.0});
  write_file(dir / "mixed.csv", "id,path,label,patient_id,split\na,f/a.bin,0,p1,train\nc,f/c3.bin,1,p3,train\n");
  CHECK(index_error(dir / "mixed.csv") == DataErrorKind::dimension_mismatch);
  CHECK(index_error(dir / "absent.csv") == DataErrorKind::missing_file);

  write_file(dir / "three.csv", "id,path,label,patient_id,split\na,f/a.bin,2,p1,train\n");
  CHECK(load_index(dir / "three.csv", 3).at(0).sample.label == 2);
}

TEST_CASE("patient-disjoint split") {
  std::vector<LabeledSample> data;
  for (int p = 0; p < 10; ++p)
    for (int k = 0; k < 3; ++k) data.push_back(sample("s" + std::to_string(p * 3 + k), p % 2, "p" + std::to_string(p)));
  const double fractions[] = {0.8, 0.1, 0.1};
  const auto split = split_by_patient(data, fractions, 3);
  REQUIRE(split.partitions.size() == 3);

  std::map<std::string, std::string> patient_of;
  for (const auto& s : data) patient_of[s.id] = s.patient_id;
  std::vector<std::set<std::string>> patients(3);
  std::multiset<std::string> seen;
  for (std::size_t k = 0; k < 3; ++k)
    for (const auto& id : split.partitions[k]) {
      patients[k].insert(patient_of.at(id));
      seen.insert(id);
    }
  CHECK(patients[0].size() == 8);
  CHECK(patients[1].size() == 1);
  CHECK(patients[2].size() == 1);
  CHECK(seen.size() == data.size());
  for (const auto& s : data) CHECK(seen.count(s.id) == 1);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      for (const auto& p : patients[a]) CHECK(patients[b].count(p) == 0);

  const std::vector<LabeledSample> one = {sample("a", 0, "p"), sample("b", 1, "p")};
  CHECK_THROWS_AS(split_by_patient(one, fractions, 1), Error);
  const double bad[] = {0.5, 0.2};
  CHECK_THROWS_AS(split_by_patient(data, bad, 1), Error);
}

TEST_CASE("one sample per patient") {
  std::vector<LabeledSample> data;
  for (int k = 0; k < 12; ++k) data.push_back(sample("s" + std::to_string(k), 0, "p" + std::to_string(k % 4)));
  const auto kept = select_one_per_patient(data, 5);
  CHECK(kept.size() == 4);
  std::set<std::string> patients;
  for (const auto& s : kept) patients.insert(s.patient_id);
  CHECK(patients.size() == 4);
  CHECK(select_one_per_patient(data, 5)[0].id == kept[0].id);
}

TEST_CASE("pair counts") {
  CHECK(count_pairs(1147) == 657231);
  CHECK(count_pairs(4) == 6);
  CHECK(count_pairs(2) == 1);
  CHECK(count_pairs(1) == 0);
  CHECK(count_pairs(0) == 0);

  std::vector<LabeledSample> data = {sample("a", 0, "x"), sample("b", 0, "x"), sample("c", 1, "y"), sample("d", 1, "z")};
  // 6 pairs, one of them within patient x.
  CHECK(count_cross_patient_pairs(data) == 5);
}

TEST_CASE("pair sampling") {
  std::vector<LabeledSample> same_patient = {sample("a", 0, "p"), sample("b", 1, "p")};
  CHECK_THROWS_AS(sample_pairs(same_patient, 4, 1, false), Error);

  std::vector<LabeledSample> one_class;
  for (int k = 0; k < 6; ++k) one_class.push_back(sample("s" + std::to_string(k), 1, "p" + std::to_string(k)));
  for (const auto& p : sample_pairs(one_class, 50, 2, false)) CHECK(p.same_class);

  SyntheticSpec spec;
  spec.patients_per_class = 5;
  const auto data = gen_synthetic(spec);
  const auto a = sample_pairs(data, 500, 9, true);
  const auto b = sample_pairs(data, 500, 9, true);
  REQUIRE(a.size() == 500);
  std::size_t cross = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].i == b[k].i);
    CHECK(a[k].j == b[k].j);
    CHECK(a[k].i != a[k].j);
    CHECK(data[a[k].i].patient_id != data[a[k].j].patient_id);
    CHECK(a[k].same_class == (data[a[k].i].label == data[a[k].j].label));
    cross += a[k].same_class ? 0 : 1;
  }
  // Balanced draws: about half cross-class despite 10:1 imbalance.
  CHECK(cross > 200);
  CHECK(cross < 300);
}

TEST_CASE("self-training batches") {
  SyntheticSpec spec;
  const auto labeled = gen_synthetic(spec);
  spec.seed = 2;
  spec.n0 = 90;
  const auto unlabeled = strip_labels(gen_synthetic(spec));
  REQUIRE(unlabeled.size() == 100);

  const auto batches = make_ssl_batches(labeled, unlabeled, 20, 4);
  CHECK(batches.size() == 5);
  std::set<std::size_t> targets;
  for (const auto& b : batches) {
    CHECK(b.references.size() == 20);
    CHECK(b.targets.size() == 20);
    CHECK(std::set<std::size_t>(b.references.begin(), b.references.end()).size() == 20);
    targets.insert(b.targets.begin(), b.targets.end());
  }
  CHECK(targets.size() == 100);

  CHECK(make_ssl_batches(labeled, unlabeled, 100, 4).size() == 1);
  CHECK(make_ssl_batches(labeled, unlabeled, 30, 4).size() == 3);
  const auto again = make_ssl_batches(labeled, unlabeled, 20, 4);
  for (std::size_t k = 0; k < batches.size(); ++k) {
    CHECK(again[k].references == batches[k].references);
    CHECK(again[k].targets == batches[k].targets);
  }
}

TEST_CASE("class counts") {
  std::vector<LabeledSample> data = {sample("a", 0, "x"), sample("b", 2, "y"), sample("c", 2, "z")};
  const auto c = count_classes(data, 3);
  CHECK(c[0] == 1);
  CHECK(c[1] == 0);
  CHECK(c[2] == 2);
  CHECK(c.total() == 3);
  CHECK_THROWS_AS(count_classes(data, 2), Error);
}
