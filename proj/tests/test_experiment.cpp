#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ovv/experiment.hpp"

using namespace ovv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ovv_experiment_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig small(const std::string& name) {
  ExperimentConfig c;
  c.dim = 4;
  c.separation = 3.0;
  c.train_n0 = 60;
  c.train_n1 = 20;
  c.val_n0 = 40;
  c.val_n1 = 10;
  c.test_n0 = 80;
  c.test_n1 = 20;
  c.unlabeled_n0 = 100;
  c.unlabeled_n1 = 30;
  c.hidden_dim = 8;
  c.embedding_dim = 4;
  c.lr = 0.1;
  c.max_epochs = 40;
  c.bootstrap = 200;
  c.m = 10;
  c.out_dir = scratch(name).string();
  return c;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(OVVNET_BIN) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("early stopping boundaries") {
  std::vector<double> h = {0.5};
  for (int k = 0; k < 30; ++k) h.push_back(0.5);
  CHECK(early_stopper(h, 30) == StopDecision::proceed);
  h.push_back(0.5);
  CHECK(early_stopper(h, 30) == StopDecision::stop);

  const std::vector<double> rising = {0.1, 0.2, 0.3};
  CHECK(early_stopper(rising, 0) == StopDecision::proceed);
  const std::vector<double> dip = {0.1, 0.3, 0.2};
  CHECK(early_stopper(dip, 0) == StopDecision::stop);
  CHECK(early_stopper(dip, 1) == StopDecision::proceed);
  CHECK(early_stopper(std::vector<double>{}, 3) == StopDecision::proceed);
}

TEST_CASE("configuration round trip") {
  ExperimentConfig c;
  set_config_value(c, "kappa2", "0.2");
  set_config_value(c, "phi", "vsd");
  set_config_value(c, "veto_quantifier", "any-confident");
  set_config_value(c, "one_per_patient", "false");
  CHECK(c.kappa2 == 0.2);
  CHECK(c.phi == Phi::vsd);
  CHECK_FALSE(c.one_per_patient);
  CHECK_THROWS_AS(set_config_value(c, "kapa2", "0.2"), Error);
  CHECK_THROWS_AS(set_config_value(c, "m", "-3"), Error);
  CHECK_THROWS_AS(set_config_value(c, "lr", "fast"), Error);

  const auto dir = scratch("config");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "c.txt");
    out << format_config(c);
  }
  ExperimentConfig back;
  apply_config_file(back, dir / "c.txt");
  CHECK(format_config(back) == format_config(c));
  {
    std::ofstream out(dir / "bad.txt");
    out << "# comment\nlambda = 0.5\nnot_a_key = 1\n";
  }
  CHECK_THROWS_AS(apply_config_file(back, dir / "bad.txt"), Error);
  for (const auto& key : config_keys()) CHECK(format_config(c).find(key + " = ") != std::string::npos);

  ExperimentConfig invalid;
  invalid.kappa2 = 0.5;
  CHECK_THROWS_AS(invalid.validate(), Error);
  fs::remove_all(dir);
}

TEST_CASE("supervised run artifacts") {
  auto cfg = small("supervised");
  cfg.mode = Mode::supervised;
  const auto first = run_supervised(cfg);
  const auto dir = fs::path(cfg.out_dir);
  for (const char* f : {"config.txt", "metrics.csv", "metrics.jsonl", "model.ovvm", "history.csv"})
    CHECK(fs::exists(dir / f));
  const auto metrics = slurp(dir / "metrics.csv");
  REQUIRE(first.reports.size() == 3);
  for (const auto& r : first.reports) {
    REQUIRE(r.auroc.has_value());
    REQUIRE(r.auroc_ci.has_value());
    CHECK(r.auroc_ci->low <= *r.auroc);
    CHECK(r.auroc_ci->high >= *r.auroc);
  }
  CHECK(*first.reports[2].auroc >= 0.95);

  run_supervised(cfg);
  CHECK(slurp(dir / "metrics.csv") == metrics);

  // Evaluating the saved model on its training split reproduces the log.
  auto eval = cfg;
  eval.mode = Mode::eval;
  eval.checkpoint = (dir / "model.ovvm").string();
  eval.eval_split = "train";
  eval.out_dir = scratch("supervised_eval").string();
  const auto again = run_evaluate(eval);
  REQUIRE(again.size() == 1);
  CHECK(metrics_csv_row(again[0]).substr(again[0].model.size()) ==
        metrics_csv_row(first.reports[0]).substr(first.reports[0].model.size()));
  fs::remove_all(dir);
  fs::remove_all(eval.out_dir);
}

TEST_CASE("low-shot run on separable data") {
  auto cfg = small("lowshot");
  cfg.mode = Mode::lowshot;
  const auto out = run_lowshot(cfg);
  const auto dir = fs::path(cfg.out_dir);
  const auto pairs = nlohmann::json::parse(slurp(dir / "pairs.json"));
  CHECK(pairs["train_samples"] == 80);
  CHECK(pairs["pairs_total"].get<std::uint64_t>() == out.result.pairs_total);
  CHECK(out.result.pairs_total > 0);
  CHECK(out.result.pairs_cross_patient == out.result.pairs_total);
  CHECK(*out.reports[2].auroc >= 0.95);

  // Without the classification term the heads still train through similarity.
  auto sim_only = cfg;
  sim_only.lambda = 0.0;
  sim_only.out_dir = scratch("lowshot_lambda0").string();
  const auto s = run_lowshot(sim_only);
  CHECK(s.result.model.fingerprint() != out.result.model.fingerprint());
  fs::remove_all(dir);
  fs::remove_all(sim_only.out_dir);
}

TEST_CASE("self-training run") {
  auto pre = small("ovv_pre");
  pre.mode = Mode::lowshot;
  run_lowshot(pre);

  auto cfg = small("ovv");
  cfg.mode = Mode::ovv;
  cfg.kappa2 = 0.2;
  cfg.max_epochs = 3;
  cfg.checkpoint = (fs::path(pre.out_dir) / "model.ovvm").string();
  const auto out = run_ovv(cfg);
  const auto dir = fs::path(cfg.out_dir);
  for (const char* f : {"decisions.jsonl", "acceptance.csv", "metrics.csv", "model.ovvm"}) CHECK(fs::exists(dir / f));
  CHECK(out.reports.size() == 6);
  CHECK(out.result.best_val_fsc >= out.reports[1].basic.fsc.value_or(0.0));
  CHECK(out.result.ovv_history.size() == out.result.history.size());

  std::ifstream log(dir / "decisions.jsonl");
  std::string line;
  std::size_t records = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["w"].get<std::size_t>() == j["v1"].size());
    if (j["accepted"].get<bool>()) CHECK(j["confident"].get<bool>());
    ++records;
  }
  CHECK(records == 130 * out.result.ovv_history.size());

  const auto metrics = slurp(dir / "metrics.csv");
  run_ovv(cfg);
  CHECK(slurp(dir / "metrics.csv") == metrics);

  auto missing = cfg;
  missing.checkpoint = (dir / "absent.ovvm").string();
  try {
    run_ovv(missing);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::io);
  }
  fs::remove_all(dir);
  fs::remove_all(pre.out_dir);
}

TEST_CASE("single-class and empty splits report no AUROC") {
  const TwinModel model({3, 4, 2, Phi::vad}, 1);
  std::vector<LabeledSample> negatives;
  for (int k = 0; k < 5; ++k) negatives.push_back({"n" + std::to_string(k), {0.1 * k, 0, 1}, 0, "p"});
  const auto r = evaluate(model, negatives, "m", "test", 100, 1);
  CHECK_FALSE(r.auroc.has_value());
  CHECK(r.auroc_note == "single-class split");
  CHECK(metrics_csv_row(r).find(",,") != std::string::npos);
  const auto e = evaluate(model, std::vector<LabeledSample>{}, "m", "test", 100, 1);
  CHECK(e.auroc_note == "empty split");

  std::vector<LabeledSample> wide = {{"w", {1, 2, 3, 4}, 1, "p"}};
  try {
    evaluate(model, wide, "m", "test", 100, 1);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.category() == ErrorCategory::shape_mismatch);
  }
}

TEST_CASE("command-line exit codes") {
  const auto dir = scratch("cli");
  const std::string out = " --out_dir " + dir.string();
  CHECK(run_cli("evaluate --checkpoint " + (dir / "none.ovvm").string() + out) == 4);
  CHECK(run_cli("ovv-finetune --checkpoint " + (dir / "none.ovvm").string() + out) == 4);
  CHECK(run_cli("train-lowshot --kappa2 0.7" + out) == 3);
  CHECK(run_cli("train-lowshot --lr abc" + out) == 3);
  CHECK(run_cli("train-lowshot --no_such_key 1" + out) != 0);
  CHECK(run_cli("") != 0);
  CHECK(run_cli("gen-synthetic --dim 3 --train_n0 10 --train_n1 5 --val_n0 5 --val_n1 5 --test_n0 5 --test_n1 5 "
                "--unlabeled_n0 5 --unlabeled_n1 5" + out) == 0);
  CHECK(fs::exists(dir / "index.csv"));
  fs::remove_all(dir);
}
