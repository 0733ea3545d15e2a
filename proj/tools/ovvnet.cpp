// ovvnet: synthetic data generation, training, self-training and evaluation.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <map>

#include "ovv/experiment.hpp"

namespace {

int exit_code(ovv::ErrorCategory c) {
  switch (c) {
    case ovv::ErrorCategory::invalid_argument: return 2;
    case ovv::ErrorCategory::config: return 3;
    case ovv::ErrorCategory::io: return 4;
    case ovv::ErrorCategory::format: return 5;
    case ovv::ErrorCategory::data: return 6;
    case ovv::ErrorCategory::shape_mismatch: return 7;
    case ovv::ErrorCategory::non_finite: return 8;
  }
  return 1;
}

struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;
};

Command add_command(CLI::App& root, const std::string& name, const std::string& help) {
  Command c;
  c.app = root.add_subcommand(name, help);
  return c;
}

void bind_keys(Command& c) {
  c.app->add_option("--config", c.config_file, "flat key = value config file");
  for (const auto& key : ovv::config_keys()) {
    c.app->add_option("--" + key, c.values[key]);
  }
}

ovv::ExperimentConfig resolve(const Command& c, ovv::Mode mode) {
  ovv::ExperimentConfig cfg;
  cfg.mode = mode;
  if (!c.config_file.empty()) ovv::apply_config_file(cfg, c.config_file);
  for (const auto& key : ovv::config_keys()) {
    if (c.app->count("--" + key) > 0) ovv::set_config_value(cfg, key, c.values.at(key));
  }
  cfg.mode = mode;
  return cfg;
}

void print_reports(const std::vector<ovv::MetricsReport>& reports) {
  for (const auto& r : reports) {
    std::printf("%-10s %-10s n=%zu", r.model.c_str(), r.split.c_str(), r.n);
    if (r.auroc) {
      std::printf(" auroc=%.4f [%.4f, %.4f]", *r.auroc, r.auroc_ci->low, r.auroc_ci->high);
    } else {
      std::printf(" auroc=- (%s)", r.auroc_note.c_str());
    }
    std::printf(" fsc=%s\n", r.basic.fsc ? std::to_string(*r.basic.fsc).c_str() : "-");
  }
}

void print_training(const ovv::TrainResult& r) {
  std::printf("best epoch %zu, validation fsc %.4f%s\n", r.best_epoch, r.best_val_fsc,
              r.stopped_early ? ", stopped early" : "");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twin-network classifier with one-vote-veto self-training"};
  app.require_subcommand(1);

  Command gen = add_command(app, "gen-synthetic", "write synthetic partitions as index.csv + feature files");
  Command sup = add_command(app, "train-supervised", "train the single-branch baseline");
  Command low = add_command(app, "train-lowshot", "train the twin network on sample pairs");
  Command ovv_cmd = add_command(app, "ovv-finetune", "self-train a pretrained twin network");
  Command eval = add_command(app, "evaluate", "score a checkpoint");
  for (Command* c : {&gen, &sup, &low, &ovv_cmd, &eval}) bind_keys(*c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen.app) {
      const auto cfg = resolve(gen, ovv::Mode::lowshot);
      cfg.validate();
      ovv::export_synthetic(cfg, cfg.out_dir);
      std::printf("wrote %s/index.csv\n", cfg.out_dir.c_str());
    } else if (*sup.app) {
      const auto out = ovv::run_supervised(resolve(sup, ovv::Mode::supervised));
      print_training(out.result);
      print_reports(out.reports);
    } else if (*low.app) {
      const auto out = ovv::run_lowshot(resolve(low, ovv::Mode::lowshot));
      print_training(out.result);
      std::printf("pairs: %llu total, %llu cross-patient\n",
                  static_cast<unsigned long long>(out.result.pairs_total),
                  static_cast<unsigned long long>(out.result.pairs_cross_patient));
      print_reports(out.reports);
    } else if (*ovv_cmd.app) {
      const auto out = ovv::run_ovv(resolve(ovv_cmd, ovv::Mode::ovv));
      print_training(out.result);
      print_reports(out.reports);
    } else if (*eval.app) {
      print_reports(ovv::run_evaluate(resolve(eval, ovv::Mode::eval)));
    }
  } catch (const ovv::Error& e) {
    std::cerr << "error[" << ovv::to_string(e.category()) << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
