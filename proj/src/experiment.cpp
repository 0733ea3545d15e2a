#include "ovv/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <json.hpp>
#include <sstream>

#include "ovv/losses.hpp"
#include "ovv/random.hpp"

namespace ovv {

namespace fs = std::filesystem;

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::supervised: return "supervised";
    case Mode::lowshot: return "lowshot";
    case Mode::ovv: return "ovv";
    case Mode::eval: return "eval";
  }
  return "unknown";
}

namespace {

Mode parse_mode(const std::string& s) {
  if (s == "supervised") return Mode::supervised;
  if (s == "lowshot") return Mode::lowshot;
  if (s == "ovv") return Mode::ovv;
  if (s == "eval") return Mode::eval;
  throw Error(ErrorCategory::config, "unknown mode '" + s + "'");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw Error(ErrorCategory::config, key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(x)) {
    throw Error(ErrorCategory::config, key + ": expected a real number, got '" + v + "'");
  }
  return x;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCategory::config, key + ": expected true/false, got '" + v + "'");
}

struct KeySpec {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
KeySpec size_key(std::string name, T ExperimentConfig::*field) {
  return {name,
          [field, name](ExperimentConfig& c, const std::string& v) { c.*field = static_cast<T>(parse_u64(name, v)); },
          [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

KeySpec real_key(std::string name, double ExperimentConfig::*field) {
  return {name, [field, name](ExperimentConfig& c, const std::string& v) { c.*field = parse_real(name, v); },
          [field](const ExperimentConfig& c) { return format_double(c.*field); }};
}

KeySpec flag_key(std::string name, bool ExperimentConfig::*field) {
  return {name, [field, name](ExperimentConfig& c, const std::string& v) { c.*field = parse_flag(name, v); },
          [field](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

KeySpec text_key(std::string name, std::string ExperimentConfig::*field) {
  return {name, [field](ExperimentConfig& c, const std::string& v) { c.*field = v; },
          [field](const ExperimentConfig& c) { return c.*field; }};
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"mode", [](ExperimentConfig& c, const std::string& v) { c.mode = parse_mode(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.mode)); }},
      text_key("index", &ExperimentConfig::index),
      size_key("data_seed", &ExperimentConfig::data_seed),
      size_key("dim", &ExperimentConfig::dim),
      real_key("separation", &ExperimentConfig::separation),
      real_key("noise", &ExperimentConfig::noise),
      size_key("modes", &ExperimentConfig::modes),
      real_key("mode_spread", &ExperimentConfig::mode_spread),
      size_key("patients_per_class", &ExperimentConfig::patients_per_class),
      size_key("train_n0", &ExperimentConfig::train_n0),
      size_key("train_n1", &ExperimentConfig::train_n1),
      size_key("val_n0", &ExperimentConfig::val_n0),
      size_key("val_n1", &ExperimentConfig::val_n1),
      size_key("test_n0", &ExperimentConfig::test_n0),
      size_key("test_n1", &ExperimentConfig::test_n1),
      size_key("unlabeled_n0", &ExperimentConfig::unlabeled_n0),
      size_key("unlabeled_n1", &ExperimentConfig::unlabeled_n1),
      flag_key("one_per_patient", &ExperimentConfig::one_per_patient),
      size_key("hidden_dim", &ExperimentConfig::hidden_dim),
      size_key("embedding_dim", &ExperimentConfig::embedding_dim),
      {"phi", [](ExperimentConfig& c, const std::string& v) { c.phi = parse_phi(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.phi)); }},
      real_key("lambda", &ExperimentConfig::lambda),
      real_key("lr", &ExperimentConfig::lr),
      size_key("decay_epoch", &ExperimentConfig::decay_epoch),
      real_key("decay_factor", &ExperimentConfig::decay_factor),
      size_key("max_epochs", &ExperimentConfig::max_epochs),
      size_key("patience", &ExperimentConfig::patience),
      size_key("batch_size", &ExperimentConfig::batch_size),
      size_key("pairs_per_epoch", &ExperimentConfig::pairs_per_epoch),
      size_key("pair_batch", &ExperimentConfig::pair_batch),
      flag_key("balance_pairs", &ExperimentConfig::balance_pairs),
      size_key("kappa1", &ExperimentConfig::kappa1),
      real_key("kappa2", &ExperimentConfig::kappa2),
      size_key("m", &ExperimentConfig::m),
      {"veto_quantifier",
       [](ExperimentConfig& c, const std::string& v) { c.veto_quantifier = parse_veto_quantifier(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.veto_quantifier)); }},
      flag_key("require_consensus_match", &ExperimentConfig::require_consensus_match),
      text_key("checkpoint", &ExperimentConfig::checkpoint),
      flag_key("decision_log", &ExperimentConfig::decision_log),
      size_key("bootstrap", &ExperimentConfig::bootstrap),
      text_key("eval_split", &ExperimentConfig::eval_split),
      size_key("seed", &ExperimentConfig::seed),
      text_key("out_dir", &ExperimentConfig::out_dir),
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& k : key_table()) keys.push_back(k.name);
  return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : key_table()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw Error(ErrorCategory::config, "unknown config key '" + key + "'");
}

void apply_config_file(ExperimentConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot read config " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCategory::config, path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

void ExperimentConfig::validate() const {
  if (index.empty() && (dim == 0 || train_n0 == 0 || train_n1 == 0)) {
    throw Error(ErrorCategory::config, "synthetic data needs dim, train_n0 and train_n1 >= 1");
  }
  if (hidden_dim == 0 || embedding_dim == 0) throw Error(ErrorCategory::config, "model widths must be >= 1");
  if (!(lambda >= 0.0)) throw Error(ErrorCategory::config, "lambda must be >= 0");
  if (batch_size == 0 || pair_batch == 0) throw Error(ErrorCategory::config, "batch sizes must be >= 1");
  if (bootstrap < 100) throw Error(ErrorCategory::config, "bootstrap must be >= 100");
  sgd().validate();
  ovv().validate();
}

ModelDims ExperimentConfig::model_dims(std::size_t input_dim) const {
  return {input_dim, hidden_dim, embedding_dim, phi};
}

SgdConfig ExperimentConfig::sgd() const { return {lr, decay_epoch, decay_factor}; }

OvvConfig ExperimentConfig::ovv() const {
  return {kappa1, kappa2, m, veto_quantifier, require_consensus_match};
}

// ---------------------------------------------------------------------------

namespace {

struct Partitions {
  std::vector<LabeledSample> train, validation, test, unlabeled;
};

Partitions synthetic_partitions(const ExperimentConfig& cfg) {
  SyntheticSpec base;
  base.dim = cfg.dim;
  base.separation = cfg.separation;
  base.noise = cfg.noise;
  base.modes = cfg.modes;
  base.mode_spread = cfg.mode_spread;
  base.patients_per_class = cfg.patients_per_class;
  base.layout_seed = cfg.data_seed;
  const auto part = [&](std::uint64_t stream, std::size_t n0, std::size_t n1, const char* prefix) {
    if (n0 == 0 && n1 == 0) return std::vector<LabeledSample>{};
    SyntheticSpec s = base;
    s.seed = derive_seed(cfg.data_seed, stream);
    s.n0 = n0;
    s.n1 = n1;
    s.id_prefix = prefix;
    return gen_synthetic(s);
  };
  return {part(1, cfg.train_n0, cfg.train_n1, "tr"), part(2, cfg.val_n0, cfg.val_n1, "va"),
          part(3, cfg.test_n0, cfg.test_n1, "te"), part(4, cfg.unlabeled_n0, cfg.unlabeled_n1, "un")};
}

Partitions index_partitions(const ExperimentConfig& cfg) {
  Partitions p;
  std::vector<LabeledSample> unassigned;
  for (auto& row : load_index(cfg.index)) {
    if (!row.labeled || row.split == "unlabeled") {
      p.unlabeled.push_back(std::move(row.sample));
    } else if (row.split == "train") {
      p.train.push_back(std::move(row.sample));
    } else if (row.split == "val" || row.split == "validation") {
      p.validation.push_back(std::move(row.sample));
    } else if (row.split == "test") {
      p.test.push_back(std::move(row.sample));
    } else if (row.split.empty()) {
      unassigned.push_back(std::move(row.sample));
    } else {
      throw DataError(DataErrorKind::malformed_row, "unknown split '" + row.split + "' for " + row.sample.id);
    }
  }
  if (!unassigned.empty()) {
    const double fractions[] = {0.8, 0.1, 0.1};
    const auto split = split_by_patient(unassigned, fractions, cfg.seed);
    std::map<std::string, std::size_t> where;
    for (std::size_t k = 0; k < 3; ++k)
      for (const auto& id : split.partitions[k]) where[id] = k;
    for (auto& s : unassigned) {
      const auto k = where.at(s.id);
      (k == 0 ? p.train : k == 1 ? p.validation : p.test).push_back(std::move(s));
    }
  }
  return p;
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  Partitions p = cfg.index.empty() ? synthetic_partitions(cfg) : index_partitions(cfg);
  ExperimentData data;
  data.train = cfg.one_per_patient ? select_one_per_patient(p.train, cfg.seed) : std::move(p.train);
  data.validation = std::move(p.validation);
  data.test = std::move(p.test);
  for (const auto& s : p.unlabeled) {
    if (s.label >= 0) data.unlabeled_truth[s.id] = s.label;
  }
  data.unlabeled = strip_labels(p.unlabeled);
  return data;
}

void export_synthetic(const ExperimentConfig& cfg, const fs::path& dir) {
  const Partitions p = synthetic_partitions(cfg);
  fs::create_directories(dir / "features");
  std::ofstream index(dir / "index.csv");
  if (!index) throw Error(ErrorCategory::io, "cannot write " + (dir / "index.csv").string());
  index << "id,path,label,patient_id,split\n";
  std::ofstream truth(dir / "unlabeled_truth.csv");
  truth << "id,label\n";
  const auto emit = [&](const std::vector<LabeledSample>& part, const char* split, bool labeled) {
    for (const auto& s : part) {
      const std::string rel = "features/" + s.id + ".f64";
      write_raw_features(dir / rel, s.features);
      index << s.id << ',' << rel << ',' << (labeled ? std::to_string(s.label) : "") << ',' << s.patient_id << ','
            << split << '\n';
      if (!labeled) truth << s.id << ',' << s.label << '\n';
    }
  };
  emit(p.train, "train", true);
  emit(p.validation, "val", true);
  emit(p.test, "test", true);
  emit(p.unlabeled, "unlabeled", false);
}

// ---------------------------------------------------------------------------

StopDecision early_stopper(std::span<const double> history, std::size_t patience) {
  if (history.empty()) return StopDecision::proceed;
  std::size_t best = 0;
  for (std::size_t k = 1; k < history.size(); ++k) {
    if (history[k] > history[best]) best = k;
  }
  return history.size() - 1 - best > patience ? StopDecision::stop : StopDecision::proceed;
}

std::vector<double> predict_probabilities(const TwinModel& model, std::span<const LabeledSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    std::vector<const std::vector<double>*> rows;
    for (std::size_t k = start; k < std::min(samples.size(), start + kChunk); ++k) rows.push_back(&samples[k].features);
    const auto p = model.forward_single(stack_rows(rows)).probability;
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return out;
}

namespace {

std::vector<int> labels_of(std::span<const LabeledSample> samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

}  // namespace

double validation_fsc(const TwinModel& model, std::span<const LabeledSample> samples) {
  if (samples.empty()) throw Error(ErrorCategory::data, "validation split is empty");
  const auto p = predict_probabilities(model, samples);
  return basic_metrics(confusion(labels_of(samples), p, 0.5)).fsc.value_or(0.0);
}

MetricsReport evaluate(const TwinModel& model, std::span<const LabeledSample> samples, const std::string& model_name,
                       const std::string& split, std::size_t n_boot, std::uint64_t seed) {
  if (!samples.empty() && samples.front().features.size() != model.dims().input_dim) {
    throw Error(ErrorCategory::shape_mismatch, "model expects " + std::to_string(model.dims().input_dim) +
                                                   " features, data has " +
                                                   std::to_string(samples.front().features.size()));
  }
  MetricsReport r;
  r.model = model_name;
  r.split = split;
  r.n = samples.size();
  const auto y = labels_of(samples);
  const auto p = predict_probabilities(model, samples);
  r.positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  r.confusion = confusion(y, p, 0.5);
  r.basic = basic_metrics(r.confusion);
  if (r.positives == 0 || r.positives == r.n) {
    r.auroc_note = r.n == 0 ? "empty split" : "single-class split";
    return r;
  }
  r.auroc = auroc(y, p);
  r.auroc_ci = bootstrap_auroc_ci(y, p, n_boot, seed);
  r.at_spe90 = sensitivity_at_specificity(y, p, 0.90);
  r.at_spe95 = sensitivity_at_specificity(y, p, 0.95);
  return r;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_metric(*v) : std::string(); }

}  // namespace

std::string metrics_csv_header() {
  return "model,split,n,positives,tp,tn,fp,fn,acc,pre,rec,spe,fsc,mcc,iou,auroc,auroc_ci_low,auroc_ci_high,"
         "sen_at_spe90,threshold_spe90,sen_at_spe95,threshold_spe95";
}

std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream out;
  const auto& c = r.confusion;
  const auto& b = r.basic;
  out << r.model << ',' << r.split << ',' << r.n << ',' << r.positives << ',' << c.tp << ',' << c.tn << ',' << c.fp
      << ',' << c.fn << ',' << opt(b.acc) << ',' << opt(b.pre) << ',' << opt(b.rec) << ',' << opt(b.spe) << ','
      << opt(b.fsc) << ',' << opt(b.mcc) << ',' << opt(b.iou) << ',' << opt(r.auroc) << ','
      << (r.auroc_ci ? format_metric(r.auroc_ci->low) : "") << ','
      << (r.auroc_ci ? format_metric(r.auroc_ci->high) : "") << ','
      << (r.at_spe90 ? format_metric(r.at_spe90->sensitivity) : "") << ','
      << (r.at_spe90 ? format_metric(r.at_spe90->threshold) : "") << ','
      << (r.at_spe95 ? format_metric(r.at_spe95->sensitivity) : "") << ','
      << (r.at_spe95 ? format_metric(r.at_spe95->threshold) : "");
  return out.str();
}

std::string metrics_json_line(const MetricsReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["model"] = r.model;
  j["split"] = r.split;
  j["n"] = r.n;
  j["positives"] = r.positives;
  j["tp"] = r.confusion.tp;
  j["tn"] = r.confusion.tn;
  j["fp"] = r.confusion.fp;
  j["fn"] = r.confusion.fn;
  const auto put = [&j](const char* key, const std::optional<double>& v) {
    j[key] = v ? ordered_json(*v) : ordered_json(nullptr);
  };
  put("acc", r.basic.acc);
  put("pre", r.basic.pre);
  put("rec", r.basic.rec);
  put("spe", r.basic.spe);
  put("fsc", r.basic.fsc);
  put("mcc", r.basic.mcc);
  put("iou", r.basic.iou);
  put("auroc", r.auroc);
  if (r.auroc_ci) {
    j["auroc_ci"] = {r.auroc_ci->low, r.auroc_ci->high};
  } else {
    j["auroc_ci"] = nullptr;
  }
  if (!r.auroc) j["auroc_note"] = r.auroc_note;
  for (const auto& [key, op] : {std::pair{"spe90", &r.at_spe90}, std::pair{"spe95", &r.at_spe95}}) {
    if (*op) {
      j[std::string("sen_at_") + key] = (*op)->sensitivity;
      j[std::string("threshold_") + key] = (*op)->threshold;
    } else {
      j[std::string("sen_at_") + key] = nullptr;
    }
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

void require_trainable(const ExperimentData& data) {
  if (data.train.empty()) throw Error(ErrorCategory::data, "training split is empty");
  if (data.validation.empty()) throw Error(ErrorCategory::data, "validation split is empty");
}

// Keeps the best model by validation F-score and drives early stopping.
class Selector {
 public:
  Selector(TrainResult& result, std::size_t patience) : result_(result), patience_(patience) {}

  // Returns true when training should stop.
  bool observe(std::size_t epoch, double fsc, const TwinModel& model) {
    if (fscs_.empty() || fsc > result_.best_val_fsc) {
      result_.best_val_fsc = fsc;
      result_.best_epoch = epoch;
      result_.model = model.clone();
    }
    fscs_.push_back(fsc);
    if (early_stopper(fscs_, patience_) == StopDecision::stop) {
      result_.stopped_early = true;
      return true;
    }
    return false;
  }

 private:
  TrainResult& result_;
  std::size_t patience_;
  std::vector<double> fscs_;
};

}  // namespace

TrainResult train_supervised(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  require_trainable(data);
  TwinModel model(cfg.model_dims(data.train.front().features.size()), cfg.seed);
  const double w = weight_cla(count_classes(data.train));
  const SgdConfig sgd = cfg.sgd();

  TrainResult result;
  Selector selector(result, cfg.patience);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 1000 + epoch));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const std::vector<double>*> rows;
      std::vector<int> labels;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        rows.push_back(&data.train[order[k]].features);
        labels.push_back(data.train[order[k]].label);
      }
      const Tensor loss = finetune_loss(model.forward_single(stack_rows(rows)).probability, labels, w);
      backward(loss);
      sgd_step(model.classifier_parameters(), sgd, epoch);
      loss_sum += loss.item();
      ++steps;
    }
    const double fsc = validation_fsc(model, data.validation);
    result.history.push_back({epoch, loss_sum / static_cast<double>(steps), fsc});
    if (selector.observe(epoch, fsc, model)) break;
  }
  return result;
}

TrainResult train_lowshot(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  require_trainable(data);
  TwinModel model(cfg.model_dims(data.train.front().features.size()), cfg.seed);
  const LossWeights weights = make_loss_weights(count_classes(data.train), cfg.lambda);
  const SgdConfig sgd = cfg.sgd();
  const std::size_t per_epoch = cfg.pairs_per_epoch ? cfg.pairs_per_epoch : data.train.size();

  TrainResult result;
  result.pairs_total = count_pairs(data.train.size());
  result.pairs_cross_patient = count_cross_patient_pairs(data.train);
  Selector selector(result, cfg.patience);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const PairBatch pairs = sample_pairs(data.train, per_epoch, derive_seed(cfg.seed, 2000 + epoch), cfg.balance_pairs);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.pair_batch) {
      std::vector<const std::vector<double>*> xi, xj;
      std::vector<int> yi, yj;
      for (std::size_t k = start; k < std::min(pairs.size(), start + cfg.pair_batch); ++k) {
        const auto& a = data.train[pairs[k].i];
        const auto& b = data.train[pairs[k].j];
        xi.push_back(&a.features);
        xj.push_back(&b.features);
        yi.push_back(a.label);
        yj.push_back(b.label);
      }
      const auto out = model.forward_pair(stack_rows(xi), stack_rows(xj));
      const Tensor loss = pair_loss(out, yi, yj, weights);
      backward(loss);
      sgd_step(model.parameters(), sgd, epoch);
      loss_sum += loss.item();
      ++steps;
    }
    const double fsc = validation_fsc(model, data.validation);
    result.history.push_back({epoch, loss_sum / static_cast<double>(steps), fsc});
    if (selector.observe(epoch, fsc, model)) break;
  }
  return result;
}

TrainResult train_ovv(const ExperimentConfig& cfg, const ExperimentData& data, const TwinModel& pretrained,
                      const DecisionSink& sink) {
  cfg.validate();
  require_trainable(data);
  if (data.train.front().features.size() != pretrained.dims().input_dim) {
    throw Error(ErrorCategory::shape_mismatch, "checkpoint expects " + std::to_string(pretrained.dims().input_dim) +
                                                   " features, data has " +
                                                   std::to_string(data.train.front().features.size()));
  }
  const OvvConfig ovv_cfg = cfg.ovv();
  FinetuneSettings finetune;
  finetune.sgd = cfg.sgd();
  finetune.fallback_weight_cla = weight_cla(count_classes(data.train));

  ModelRoles roles{pretrained.clone(), pretrained.clone()};
  TrainResult result;
  Selector selector(result, cfg.patience);
  double reference_fsc = validation_fsc(roles.reference, data.validation);
  selector.observe(0, reference_fsc, roles.target);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = make_ssl_batches(data.train, data.unlabeled, ovv_cfg.batch_half_size,
                                          derive_seed(cfg.seed, 3000 + epoch));
    finetune.epoch = epoch;
    OvvEpochRecord rec;
    rec.epoch = epoch;
    rec.stats = ovv_epoch(roles, data.train, data.unlabeled, batches, ovv_cfg, finetune, sink);
    rec.target_fsc = validation_fsc(roles.target, data.validation);
    rec.reference_fsc = reference_fsc;
    rec.promoted = promote_reference(roles, rec.target_fsc, reference_fsc);
    if (rec.promoted) reference_fsc = rec.target_fsc;
    result.ovv_history.push_back(rec);
    result.history.push_back({epoch, 0.0, rec.target_fsc});
    if (selector.observe(epoch, rec.target_fsc, roles.target)) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::io, "cannot write " + path.string());
  out << text;
}

fs::path prepare_out_dir(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create output directory " + dir.string() + ": " + ec.message());
  write_text(dir / "config.txt", format_config(cfg));
  return dir;
}

std::vector<MetricsReport> evaluate_splits(const TwinModel& model, const ExperimentData& data,
                                           const std::string& name, const ExperimentConfig& cfg) {
  std::vector<MetricsReport> out;
  const std::pair<const char*, const std::vector<LabeledSample>*> splits[] = {
      {"train", &data.train}, {"validation", &data.validation}, {"test", &data.test}};
  for (const auto& [split, samples] : splits) {
    if (samples->empty()) continue;
    out.push_back(evaluate(model, *samples, name, split, cfg.bootstrap, derive_seed(cfg.seed, 4000)));
  }
  return out;
}

void write_reports(const fs::path& dir, const std::vector<MetricsReport>& reports) {
  std::string csv = metrics_csv_header() + "\n";
  std::string jsonl;
  for (const auto& r : reports) {
    csv += metrics_csv_row(r) + "\n";
    jsonl += metrics_json_line(r) + "\n";
  }
  write_text(dir / "metrics.csv", csv);
  write_text(dir / "metrics.jsonl", jsonl);
}

void write_history(const fs::path& dir, const TrainResult& r) {
  std::string csv = "epoch,train_loss,val_fsc\n";
  for (const auto& h : r.history) csv += std::to_string(h.epoch) + "," + format_metric(h.train_loss) + "," + format_metric(h.val_fsc) + "\n";
  write_text(dir / "history.csv", csv);
}

}  // namespace

RunOutcome run_supervised(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto dir = prepare_out_dir(cfg);
  const auto data = load_experiment_data(cfg);
  RunOutcome out{train_supervised(cfg, data), {}};
  out.reports = evaluate_splits(out.result.model, data, "supervised", cfg);
  out.result.model.save(dir / "model.ovvm");
  write_history(dir, out.result);
  write_reports(dir, out.reports);
  return out;
}

RunOutcome run_lowshot(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto dir = prepare_out_dir(cfg);
  const auto data = load_experiment_data(cfg);
  RunOutcome out{train_lowshot(cfg, data), {}};
  out.reports = evaluate_splits(out.result.model, data, "lowshot", cfg);
  out.result.model.save(dir / "model.ovvm");
  write_history(dir, out.result);
  write_reports(dir, out.reports);
  nlohmann::ordered_json pairs;
  pairs["train_samples"] = data.train.size();
  pairs["pairs_total"] = out.result.pairs_total;
  pairs["pairs_cross_patient"] = out.result.pairs_cross_patient;
  write_text(dir / "pairs.json", pairs.dump() + "\n");
  return out;
}

RunOutcome run_ovv(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw Error(ErrorCategory::config, "ovv needs a pretrained checkpoint");
  if (!fs::exists(cfg.checkpoint)) throw Error(ErrorCategory::io, "missing checkpoint " + cfg.checkpoint);
  const TwinModel pretrained = TwinModel::load(cfg.checkpoint);
  const auto dir = prepare_out_dir(cfg);
  const auto data = load_experiment_data(cfg);
  if (data.unlabeled.empty()) throw Error(ErrorCategory::data, "ovv needs an unlabeled pool");

  std::ofstream log;
  if (cfg.decision_log) {
    log.open(dir / "decisions.jsonl", std::ios::binary);
    if (!log) throw Error(ErrorCategory::io, "cannot write decision log");
  }
  const OvvConfig ovv_cfg = cfg.ovv();
  DecisionSink sink;
  if (cfg.decision_log) {
    sink = [&log, &ovv_cfg](const DecisionRecord& r) {
      nlohmann::ordered_json j;
      j["epoch"] = r.epoch;
      j["batch"] = r.batch;
      j["target"] = r.target_id;
      j["p_target"] = r.p_target;
      j["self_label"] = r.self_label;
      j["confident"] = r.confident;
      j["w"] = r.votes.qualified();
      j["sum_v1"] = r.votes.positive_votes();
      j["v1"] = r.votes.labels;
      j["v2"] = r.votes.probs;
      j["kappa1"] = ovv_cfg.veto_tolerance;
      j["kappa2"] = ovv_cfg.confidence_margin;
      j["accepted"] = r.accepted;
      j["reason"] = to_string(r.reason);
      log << j.dump() << '\n';
    };
  }

  RunOutcome out{train_ovv(cfg, data, pretrained, sink), {}};
  out.reports = evaluate_splits(pretrained, data, "pretrained", cfg);
  auto tuned = evaluate_splits(out.result.model, data, "ovv", cfg);
  out.reports.insert(out.reports.end(), tuned.begin(), tuned.end());
  out.result.model.save(dir / "model.ovvm");
  write_history(dir, out.result);
  write_reports(dir, out.reports);

  std::string csv =
      "epoch,batches,skipped_batches,confident_targets,accepted,rejected,acceptance_rate,accepted_positive,"
      "qualified_references,pool_entries,val_fsc_target,val_fsc_reference,promoted\n";
  for (const auto& e : out.result.ovv_history) {
    const auto& s = e.stats;
    const double rate = s.accepted + s.rejected ? static_cast<double>(s.accepted) / static_cast<double>(s.accepted + s.rejected) : 0.0;
    csv += std::to_string(e.epoch) + "," + std::to_string(s.batches) + "," + std::to_string(s.skipped_batches) + "," +
           std::to_string(s.confident_targets) + "," + std::to_string(s.accepted) + "," + std::to_string(s.rejected) +
           "," + format_metric(rate) + "," + std::to_string(s.accepted_positive) + "," +
           std::to_string(s.qualified_references) + "," + std::to_string(s.pool_entries) + "," +
           format_metric(e.target_fsc) + "," + format_metric(e.reference_fsc) + "," + (e.promoted ? "1" : "0") + "\n";
  }
  write_text(dir / "acceptance.csv", csv);
  return out;
}

std::vector<MetricsReport> run_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw Error(ErrorCategory::config, "evaluate needs a checkpoint");
  const TwinModel model = TwinModel::load(cfg.checkpoint);
  const auto dir = prepare_out_dir(cfg);
  const auto data = load_experiment_data(cfg);
  std::vector<MetricsReport> reports;
  const std::pair<const char*, const std::vector<LabeledSample>*> splits[] = {
      {"train", &data.train}, {"validation", &data.validation}, {"test", &data.test}};
  bool matched = false;
  for (const auto& [split, samples] : splits) {
    if (cfg.eval_split != "all" && cfg.eval_split != split) continue;
    matched = true;
    reports.push_back(evaluate(model, *samples, "checkpoint", split, cfg.bootstrap, derive_seed(cfg.seed, 4000)));
  }
  if (!matched) throw Error(ErrorCategory::config, "eval_split must be train, validation, test or all");
  write_reports(dir, reports);
  return reports;
}

}  // namespace ovv
