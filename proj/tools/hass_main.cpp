// Command-line front end: synthesize datasets, train staging models with or
// without the hybrid-attention encoder, evaluate, gradient-check, and render
// paired with/without comparisons.
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hass/dataset.hpp"
#include "hass/errors.hpp"
#include "hass/metrics.hpp"
#include "hass/model.hpp"
#include "hass/params_io.hpp"
#include "hass/rng.hpp"

namespace {

using namespace hass;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

std::array<double, kStageCount> parse_balance(const std::string& s) {
  const std::vector<std::string> parts = split(s, ',');
  if (parts.size() != kStageCount) {
    throw ConfigError("--balance needs exactly 5 comma-separated weights, got '" + s + "'");
  }
  std::array<double, kStageCount> out{};
  for (std::size_t i = 0; i < kStageCount; ++i) {
    try {
      out[i] = std::stod(parts[i]);
    } catch (const std::exception&) {
      throw ConfigError("--balance entry '" + parts[i] + "' is not a number");
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const std::string& part : split(s, ',')) {
    try {
      out.push_back(std::stoull(part));
    } catch (const std::exception&) {
      throw ConfigError("--seeds entry '" + part + "' is not an integer");
    }
  }
  if (out.empty()) throw ConfigError("--seeds must name at least one seed");
  return out;
}

// Every run echoes its fully resolved configuration (flag > file > default).
void echo_config(const CLI::App& cmd) {
  std::cout << "config: command = " << cmd.get_name() << "\n";
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_name();
    if (name == "--help") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) {
        if (i) value += ",";
        value += results[i];
      }
    } else {
      value = opt->get_default_str();
    }
    if (value.empty()) value = "(unset)";
    std::cout << "config: " << name.substr(2) << " = " << value << "\n";
  }
}

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void attach_config_file(CLI::App* cmd) {
  cmd->add_option("--config", "flat key = value config file (flag > file > default)");
}

// Applies a flat `key = value` config file to the parsed subcommand. Keys
// must name known flags; values fill in only where no flag was given.
void apply_config_file(CLI::App& cmd) {
  const CLI::Option* copt = cmd.get_option_no_throw("--config");
  if (copt == nullptr || copt->count() == 0) return;
  const std::string path = copt->results().front();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    CLI::Option* op = cmd.get_option_no_throw("--" + key);
    if (op == nullptr || key == "config" || key.empty()) {
      throw ConfigError("unknown config key '" + key + "' in " + path);
    }
    if (op->count() > 0) continue;  // explicit flag wins
    op->add_result(value);
    op->run_callback();
  }
}

void require_value(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

HeadKind parse_head(const std::string& s) {
  return s == "tinyconv" ? HeadKind::TinyConv : HeadKind::Linear;
}

OptimizerKind parse_optimizer(const std::string& s) {
  return s == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
}

struct SynthArgs {
  std::string out;
  std::size_t channels = 6;
  std::size_t timesteps = 64;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  double spatial = 0.5;
  double temporal = 0.5;
  double noise = 0.1;
  std::string balance = "0.2,0.2,0.2,0.2,0.2";
};

int run_synth(const SynthArgs& a) {
  require_value(a.out, "--out");
  SynthSpec spec;
  spec.channels = a.channels;
  spec.timesteps = a.timesteps;
  spec.count = a.count;
  spec.seed = a.seed;
  spec.spatial_coupling = a.spatial;
  spec.temporal_signature = a.temporal;
  spec.noise_std = a.noise;
  spec.class_balance = parse_balance(a.balance);
  spec.validate();

  std::vector<EpochRecord> records = generate_synthetic(spec);
  write_dataset(records, a.out);
  const auto hist = label_histogram(records);
  std::cout << "wrote " << a.out << ": " << records.size() << " records, C=" << spec.channels
            << ", T=" << spec.timesteps << "\n";
  std::cout << "histogram:";
  for (std::size_t k = 0; k < kStageCount; ++k) {
    std::cout << " " << kStageNames[k] << ":" << hist[k];
  }
  std::cout << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string hass = "yes";
  std::string head = "linear";
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string out_model;
  std::size_t batch_size = 32;
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

TrainConfig train_config_from(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.optimizer = parse_optimizer(a.optimizer);
  cfg.adam_beta1 = a.beta1;
  cfg.adam_beta2 = a.beta2;
  cfg.adam_eps = a.adam_eps;
  cfg.seed = a.seed;
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& a) {
  require_value(a.data, "--data");
  const TrainConfig cfg = train_config_from(a);
  std::vector<EpochRecord> records = read_dataset(a.data);
  const Tensor& first = records.front().signal;
  StagingModel model = init_model(first.extent(0), first.extent(1), first.extent(2),
                                  a.hass == "yes", parse_head(a.head), a.seed);

  TrainResult result = train(records, cfg, model.encoder ? &*model.encoder : nullptr, model.head);
  char line[128];
  for (std::size_t e = 0; e < result.trace.size(); ++e) {
    std::snprintf(line, sizeof(line), "epoch %zu/%zu  loss %.6f  acc %.4f", e + 1,
                  result.trace.size(), result.trace[e].loss, result.trace[e].accuracy);
    std::cout << line << "\n";
  }
  std::snprintf(line, sizeof(line), "final train accuracy = %.4f", result.final_train_accuracy);
  std::cout << line << "\n";
  if (!a.out_model.empty()) {
    save_model(model, a.out_model);
    std::cout << "wrote model " << a.out_model << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string model;
  std::string emit_report;
};

int run_eval(const EvalArgs& a) {
  require_value(a.data, "--data");
  require_value(a.model, "--model");
  std::vector<EpochRecord> records = read_dataset(a.data);
  StagingModel model = load_model(a.model);
  const Tensor& first = records.front().signal;
  if (model.channels != first.extent(0) || model.timesteps != first.extent(1) ||
      model.depth != first.extent(2)) {
    throw ConfigError("model expects C=" + std::to_string(model.channels) +
                      ", T=" + std::to_string(model.timesteps) + ", D=" +
                      std::to_string(model.depth) + " but dataset records are " +
                      first.shape_str());
  }

  std::vector<SleepStage> truth;
  truth.reserve(records.size());
  for (const EpochRecord& r : records) truth.push_back(r.label);
  std::vector<SleepStage> preds =
      predict(records, model.encoder ? &*model.encoder : nullptr, model.head);
  MetricsReport report = metrics_from_confusion(confusion(truth, preds));

  ReportRow row;
  row.model_tag = model.head.kind == HeadKind::TinyConv ? "tinyconv" : "linear";
  row.hass = model.encoder.has_value();
  row.metrics = report;
  std::cout << render_report({row});
  std::cout << "scored " << report.n_epochs << " records\n";

  if (!a.emit_report.empty()) {
    std::ofstream out(a.emit_report, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + a.emit_report + "' for writing");
    out << emit_report_kv(report, "eval");
    std::cout << "wrote report " << a.emit_report << "\n";
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::size_t channels = 3;
  std::size_t timesteps = 4;
  std::size_t heads = 1;
  std::uint64_t seed = 0;
  double tolerance = 1e-5;
};

int run_gradcheck(const GradcheckArgs& a) {
  GradCheckConfig cfg;
  cfg.channels = a.channels;
  cfg.timesteps = a.timesteps;
  cfg.heads = a.heads;
  cfg.seed = a.seed;
  GradCheckResult result = gradcheck_model(cfg);
  char line[160];
  std::snprintf(line, sizeof(line),
                "max relative error = %.3e over %zu coordinates (worst: %s[%zu])",
                result.max_rel_error, result.coordinates_checked, result.worst_tensor.c_str(),
                result.worst_index);
  std::cout << line << "\n";
  const bool pass = result.max_rel_error <= a.tolerance;
  std::snprintf(line, sizeof(line), "tolerance %.3e: %s", a.tolerance, pass ? "PASS" : "FAIL");
  std::cout << line << "\n";
  return pass ? kExitOk : kExitRuntime;
}

struct CompareArgs {
  std::string data_train;
  std::string data_eval;
  std::string head = "tinyconv";
  std::string seeds = "0,1,2";
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::string optimizer = "adam";
  std::string emit_report;
};

MetricsReport eval_model(const StagingModel& model, const std::vector<EpochRecord>& records) {
  std::vector<SleepStage> truth;
  truth.reserve(records.size());
  for (const EpochRecord& r : records) truth.push_back(r.label);
  std::vector<SleepStage> preds =
      predict(records, model.encoder ? &*model.encoder : nullptr, model.head);
  return metrics_from_confusion(confusion(truth, preds));
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  MetricsReport mean;
  for (const MetricsReport& r : reports) {
    mean.overall_f1 += r.overall_f1;
    mean.accuracy += r.accuracy;
    for (std::size_t k = 0; k < kStageCount; ++k) {
      mean.per_stage_f1[k] += r.per_stage_f1[k];
      mean.degenerate[k] = mean.degenerate[k] || r.degenerate[k];
    }
    mean.n_epochs = r.n_epochs;
  }
  const double n = static_cast<double>(reports.size());
  mean.overall_f1 /= n;
  mean.accuracy /= n;
  for (std::size_t k = 0; k < kStageCount; ++k) mean.per_stage_f1[k] /= n;
  return mean;
}

int run_compare(const CompareArgs& a) {
  require_value(a.data_train, "--data-train");
  require_value(a.data_eval, "--data-eval");
  const std::vector<std::uint64_t> seeds = parse_seeds(a.seeds);
  std::vector<EpochRecord> train_records = read_dataset(a.data_train);
  std::vector<EpochRecord> eval_records = read_dataset(a.data_eval);
  const Tensor& first = train_records.front().signal;

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.optimizer = parse_optimizer(a.optimizer);
  cfg.validate();

  std::vector<MetricsReport> with_hass, without_hass;
  char line[160];
  for (std::uint64_t seed : seeds) {
    for (bool use_hass : {true, false}) {
      StagingModel model = init_model(first.extent(0), first.extent(1), first.extent(2),
                                      use_hass, parse_head(a.head), seed);
      TrainConfig run_cfg = cfg;
      run_cfg.seed = seed;
      TrainResult tr =
          train(train_records, run_cfg, model.encoder ? &*model.encoder : nullptr, model.head);
      MetricsReport rep = eval_model(model, eval_records);
      (use_hass ? with_hass : without_hass).push_back(rep);
      std::snprintf(line, sizeof(line),
                    "seed %llu  hass=%s  final train acc %.4f  eval acc %.4f  eval F1 %.4f",
                    static_cast<unsigned long long>(seed), use_hass ? "yes" : "no",
                    tr.final_train_accuracy, rep.accuracy, rep.overall_f1);
      std::cout << line << "\n";
    }
  }

  const MetricsReport mean_yes = mean_report(with_hass);
  const MetricsReport mean_no = mean_report(without_hass);
  std::cout << render_report({{a.head, true, mean_yes}, {a.head, false, mean_no}});

  double delta_sum = 0.0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const double delta = with_hass[i].overall_f1 - without_hass[i].overall_f1;
    delta_sum += delta;
    std::snprintf(line, sizeof(line), "seed %llu: macro-F1 delta (HASS - none) = %+.4f",
                  static_cast<unsigned long long>(seeds[i]), delta);
    std::cout << line << "\n";
  }
  std::snprintf(line, sizeof(line), "mean macro-F1 delta (HASS - none) = %+.4f",
                delta_sum / static_cast<double>(seeds.size()));
  std::cout << line << "\n";

  if (!a.emit_report.empty()) {
    std::ofstream out(a.emit_report, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + a.emit_report + "' for writing");
    out << emit_report_kv(mean_yes, "compare.hass");
    out << emit_report_kv(mean_no, "compare.nohass");
    char kv[96];
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      std::snprintf(kv, sizeof(kv), "compare.delta.seed%llu.overall_f1 = %.17g\n",
                    static_cast<unsigned long long>(seeds[i]),
                    with_hass[i].overall_f1 - without_hass[i].overall_f1);
      out << kv;
    }
    std::snprintf(kv, sizeof(kv), "compare.delta.mean.overall_f1 = %.17g\n",
                  delta_sum / static_cast<double>(seeds.size()));
    out << kv;
    std::cout << "wrote report " << a.emit_report << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid-attention sleep staging: data synthesis, training, evaluation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic HEEG1 dataset");
  synth->add_option("--out", synth_args.out, "output HEEG1 path (required)");
  synth->add_option("--channels", synth_args.channels, "EEG channels (C)")->capture_default_str();
  synth->add_option("--timesteps", synth_args.timesteps, "samples per record (T)")
      ->capture_default_str();
  synth->add_option("--count", synth_args.count, "number of records")->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "generator seed")->capture_default_str();
  synth->add_option("--spatial", synth_args.spatial, "cross-channel pattern strength in [0,1]")
      ->capture_default_str();
  synth->add_option("--temporal", synth_args.temporal, "temporal template amplitude in [0,1]")
      ->capture_default_str();
  synth->add_option("--noise", synth_args.noise, "white noise standard deviation")
      ->capture_default_str();
  synth->add_option("--balance", synth_args.balance, "five class probabilities, comma separated")
      ->capture_default_str();
  attach_config_file(synth);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a staging model on a HEEG1 dataset");
  train_cmd->add_option("--data", train_args.data, "training HEEG1 path (required)");
  train_cmd->add_option("--hass", train_args.hass, "use the hybrid-attention encoder")
      ->check(CLI::IsMember({"yes", "no"}))
      ->capture_default_str();
  train_cmd->add_option("--head", train_args.head, "classifier head")
      ->check(CLI::IsMember({"linear", "tinyconv"}))
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_args.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--lr", train_args.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--seed", train_args.seed, "run seed")->capture_default_str();
  train_cmd->add_option("--out-model", train_args.out_model, "output HASSPRM model path");
  train_cmd->add_option("--batch-size", train_args.batch_size, "mini-batch size")
      ->capture_default_str();
  train_cmd->add_option("--optimizer", train_args.optimizer, "optimizer")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  train_cmd->add_option("--beta1", train_args.beta1, "adam beta1")->capture_default_str();
  train_cmd->add_option("--beta2", train_args.beta2, "adam beta2")->capture_default_str();
  train_cmd->add_option("--adam-eps", train_args.adam_eps, "adam epsilon")->capture_default_str();
  attach_config_file(train_cmd);

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a model on a HEEG1 dataset");
  eval_cmd->add_option("--data", eval_args.data, "evaluation HEEG1 path (required)");
  eval_cmd->add_option("--model", eval_args.model, "HASSPRM model path (required)");
  eval_cmd->add_option("--emit-report", eval_args.emit_report,
                       "write machine-readable metrics to this path");
  attach_config_file(eval_cmd);

  GradcheckArgs grad_args;
  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "verify encoder+head gradients against finite differences");
  grad_cmd->add_option("--channels", grad_args.channels, "channels (C)")->capture_default_str();
  grad_cmd->add_option("--timesteps", grad_args.timesteps, "timesteps (T)")->capture_default_str();
  grad_cmd->add_option("--heads", grad_args.heads, "attention heads for both blocks")
      ->capture_default_str();
  grad_cmd->add_option("--seed", grad_args.seed, "run seed")->capture_default_str();
  grad_cmd->add_option("--tolerance", grad_args.tolerance, "max relative error allowed")
      ->capture_default_str();
  attach_config_file(grad_cmd);

  CompareArgs cmp_args;
  CLI::App* cmp_cmd = app.add_subcommand(
      "compare", "train with and without the encoder per seed and report paired metrics");
  cmp_cmd->add_option("--data-train", cmp_args.data_train, "training HEEG1 path (required)");
  cmp_cmd->add_option("--data-eval", cmp_args.data_eval, "evaluation HEEG1 path (required)");
  cmp_cmd->add_option("--head", cmp_args.head, "classifier head")
      ->check(CLI::IsMember({"linear", "tinyconv"}))
      ->capture_default_str();
  cmp_cmd->add_option("--seeds", cmp_args.seeds, "comma-separated run seeds")
      ->capture_default_str();
  cmp_cmd->add_option("--epochs", cmp_args.epochs, "training epochs per run")
      ->capture_default_str();
  cmp_cmd->add_option("--lr", cmp_args.lr, "learning rate")->capture_default_str();
  cmp_cmd->add_option("--batch-size", cmp_args.batch_size, "mini-batch size")
      ->capture_default_str();
  cmp_cmd->add_option("--optimizer", cmp_args.optimizer, "optimizer")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  cmp_cmd->add_option("--emit-report", cmp_args.emit_report,
                      "write machine-readable metrics to this path");
  attach_config_file(cmp_cmd);

  CLI::App* commands[] = {synth, train_cmd, eval_cmd, grad_cmd, cmp_cmd};
  try {
    app.parse(argc, argv);
    for (CLI::App* cmd : commands) {
      if (cmd->parsed()) apply_config_file(*cmd);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (synth->parsed()) {
      echo_config(*synth);
      return run_synth(synth_args);
    }
    if (train_cmd->parsed()) {
      echo_config(*train_cmd);
      return run_train(train_args);
    }
    if (eval_cmd->parsed()) {
      echo_config(*eval_cmd);
      return run_eval(eval_args);
    }
    if (grad_cmd->parsed()) {
      echo_config(*grad_cmd);
      return run_gradcheck(grad_args);
    }
    if (cmp_cmd->parsed()) {
      echo_config(*cmp_cmd);
      return run_compare(cmp_args);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const TrainDivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
