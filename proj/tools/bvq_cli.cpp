// Command-line front end: train a baseline, protect it with adversarial
// training, run the stealthy bit-flip search, and evaluate checkpoints.
// Exit codes: 0 success, 1 operational failure, 2 configuration error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bvq/attack.hpp"
#include "bvq/checkpoint.hpp"
#include "bvq/config.hpp"
#include "bvq/data_io.hpp"
#include "bvq/errors.hpp"
#include "bvq/metrics.hpp"
#include "bvq/model.hpp"
#include "bvq/reports.hpp"
#include "bvq/rng.hpp"
#include "bvq/training.hpp"

namespace {

using namespace bvq;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::int64_t> seed;
  std::string checkpoint;
  std::optional<std::size_t> samples;
};

struct DataSplits {
  LabeledDataset train;
  LabeledDataset test;
};

DataSplits load_data(const ExperimentConfig& cfg) {
  DataSplits splits;
  switch (cfg.data.source) {
    case DataSource::SyntheticDigits: {
      LabeledDataset all = synthetic_digits(cfg.data.train_count + cfg.data.test_count,
                                            derive_seed(cfg.seed, "data"));
      splits.train = all.take(0, cfg.data.train_count);
      splits.test = all.take(cfg.data.train_count, cfg.data.test_count);
      break;
    }
    case DataSource::SyntheticBlobs: {
      const std::size_t per_class =
          (cfg.data.train_count + cfg.data.test_count + cfg.data.classes - 1) /
          cfg.data.classes;
      LabeledDataset all = synthetic_blobs(cfg.data.classes, per_class,
                                           cfg.data.feature_dim, cfg.data.spread,
                                           derive_seed(cfg.seed, "data"));
      splits.train = all.take(0, cfg.data.train_count);
      splits.test = all.take(cfg.data.train_count,
                             std::min(cfg.data.test_count, all.size() - cfg.data.train_count));
      break;
    }
    case DataSource::Idx: {
      splits.train = load_idx_dataset(cfg.data.train_images, cfg.data.train_labels,
                                      Split::Train);
      splits.test = load_idx_dataset(cfg.data.test_images, cfg.data.test_labels,
                                     Split::Test);
      if (splits.train.size() > cfg.data.train_count) {
        splits.train = splits.train.take(0, cfg.data.train_count);
      }
      if (splits.test.size() > cfg.data.test_count) {
        splits.test = splits.test.take(0, cfg.data.test_count);
      }
      break;
    }
  }
  splits.train.split = Split::Train;
  splits.test.split = Split::Test;
  return splits;
}

std::string joined(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "'");
}

nlohmann::json summary_base(const ExperimentConfig& cfg) {
  return {{"model", std::string(model_kind_name(cfg.model))}, {"seed", cfg.seed}};
}

DeepFoolConfig deepfool_config(const ExperimentConfig& cfg) {
  return {cfg.eval.deepfool_max_iter, cfg.eval.deepfool_overshoot};
}

double checked_empirical(const Model& model, const LabeledDataset& subset,
                         const DeepFoolConfig& df) {
  try {
    return empirical_robustness(model, subset, df).value;
  } catch (const MetricError&) {
    return 0.0;
  }
}

int cmd_train(const CommonArgs& args) {
  const ExperimentConfig cfg = ExperimentConfig::load(
      args.config_path,
      args.seed ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(*args.seed))
                : std::nullopt);
  ensure_out_dir(args.out_dir);
  const DataSplits data = load_data(cfg);

  Model model = Model::build(cfg.model, cfg.seed);
  const std::vector<EpochStats> curve = train(model, data.train, cfg.train);

  CheckpointInfo info;
  info.model_name = std::string(model.name());
  info.config_hash = cfg.config_hash;
  info.epochs = static_cast<std::uint32_t>(cfg.train.epochs);
  save_checkpoint(joined(args.out_dir, "original.bvq"), model, info);
  write_file_atomic(joined(args.out_dir, "train_curve.csv"), training_curve_csv(curve));

  const EvalSummary test_eval = evaluate_summary(model, data.test);
  nlohmann::json summary = summary_base(cfg);
  summary["checkpoint"] = "original.bvq";
  summary["epochs"] = cfg.train.epochs;
  summary["test_accuracy"] = test_eval.accuracy;
  summary["test_loss"] = test_eval.loss;
  summary["test_gap_robustness"] = test_eval.gap_robustness;
  write_file_atomic(joined(args.out_dir, "train_summary.json"), summary.dump(2) + "\n");

  std::printf("trained %s: test accuracy %.4f, gap robustness %.6f\n",
              std::string(model.name()).c_str(), test_eval.accuracy,
              test_eval.gap_robustness);
  return 0;
}

int cmd_protect(const CommonArgs& args) {
  const ExperimentConfig cfg = ExperimentConfig::load(
      args.config_path,
      args.seed ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(*args.seed))
                : std::nullopt);
  ensure_out_dir(args.out_dir);
  const DataSplits data = load_data(cfg);

  LoadedCheckpoint base = load_checkpoint(args.checkpoint);
  if (base.model.kind() != cfg.model) {
    throw ConfigError("checkpoint '" + args.checkpoint + "' holds " +
                      std::string(base.model.name()) + ", config expects " +
                      std::string(model_kind_name(cfg.model)));
  }

  const DeepFoolConfig df = deepfool_config(cfg);
  const std::size_t probe_count = std::min(cfg.eval.deepfool_samples, data.test.size());
  const LabeledDataset probe = data.test.take(0, probe_count);
  const double base_robustness = checked_empirical(base.model, probe, df);
  const EvalSummary base_eval = evaluate_summary(base.model, data.test);

  Model model = base.model;
  const std::vector<EpochStats> curve = adversarial_train(model, data.train, cfg.protect);

  CheckpointInfo info;
  info.model_name = std::string(model.name());
  info.config_hash = cfg.config_hash;
  info.epochs = base.info.epochs + static_cast<std::uint32_t>(cfg.protect.epochs);
  save_checkpoint(joined(args.out_dir, "protected.bvq"), model, info);
  write_file_atomic(joined(args.out_dir, "protect_curve.csv"), training_curve_csv(curve));

  const double protected_robustness = checked_empirical(model, probe, df);
  const EvalSummary protected_eval = evaluate_summary(model, data.test);

  nlohmann::json summary = summary_base(cfg);
  summary["checkpoint"] = "protected.bvq";
  summary["base_checkpoint"] = args.checkpoint;
  summary["epochs"] = cfg.protect.epochs;
  summary["base_accuracy"] = base_eval.accuracy;
  summary["protected_accuracy"] = protected_eval.accuracy;
  summary["base_empirical_robustness"] = base_robustness;
  summary["protected_empirical_robustness"] = protected_robustness;
  summary["base_gap_robustness"] = base_eval.gap_robustness;
  summary["protected_gap_robustness"] = protected_eval.gap_robustness;
  write_file_atomic(joined(args.out_dir, "protect_summary.json"), summary.dump(2) + "\n");

  std::printf("protected %s: accuracy %.4f -> %.4f, empirical robustness %.4f -> %.4f\n",
              std::string(model.name()).c_str(), base_eval.accuracy,
              protected_eval.accuracy, base_robustness, protected_robustness);
  return 0;
}

int cmd_attack(const CommonArgs& args) {
  const ExperimentConfig cfg = ExperimentConfig::load(
      args.config_path,
      args.seed ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(*args.seed))
                : std::nullopt);
  ensure_out_dir(args.out_dir);
  const DataSplits data = load_data(cfg);

  LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
  if (loaded.model.kind() != cfg.model) {
    throw ConfigError("checkpoint '" + args.checkpoint + "' holds " +
                      std::string(loaded.model.name()) + ", config expects " +
                      std::string(model_kind_name(cfg.model)));
  }

  AttackEvalConfig eval_config;
  eval_config.deepfool = deepfool_config(cfg);
  eval_config.deepfool_samples = cfg.eval.deepfool_samples;
  auto [report, attacked] =
      iterative_bit_search(loaded.model, data.train, data.test, cfg.attack, eval_config);

  CheckpointInfo info;
  info.model_name = std::string(attacked.name());
  info.config_hash = cfg.config_hash;
  info.epochs = loaded.info.epochs;
  save_checkpoint(joined(args.out_dir, "attacked.bvq"), attacked, info);
  write_file_atomic(joined(args.out_dir, "flips.txt"), flip_list_text(report.committed_flips));
  write_file_atomic(joined(args.out_dir, "attack_report.json"),
                    attack_report_json(report, std::string(attacked.name()), cfg.seed,
                                       cfg.attack.delta, attacked.total_weight_count()));
  write_file_atomic(joined(args.out_dir, "attack_report.txt"),
                    attack_report_text(report, std::string(attacked.name()),
                                       attacked.total_weight_count()));

  std::printf("attack on %s: %zu flips (%s), robustness %.4f -> %.4f, accuracy %.4f -> %.4f, %s\n",
              std::string(attacked.name()).c_str(), report.committed_flips.size(),
              format_flip_percentage(report.flip_percentage).c_str(),
              report.baseline.gap_robustness, report.final.gap_robustness,
              report.baseline.accuracy, report.final.accuracy,
              termination_reason_name(report.termination).c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  const ExperimentConfig cfg = ExperimentConfig::load(
      args.config_path,
      args.seed ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(*args.seed))
                : std::nullopt);
  ensure_out_dir(args.out_dir);
  const DataSplits data = load_data(cfg);

  LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
  const Model& model = loaded.model;
  const DeepFoolConfig df = deepfool_config(cfg);

  const EvalSummary summary = evaluate_summary(model, data.test);
  const std::size_t probe_count = std::min(cfg.eval.deepfool_samples, data.test.size());
  const LabeledDataset probe = data.test.take(0, probe_count);
  EmpiricalRobustness emp{};
  std::string emp_error;
  try {
    emp = empirical_robustness(model, probe, df);
  } catch (const MetricError& e) {
    emp_error = e.what();
  }

  nlohmann::json j = summary_base(cfg);
  j["checkpoint"] = args.checkpoint;
  j["accuracy"] = summary.accuracy;
  j["loss"] = summary.loss;
  j["gap_robustness"] = summary.gap_robustness;
  if (emp_error.empty()) {
    j["empirical_robustness"] = emp.value;
    j["deepfool_successes"] = emp.successes;
    j["deepfool_failures"] = emp.failures;
  } else {
    j["empirical_robustness_error"] = emp_error;
  }

  std::ostringstream text;
  char line[256];
  std::snprintf(line, sizeof(line), "Model: %s   Checkpoint: %s\n",
                std::string(model.name()).c_str(), args.checkpoint.c_str());
  text << line;
  std::snprintf(line, sizeof(line),
                "Accuracy (Clean Inputs): %.4f   Loss: %.6f   Robustness (gap): %.6f\n",
                summary.accuracy, summary.loss, summary.gap_robustness);
  text << line;
  if (emp_error.empty()) {
    std::snprintf(line, sizeof(line),
                  "Robustness (Crafted Inputs): %.4f   (%zu flipped, %zu resisted)\n",
                  emp.value, emp.successes, emp.failures);
    text << line;
  } else {
    text << "Robustness (Crafted Inputs): unavailable: " << emp_error << "\n";
  }

  const std::size_t per_sample =
      args.samples.value_or(cfg.eval.per_sample);
  if (per_sample > 0) {
    auto& rows = j["samples"] = nlohmann::json::array();
    text << "\nSample  P=pred  C=confidence  ||r||/||x||\n";
    const std::size_t count = std::min(per_sample, data.test.size());
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor x = data.test.sample(i);
      Shape batch_shape = x.shape();
      batch_shape.insert(batch_shape.begin(), 1);
      std::vector<double> flat(x.values().begin(), x.values().end());
      const Tensor logits = model.forward(Tensor::from_data(batch_shape, flat));
      std::vector<double> probs(logits.values().begin(), logits.values().end());
      double hi = probs[0];
      for (double v : probs) hi = std::max(hi, v);
      double total = 0.0;
      for (double& v : probs) {
        v = std::exp(v - hi);
        total += v;
      }
      for (double& v : probs) v /= total;
      const std::size_t pred = argmax_row(probs);

      PerturbationResult pert;
      {
        // deepfool needs gradients through the input
        pert = deepfool(model, x, df);
      }
      double rnorm = 0.0;
      for (double v : pert.perturbation.values()) rnorm += v * v;
      double xnorm = 0.0;
      for (double v : x.values()) xnorm += v * v;
      const double rel = xnorm > 0.0 ? std::sqrt(rnorm / xnorm) : 0.0;

      rows.push_back({{"index", i},
                      {"label", data.test.labels[i]},
                      {"predicted", pred},
                      {"confidence", probs[pred]},
                      {"perturbation_ratio", rel},
                      {"perturbed_label", pert.new_label},
                      {"succeeded", pert.succeeded}});
      std::snprintf(line, sizeof(line), "%-7zu P=%zu   C=%5.1f%%      %.4f\n", i, pred,
                    probs[pred] * 100.0, rel);
      text << line;
    }
  }

  write_file_atomic(joined(args.out_dir, "evaluate_report.json"), j.dump(2) + "\n");
  write_file_atomic(joined(args.out_dir, "evaluate_report.txt"), text.str());
  std::printf("%s", text.str().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bvq: bit-flip attack laboratory for quantized classifiers"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", args.config_path, "experiment config file")
        ->required();
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--seed", args.seed, "override the experiment seed");
    if (needs_checkpoint) {
      sub->add_option("--checkpoint", args.checkpoint, "input checkpoint")->required();
    }
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train the baseline model");
  add_common(train_cmd, false);
  CLI::App* protect_cmd =
      app.add_subcommand("protect", "adversarially train from a checkpoint");
  add_common(protect_cmd, true);
  CLI::App* attack_cmd =
      app.add_subcommand("attack", "run the stealthy bit-flip search");
  add_common(attack_cmd, true);
  CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(evaluate_cmd, true);
  std::size_t samples = 0;
  evaluate_cmd->add_option("--samples", samples, "per-sample report rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(args);
    if (protect_cmd->parsed()) return cmd_protect(args);
    if (attack_cmd->parsed()) return cmd_attack(args);
    if (evaluate_cmd->parsed()) {
      if (evaluate_cmd->count("--samples") > 0) args.samples = samples;
      return cmd_evaluate(args);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
