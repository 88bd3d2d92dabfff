#include "bvq/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bvq/errors.hpp"
#include "bvq/rng.hpp"
#include "bvq/tensor_ops.hpp"

namespace bvq {

void BitGradients::check_layer(std::size_t layer_id) const {
  if (layer_id >= rho_.size()) {
    throw ContractError("bit gradients: layer " + std::to_string(layer_id) +
                        " out of range");
  }
}

std::span<const double> BitGradients::rho_by_weight(std::size_t layer_id) const {
  check_layer(layer_id);
  return rho_[layer_id];
}

std::span<const double> BitGradients::loss_by_weight(std::size_t layer_id) const {
  check_layer(layer_id);
  return loss_[layer_id];
}

double BitGradients::d_rho(const BitLocation& loc) const {
  check_layer(loc.layer_id);
  return rho_[loc.layer_id][loc.weight_index] *
         bit_weight_derivative(params_[loc.layer_id], loc.bit_index);
}

double BitGradients::d_loss(const BitLocation& loc) const {
  check_layer(loc.layer_id);
  return loss_[loc.layer_id][loc.weight_index] *
         bit_weight_derivative(params_[loc.layer_id], loc.bit_index);
}

void BitGradients::push_layer(std::vector<double> rho, std::vector<double> loss,
                              double scale) {
  rho_.push_back(std::move(rho));
  loss_.push_back(std::move(loss));
  params_.push_back(QuantParams{scale, 8});
}

void AttackConfig::validate() const {
  if (top_n < 1) throw ConfigError("attack n must be >= 1");
  if (!(delta > 0.0)) throw ConfigError("attack delta must be positive");
  if (target_drop < 0.0 || target_drop > 1.0) {
    throw ConfigError("target_drop must lie in [0, 1]");
  }
  if (attack_batch == 0 || eval_batch == 0) {
    throw ConfigError("attack_batch and eval_batch must be positive");
  }
}

std::string termination_reason_name(TerminationReason reason) {
  switch (reason) {
    case TerminationReason::TargetReached:
      return "target_reached";
    case TerminationReason::DeltaExceeded:
      return "delta_exceeded";
    case TerminationReason::MaxIterations:
      return "max_iterations";
    case TerminationReason::NoCandidates:
      return "no_candidates";
  }
  return "?";
}

int flip_mask(int bit, int sign_rho, int sign_loss) {
  for (int v : {bit, sign_rho, sign_loss}) {
    if (v != 0 && v != 1) throw ContractError("flip_mask arguments must be 0 or 1");
  }
  return !((bit ^ sign_rho) | (sign_rho ^ sign_loss)) ? 1 : 0;
}

BitGradients compute_bit_gradients(Model& model, const LabeledDataset& attack_batch) {
  if (attack_batch.size() == 0) {
    throw ContractError("compute_bit_gradients: empty batch");
  }
  const std::vector<double> norms = sample_norms(attack_batch);
  std::vector<double> inv_norms(norms.size());
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (norms[i] <= 0.0) {
      throw ContractError("compute_bit_gradients: zero-norm input at index " +
                          std::to_string(i));
    }
    inv_norms[i] = 1.0 / norms[i];
  }

  auto harvest = [&](std::vector<std::vector<double>>& out) {
    out.clear();
    for (std::size_t l = 0; l < model.param_layer_count(); ++l) {
      const auto g = model.realized_weights(l).grad();
      for (double v : g) {
        if (!std::isfinite(v)) {
          throw AttackError("non-finite weight gradient in layer " +
                            std::to_string(l));
        }
      }
      out.emplace_back(g.begin(), g.end());
    }
  };

  // One backward pass per objective.
  model.zero_param_grads();
  const Tensor logits_input = attack_batch.inputs;
  Tensor rho = confidence_gap_robustness_node(model, logits_input, inv_norms);
  rho.backward();
  std::vector<std::vector<double>> rho_grads;
  harvest(rho_grads);

  model.zero_param_grads();
  Tensor loss = cross_entropy(model.forward(logits_input), attack_batch.labels);
  loss.backward();
  std::vector<std::vector<double>> loss_grads;
  harvest(loss_grads);
  model.zero_param_grads();

  BitGradients grads;
  for (std::size_t l = 0; l < model.param_layer_count(); ++l) {
    grads.push_layer(std::move(rho_grads[l]), std::move(loss_grads[l]),
                     model.quantized_weights(l).params().scale);
  }
  return grads;
}

std::vector<BitLocation> rank_layer_candidates(std::size_t layer_id,
                                               const BitGradients& grads,
                                               const Model& model, std::size_t n) {
  const QuantizedTensor& weights = model.quantized_weights(layer_id);
  const auto rho = grads.rho_by_weight(layer_id);
  const auto loss = grads.loss_by_weight(layer_id);
  const QuantParams params = weights.params();

  struct Scored {
    double magnitude;
    BitLocation loc;
  };
  std::vector<Scored> eligible;
  const auto codes = weights.codes();
  for (std::size_t w = 0; w < codes.size(); ++w) {
    const double g_rho = rho[w];
    const double g_loss = loss[w];
    // Zero gradient in either objective gives no first-order evidence.
    if (g_rho == 0.0 || g_loss == 0.0) continue;
    for (int bit = 0; bit < 8; ++bit) {
      const double place = bit_weight_derivative(params, bit);
      const double d_rho = g_rho * place;
      const double d_loss = g_loss * place;
      const int sign_rho = d_rho > 0.0 ? 1 : 0;
      const int sign_loss = d_loss > 0.0 ? 1 : 0;
      const int bit_value = code_bit(codes[w], bit);
      if (flip_mask(bit_value, sign_rho, sign_loss) == 1) {
        eligible.push_back({std::abs(d_rho), BitLocation{layer_id, w, bit}});
      }
    }
  }
  std::sort(eligible.begin(), eligible.end(), [](const Scored& a, const Scored& b) {
    if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
    return a.loc < b.loc;
  });
  if (eligible.size() > n) eligible.resize(n);
  std::vector<BitLocation> out;
  out.reserve(eligible.size());
  for (const auto& s : eligible) out.push_back(s.loc);
  return out;
}

namespace {

LabeledDataset draw_subset(const LabeledDataset& data, std::size_t count, Rng& rng) {
  count = std::min(count, data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order);
  order.resize(count);
  return data.subset(order);
}

AttackMetrics measure(const Model& model, const LabeledDataset& eval_subset,
                      const LabeledDataset& deepfool_subset,
                      const AttackEvalConfig& eval_config) {
  AttackMetrics m;
  const EvalSummary summary = evaluate_summary(model, eval_subset);
  m.accuracy = summary.accuracy;
  m.gap_robustness = summary.gap_robustness;
  m.loss = summary.loss;
  try {
    m.empirical_robustness =
        empirical_robustness(model, deepfool_subset, eval_config.deepfool).value;
  } catch (const MetricError&) {
    m.empirical_robustness = 0.0;  // reported as zero when nothing flips
  }
  return m;
}

}  // namespace

std::pair<AttackReport, Model> iterative_bit_search(const Model& model,
                                                    const LabeledDataset& attack_data,
                                                    const LabeledDataset& eval_data,
                                                    const AttackConfig& config,
                                                    const AttackEvalConfig& eval_config) {
  config.validate();
  if (config.ranking != RankingRule::RhoMagnitude) {
    throw ConfigError("ranking=combined is reserved and not implemented");
  }
  if (attack_data.size() == 0 || eval_data.size() == 0) {
    throw ContractError("iterative_bit_search: empty dataset");
  }

  Model attacked = model;
  Rng rng(derive_seed(config.seed, "attack"));
  // Both subsets are drawn once per run; gradients are never resampled.
  const LabeledDataset attack_subset = draw_subset(attack_data, config.attack_batch, rng);
  const LabeledDataset eval_subset = draw_subset(eval_data, config.eval_batch, rng);
  const LabeledDataset deepfool_subset =
      eval_subset.take(0, std::min(eval_config.deepfool_samples, eval_subset.size()));

  AttackReport report;
  report.baseline = measure(attacked, eval_subset, deepfool_subset, eval_config);
  const double rho0 = report.baseline.gap_robustness;
  const double loss0 = report.baseline.loss;
  if (rho0 <= 0.0) {
    throw AttackError("baseline robustness is zero; nothing to drop");
  }

  double rho_current = rho0;
  report.termination = TerminationReason::MaxIterations;

  if (config.target_drop == 0.0) {
    report.termination = TerminationReason::TargetReached;
  } else {
    for (std::size_t iteration = 1; iteration <= config.max_iterations; ++iteration) {
      const BitGradients grads = compute_bit_gradients(attacked, attack_subset);

      bool any_candidates = false;
      bool have_winner = false;
      std::size_t winner_layer = 0;
      EvalSummary winner_eval;
      std::vector<BitLocation> winner_flips;
      for (std::size_t layer = 0; layer < attacked.param_layer_count(); ++layer) {
        std::vector<BitLocation> flips =
            rank_layer_candidates(layer, grads, attacked, config.top_n);
        if (flips.empty()) continue;
        any_candidates = true;

        attacked.apply_flips(flips);
        const EvalSummary tentative = evaluate_summary(attacked, eval_subset);
        attacked.apply_flips(flips);  // flips are involutions; this reverts

        // Eq-style constraint: cumulative loss increase stays below delta.
        if (tentative.loss - loss0 >= config.delta) continue;
        if (!have_winner || tentative.gap_robustness < winner_eval.gap_robustness) {
          have_winner = true;
          winner_layer = layer;
          winner_eval = tentative;
          winner_flips = std::move(flips);
        }
      }

      if (!any_candidates) {
        report.termination = TerminationReason::NoCandidates;
        break;
      }
      if (!have_winner) {
        report.termination = TerminationReason::DeltaExceeded;
        break;
      }

      attacked.apply_flips(winner_flips);
      report.committed_flips.insert(report.committed_flips.end(), winner_flips.begin(),
                                    winner_flips.end());
      report.trajectory.push_back({iteration, winner_layer, winner_flips.size(),
                                   winner_eval.gap_robustness, winner_eval.accuracy,
                                   winner_eval.loss});
      rho_current = winner_eval.gap_robustness;

      if ((rho0 - rho_current) / rho0 >= config.target_drop) {
        report.termination = TerminationReason::TargetReached;
        break;
      }
    }
  }

  report.final = measure(attacked, eval_subset, deepfool_subset, eval_config);
  report.relative_robustness_drop =
      (rho0 - report.final.gap_robustness) / rho0;
  report.flip_percentage =
      static_cast<double>(report.committed_flips.size()) /
      (8.0 * static_cast<double>(attacked.total_weight_count()));
  return {std::move(report), std::move(attacked)};
}

}  // namespace bvq
