#include "bvq/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bvq/errors.hpp"
#include "bvq/metrics.hpp"
#include "bvq/rng.hpp"
#include "bvq/tensor_ops.hpp"

namespace bvq {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (adv_fraction < 0.0 || adv_fraction > 1.0) {
    throw ConfigError("adv_fraction must lie in [0, 1]");
  }
  if (adv_fraction > 0.0) {
    if (adv_steps == 0) throw ConfigError("adv_steps must be positive");
    if (!(adv_step_size > 0.0)) throw ConfigError("adv_step_size must be positive");
    if (adv_epsilon < 0.0) throw ConfigError("adv_epsilon must be non-negative");
  }
  if (consistency_weight < 0.0) {
    throw ConfigError("consistency_weight must be non-negative");
  }
}

Tensor perturb_batch(const Model& model, const Tensor& batch,
                     std::span<const int> labels, std::size_t adv_count,
                     const TrainConfig& config) {
  if (adv_count == 0 || config.adv_epsilon == 0.0) return batch;
  const std::size_t batch_size = batch.shape()[0];
  const std::size_t stride = batch.size() / batch_size;
  adv_count = std::min(adv_count, batch_size);

  Shape adv_shape = batch.shape();
  adv_shape[0] = adv_count;
  const auto all = batch.values();
  std::vector<double> origin(all.begin(),
                             all.begin() + static_cast<std::ptrdiff_t>(adv_count * stride));
  std::vector<double> point = origin;
  const std::vector<int> adv_labels(labels.begin(),
                                    labels.begin() + static_cast<std::ptrdiff_t>(adv_count));

  ParamGradGuard params_off(const_cast<Model&>(model), false);
  for (std::size_t step = 0; step < config.adv_steps; ++step) {
    Tensor x = Tensor::from_data(adv_shape, point, /*requires_grad=*/true);
    Tensor loss = cross_entropy(model.forward(x), adv_labels);
    loss.backward();
    const auto g = x.grad();
    for (std::size_t i = 0; i < point.size(); ++i) {
      const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = point[i] + config.adv_step_size * sign;
      // Project into the epsilon ball, then into pixel range.
      v = std::clamp(v, origin[i] - config.adv_epsilon, origin[i] + config.adv_epsilon);
      point[i] = std::clamp(v, 0.0, 1.0);
    }
  }

  std::vector<double> mixed(all.begin(), all.end());
  std::copy(point.begin(), point.end(), mixed.begin());
  return Tensor::from_data(batch.shape(), std::move(mixed));
}

namespace {

std::vector<EpochStats> run_training(Model& model, const LabeledDataset& data,
                                     const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw TrainingError("training dataset is empty");
  data.validate(model.class_count());

  Rng rng(derive_seed(config.seed, "train"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0u);

  // Fixed subset for the per-epoch curve.
  const std::size_t probe_count = std::min<std::size_t>(data.size(), 1000);
  const LabeledDataset probe = data.take(0, probe_count);

  std::vector<EpochStats> stats;
  stats.reserve(config.epochs);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.size(); start += config.batch_size) {
      const std::size_t batch_size = std::min(config.batch_size, data.size() - start);
      std::span<const std::size_t> idx(order.data() + start, batch_size);
      Tensor batch = gather_batch(data, idx);
      const std::vector<int> labels = gather_labels(data, idx);

      const std::size_t adv_count = static_cast<std::size_t>(
          std::llround(config.adv_fraction * static_cast<double>(batch_size)));
      Tensor clean;
      if (adv_count > 0) {
        clean = batch;
        batch = perturb_batch(model, batch, labels, adv_count, config);
        model.zero_param_grads();
      }

      Tensor loss = cross_entropy(model.forward(batch), labels);
      if (config.consistency_weight > 0.0 && adv_count > 0) {
        // Divergence between the clean and perturbed output distributions
        // of the replaced samples: KL(p_clean || p_adv) composed from
        // differentiable primitives.
        Shape adv_shape = clean.shape();
        adv_shape[0] = adv_count;
        const std::size_t stride = clean.size() / clean.shape()[0];
        auto head = [&](const Tensor& t) {
          const auto v = t.values();
          return Tensor::from_data(
              adv_shape,
              std::vector<double>(
                  v.begin(), v.begin() + static_cast<std::ptrdiff_t>(adv_count * stride)));
        };
        Tensor clean_logits = model.forward(head(clean));
        Tensor adv_logits = model.forward(head(batch));
        Tensor p_clean = softmax(clean_logits);
        Tensor kl = mul(p_clean, sub(log_softmax(clean_logits), log_softmax(adv_logits)));
        loss = add(loss, scale(sum(kl), config.consistency_weight /
                                            static_cast<double>(adv_count)));
      }

      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value;
      ++batches;

      model.zero_param_grads();
      loss.backward();
      for (std::size_t l = 0; l < model.param_layer_count(); ++l) {
        Tensor weights = model.realized_weights(l);
        Tensor bias = model.bias(l);
        auto wv = weights.values();
        auto wg = weights.grad();
        for (std::size_t i = 0; i < wv.size(); ++i) {
          wv[i] -= config.learning_rate * wg[i];
        }
        auto bv = bias.values();
        auto bg = bias.grad();
        for (std::size_t i = 0; i < bv.size(); ++i) {
          bv[i] -= config.learning_rate * bg[i];
        }
      }
      model.zero_param_grads();
    }
    model.requantize_from_realized();

    const EvalSummary probe_eval = evaluate_summary(model, probe);
    stats.push_back({epoch, loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)),
                     probe_eval.accuracy, probe_eval.gap_robustness});
  }
  return stats;
}

}  // namespace

std::vector<EpochStats> train(Model& model, const LabeledDataset& data,
                              const TrainConfig& config) {
  if (config.adv_fraction != 0.0) {
    throw ConfigError("train expects adv_fraction == 0; use adversarial_train");
  }
  return run_training(model, data, config);
}

std::vector<EpochStats> adversarial_train(Model& model, const LabeledDataset& data,
                                          const TrainConfig& config) {
  return run_training(model, data, config);
}

}  // namespace bvq
