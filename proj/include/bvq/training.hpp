#pragma once

#include <cstdint>
#include <vector>

#include "bvq/dataset.hpp"
#include "bvq/model.hpp"

namespace bvq {

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;

  /// Share of each batch replaced by adversarial examples.
  double adv_fraction = 0.0;
  /// Multi-step gradient-ascent knobs for training-time perturbations.
  double adv_step_size = 0.0;
  std::size_t adv_steps = 0;
  double adv_epsilon = 0.0;
  /// Weight of the output-consistency term between clean and perturbed
  /// views of the replaced samples (0 disables it).
  double consistency_weight = 0.0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;        // mean training cross-entropy over the epoch
  double accuracy = 0.0;    // on a fixed training subset
  double robustness = 0.0;  // confidence-gap robustness on the same subset
};

/// Plain mini-batch SGD on cross-entropy over dequantized weights, with
/// parameters re-quantized at each epoch end. Deterministic given the seed.
/// Requires adv_fraction == 0.
std::vector<EpochStats> train(Model& model, const LabeledDataset& data,
                              const TrainConfig& config);

/// Mixture adversarial training: each batch replaces an adv_fraction share
/// of inputs with multi-step L-inf gradient-ascent perturbations (projected
/// to the epsilon ball, pixels clamped to [0, 1]) before the SGD step.
std::vector<EpochStats> adversarial_train(Model& model, const LabeledDataset& data,
                                          const TrainConfig& config);

/// Training-time perturbation of a batch prefix (exposed for tests):
/// adv_count leading samples get adv_steps ascent steps of adv_step_size,
/// projected into the L-inf epsilon ball around the originals and clamped
/// to [0, 1].
Tensor perturb_batch(const Model& model, const Tensor& batch,
                     std::span<const int> labels, std::size_t adv_count,
                     const TrainConfig& config);

}  // namespace bvq
