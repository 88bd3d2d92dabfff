#pragma once

#include <span>

#include "bvq/dataset.hpp"
#include "bvq/model.hpp"
#include "bvq/tensor.hpp"
#include "bvq/tensor_ops.hpp"

namespace bvq {

/// Fraction of samples whose argmax logit equals the label; argmax ties
/// break toward the lowest class index. Empty dataset throws ContractError.
double accuracy(const Model& model, const LabeledDataset& data);

/// Mean cross-entropy of the model on the dataset (evaluation only).
double mean_loss(const Model& model, const LabeledDataset& data);

/// Mean over samples of (p_top1 - p_top2) / ||x||_2 on softmax outputs,
/// where top1/top2 are the two highest-probability classes per sample.
/// Zero-norm inputs throw ContractError.
double confidence_gap_robustness(const Model& model, const LabeledDataset& data);

/// Loss, accuracy and gap robustness from a single evaluation pass.
struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  double gap_robustness = 0.0;
};
EvalSummary evaluate_summary(const Model& model, const LabeledDataset& data);

/// Differentiable confidence-gap robustness of a batch. The top-1/top-2
/// class indices are taken from the current forward pass and held fixed
/// during differentiation; inv_norms carries 1/||x||_2 per row.
Tensor confidence_gap_robustness_node(const Model& model, const Tensor& batch,
                                      std::span<const double> inv_norms);

struct DeepFoolConfig {
  int max_iter = 50;
  double overshoot = 0.02;
};

/// Outcome of a minimal-perturbation search for one input.
struct PerturbationResult {
  Tensor perturbation;  // same shape as the input
  int iterations = 0;
  bool succeeded = false;
  int new_label = -1;
};

/// Iterative linearization toward the nearest decision boundary: at each
/// step picks the class minimizing |f_k| / ||w_k||_2 over logit differences
/// and steps by (|f_k| / ||w_k||^2) * w_k. On a label change the accumulated
/// perturbation is scaled by (1 + overshoot) and re-verified with a fresh
/// forward pass. Exhausting max_iter or an all-zero gradient yields a
/// failure result, not an exception.
PerturbationResult deepfool(const Model& model, const Tensor& input,
                            const DeepFoolConfig& config = {});

struct EmpiricalRobustness {
  double value = 0.0;  // mean ||r|| / ||x|| over successful samples
  std::size_t successes = 0;
  std::size_t failures = 0;
};

/// Aggregates deepfool over a dataset. Zero successes throw MetricError
/// suggesting a larger max_iter.
EmpiricalRobustness empirical_robustness(const Model& model,
                                         const LabeledDataset& data,
                                         const DeepFoolConfig& config = {});

/// Argmax with ties broken toward the lowest index.
std::size_t argmax_row(std::span<const double> row);

}  // namespace bvq
