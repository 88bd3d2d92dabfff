#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bvq/dataset.hpp"
#include "bvq/metrics.hpp"
#include "bvq/model.hpp"
#include "bvq/quantization.hpp"

namespace bvq {

/// Per-weight gradients of the robustness objective and the loss, expanded
/// to per-bit values on demand: the gradient with respect to bit i of a
/// weight is the weight gradient times bit_weight_derivative(i).
class BitGradients {
 public:
  BitGradients() = default;

  std::size_t layer_count() const { return rho_.size(); }
  std::span<const double> rho_by_weight(std::size_t layer_id) const;
  std::span<const double> loss_by_weight(std::size_t layer_id) const;

  double d_rho(const BitLocation& loc) const;
  double d_loss(const BitLocation& loc) const;

  void push_layer(std::vector<double> rho, std::vector<double> loss, double scale);

 private:
  std::vector<std::vector<double>> rho_;
  std::vector<std::vector<double>> loss_;
  std::vector<QuantParams> params_;
  void check_layer(std::size_t layer_id) const;
};

enum class RankingRule {
  RhoMagnitude,   // order candidates by |d_rho| (implemented)
  CombinedScore,  // reserved: combined robustness/loss score
};

struct AttackConfig {
  std::size_t top_n = 10;        // candidates per layer per iteration
  double delta = 0.1;            // max tolerated cumulative loss increase
  double target_drop = 0.3;      // desired relative robustness reduction
  std::size_t max_iterations = 40;
  std::size_t attack_batch = 256;  // samples for gradient estimation
  std::size_t eval_batch = 512;    // held-out samples for accept/reject
  std::uint64_t seed = 0;
  RankingRule ranking = RankingRule::RhoMagnitude;

  void validate() const;
};

enum class TerminationReason {
  TargetReached,
  DeltaExceeded,
  MaxIterations,
  NoCandidates,
};

std::string termination_reason_name(TerminationReason reason);

struct IterationRecord {
  std::size_t iteration = 0;   // 1-based
  std::size_t layer_id = 0;    // layer whose flips were committed
  std::size_t flips = 0;       // flips committed this iteration
  double robustness = 0.0;     // gap robustness on the evaluation split
  double accuracy = 0.0;
  double loss = 0.0;
};

struct AttackMetrics {
  double accuracy = 0.0;
  double gap_robustness = 0.0;
  double empirical_robustness = 0.0;
  double loss = 0.0;
};

struct AttackReport {
  std::vector<BitLocation> committed_flips;
  std::vector<IterationRecord> trajectory;
  AttackMetrics baseline;
  AttackMetrics final;
  /// committed flips / (8 * total weight count), as a fraction.
  double flip_percentage = 0.0;
  TerminationReason termination = TerminationReason::MaxIterations;
  double relative_robustness_drop = 0.0;
};

/// One robustness backward pass and one loss backward pass on the batch;
/// the resulting per-weight gradients expand to 8 bit gradients each.
/// Non-finite gradients raise AttackError naming the layer.
BitGradients compute_bit_gradients(Model& model, const LabeledDataset& attack_batch);

/// Flip decision for one bit given the gradient sign bits (1 = positive,
/// 0 = negative): m = NOT((b XOR sign_rho) OR (sign_rho XOR sign_loss)).
/// Flips only where the first-order prediction is that both the robustness
/// objective and the loss decrease.
int flip_mask(int bit, int sign_rho, int sign_loss);

/// Up to n flippable bits of one layer: bits with mask 1 and both gradients
/// nonzero, ordered by |d_rho| descending with ties broken by
/// (weight_index, bit_index) ascending.
std::vector<BitLocation> rank_layer_candidates(std::size_t layer_id,
                                               const BitGradients& grads,
                                               const Model& model, std::size_t n);

/// Sample cap used when the search evaluates empirical (perturbation-based)
/// robustness for the report's baseline and final metrics.
struct AttackEvalConfig {
  DeepFoolConfig deepfool;
  std::size_t deepfool_samples = 100;
};

/// Iterative cross-layer bit search: per iteration recomputes bit
/// gradients, tentatively applies each layer's top-n masked flips, measures
/// robustness and loss on the evaluation split, reverts, then commits the
/// single layer with the largest measured robustness drop whose cumulative
/// loss increase stays below delta. Stops at the target drop, when no layer
/// satisfies delta, when no candidates exist, or at max_iterations.
std::pair<AttackReport, Model> iterative_bit_search(const Model& model,
                                                    const LabeledDataset& attack_data,
                                                    const LabeledDataset& eval_data,
                                                    const AttackConfig& config,
                                                    const AttackEvalConfig& eval = {});

}  // namespace bvq
