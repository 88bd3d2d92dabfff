#pragma once

#include <span>
#include <vector>

#include "bvq/tensor.hpp"

namespace bvq {

enum class Split { Train, Val, Test, Attack };

/// Inputs stacked along the leading dimension plus one integer label per
/// sample.
struct LabeledDataset {
  Tensor inputs;  // [count x features...] or [count x c x h x w]
  std::vector<int> labels;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  std::size_t features_per_sample() const;
  /// One input as a fresh tensor in per-sample shape.
  Tensor sample(std::size_t index) const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  LabeledDataset take(std::size_t start, std::size_t count) const;

  /// Checks label range and input/label count agreement.
  void validate(std::size_t class_count) const;
};

/// Stacks the selected samples into a batch tensor.
Tensor gather_batch(const LabeledDataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const LabeledDataset& data,
                               std::span<const std::size_t> indices);

/// Euclidean norm of each sample's input vector.
std::vector<double> sample_norms(const LabeledDataset& data);

}  // namespace bvq
