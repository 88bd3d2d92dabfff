#include "bvq/dataset.hpp"

#include <cmath>
#include <string>

#include "bvq/errors.hpp"

namespace bvq {

std::size_t LabeledDataset::features_per_sample() const {
  if (!inputs.defined() || inputs.shape().empty() || inputs.shape()[0] == 0) return 0;
  return inputs.size() / inputs.shape()[0];
}

Tensor LabeledDataset::sample(std::size_t index) const {
  if (index >= size()) {
    throw ContractError("sample index " + std::to_string(index) +
                        " out of range for " + std::to_string(size()) + " samples");
  }
  const std::size_t stride = features_per_sample();
  Shape per_sample(inputs.shape().begin() + 1, inputs.shape().end());
  const auto all = inputs.values();
  std::vector<double> data(all.begin() + static_cast<std::ptrdiff_t>(index * stride),
                           all.begin() + static_cast<std::ptrdiff_t>((index + 1) * stride));
  return Tensor::from_data(std::move(per_sample), std::move(data));
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.split = split;
  out.inputs = gather_batch(*this, indices);
  out.labels = gather_labels(*this, indices);
  return out;
}

LabeledDataset LabeledDataset::take(std::size_t start, std::size_t count) const {
  if (start + count > size()) {
    throw ContractError("take(" + std::to_string(start) + ", " +
                        std::to_string(count) + ") exceeds " +
                        std::to_string(size()) + " samples");
  }
  std::vector<std::size_t> indices(count);
  for (std::size_t i = 0; i < count; ++i) indices[i] = start + i;
  return subset(indices);
}

void LabeledDataset::validate(std::size_t class_count) const {
  if (!inputs.defined() || inputs.shape().empty()) {
    throw ValidationError("dataset has no input tensor");
  }
  if (inputs.shape()[0] != labels.size()) {
    throw ValidationError("dataset has " + std::to_string(inputs.shape()[0]) +
                          " inputs but " + std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " outside [0, " +
                            std::to_string(class_count) + ")");
    }
  }
}

Tensor gather_batch(const LabeledDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("gather_batch: empty index set");
  const std::size_t stride = data.features_per_sample();
  Shape shape = data.inputs.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * stride);
  const auto all = data.inputs.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t idx = indices[i];
    if (idx >= data.size()) {
      throw ContractError("gather_batch: index " + std::to_string(idx) +
                          " out of range");
    }
    std::copy(all.begin() + static_cast<std::ptrdiff_t>(idx * stride),
              all.begin() + static_cast<std::ptrdiff_t>((idx + 1) * stride),
              out.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return Tensor::from_data(std::move(shape), std::move(out));
}

std::vector<int> gather_labels(const LabeledDataset& data,
                               std::span<const std::size_t> indices) {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = data.labels[indices[i]];
  return out;
}

std::vector<double> sample_norms(const LabeledDataset& data) {
  const std::size_t stride = data.features_per_sample();
  const auto all = data.inputs.values();
  std::vector<double> norms(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < stride; ++j) {
      const double v = all[i * stride + j];
      acc += v * v;
    }
    norms[i] = std::sqrt(acc);
  }
  return norms;
}

}  // namespace bvq
