#include "bvq/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "bvq/errors.hpp"

namespace bvq {

namespace {

constexpr std::size_t kEvalBatch = 256;

void check_nonempty(const LabeledDataset& data, const char* op) {
  if (data.size() == 0) throw ContractError(std::string(op) + ": empty dataset");
}

void softmax_inplace(std::span<double> row) {
  double hi = row[0];
  for (double v : row) hi = std::max(hi, v);
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - hi);
    total += v;
  }
  for (double& v : row) v /= total;
}

// Indices of the two largest entries, ties toward the lower index.
std::pair<std::size_t, std::size_t> top_two(std::span<const double> row) {
  std::size_t first = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[first]) first = j;
  }
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j == first) continue;
    if (row[j] > row[second]) second = j;
  }
  return {first, second};
}

}  // namespace

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

EvalSummary evaluate_summary(const Model& model, const LabeledDataset& data) {
  check_nonempty(data, "evaluate_summary");
  NoGradGuard no_grad;
  const std::size_t count = data.size();
  const std::size_t classes = model.class_count();
  const std::vector<double> norms = sample_norms(data);

  double loss = 0.0;
  double gap = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < count; start += kEvalBatch) {
    const std::size_t batch_size = std::min(kEvalBatch, count - start);
    indices.resize(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) indices[i] = start + i;
    const Tensor logits = model.forward(gather_batch(data, indices));
    auto rows = logits.values();
    std::vector<double> row(classes);
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(i * classes), classes,
                  row.begin());
      const int label = data.labels[start + i];
      if (argmax_row(row) == static_cast<std::size_t>(label)) ++correct;

      // Log-space loss term.
      double hi = row[0];
      for (double v : row) hi = std::max(hi, v);
      double total = 0.0;
      for (double v : row) total += std::exp(v - hi);
      loss -= row[static_cast<std::size_t>(label)] - hi - std::log(total);

      softmax_inplace(row);
      const auto [t1, t2] = top_two(row);
      const double norm = norms[start + i];
      if (norm <= 0.0) {
        throw ContractError("confidence_gap_robustness: zero-norm input at index " +
                            std::to_string(start + i));
      }
      gap += (row[t1] - row[t2]) / norm;
    }
  }
  EvalSummary out;
  out.loss = loss / static_cast<double>(count);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(count);
  out.gap_robustness = gap / static_cast<double>(count);
  return out;
}

double accuracy(const Model& model, const LabeledDataset& data) {
  check_nonempty(data, "accuracy");
  return evaluate_summary(model, data).accuracy;
}

double mean_loss(const Model& model, const LabeledDataset& data) {
  check_nonempty(data, "mean_loss");
  return evaluate_summary(model, data).loss;
}

double confidence_gap_robustness(const Model& model, const LabeledDataset& data) {
  check_nonempty(data, "confidence_gap_robustness");
  return evaluate_summary(model, data).gap_robustness;
}

Tensor confidence_gap_robustness_node(const Model& model, const Tensor& batch,
                                      std::span<const double> inv_norms) {
  const Tensor logits = model.forward(batch);
  const std::size_t rows = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  if (inv_norms.size() != rows) {
    throw DimensionError("confidence_gap_robustness_node: " +
                         std::to_string(inv_norms.size()) + " norms for " +
                         std::to_string(rows) + " rows");
  }
  std::vector<int> top1(rows);
  std::vector<int> top2(rows);
  std::vector<double> row(classes);
  const auto lv = logits.values();
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(lv.begin() + static_cast<std::ptrdiff_t>(i * classes), classes,
                row.begin());
    softmax_inplace(row);
    const auto [t1, t2] = top_two(row);
    top1[i] = static_cast<int>(t1);
    top2[i] = static_cast<int>(t2);
  }
  return confidence_gap_mean(logits, top1, top2, inv_norms);
}

PerturbationResult deepfool(const Model& model, const Tensor& input,
                            const DeepFoolConfig& config) {
  if (config.max_iter < 1) throw ContractError("deepfool: max_iter must be >= 1");
  const std::size_t features = input.size();
  const std::size_t classes = model.class_count();

  Shape batch_shape = input.shape();
  if (batch_shape.size() == model.input_shape().size()) {
    batch_shape.insert(batch_shape.begin(), 1);
  }

  auto predict = [&](std::span<const double> flat) {
    NoGradGuard no_grad;
    std::vector<double> data(flat.begin(), flat.end());
    const Tensor logits =
        model.forward(Tensor::from_data(batch_shape, std::move(data)));
    return argmax_row(logits.values());
  };

  const std::vector<double> origin(input.values().begin(), input.values().end());
  const std::size_t original_label = predict(origin);

  PerturbationResult result;
  std::vector<double> r_total(features, 0.0);
  // Small nudge past the boundary, as in common deepfool usage.
  constexpr double kBoundaryEps = 1e-4;

  ParamGradGuard params_off(const_cast<Model&>(model), false);
  int iter = 0;
  bool boundary_crossed = false;
  for (; iter < config.max_iter; ++iter) {
    std::vector<double> current(features);
    for (std::size_t i = 0; i < features; ++i) current[i] = origin[i] + r_total[i];
    Tensor x = Tensor::from_data(batch_shape, current, /*requires_grad=*/true);
    const Tensor logits = model.forward(x);
    const std::size_t label = argmax_row(logits.values());
    if (label != original_label) {
      boundary_crossed = true;
      break;
    }

    double best_ratio = 0.0;
    double best_step = 0.0;
    std::vector<double> best_dir;
    bool found = false;
    for (std::size_t k = 0; k < classes; ++k) {
      if (k == original_label) continue;
      x.zero_grad();
      Tensor diff = logit_margin(logits, 0, k, original_label);
      diff.backward();
      const auto g = x.grad();
      double norm2 = 0.0;
      for (double v : g) norm2 += v * v;
      if (norm2 <= 0.0) continue;  // no boundary information for this class
      const double fk = diff.item();
      const double norm = std::sqrt(norm2);
      const double ratio = std::abs(fk) / norm;
      if (!found || ratio < best_ratio) {
        found = true;
        best_ratio = ratio;
        best_step = (std::abs(fk) + kBoundaryEps) / norm2;
        best_dir.assign(g.begin(), g.end());
      }
    }
    if (!found) {
      // Gradient identically zero toward every class: no usable direction.
      result.iterations = iter;
      result.succeeded = false;
      result.new_label = static_cast<int>(original_label);
      result.perturbation = Tensor::from_data(input.shape(), std::move(r_total));
      return result;
    }
    for (std::size_t i = 0; i < features; ++i) r_total[i] += best_step * best_dir[i];
  }

  for (double& v : r_total) v *= 1.0 + config.overshoot;
  std::vector<double> final_point(features);
  for (std::size_t i = 0; i < features; ++i) final_point[i] = origin[i] + r_total[i];
  const std::size_t final_label = predict(final_point);

  result.iterations = iter;
  // Success requires both crossing within the budget and a fresh forward
  // pass confirming the flip at the overshot point.
  result.succeeded = boundary_crossed && final_label != original_label;
  result.new_label = static_cast<int>(final_label);
  result.perturbation = Tensor::from_data(input.shape(), std::move(r_total));
  return result;
}

EmpiricalRobustness empirical_robustness(const Model& model,
                                         const LabeledDataset& data,
                                         const DeepFoolConfig& config) {
  check_nonempty(data, "empirical_robustness");
  const std::vector<double> norms = sample_norms(data);
  EmpiricalRobustness out;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor x = data.sample(i);
    const PerturbationResult res = deepfool(model, x, config);
    if (!res.succeeded) {
      ++out.failures;
      continue;
    }
    double rnorm = 0.0;
    for (double v : res.perturbation.values()) rnorm += v * v;
    if (norms[i] <= 0.0) {
      throw ContractError("empirical_robustness: zero-norm input at index " +
                          std::to_string(i));
    }
    total += std::sqrt(rnorm) / norms[i];
    ++out.successes;
  }
  if (out.successes == 0) {
    throw MetricError(
        "empirical_robustness: no sample could be perturbed within max_iter=" +
        std::to_string(config.max_iter) + "; increase max_iter");
  }
  out.value = total / static_cast<double>(out.successes);
  return out;
}

}  // namespace bvq
