#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bvq/quantization.hpp"
#include "bvq/tensor.hpp"

namespace bvq {

enum class ModelKind { Mlp2, Lenet3, Lenet5 };

ModelKind model_kind_from_name(std::string_view name);  // ConfigError on unknown
std::string_view model_kind_name(ModelKind kind);

/// Classifier built from an ordered list of layers. Weights live as 8-bit
/// quantized tensors; the forward pass runs on their dequantized values,
/// which are kept as differentiable leaves so gradients land on them.
///
/// Parameter registry: parameterized layers (dense, conv) are numbered
/// 0..param_layer_count()-1 in network order, and BitLocation.layer_id
/// indexes that numbering with weight_index flat into the layer's codes.
/// The enumeration is stable across runs.
class Model {
 public:
  struct DenseSpec {
    std::size_t in = 0, out = 0;
  };
  struct ConvSpec {
    std::size_t out_ch = 0, in_ch = 0, kh = 0, kw = 0;
    std::size_t stride = 1, padding = 0;
  };
  struct Layer {
    enum class Kind { Dense, Conv, Relu, AvgPool2, Flatten };
    Kind kind = Kind::Flatten;
    DenseSpec dense;
    ConvSpec conv;
    int param_id = -1;  // registry index for Dense/Conv layers
  };

  /// Architecture is fixed by the kind; weights start uniform in
  /// +-sqrt(6 / (fan_in + fan_out)) and are immediately quantized. Biases
  /// start at zero and stay in real form.
  static Model build(ModelKind kind, std::uint64_t seed);

  /// Logits for a batch. Accepts [batch x features...] matching the
  /// per-sample input shape, or any layout with the right element count per
  /// sample (flattened by the leading Flatten layer where present).
  Tensor forward(const Tensor& batch) const;

  ModelKind kind() const { return kind_; }
  std::string_view name() const { return model_kind_name(kind_); }
  std::size_t class_count() const { return class_count_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t param_layer_count() const { return params_.size(); }
  const QuantizedTensor& quantized_weights(std::size_t layer_id) const;
  /// Dequantized weight leaf used by forward; gradients accumulate here.
  Tensor realized_weights(std::size_t layer_id) const;
  Tensor bias(std::size_t layer_id) const;
  /// Total quantized weight parameters across all layers (biases excluded).
  std::size_t total_weight_count() const;

  void set_quantized_weights(std::size_t layer_id, QuantizedTensor weights);
  void set_bias_values(std::size_t layer_id, std::span<const double> values);

  /// Toggles one stored weight bit and refreshes the dequantized leaf.
  void flip_bit(const BitLocation& loc);
  void apply_flips(std::span<const BitLocation> flips);

  /// Re-quantizes every layer from its realized (real-valued) weights, then
  /// snaps the realized values back to the dequantized grid.
  void requantize_from_realized();

  void zero_param_grads();
  /// Toggles requires_grad on every weight and bias leaf. Input-only
  /// gradient passes (perturbation search) switch this off to skip
  /// parameter gradient work.
  void set_param_grads_enabled(bool enabled);
  bool param_grads_enabled() const { return param_grads_enabled_; }

 private:
  struct ParamLayer {
    QuantizedTensor weights;
    Tensor realized;  // leaf, same shape as weights
    Tensor bias;      // leaf, real-valued
  };

  ModelKind kind_ = ModelKind::Mlp2;
  std::vector<Layer> layers_;
  std::vector<ParamLayer> params_;
  Shape input_shape_;
  std::size_t class_count_ = 0;
  bool param_grads_enabled_ = true;

  void check_layer_id(std::size_t layer_id) const;
  void refresh_realized(std::size_t layer_id);
  static std::size_t per_sample_of(const Tensor& x);
};

/// Convenience free function mirroring Model::flip_bit.
void flip_bit(Model& model, const BitLocation& loc);

/// Restores parameter gradient mode on scope exit.
class ParamGradGuard {
 public:
  ParamGradGuard(Model& model, bool enabled);
  ~ParamGradGuard();
  ParamGradGuard(const ParamGradGuard&) = delete;
  ParamGradGuard& operator=(const ParamGradGuard&) = delete;

 private:
  Model& model_;
  bool previous_;
};

}  // namespace bvq
