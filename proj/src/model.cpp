#include "bvq/model.hpp"

#include <cmath>

#include "bvq/errors.hpp"
#include "bvq/rng.hpp"
#include "bvq/tensor_ops.hpp"

namespace bvq {

ModelKind model_kind_from_name(std::string_view name) {
  if (name == "mlp2") return ModelKind::Mlp2;
  if (name == "lenet3") return ModelKind::Lenet3;
  if (name == "lenet5") return ModelKind::Lenet5;
  throw ConfigError("unknown model '" + std::string(name) +
                    "' (expected mlp2, lenet3 or lenet5)");
}

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Mlp2:
      return "mlp2";
    case ModelKind::Lenet3:
      return "lenet3";
    case ModelKind::Lenet5:
      return "lenet5";
  }
  return "?";
}

namespace {

Model::Layer dense_layer(std::size_t in, std::size_t out) {
  Model::Layer layer;
  layer.kind = Model::Layer::Kind::Dense;
  layer.dense = {in, out};
  return layer;
}

Model::Layer conv_layer(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                        std::size_t stride, std::size_t padding) {
  Model::Layer layer;
  layer.kind = Model::Layer::Kind::Conv;
  layer.conv = {out_ch, in_ch, k, k, stride, padding};
  return layer;
}

Model::Layer plain_layer(Model::Layer::Kind kind) {
  Model::Layer layer;
  layer.kind = kind;
  return layer;
}

}  // namespace

Model Model::build(ModelKind kind, std::uint64_t seed) {
  Model model;
  model.kind_ = kind;
  model.class_count_ = 10;
  switch (kind) {
    case ModelKind::Mlp2:
      model.input_shape_ = {784};
      model.layers_ = {
          plain_layer(Layer::Kind::Flatten), dense_layer(784, 256),
          plain_layer(Layer::Kind::Relu),    dense_layer(256, 10),
      };
      break;
    case ModelKind::Lenet3:
      model.input_shape_ = {1, 28, 28};
      model.layers_ = {
          conv_layer(8, 1, 5, 1, 0),          plain_layer(Layer::Kind::Relu),
          plain_layer(Layer::Kind::AvgPool2), conv_layer(16, 8, 5, 1, 0),
          plain_layer(Layer::Kind::Relu),     plain_layer(Layer::Kind::AvgPool2),
          plain_layer(Layer::Kind::Flatten),  dense_layer(256, 10),
      };
      break;
    case ModelKind::Lenet5:
      model.input_shape_ = {1, 28, 28};
      model.layers_ = {
          conv_layer(6, 1, 5, 1, 2),          plain_layer(Layer::Kind::Relu),
          plain_layer(Layer::Kind::AvgPool2), conv_layer(16, 6, 5, 1, 0),
          plain_layer(Layer::Kind::Relu),     plain_layer(Layer::Kind::AvgPool2),
          plain_layer(Layer::Kind::Flatten),  dense_layer(400, 120),
          plain_layer(Layer::Kind::Relu),     dense_layer(120, 84),
          plain_layer(Layer::Kind::Relu),     dense_layer(84, 10),
      };
      break;
  }

  Rng rng(derive_seed(seed, "model-init"));
  for (auto& layer : model.layers_) {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    Shape weight_shape;
    Shape bias_shape;
    if (layer.kind == Layer::Kind::Dense) {
      fan_in = layer.dense.in;
      fan_out = layer.dense.out;
      weight_shape = {layer.dense.in, layer.dense.out};
      bias_shape = {layer.dense.out};
    } else if (layer.kind == Layer::Kind::Conv) {
      fan_in = layer.conv.in_ch * layer.conv.kh * layer.conv.kw;
      fan_out = layer.conv.out_ch * layer.conv.kh * layer.conv.kw;
      weight_shape = {layer.conv.out_ch, layer.conv.in_ch, layer.conv.kh,
                      layer.conv.kw};
      bias_shape = {layer.conv.out_ch};
    } else {
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> init(shape_size(weight_shape));
    for (double& v : init) v = rng.uniform(-limit, limit);

    ParamLayer param;
    param.weights = quantize(Tensor::from_data(weight_shape, std::move(init)));
    param.realized = dequantize(param.weights, /*requires_grad=*/true);
    param.bias = Tensor::zeros(bias_shape, /*requires_grad=*/true);
    layer.param_id = static_cast<int>(model.params_.size());
    model.params_.push_back(std::move(param));
  }
  return model;
}

Tensor Model::forward(const Tensor& batch) const {
  if (!batch.defined() || batch.shape().empty()) {
    throw DimensionError("forward: undefined or rank-0 batch");
  }
  const std::size_t batch_size = batch.shape()[0];
  if (batch_size == 0) throw DimensionError("forward: empty batch");
  const std::size_t per_sample = batch.size() / batch_size;
  if (per_sample != shape_size(input_shape_)) {
    throw DimensionError("forward: " + std::to_string(per_sample) +
                         " features per sample, model expects " +
                         shape_to_string(input_shape_));
  }

  // Normalize to the model's native input layout.
  Tensor x = batch;
  if (input_shape_.size() == 3) {
    Shape wanted = {batch_size, input_shape_[0], input_shape_[1], input_shape_[2]};
    if (x.shape() != wanted) x = reshape(x, wanted);
  }

  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& layer = layers_[li];
    try {
      switch (layer.kind) {
        case Layer::Kind::Dense: {
          const ParamLayer& p = params_[static_cast<std::size_t>(layer.param_id)];
          if (x.shape().size() != 2) x = reshape(x, {batch_size, per_sample_of(x)});
          x = add_row_bias(matmul(x, p.realized), p.bias);
          break;
        }
        case Layer::Kind::Conv: {
          const ParamLayer& p = params_[static_cast<std::size_t>(layer.param_id)];
          x = add_channel_bias(
              conv2d(x, p.realized, layer.conv.stride, layer.conv.padding), p.bias);
          break;
        }
        case Layer::Kind::Relu:
          x = relu(x);
          break;
        case Layer::Kind::AvgPool2:
          x = avg_pool2(x);
          break;
        case Layer::Kind::Flatten:
          x = reshape(x, {batch_size, per_sample_of(x)});
          break;
      }
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(li) + " of " +
                           std::string(name()) + ": " + e.what());
    }
  }
  if (x.shape().size() != 2 || x.shape()[1] != class_count_) {
    throw DimensionError("forward produced " + shape_to_string(x.shape()) +
                         ", expected [batch x " + std::to_string(class_count_) + "]");
  }
  return x;
}

std::size_t Model::per_sample_of(const Tensor& x) {
  return x.size() / x.shape()[0];
}

void Model::check_layer_id(std::size_t layer_id) const {
  if (layer_id >= params_.size()) {
    throw ContractError("parameter layer " + std::to_string(layer_id) +
                        " out of range (" + std::to_string(params_.size()) +
                        " layers)");
  }
}

const QuantizedTensor& Model::quantized_weights(std::size_t layer_id) const {
  check_layer_id(layer_id);
  return params_[layer_id].weights;
}

Tensor Model::realized_weights(std::size_t layer_id) const {
  check_layer_id(layer_id);
  return params_[layer_id].realized;
}

Tensor Model::bias(std::size_t layer_id) const {
  check_layer_id(layer_id);
  return params_[layer_id].bias;
}

std::size_t Model::total_weight_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.weights.size();
  return total;
}

void Model::set_quantized_weights(std::size_t layer_id, QuantizedTensor weights) {
  check_layer_id(layer_id);
  if (weights.shape() != params_[layer_id].weights.shape()) {
    throw DimensionError("layer " + std::to_string(layer_id) + " expects weights " +
                         shape_to_string(params_[layer_id].weights.shape()) +
                         ", got " + shape_to_string(weights.shape()));
  }
  params_[layer_id].weights = std::move(weights);
  refresh_realized(layer_id);
}

void Model::set_bias_values(std::size_t layer_id, std::span<const double> values) {
  check_layer_id(layer_id);
  Tensor& bias = params_[layer_id].bias;
  if (values.size() != bias.size()) {
    throw DimensionError("layer " + std::to_string(layer_id) + " expects " +
                         std::to_string(bias.size()) + " bias values, got " +
                         std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), bias.values().begin());
}

void Model::flip_bit(const BitLocation& loc) {
  check_layer_id(loc.layer_id);
  params_[loc.layer_id].weights.flip_bit(loc.weight_index, loc.bit_index);
  refresh_realized(loc.layer_id);
}

void Model::apply_flips(std::span<const BitLocation> flips) {
  for (const auto& loc : flips) {
    check_layer_id(loc.layer_id);
    params_[loc.layer_id].weights.flip_bit(loc.weight_index, loc.bit_index);
  }
  for (std::size_t l = 0; l < params_.size(); ++l) refresh_realized(l);
}

void Model::requantize_from_realized() {
  for (std::size_t l = 0; l < params_.size(); ++l) {
    params_[l].weights = quantize(params_[l].realized);
    refresh_realized(l);
  }
}

void Model::refresh_realized(std::size_t layer_id) {
  ParamLayer& p = params_[layer_id];
  const auto codes = p.weights.codes();
  const double scale = p.weights.params().scale;
  auto out = p.realized.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = scale * static_cast<double>(codes[i]);
  }
}

void Model::zero_param_grads() {
  for (auto& p : params_) {
    p.realized.zero_grad();
    p.bias.zero_grad();
  }
}

void Model::set_param_grads_enabled(bool enabled) {
  param_grads_enabled_ = enabled;
  for (auto& p : params_) {
    p.realized.set_requires_grad(enabled);
    p.bias.set_requires_grad(enabled);
  }
}

void flip_bit(Model& model, const BitLocation& loc) { model.flip_bit(loc); }

ParamGradGuard::ParamGradGuard(Model& model, bool enabled)
    : model_(model), previous_(model.param_grads_enabled()) {
  model_.set_param_grads_enabled(enabled);
}

ParamGradGuard::~ParamGradGuard() { model_.set_param_grads_enabled(previous_); }

}  // namespace bvq
