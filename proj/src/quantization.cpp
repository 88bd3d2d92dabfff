#include "bvq/quantization.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "bvq/errors.hpp"

namespace bvq {

namespace {

void check_bit_index(int bit_index) {
  if (bit_index < 0 || bit_index > 7) {
    throw ContractError("bit index " + std::to_string(bit_index) +
                        " outside [0, 7]");
  }
}

}  // namespace

QuantizedTensor::QuantizedTensor(Shape shape, std::vector<std::int8_t> codes,
                                 QuantParams params)
    : shape_(std::move(shape)), codes_(std::move(codes)), params_(params) {
  if (shape_size(shape_) != codes_.size()) {
    throw DimensionError("quantized tensor: " + std::to_string(codes_.size()) +
                         " codes do not fill shape " + shape_to_string(shape_));
  }
  if (!(params_.scale > 0.0)) {
    throw ContractError("quantization scale must be positive");
  }
  if (params_.bit_width != 8) {
    throw ContractError("bit width is fixed at 8");
  }
}

void QuantizedTensor::flip_bit(std::size_t weight_index, int bit_index) {
  if (weight_index >= codes_.size()) {
    throw ContractError("weight index " + std::to_string(weight_index) +
                        " out of range for " + std::to_string(codes_.size()) +
                        " codes");
  }
  check_bit_index(bit_index);
  codes_[weight_index] = flip_code_bit(codes_[weight_index], bit_index);
}

QuantizedTensor quantize(const Tensor& weights) {
  const auto values = weights.values();
  double peak = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractError("quantize: non-finite weight");
    peak = std::max(peak, std::abs(v));
  }
  const double scale = peak > 0.0 ? peak / 127.0 : 1.0;
  std::vector<std::int8_t> codes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    // std::round rounds halves away from zero.
    double code = std::round(values[i] / scale);
    code = std::min(127.0, std::max(-128.0, code));
    codes[i] = static_cast<std::int8_t>(code);
  }
  return QuantizedTensor(weights.shape(), std::move(codes), QuantParams{scale, 8});
}

Tensor dequantize(const QuantizedTensor& q, bool requires_grad) {
  std::vector<double> data(q.size());
  const auto codes = q.codes();
  const double scale = q.params().scale;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = scale * static_cast<double>(codes[i]);
  }
  return Tensor::from_data(q.shape(), std::move(data), requires_grad);
}

std::array<std::uint8_t, 8> code_to_bits(int code) {
  if (code < -128 || code > 127) {
    throw ContractError("code " + std::to_string(code) + " outside [-128, 127]");
  }
  const auto raw = static_cast<std::uint8_t>(static_cast<std::int8_t>(code));
  std::array<std::uint8_t, 8> bits{};
  for (int i = 0; i < 8; ++i) bits[i] = (raw >> i) & 1u;
  return bits;
}

int bits_to_code(const std::array<std::uint8_t, 8>& bits) {
  std::uint8_t raw = 0;
  for (int i = 0; i < 8; ++i) {
    if (bits[static_cast<std::size_t>(i)] > 1u) {
      throw ContractError("bit values must be 0 or 1");
    }
    raw = static_cast<std::uint8_t>(raw | (bits[static_cast<std::size_t>(i)] << i));
  }
  return static_cast<int>(std::bit_cast<std::int8_t>(raw));
}

int code_bit(std::int8_t code, int bit_index) {
  check_bit_index(bit_index);
  return (std::bit_cast<std::uint8_t>(code) >> bit_index) & 1;
}

std::int8_t flip_code_bit(std::int8_t code, int bit_index) {
  check_bit_index(bit_index);
  const auto raw = static_cast<std::uint8_t>(std::bit_cast<std::uint8_t>(code) ^
                                             (1u << bit_index));
  return std::bit_cast<std::int8_t>(raw);
}

double bit_weight_derivative(const QuantParams& params, int bit_index) {
  check_bit_index(bit_index);
  const double place = static_cast<double>(1 << bit_index);
  return bit_index == 7 ? -params.scale * place : params.scale * place;
}

}  // namespace bvq
