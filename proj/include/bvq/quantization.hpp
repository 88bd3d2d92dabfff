#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <vector>

#include "bvq/tensor.hpp"

namespace bvq {

/// Per-tensor symmetric fixed-point parameters. One integer step of a code
/// is worth `scale` weight units; codes are 8-bit two's complement.
struct QuantParams {
  double scale = 1.0;
  int bit_width = 8;
};

/// Identifies one flippable bit: a parameter layer, a flat index into that
/// layer's codes, and a bit position (bit 7 is the sign bit).
struct BitLocation {
  std::size_t layer_id = 0;
  std::size_t weight_index = 0;
  int bit_index = 0;

  auto operator<=>(const BitLocation&) const = default;
};

/// 8-bit two's-complement weight tensor: integer codes plus a positive
/// per-tensor scale.
class QuantizedTensor {
 public:
  QuantizedTensor() = default;
  QuantizedTensor(Shape shape, std::vector<std::int8_t> codes, QuantParams params);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return codes_.size(); }
  std::span<const std::int8_t> codes() const { return codes_; }
  std::span<std::int8_t> codes() { return codes_; }
  const QuantParams& params() const { return params_; }

  /// Toggles exactly one bit of exactly one code. Applying the same flip
  /// twice restores the original state bit-exactly.
  void flip_bit(std::size_t weight_index, int bit_index);

 private:
  Shape shape_;
  std::vector<std::int8_t> codes_;
  QuantParams params_;
};

/// Per-tensor symmetric quantization: scale = max(|w|) / 127 (scale = 1 when
/// all weights are zero); code = clamp(round(w / scale), -128, 127) with
/// halves rounded away from zero.
QuantizedTensor quantize(const Tensor& weights);

/// w = scale * code elementwise.
Tensor dequantize(const QuantizedTensor& q, bool requires_grad = false);

/// Two's-complement bits of a code in [-128, 127], indexed by bit position
/// (bits[7] is the sign bit). bits_to_code inverts exactly.
std::array<std::uint8_t, 8> code_to_bits(int code);
int bits_to_code(const std::array<std::uint8_t, 8>& bits);

/// Bit `bit_index` of a stored code, as 0 or 1.
int code_bit(std::int8_t code, int bit_index);

std::int8_t flip_code_bit(std::int8_t code, int bit_index);

/// Weight change per unit of bit i: scale * 2^i for i in [0, 6] and
/// -scale * 2^7 for the sign bit.
double bit_weight_derivative(const QuantParams& params, int bit_index);

}  // namespace bvq
