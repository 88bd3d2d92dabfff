#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "bvq/dataset.hpp"
#include "bvq/tensor.hpp"

namespace bvq {

/// Parsed IDX header: 4-byte big-endian magic plus one big-endian 32-bit
/// size per dimension. Byte 2 of the magic is the element type (0x08 =
/// unsigned byte), byte 3 the dimension count.
struct IdxHeader {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
};

/// Loads an IDX image file (magic 0x00000803) as [count x 1 x rows x cols]
/// with pixels mapped byte/255 into [0, 1]. Malformed or truncated files
/// throw ParseError naming the byte offset.
Tensor load_idx_images(const std::string& path);

/// Loads an IDX label file (magic 0x00000801), one byte per label.
std::vector<int> load_idx_labels(const std::string& path);

/// Writes images (values in [0, 1], shape [count x 1 x rows x cols]) as an
/// IDX image file, quantizing pixels to bytes with round-to-nearest.
void save_idx_images(const std::string& path, const Tensor& images);

void save_idx_labels(const std::string& path, std::span<const int> labels);

/// Loads a paired image/label IDX file set; counts must agree.
LabeledDataset load_idx_dataset(const std::string& images_path,
                                const std::string& labels_path, Split split);

/// Gaussian clusters at seeded centers, features clamped to [0, 1].
/// Reproducible for a fixed seed.
LabeledDataset synthetic_blobs(std::size_t classes, std::size_t per_class,
                               std::size_t feature_dim, double spread,
                               std::uint64_t seed);

/// Deterministic 28x28 glyph images in 10 classes: seeded affine jitter,
/// brightness variation and pixel noise over fixed stroke templates. A
/// network-free stand-in with image-classification texture.
LabeledDataset synthetic_digits(std::size_t count, std::uint64_t seed,
                                double noise = 0.05);

}  // namespace bvq
