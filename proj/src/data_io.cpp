#include "bvq/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bvq/errors.hpp"
#include "bvq/rng.hpp"

namespace bvq {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw ParseError(path + ": truncated header, need 4 bytes at offset " +
                     std::to_string(offset) + ", file has " +
                     std::to_string(bytes.size()));
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t value) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(value >> 24),
                                  static_cast<unsigned char>(value >> 16),
                                  static_cast<unsigned char>(value >> 8),
                                  static_cast<unsigned char>(value)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

struct ParsedIdx {
  IdxHeader header;
  std::size_t payload_offset = 0;
  std::vector<unsigned char> bytes;
};

ParsedIdx parse_idx(const std::string& path, std::uint32_t expected_magic) {
  ParsedIdx parsed;
  parsed.bytes = read_file(path);
  const auto& bytes = parsed.bytes;
  parsed.header.magic = read_be32(bytes, 0, path);
  if (parsed.header.magic != expected_magic) {
    char want[16], got[16];
    std::snprintf(want, sizeof(want), "0x%08x", expected_magic);
    std::snprintf(got, sizeof(got), "0x%08x", parsed.header.magic);
    throw ParseError(path + ": bad magic at offset 0, expected " + want +
                     ", got " + got);
  }
  const std::size_t ndims = parsed.header.magic & 0xffu;
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::uint32_t dim = read_be32(bytes, 4 + 4 * d, path);
    parsed.header.dims.push_back(dim);
    total *= dim;
  }
  parsed.payload_offset = 4 + 4 * ndims;
  const std::size_t available = bytes.size() - parsed.payload_offset;
  if (available != total) {
    throw ParseError(path + ": payload at offset " +
                     std::to_string(parsed.payload_offset) + " should be " +
                     std::to_string(total) + " bytes, file has " +
                     std::to_string(available));
  }
  return parsed;
}

}  // namespace

Tensor load_idx_images(const std::string& path) {
  ParsedIdx parsed = parse_idx(path, kImageMagic);
  const std::size_t count = parsed.header.dims[0];
  const std::size_t rows = parsed.header.dims[1];
  const std::size_t cols = parsed.header.dims[2];
  std::vector<double> pixels(count * rows * cols);
  const unsigned char* payload = parsed.bytes.data() + parsed.payload_offset;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>(payload[i]) / 255.0;
  }
  return Tensor::from_data({count, 1, rows, cols}, std::move(pixels));
}

std::vector<int> load_idx_labels(const std::string& path) {
  ParsedIdx parsed = parse_idx(path, kLabelMagic);
  const std::size_t count = parsed.header.dims[0];
  std::vector<int> labels(count);
  const unsigned char* payload = parsed.bytes.data() + parsed.payload_offset;
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(payload[i]);
  return labels;
}

void save_idx_images(const std::string& path, const Tensor& images) {
  if (images.shape().size() != 4 || images.shape()[1] != 1) {
    throw DimensionError("save_idx_images expects [count x 1 x rows x cols], got " +
                         shape_to_string(images.shape()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.shape()[0]));
  write_be32(out, static_cast<std::uint32_t>(images.shape()[2]));
  write_be32(out, static_cast<std::uint32_t>(images.shape()[3]));
  std::vector<unsigned char> payload(images.size());
  const auto values = images.values();
  for (std::size_t i = 0; i < payload.size(); ++i) {
    const double scaled = std::round(values[i] * 255.0);
    payload[i] = static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0));
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw ParseError("short write to '" + path + "'");
}

void save_idx_labels(const std::string& path, std::span<const int> labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  std::vector<unsigned char> payload(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 255) {
      throw ContractError("label " + std::to_string(labels[i]) +
                          " not representable as a byte");
    }
    payload[i] = static_cast<unsigned char>(labels[i]);
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw ParseError("short write to '" + path + "'");
}

LabeledDataset load_idx_dataset(const std::string& images_path,
                                const std::string& labels_path, Split split) {
  LabeledDataset data;
  data.inputs = load_idx_images(images_path);
  data.labels = load_idx_labels(labels_path);
  data.split = split;
  if (data.inputs.shape()[0] != data.labels.size()) {
    throw ValidationError("'" + images_path + "' has " +
                          std::to_string(data.inputs.shape()[0]) + " images but '" +
                          labels_path + "' has " + std::to_string(data.labels.size()) +
                          " labels");
  }
  return data;
}

LabeledDataset synthetic_blobs(std::size_t classes, std::size_t per_class,
                               std::size_t feature_dim, double spread,
                               std::uint64_t seed) {
  if (classes < 2) throw ContractError("synthetic_blobs requires at least 2 classes");
  Rng rng(derive_seed(seed, "blobs"));
  std::vector<std::vector<double>> centers(classes, std::vector<double>(feature_dim));
  for (auto& center : centers) {
    for (double& c : center) c = rng.uniform(0.2, 0.8);
  }
  const std::size_t count = classes * per_class;
  std::vector<double> inputs(count * feature_dim);
  std::vector<int> labels(count);
  for (std::size_t cls = 0; cls < classes; ++cls) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t row = cls * per_class + s;
      labels[row] = static_cast<int>(cls);
      for (std::size_t f = 0; f < feature_dim; ++f) {
        const double v = centers[cls][f] + spread * rng.gaussian();
        inputs[row * feature_dim + f] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  // Mix classes so contiguous batches are balanced.
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order);

  LabeledDataset data;
  std::vector<double> mixed(count * feature_dim);
  std::vector<int> mixed_labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(order[i] * feature_dim),
                feature_dim,
                mixed.begin() + static_cast<std::ptrdiff_t>(i * feature_dim));
    mixed_labels[i] = labels[order[i]];
  }
  data.inputs = Tensor::from_data({count, feature_dim}, std::move(mixed));
  data.labels = std::move(mixed_labels);
  return data;
}

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

// Stroke templates in a unit box, y growing downward.
std::vector<std::vector<Segment>> glyph_strokes() {
  auto ring = [](double cx, double cy, double rx, double ry, int n) {
    std::vector<Segment> segs;
    for (int i = 0; i < n; ++i) {
      const double a0 = 2.0 * M_PI * i / n;
      const double a1 = 2.0 * M_PI * (i + 1) / n;
      segs.push_back({cx + rx * std::cos(a0), cy + ry * std::sin(a0),
                      cx + rx * std::cos(a1), cy + ry * std::sin(a1)});
    }
    return segs;
  };
  auto path = [](std::initializer_list<std::pair<double, double>> pts) {
    std::vector<Segment> segs;
    const auto* begin = pts.begin();
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      segs.push_back({begin[i].first, begin[i].second, begin[i + 1].first,
                      begin[i + 1].second});
    }
    return segs;
  };
  auto join = [](std::vector<Segment> a, const std::vector<Segment>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  std::vector<std::vector<Segment>> glyphs(10);
  glyphs[0] = ring(0.5, 0.5, 0.26, 0.38, 16);
  glyphs[1] = path({{0.35, 0.26}, {0.52, 0.1}, {0.52, 0.9}});
  glyphs[2] = path({{0.26, 0.3}, {0.33, 0.14}, {0.5, 0.1}, {0.67, 0.15},
                    {0.73, 0.3}, {0.62, 0.5}, {0.26, 0.88}, {0.75, 0.88}});
  glyphs[3] = path({{0.28, 0.16}, {0.5, 0.09}, {0.69, 0.2}, {0.69, 0.36},
                    {0.5, 0.48}, {0.7, 0.6}, {0.7, 0.78}, {0.5, 0.9}, {0.27, 0.83}});
  glyphs[4] = path({{0.64, 0.9}, {0.64, 0.1}, {0.22, 0.62}, {0.8, 0.62}});
  glyphs[5] = path({{0.72, 0.11}, {0.32, 0.11}, {0.29, 0.46}, {0.55, 0.42},
                    {0.71, 0.55}, {0.71, 0.74}, {0.53, 0.89}, {0.28, 0.83}});
  glyphs[6] = join(path({{0.66, 0.12}, {0.42, 0.34}, {0.31, 0.6}}),
                   ring(0.5, 0.68, 0.2, 0.2, 12));
  glyphs[7] = path({{0.25, 0.11}, {0.75, 0.11}, {0.42, 0.9}});
  glyphs[8] = join(ring(0.5, 0.3, 0.19, 0.19, 12), ring(0.5, 0.69, 0.22, 0.21, 12));
  glyphs[9] = join(ring(0.52, 0.32, 0.2, 0.2, 12), path({{0.72, 0.34}, {0.66, 0.9}}));
  return glyphs;
}

double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((px - s.x0) * dx + (py - s.y0) * dy) / len2, 0.0, 1.0);
  }
  const double qx = s.x0 + t * dx - px;
  const double qy = s.y0 + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

}  // namespace

LabeledDataset synthetic_digits(std::size_t count, std::uint64_t seed, double noise) {
  static const std::vector<std::vector<Segment>> glyphs = glyph_strokes();
  constexpr std::size_t kSide = 28;
  Rng rng(derive_seed(seed, "digits"));

  std::vector<double> inputs(count * kSide * kSide, 0.0);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int digit = static_cast<int>(i % 10);
    labels[i] = digit;
    const auto& strokes = glyphs[static_cast<std::size_t>(digit)];

    const double angle = rng.uniform(-0.2, 0.2);
    const double scale = rng.uniform(0.85, 1.15);
    const double shear = rng.uniform(-0.12, 0.12);
    const double dx = rng.uniform(-0.09, 0.09);
    const double dy = rng.uniform(-0.09, 0.09);
    const double brightness = rng.uniform(0.75, 1.0);
    const double thickness = rng.uniform(0.045, 0.065);

    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    double* img = inputs.data() + i * kSide * kSide;
    for (std::size_t py = 0; py < kSide; ++py) {
      for (std::size_t px = 0; px < kSide; ++px) {
        // Map the pixel center back into glyph coordinates.
        const double ux = (static_cast<double>(px) + 0.5) / kSide;
        const double uy = (static_cast<double>(py) + 0.5) / kSide;
        double gx = (ux - 0.5 - dx) / scale;
        double gy = (uy - 0.5 - dy) / scale;
        const double rx = ca * gx + sa * gy;
        const double ry = -sa * gx + ca * gy;
        gx = rx - shear * ry + 0.5;
        gy = ry + 0.5;
        double best = 1e9;
        for (const auto& s : strokes) best = std::min(best, segment_distance(gx, gy, s));
        const double ink = std::clamp((thickness - best) / 0.03 + 1.0, 0.0, 1.0);
        double v = brightness * ink + noise * rng.gaussian();
        img[py * kSide + px] = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  // Interleaved labels above are already balanced; shuffle anyway so splits
  // taken by range stay unbiased.
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order);
  std::vector<double> mixed(inputs.size());
  std::vector<int> mixed_labels(count);
  const std::size_t stride = kSide * kSide;
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(order[i] * stride), stride,
                mixed.begin() + static_cast<std::ptrdiff_t>(i * stride));
    mixed_labels[i] = labels[order[i]];
  }

  LabeledDataset data;
  data.inputs = Tensor::from_data({count, 1, kSide, kSide}, std::move(mixed));
  data.labels = std::move(mixed_labels);
  return data;
}

}  // namespace bvq
