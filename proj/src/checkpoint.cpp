#include "bvq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "bvq/errors.hpp"

namespace bvq {

namespace {

constexpr char kMagic[4] = {'B', 'V', 'Q', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }
  void bytes(const void* data, std::size_t n) { raw(data, n); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buffer_; }

 private:
  std::vector<char> buffer_;
  void raw(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof(v));
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof(v));
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof(v));
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void bytes(void* out, std::size_t n) { raw(out, n); }
  std::size_t offset() const { return offset_; }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t offset_ = 0;
  void raw(void* out, std::size_t n) {
    if (offset_ + n > bytes_.size()) {
      throw ParseError(path_ + ": truncated checkpoint, need " + std::to_string(n) +
                       " bytes at offset " + std::to_string(offset_) + ", file has " +
                       std::to_string(bytes_.size()));
    }
    std::memcpy(out, bytes_.data() + offset_, n);
    offset_ += n;
  }
};

}  // namespace

std::uint64_t fnv1a_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const std::string& path, const Model& model,
                     const CheckpointInfo& info) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.str(std::string(model.name()));
  w.u64(info.config_hash);
  w.u32(info.epochs);
  w.u32(static_cast<std::uint32_t>(model.param_layer_count()));
  for (std::size_t l = 0; l < model.param_layer_count(); ++l) {
    const QuantizedTensor& q = model.quantized_weights(l);
    w.u32(static_cast<std::uint32_t>(l));
    w.u32(static_cast<std::uint32_t>(q.shape().size()));
    for (std::size_t d : q.shape()) w.u64(d);
    w.f64(q.params().scale);
    w.u64(q.size());
    w.bytes(q.codes().data(), q.size());
    const Tensor bias = model.bias(l);
    w.u64(bias.size());
    for (double v : bias.values()) w.f64(v);
  }

  // Write whole or not at all.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot open '" + tmp + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) {
      std::filesystem::remove(tmp);
      throw ParseError("short write to '" + tmp + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError(path + ": bad magic at offset 0, expected \"BVQ1\"");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw ParseError(path + ": unsupported checkpoint version " +
                     std::to_string(version));
  }

  LoadedCheckpoint loaded;
  loaded.info.model_name = r.str();
  loaded.info.config_hash = r.u64();
  loaded.info.epochs = r.u32();

  const ModelKind kind = model_kind_from_name(loaded.info.model_name);
  loaded.model = Model::build(kind, /*seed=*/0);

  const std::uint32_t layer_count = r.u32();
  if (layer_count != loaded.model.param_layer_count()) {
    throw ParseError(path + ": " + std::to_string(layer_count) +
                     " parameter layers, model '" + loaded.info.model_name +
                     "' expects " + std::to_string(loaded.model.param_layer_count()));
  }
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint32_t layer_id = r.u32();
    if (layer_id != l) {
      throw ParseError(path + ": layer section " + std::to_string(l) +
                       " claims id " + std::to_string(layer_id));
    }
    const std::uint32_t ndims = r.u32();
    Shape shape(ndims);
    for (auto& d : shape) d = r.u64();
    const double scale = r.f64();
    const std::uint64_t code_count = r.u64();
    if (code_count != shape_size(shape)) {
      throw ParseError(path + ": layer " + std::to_string(l) + " has " +
                       std::to_string(code_count) + " codes for shape " +
                       shape_to_string(shape));
    }
    std::vector<std::int8_t> codes(code_count);
    r.bytes(codes.data(), code_count);
    loaded.model.set_quantized_weights(
        l, QuantizedTensor(std::move(shape), std::move(codes), QuantParams{scale, 8}));

    const std::uint64_t bias_count = r.u64();
    std::vector<double> bias(bias_count);
    for (auto& v : bias) v = r.f64();
    loaded.model.set_bias_values(l, bias);
  }
  return loaded;
}

}  // namespace bvq
