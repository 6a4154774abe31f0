#include "lively/nn/checkpoint.hpp"

#include "lively/binary_io.hpp"

#include <cstring>

namespace lively::nn {

namespace {
constexpr char kMagic[4] = {'L', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors) {
  io::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    require(name.size() <= 0xffff, Errc::BadRange, "tensor name too long");
    require(t.rank() <= 0xff, Errc::BadRange, "tensor rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values()) w.f32(v);
  }
  return std::move(w.buffer());
}

TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail(Errc::BadMagic, "not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kVersion) fail(Errc::VersionUnsupported, "checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = element_count(shape);
    r.need(n * 4);
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    out.insert_or_assign(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  io::write_file(path, encode_checkpoint(tensors));
}

TensorMap load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

void put_scalar(TensorMap& m, const std::string& name, double value) {
  m.insert_or_assign(name, Tensor<float>({1}, {static_cast<float>(value)}));
}

double get_scalar(const TensorMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end() || it->second.size() != 1) fail(Errc::BadIndex, "checkpoint lacks scalar " + name);
  return it->second[0];
}

double get_scalar(const TensorMap& m, const std::string& name, double fallback) {
  auto it = m.find(name);
  return (it == m.end() || it->second.size() != 1) ? fallback : static_cast<double>(it->second[0]);
}

}  // namespace lively::nn
