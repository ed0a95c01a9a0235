#include "crackseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "crackseg/crc32.hpp"
#include "crackseg/errors.hpp"

namespace crackseg {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'S', 'G'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw ValidationError("checkpoint truncated");
  T value;
  std::memcpy(&value, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string buf;
  buf.append(kMagic, sizeof kMagic);
  put<uint32_t>(buf, kVersion);
  put<uint64_t>(buf, ckpt.config_digest);
  put<int64_t>(buf, ckpt.epoch);
  put<uint64_t>(buf, ckpt.arrays.size());
  for (const auto& [name, tensor] : ckpt.arrays) {
    put<uint32_t>(buf, static_cast<uint32_t>(name.size()));
    buf.append(name);
    put<uint32_t>(buf, static_cast<uint32_t>(tensor.dim()));
    for (int64_t d = 0; d < tensor.dim(); ++d) put<int64_t>(buf, tensor.size(d));
    const size_t bytes = static_cast<size_t>(tensor.numel()) * sizeof(double);
    buf.append(reinterpret_cast<const char*>(tensor.data()), bytes);
  }
  put<uint32_t>(buf, crc32(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof kMagic + sizeof(uint32_t))
    throw ValidationError("checkpoint truncated: " + path);
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw ValidationError("not a checkpoint file: " + path);

  size_t crc_pos = buf.size() - sizeof(uint32_t);
  uint32_t stored;
  std::memcpy(&stored, buf.data() + crc_pos, sizeof stored);
  if (crc32(buf.data(), crc_pos) != stored)
    throw ValidationError("checkpoint integrity check failed: " + path);

  size_t pos = sizeof kMagic;
  const uint32_t version = take<uint32_t>(buf, pos);
  if (version != kVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config_digest = take<uint64_t>(buf, pos);
  ckpt.epoch = take<int64_t>(buf, pos);
  const uint64_t count = take<uint64_t>(buf, pos);
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = take<uint32_t>(buf, pos);
    if (pos + name_len > crc_pos) throw ValidationError("checkpoint truncated");
    std::string name(buf.data() + pos, name_len);
    pos += name_len;
    const uint32_t ndim = take<uint32_t>(buf, pos);
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(take<int64_t>(buf, pos));
      if (shape.back() < 0) throw ValidationError("checkpoint holds a negative dimension");
      numel *= shape.back();
    }
    Tensor tensor(shape);
    const size_t bytes = static_cast<size_t>(numel) * sizeof(double);
    if (pos + bytes > crc_pos) throw ValidationError("checkpoint truncated");
    std::memcpy(tensor.data(), buf.data() + pos, bytes);
    pos += bytes;
    ckpt.arrays.emplace_back(std::move(name), std::move(tensor));
  }
  if (pos != crc_pos) throw ValidationError("checkpoint holds trailing bytes");
  return ckpt;
}

}  // namespace crackseg
