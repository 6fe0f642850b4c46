#include "gcnkit/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "gcnkit/error.hpp"

namespace gcnkit {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw InputError("tensor file truncated");
  }
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kTensorFileMagic, 4);
  put_u32(out, kTensorFileVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw InputError("failed writing tensor file");
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), kTensorFileMagic, 4) != 0) {
    throw InputError("not a GCNT tensor file (bad magic)");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kTensorFileVersion) {
    throw InputError("unsupported GCNT version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(in);
    if (len > (1u << 16)) throw InputError("tensor name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw InputError("tensor file truncated");
    Shape s;
    s.n = static_cast<int>(get_u32(in));
    s.c = static_cast<int>(get_u32(in));
    s.h = static_cast<int>(get_u32(in));
    s.w = static_cast<int>(get_u32(in));
    if (s.numel() > (std::size_t{1} << 32)) throw InputError("tensor too large: " + name);
    std::vector<float> data(s.numel());
    for (float& v : data) v = std::bit_cast<float>(get_u32(in));
    tensors.emplace_back(std::move(name), Tensor(s, std::move(data)));
  }
  return tensors;
}

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  write_tensors(out, tensors);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return read_tensors(in);
}

}  // namespace gcnkit
