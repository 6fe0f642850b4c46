#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "gcnkit/tensor.hpp"

namespace gcnkit {

using NamedTensor = std::pair<std::string, Tensor>;

inline constexpr char kTensorFileMagic[4] = {'G', 'C', 'N', 'T'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

// Flat little-endian container:
//   "GCNT" | u32 version | u32 count |
//   count x { u32 name_len | name bytes (UTF-8) | u32 n,c,h,w | f32 data... }
void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

}  // namespace gcnkit
