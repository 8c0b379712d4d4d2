#pragma once

// Raw tensor file: "RTNS" | ndims (u32 LE) | dims (u32 LE each) | values (f32 LE, row-major).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ralb {

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

void write_raw_tensor(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims,
                      std::span<const float> values);
RawTensor read_raw_tensor(const std::filesystem::path& path);

}  // namespace ralb
