#include "ralb/raw_tensor.hpp"

#include "ralb/binary_io.hpp"
#include "ralb/errors.hpp"

#include <fstream>

namespace ralb {

namespace {

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

void write_raw_tensor(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims,
                      std::span<const float> values) {
  if (element_count(dims) != values.size())
    throw ArgumentError("raw tensor: dims do not match value count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write tensor: " + path.string());
  out.write("RTNS", 4);
  io::write_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) io::write_u32(out, d);
  io::write_f32s(out, values);
  if (!out) throw DataError("error writing tensor: " + path.string());
}

RawTensor read_raw_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read tensor: " + path.string());
  io::expect_magic(in, "RTNS", "tensor " + path.string());
  RawTensor t;
  const auto ndims = io::read_u32(in);
  if (ndims > 8) throw DataError("tensor: implausible rank in " + path.string());
  for (std::uint32_t i = 0; i < ndims; ++i) t.dims.push_back(io::read_u32(in));
  t.values.resize(element_count(t.dims));
  io::read_f32s(in, t.values);
  return t;
}

}  // namespace ralb
