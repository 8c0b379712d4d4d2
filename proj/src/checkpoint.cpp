#include "ralb/checkpoint.hpp"

#include "ralb/binary_io.hpp"
#include "ralb/errors.hpp"

#include <fstream>

namespace ralb {

namespace {

std::vector<int*> config_fields(EncoderConfig& c) {
  return {&c.image_height, &c.image_width, &c.channels,  &c.patch,
          &c.patch_dim,    &c.vision_hidden, &c.max_tokens, &c.vocab_size,
          &c.token_dim,    &c.text_hidden, &c.embed_dim};
}

template <typename Tensors>
void write_tensors(std::ostream& out, const Tensors& tensors) {
  for (const Matrix* m : tensors)
    io::write_f32s(out, {m->data(), static_cast<std::size_t>(m->size())});
}

template <typename Tensors>
void read_tensors(std::istream& in, const Tensors& tensors) {
  for (Matrix* m : tensors) io::read_f32s(in, {m->data(), static_cast<std::size_t>(m->size())});
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write("RALB", 4);
  io::write_u32(out, kCheckpointVersion);
  EncoderConfig c = state.config;
  for (int* f : config_fields(c)) io::write_u32(out, static_cast<std::uint32_t>(*f));
  io::write_f32(out, state.temperature.log_tau());
  io::write_u32(out, state.has_snapshot() ? 1 : 0);
  io::write_u32(out, state.finetune_started ? 1 : 0);
  write_tensors(out, state.theta.tensors());
  write_tensors(out, state.phi.tensors());
  if (state.has_snapshot()) write_tensors(out, state.theta_orig->tensors());
  if (!out) throw DataError("error writing checkpoint: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path.string());
  io::expect_magic(in, "RALB", "checkpoint " + path.string());
  const auto version = io::read_u32(in);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  EncoderConfig c;
  for (int* f : config_fields(c)) *f = static_cast<int>(io::read_u32(in));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  // Shapes come from a zero-seeded init; values are overwritten below.
  ModelState s = init_model(c, 0);
  math::Temperature t;
  t.set_log_tau(io::read_f32(in));
  s.temperature = t;
  const bool has_orig = io::read_u32(in) != 0;
  s.finetune_started = io::read_u32(in) != 0;
  read_tensors(in, s.theta.tensors());
  read_tensors(in, s.phi.tensors());
  if (has_orig) {
    VisionParams orig = s.theta;
    read_tensors(in, orig.tensors());
    s.theta_orig = std::make_shared<const VisionParams>(std::move(orig));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
  return s;
}

}  // namespace ralb
