#include "ralb/encoders.hpp"

#include "ralb/errors.hpp"
#include "ralb/rng.hpp"

#include <cmath>
#include <string>

namespace ralb {

double Rng::normal() {
  // Box-Muller on raw bits; u1 in (0, 1].
  const double u1 = 1.0 - uniform_double();
  const double u2 = uniform_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

void EncoderConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("encoder config: ") + what);
  };
  require(image_height >= 1 && image_width >= 1 && channels >= 1, "image dims must be >= 1");
  require(patch >= 1 && image_height % patch == 0 && image_width % patch == 0,
          "image dims must be multiples of the patch size");
  require(patch_dim >= 1 && vision_hidden >= 1 && token_dim >= 1 && text_hidden >= 1,
          "widths must be >= 1");
  require(max_tokens >= 2 && max_tokens <= static_cast<int>(kMaxTokens),
          "max_tokens must be in [2, 77]");
  require(vocab_size >= 3, "vocab_size must cover the special tokens");
  require(embed_dim >= 2, "embed_dim must be >= 2");
}

namespace {

std::vector<Matrix*> linear_refs(Linear& l) { return {&l.weight, &l.bias}; }

template <typename Params>
bool tensors_equal(const Params& a, const Params& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols()) return false;
    if (*ta[i] != *tb[i]) return false;
  }
  return true;
}

}  // namespace

std::vector<Matrix*> VisionParams::tensors() {
  std::vector<Matrix*> out;
  for (Linear* l : {&patch_embed, &hidden1, &hidden2, &proj})
    for (Matrix* m : linear_refs(*l)) out.push_back(m);
  return out;
}

std::vector<const Matrix*> VisionParams::tensors() const {
  auto mut = const_cast<VisionParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

bool VisionParams::operator==(const VisionParams& o) const { return tensors_equal(*this, o); }

std::vector<Matrix*> TextParams::tensors() {
  std::vector<Matrix*> out{&token_embed, &pos_embed};
  for (Linear* l : {&hidden1, &hidden2, &proj})
    for (Matrix* m : linear_refs(*l)) out.push_back(m);
  return out;
}

std::vector<const Matrix*> TextParams::tensors() const {
  auto mut = const_cast<TextParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

bool TextParams::operator==(const TextParams& o) const { return tensors_equal(*this, o); }

std::vector<std::string> vision_tensor_names() {
  return {"vision.patch_embed.weight", "vision.patch_embed.bias", "vision.hidden1.weight",
          "vision.hidden1.bias",       "vision.hidden2.weight",   "vision.hidden2.bias",
          "vision.proj.weight",        "vision.proj.bias"};
}

std::vector<std::string> text_tensor_names() {
  return {"text.token_embed",   "text.pos_embed",      "text.hidden1.weight",
          "text.hidden1.bias",  "text.hidden2.weight", "text.hidden2.bias",
          "text.proj.weight",   "text.proj.bias"};
}

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, float bound) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

Linear init_linear(Rng& rng, int in, int out) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  Linear l;
  l.weight = uniform_matrix(rng, in, out, bound);
  l.bias = uniform_matrix(rng, 1, out, bound);
  return l;
}

}  // namespace

ModelState init_model(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState s;
  s.config = config;
  Rng rv(derive_seed(seed, 1));
  s.theta.patch_embed = init_linear(rv, config.patch_size(), config.patch_dim);
  s.theta.hidden1 = init_linear(rv, config.num_patches() * config.patch_dim, config.vision_hidden);
  s.theta.hidden2 = init_linear(rv, config.vision_hidden, config.vision_hidden);
  s.theta.proj = init_linear(rv, config.vision_hidden, config.embed_dim);

  Rng rt(derive_seed(seed, 2));
  // Embedding tables have fan_in 1.
  s.phi.token_embed = uniform_matrix(rt, config.vocab_size, config.token_dim, 1.0f);
  s.phi.pos_embed = uniform_matrix(rt, config.max_tokens, config.token_dim, 1.0f);
  s.phi.hidden1 = init_linear(rt, config.token_dim, config.text_hidden);
  s.phi.hidden2 = init_linear(rt, config.text_hidden, config.text_hidden);
  s.phi.proj = init_linear(rt, config.text_hidden, config.embed_dim);
  s.temperature = math::Temperature::from_tau(math::kInitialTemperature);
  return s;
}

ModelState snapshot(ModelState state) {
  if (state.finetune_started)
    throw StateError("snapshot: fine-tuning already started; theta_orig is frozen");
  state.theta_orig = std::make_shared<const VisionParams>(state.theta);
  return state;
}

VisionVars bind_vision(ad::Tape& tape, const VisionParams& params, bool trainable) {
  VisionVars v;
  for (const Matrix* m : params.tensors()) v.t.push_back(tape.ref(*m, trainable));
  return v;
}

TextVars bind_text(ad::Tape& tape, const TextParams& params, bool trainable) {
  TextVars v;
  for (const Matrix* m : params.tensors()) v.t.push_back(tape.ref(*m, trainable));
  return v;
}

namespace {

ad::Var dense(ad::Var x, ad::Var w, ad::Var b) { return ad::add_bias(ad::matmul(x, w), b); }

}  // namespace

ad::Var vision_forward(const EncoderConfig& c, const VisionVars& v, ad::Var images) {
  if (images.cols() != c.image_size())
    throw ArgumentError("encode_image: expected " + std::to_string(c.image_size()) +
                        " values per image, got " + std::to_string(images.cols()));
  const auto batch = images.rows();
  ad::Var patches = ad::patchify(images, c.image_height, c.image_width, c.channels, c.patch);
  ad::Var emb = ad::gelu(dense(patches, v.t[0], v.t[1]));
  ad::Var flat = ad::reshape(emb, batch, static_cast<Eigen::Index>(c.num_patches()) * c.patch_dim);
  ad::Var h1 = ad::gelu(dense(flat, v.t[2], v.t[3]));
  ad::Var h2 = ad::gelu(dense(h1, v.t[4], v.t[5]));
  return dense(h2, v.t[6], v.t[7]);
}

ad::Var text_forward(const EncoderConfig& c, const TextVars& v,
                     const std::vector<TokenSequence>& texts) {
  if (texts.empty()) throw ArgumentError("encode_text: empty batch");
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> positions;
  std::vector<std::int32_t> offsets{0};
  for (const auto& t : texts) {
    if (t.ids.empty()) throw ArgumentError("encode_text: empty token sequence");
    if (t.ids.size() > static_cast<std::size_t>(c.max_tokens))
      throw ArgumentError("encode_text: sequence of " + std::to_string(t.ids.size()) +
                          " tokens exceeds the cap of " + std::to_string(c.max_tokens));
    for (std::size_t p = 0; p < t.ids.size(); ++p) {
      if (t.ids[p] < 0 || t.ids[p] >= c.vocab_size)
        throw ArgumentError("encode_text: token id out of vocabulary range");
      ids.push_back(t.ids[p]);
      positions.push_back(static_cast<std::int32_t>(p));
    }
    offsets.push_back(static_cast<std::int32_t>(ids.size()));
  }
  ad::Var tok = ad::gather_rows(v.t[0], ids);
  ad::Var pos = ad::gather_rows(v.t[1], positions);
  ad::Var pooled = ad::segment_mean(ad::gelu(ad::add(tok, pos)), offsets);
  ad::Var h1 = ad::gelu(dense(pooled, v.t[2], v.t[3]));
  ad::Var h2 = ad::gelu(dense(h1, v.t[4], v.t[5]));
  return dense(h2, v.t[6], v.t[7]);
}

namespace {

const VisionParams& select(const ModelState& state, VisionWeights which) {
  if (which == VisionWeights::Theta) return state.theta;
  if (!state.theta_orig) throw StateError("encode_image: theta_orig requested before snapshot");
  return *state.theta_orig;
}

void check_pixels(const Matrix& images) {
  for (Eigen::Index i = 0; i < images.size(); ++i) {
    const float p = images.data()[i];
    if (!(p >= 0.0f && p <= 1.0f)) throw ArgumentError("encode_image: pixel outside [0, 1]");
  }
}

}  // namespace

Encoded encode_images(const ModelState& state, const Matrix& images, VisionWeights which) {
  check_pixels(images);
  ad::Tape tape;
  const VisionVars v = bind_vision(tape, select(state, which), false);
  ad::Var raw = vision_forward(state.config, v, tape.ref(images));
  ad::Var emb = ad::normalize_rows(raw);
  return {raw.value(), emb.value()};
}

Encoded encode_texts(const ModelState& state, const std::vector<TokenSequence>& texts) {
  ad::Tape tape;
  const TextVars v = bind_text(tape, state.phi, false);
  ad::Var raw = text_forward(state.config, v, texts);
  ad::Var emb = ad::normalize_rows(raw);
  return {raw.value(), emb.value()};
}

Encoded encode_image(const ModelState& state, std::span<const float> image, VisionWeights which) {
  Matrix m = Eigen::Map<const Matrix>(image.data(), 1, static_cast<Eigen::Index>(image.size()));
  return encode_images(state, m, which);
}

Encoded encode_text(const ModelState& state, const TokenSequence& text) {
  return encode_texts(state, {text});
}

GradientResult gradient(const ModelState& state, const Matrix& images,
                        const ImageObjective& objective, Wrt wrt) {
  ad::Tape tape;
  ad::Var x = tape.ref(images, wrt == Wrt::Input);
  const VisionVars theta = bind_vision(tape, state.theta, wrt == Wrt::Theta);
  ad::Var terms = objective(tape, x, theta);
  if (terms.tape() != &tape) throw UnsupportedError("gradient: objective built on a foreign tape");
  if (terms.cols() != 1) throw UnsupportedError("gradient: objective must be a column of terms");
  ad::Var total = ad::sum(terms);

  GradientResult r;
  r.value = total.value()(0, 0);
  r.terms.assign(terms.value().data(), terms.value().data() + terms.rows());
  tape.backward(total);
  if (wrt == Wrt::Input) {
    r.input_grad = tape.grad(x);
  } else {
    for (const auto& t : theta.t) r.theta_grad.push_back(tape.grad(t));
  }
  return r;
}

}  // namespace ralb
