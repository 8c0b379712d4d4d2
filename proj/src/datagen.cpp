#include "ralb/datagen.hpp"

#include "ralb/errors.hpp"
#include "ralb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ralb::data {

const std::array<NamedColor, kNumColors>& shape_colors() {
  static const std::array<NamedColor, kNumColors> colors{{
      {"red", {0.90f, 0.10f, 0.10f}},
      {"green", {0.10f, 0.75f, 0.20f}},
      {"blue", {0.15f, 0.25f, 0.90f}},
      {"yellow", {0.95f, 0.85f, 0.10f}},
      {"purple", {0.60f, 0.20f, 0.75f}},
      {"orange", {0.95f, 0.55f, 0.10f}},
      {"cyan", {0.10f, 0.80f, 0.85f}},
      {"pink", {0.95f, 0.45f, 0.70f}},
  }};
  return colors;
}

const std::array<NamedColor, kNumBackgroundColors>& background_colors() {
  static const std::array<NamedColor, kNumBackgroundColors> colors{{
      {"white", {0.95f, 0.95f, 0.95f}},
      {"black", {0.08f, 0.08f, 0.08f}},
  }};
  return colors;
}

namespace {

constexpr std::array<const char*, kNumShapes> kShapeNames{"circle", "square", "triangle", "star",
                                                          "cross"};
constexpr std::array<const char*, kNumTextures> kTextureNames{"plain", "striped", "dotted"};
constexpr std::array<const char*, kGridCells> kRowNames{"top", "middle", "bottom"};
constexpr std::array<const char*, kGridCells> kColNames{"left", "center", "right"};
constexpr std::array<float, 3> kPatternGray{0.55f, 0.55f, 0.55f};

template <std::size_t N>
int index_of(const std::array<const char*, N>& names, std::string_view name) {
  for (std::size_t i = 0; i < N; ++i)
    if (name == names[i]) return static_cast<int>(i);
  return -1;
}

}  // namespace

std::string shape_name(Shape s) { return kShapeNames[static_cast<int>(s)]; }
std::string texture_name(Texture t) { return kTextureNames[static_cast<int>(t)]; }
std::string size_name(SizeClass s) { return s == SizeClass::Small ? "small" : "large"; }

Shape parse_shape(std::string_view name) {
  const int i = index_of(kShapeNames, name);
  if (i < 0) throw ArgumentError("unknown shape '" + std::string(name) + "'");
  return static_cast<Shape>(i);
}

Texture parse_texture(std::string_view name) {
  const int i = index_of(kTextureNames, name);
  if (i < 0) throw ArgumentError("unknown texture '" + std::string(name) + "'");
  return static_cast<Texture>(i);
}

std::vector<SceneSpec> all_specs() {
  std::vector<SceneSpec> out;
  for (int s = 0; s < kNumShapes; ++s)
    for (int c = 0; c < kNumColors; ++c)
      for (int z = 0; z < 2; ++z)
        for (int cell = 0; cell < kGridCells * kGridCells; ++cell)
          for (int t = 0; t < kNumTextures; ++t)
            for (int b = 0; b < kNumBackgroundColors; ++b)
              out.push_back({static_cast<Shape>(s), c, static_cast<SizeClass>(z), cell / kGridCells,
                             cell % kGridCells, static_cast<Texture>(t), b, true});
  return out;
}

namespace {

bool in_triangle(float px, float py, const std::array<float, 6>& v) {
  auto edge = [&](int a, int b) {
    return (v[2 * b] - v[2 * a]) * (py - v[2 * a + 1]) - (v[2 * b + 1] - v[2 * a + 1]) * (px - v[2 * a]);
  };
  const float e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
  return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

bool in_star(float dx, float dy, float r) {
  // Even-odd test against a 10-vertex star polygon, one point straight up.
  constexpr int kVerts = 10;
  constexpr float kPi = 3.14159265358979f;
  std::array<float, 2 * kVerts> v{};
  for (int k = 0; k < kVerts; ++k) {
    const float rad = (k % 2 == 0) ? r : 0.45f * r;
    const float ang = -kPi / 2.0f + static_cast<float>(k) * kPi / 5.0f;
    v[2 * k] = rad * std::cos(ang);
    v[2 * k + 1] = rad * std::sin(ang);
  }
  bool inside = false;
  for (int i = 0, j = kVerts - 1; i < kVerts; j = i++) {
    const float xi = v[2 * i], yi = v[2 * i + 1], xj = v[2 * j], yj = v[2 * j + 1];
    if ((yi > dy) != (yj > dy) && dx < (xj - xi) * (dy - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

bool covers(Shape shape, float dx, float dy, float r) {
  switch (shape) {
    case Shape::Circle: return dx * dx + dy * dy <= r * r;
    case Shape::Square: return std::abs(dx) <= 0.8f * r && std::abs(dy) <= 0.8f * r;
    case Shape::Triangle:
      return in_triangle(dx, dy, {0.0f, -r, -0.95f * r, 0.8f * r, 0.95f * r, 0.8f * r});
    case Shape::Star: return in_star(dx, dy, r);
    case Shape::Cross:
      return (std::abs(dx) <= 0.3f * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.3f * r && std::abs(dx) <= r);
  }
  return false;
}

std::array<float, 3> background_at(const SceneSpec& spec, int y, int x) {
  const auto& bg = background_colors()[static_cast<std::size_t>(spec.background)].rgb;
  switch (spec.texture) {
    case Texture::Plain: return bg;
    case Texture::Striped: return (y % 4) < 2 ? kPatternGray : bg;
    case Texture::Dotted: return (y % 4 == 1 && x % 4 == 1) ? kPatternGray : bg;
  }
  return bg;
}

void validate_spec(const SceneSpec& spec) {
  if (spec.color < 0 || spec.color >= kNumColors || spec.background < 0 ||
      spec.background >= kNumBackgroundColors || spec.row < 0 || spec.row >= kGridCells ||
      spec.col < 0 || spec.col >= kGridCells)
    throw ArgumentError("scene spec: attribute index out of range");
}

}  // namespace

std::vector<float> render_scene(const SceneSpec& spec, Resolution res) {
  if (res.height < 8 || res.width < 8) throw ArgumentError("render_scene: resolution below 8x8");
  validate_spec(spec);
  constexpr int kSuper = 4;
  const float cell_w = static_cast<float>(res.width) / kGridCells;
  const float cell_h = static_cast<float>(res.height) / kGridCells;
  const float cx = (static_cast<float>(spec.col) + 0.5f) * cell_w;
  const float cy = (static_cast<float>(spec.row) + 0.5f) * cell_h;
  const float extent = std::min(cell_w, cell_h);
  const float r = (spec.size == SizeClass::Small ? 0.33f : 0.48f) * extent;
  const auto& fg = shape_colors()[static_cast<std::size_t>(spec.color)].rgb;

  std::vector<float> img(static_cast<std::size_t>(res.height * res.width * 3));
  for (int y = 0; y < res.height; ++y) {
    for (int x = 0; x < res.width; ++x) {
      int hits = 0;
      if (spec.draw_shape) {
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) {
            const float px = static_cast<float>(x) + (static_cast<float>(sx) + 0.5f) / kSuper;
            const float py = static_cast<float>(y) + (static_cast<float>(sy) + 0.5f) / kSuper;
            if (covers(spec.shape, px - cx, py - cy, r)) ++hits;
          }
      }
      const float a = static_cast<float>(hits) / (kSuper * kSuper);
      const auto bg = background_at(spec, y, x);
      for (int c = 0; c < 3; ++c)
        img[static_cast<std::size_t>((y * res.width + x) * 3 + c)] =
            std::clamp(a * fg[c] + (1.0f - a) * bg[c], 0.0f, 1.0f);
    }
  }
  return img;
}

AnnotatedCaption caption_of(const SceneSpec& spec, CaptionStyle style) {
  validate_spec(spec);
  using W = WordClass;
  const std::string color = shape_colors()[static_cast<std::size_t>(spec.color)].name;
  const std::string shape = shape_name(spec.shape);
  AnnotatedCaption c;
  if (style == CaptionStyle::Short) {
    c.words = {{"a", W::Function}, {color, W::AdjAdv}, {shape, W::Noun}};
  } else {
    c.words = {{"a", W::Function},
               {size_name(spec.size), W::AdjAdv},
               {color, W::AdjAdv},
               {shape, W::Noun},
               {"is", W::Function},
               {"shown", W::Other},
               {"in", W::Function},
               {"the", W::Function},
               {kRowNames[static_cast<std::size_t>(spec.row)], W::AdjAdv},
               {kColNames[static_cast<std::size_t>(spec.col)], W::AdjAdv},
               {"area", W::Noun},
               {"of", W::Function},
               {"the", W::Function},
               {"image", W::Noun},
               {"on", W::Function},
               {"a", W::Function},
               {texture_name(spec.texture), W::AdjAdv},
               {background_colors()[static_cast<std::size_t>(spec.background)].name, W::AdjAdv},
               {"background", W::Noun}};
  }
  for (std::size_t i = 0; i < c.words.size(); ++i) {
    if (i) c.raw_text += ' ';
    c.raw_text += c.words[i].surface;
  }
  return c;
}

bool caption_matches(const AnnotatedCaption& caption, const SceneSpec& spec) {
  const std::string color = shape_colors()[static_cast<std::size_t>(spec.color)].name;
  const std::string bg = background_colors()[static_cast<std::size_t>(spec.background)].name;
  bool named_shape = false;
  for (const auto& w : caption.words) {
    const std::string& s = w.surface;
    if (index_of(kShapeNames, s) >= 0) {
      if (s != shape_name(spec.shape)) return false;
      named_shape = true;
    }
    if (index_of(kTextureNames, s) >= 0 && s != texture_name(spec.texture)) return false;
    if (index_of(kRowNames, s) >= 0 && index_of(kRowNames, s) != spec.row) return false;
    if (index_of(kColNames, s) >= 0 && index_of(kColNames, s) != spec.col) return false;
    if ((s == "small" || s == "large") && s != size_name(spec.size)) return false;
    for (const auto& c : shape_colors())
      if (s == c.name && s != color) return false;
    for (const auto& c : background_colors())
      if (s == c.name && s != bg) return false;
  }
  return named_shape;
}

std::string task_kind_name(TaskKind k) {
  return k == TaskKind::ObjectLabel ? "object" : "attribute";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "object") return TaskKind::ObjectLabel;
  if (name == "attribute") return TaskKind::AttributeLabel;
  throw ArgumentError("unknown task kind '" + std::string(name) + "'");
}

void DatasetSplit::validate() const {
  auto check = [&](const std::vector<std::string>& names) {
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (task_kind == TaskKind::ObjectLabel) parse_shape(n);
      else parse_texture(n);
      if (!seen.insert(n).second) throw ArgumentError("dataset split: duplicate class '" + n + "'");
    }
  };
  check(train_classes);
  check(zeroshot_classes);
  if (task_kind == TaskKind::ObjectLabel)
    for (const auto& n : train_classes)
      if (std::find(zeroshot_classes.begin(), zeroshot_classes.end(), n) != zeroshot_classes.end())
        throw ArgumentError("dataset split: class '" + n + "' is both train and zero-shot");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  d.name = name;
  d.class_names = class_names;
  d.resolution = resolution;
  d.images.resize(static_cast<Eigen::Index>(indices.size()), images.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    if (i >= size()) throw ArgumentError("dataset subset: index out of range");
    d.images.row(static_cast<Eigen::Index>(k)) = images.row(static_cast<Eigen::Index>(i));
    d.labels.push_back(labels[i]);
    if (!captions.empty()) d.captions.push_back(captions[i]);
    if (!specs.empty()) d.specs.push_back(specs[i]);
  }
  return d;
}

Dataset generate_dataset(std::size_t n, const DatasetSplit& split, std::uint64_t seed,
                         Partition partition, CaptionStyle style, Resolution res) {
  if (n == 0) throw ArgumentError("generate_dataset: n must be >= 1");
  split.validate();
  const auto& classes = split.classes(partition);
  if (classes.empty()) throw ArgumentError("generate_dataset: empty class set");

  Dataset d;
  d.class_names = classes;
  d.resolution = res;
  d.images.resize(static_cast<Eigen::Index>(n), res.height * res.width * 3);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    const auto label = static_cast<std::int32_t>(rng.below(classes.size()));
    SceneSpec spec;
    spec.shape = static_cast<Shape>(rng.below(kNumShapes));
    spec.color = static_cast<int>(rng.below(kNumColors));
    spec.size = static_cast<SizeClass>(rng.below(2));
    const auto cell = static_cast<int>(rng.below(kGridCells * kGridCells));
    spec.row = cell / kGridCells;
    spec.col = cell % kGridCells;
    spec.texture = static_cast<Texture>(rng.below(kNumTextures));
    spec.background = static_cast<int>(rng.below(kNumBackgroundColors));
    if (split.task_kind == TaskKind::ObjectLabel) spec.shape = parse_shape(classes[label]);
    else spec.texture = parse_texture(classes[label]);

    const auto pixels = render_scene(spec, res);
    d.images.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const RowVector>(pixels.data(), static_cast<Eigen::Index>(pixels.size()));
    d.labels.push_back(label);
    AnnotatedCaption c = caption_of(spec, style);
    c.id = "img" + std::to_string(i);
    d.captions.push_back(std::move(c));
    d.specs.push_back(spec);
  }
  return d;
}

std::vector<std::string> class_templates(const std::vector<std::string>& class_names) {
  if (class_names.empty()) throw ArgumentError("class_templates: empty class list");
  std::vector<std::string> out;
  for (const auto& n : class_names) out.push_back("a photo of " + n);
  return out;
}

}  // namespace ralb::data
