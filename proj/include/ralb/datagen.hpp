#pragma once

#include "ralb/captions.hpp"
#include "ralb/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ralb::data {

enum class Shape { Circle, Square, Triangle, Star, Cross };
enum class SizeClass { Small, Large };
enum class Texture { Plain, Striped, Dotted };

inline constexpr int kNumShapes = 5;
inline constexpr int kNumColors = 8;
inline constexpr int kNumTextures = 3;
inline constexpr int kNumBackgroundColors = 2;
inline constexpr int kGridCells = 3;

struct NamedColor {
  const char* name;
  std::array<float, 3> rgb;
};

const std::array<NamedColor, kNumColors>& shape_colors();
const std::array<NamedColor, kNumBackgroundColors>& background_colors();

std::string shape_name(Shape s);
std::string texture_name(Texture t);
std::string size_name(SizeClass s);
Shape parse_shape(std::string_view name);
Texture parse_texture(std::string_view name);

struct SceneSpec {
  Shape shape = Shape::Circle;
  int color = 0;  // index into shape_colors()
  SizeClass size = SizeClass::Large;
  int row = 1;  // 3x3 grid cell
  int col = 1;
  Texture texture = Texture::Plain;
  int background = 0;  // index into background_colors()
  bool draw_shape = true;

  bool operator==(const SceneSpec&) const = default;
};

// Every combination of shape, color, size, cell, texture and background color.
std::vector<SceneSpec> all_specs();

struct Resolution {
  int height = 32;
  int width = 32;
};

// HWC, 3 channels, values in [0, 1]. Throws ArgumentError below 8x8.
std::vector<float> render_scene(const SceneSpec& spec, Resolution res = {});

enum class CaptionStyle { Rich, Short };

AnnotatedCaption caption_of(const SceneSpec& spec, CaptionStyle style);

// True when every attribute the caption names agrees with `spec`.
bool caption_matches(const AnnotatedCaption& caption, const SceneSpec& spec);

enum class TaskKind { ObjectLabel, AttributeLabel };
enum class Partition { Train, ZeroShot };

std::string task_kind_name(TaskKind k);
TaskKind parse_task_kind(std::string_view name);

struct DatasetSplit {
  std::vector<std::string> train_classes;
  std::vector<std::string> zeroshot_classes;
  TaskKind task_kind = TaskKind::ObjectLabel;

  // ObjectLabel splits must not share classes.
  void validate() const;
  const std::vector<std::string>& classes(Partition p) const {
    return p == Partition::Train ? train_classes : zeroshot_classes;
  }
};

struct Dataset {
  std::string name;
  std::vector<std::string> class_names;
  Resolution resolution;
  Matrix images;  // n x (H*W*3)
  std::vector<std::int32_t> labels;
  std::vector<AnnotatedCaption> captions;
  std::vector<SceneSpec> specs;

  std::size_t size() const { return labels.size(); }
  // Rows selected by `indices`, in that order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

// Sample i is drawn from its own stream derived from (seed, i).
Dataset generate_dataset(std::size_t n, const DatasetSplit& split, std::uint64_t seed,
                         Partition partition = Partition::Train,
                         CaptionStyle style = CaptionStyle::Rich, Resolution res = {});

// "a photo of {name}" per class.
std::vector<std::string> class_templates(const std::vector<std::string>& class_names);

}  // namespace ralb::data
