#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "uapguard/datasets.hpp"
#include "uapguard/tensor.hpp"

namespace uapguard {

enum class TriggerPattern { CornerRectangles, Square, Cross };
enum class Orientation { Horizontal, Vertical };
enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

std::string_view to_string(TriggerPattern p);
std::string_view to_string(Orientation o);
std::string_view to_string(Corner c);
TriggerPattern parse_trigger_pattern(std::string_view s);
Orientation parse_orientation(std::string_view s);
Corner parse_corner(std::string_view s);

/// Trigger geometry plus blending parameters.
///
/// * CornerRectangles: one `rect_thickness` x `rect_length` bar in each of the
///   four corners (transposed when vertical).
/// * Square: a `square_side` square at `anchor`.
/// * Cross: a plus sign with horizontal arms of `cross_arm_horizontal` pixels
///   and vertical arms of `cross_arm_vertical` pixels around a centre pixel;
///   the default 2/1 arms cover 7 pixels. Its bounding box sits at `anchor`.
///
/// `margin` is the gap between each shape and the image border.
struct TriggerSpec {
  TriggerPattern pattern = TriggerPattern::Square;
  std::size_t rect_length = 10;
  std::size_t rect_thickness = 1;
  Orientation orientation = Orientation::Horizontal;
  std::size_t square_side = 4;
  std::size_t cross_arm_horizontal = 2;
  std::size_t cross_arm_vertical = 1;
  Corner anchor = Corner::BottomRight;
  std::size_t margin = 1;
  float intensity = 0.2f;
  /// Weight of the original pixel inside the mask: 0 stamps an opaque trigger.
  float transparency = 0.0f;
};

/// Spatial mask (shared across channels) and per-pixel trigger values.
struct Stencil {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;
  std::vector<float> values;

  std::size_t pixel_count() const;
};

/// Throws std::invalid_argument when the trigger leaves the image or its parts overlap.
Stencil make_stencil(const TriggerSpec& spec, const Shape& image_shape);

/// On-mask pixels become t * p + (1 - t) * v, clipped to [0, 1]; off-mask
/// pixels are untouched. Accepts a (C, H, W) image or an (N, C, H, W) batch.
Tensor apply_trigger(const Tensor& image, const Stencil& stencil, float transparency);

struct PoisonedDataset {
  LabeledDataset data;
  std::vector<std::size_t> poisoned_indices;  // ascending
  int target_label = 0;
  TriggerSpec spec;
  double poison_rate = 0.0;
};

/// Stamps round(rate * N) distinct non-target images and relabels them as
/// `target_label`. Throws std::invalid_argument when the rate is outside
/// [0, 1), the target is not a class, or the non-target pool is too small.
PoisonedDataset poison(const LabeledDataset& ds, const TriggerSpec& spec, double rate, int target_label,
                       std::uint64_t seed);

struct BackdoorTestSet {
  /// Stamped copies of every non-target image, labelled `target_label`.
  LabeledDataset stamped;
  std::vector<int> original_labels;
  std::vector<std::size_t> source_indices;
  int target_label = 0;
};

BackdoorTestSet make_backdoor_testset(const LabeledDataset& clean_test, const TriggerSpec& spec, int target_label);

}  // namespace uapguard
