#include "uapguard/backdoor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "uapguard/errors.hpp"

namespace uapguard {

std::string_view to_string(TriggerPattern p) {
  switch (p) {
    case TriggerPattern::CornerRectangles: return "corner-rectangles";
    case TriggerPattern::Square: return "square";
    case TriggerPattern::Cross: return "cross";
  }
  return "?";
}

std::string_view to_string(Orientation o) { return o == Orientation::Horizontal ? "horizontal" : "vertical"; }

std::string_view to_string(Corner c) {
  switch (c) {
    case Corner::TopLeft: return "top-left";
    case Corner::TopRight: return "top-right";
    case Corner::BottomLeft: return "bottom-left";
    case Corner::BottomRight: return "bottom-right";
  }
  return "?";
}

TriggerPattern parse_trigger_pattern(std::string_view s) {
  for (auto p : {TriggerPattern::CornerRectangles, TriggerPattern::Square, TriggerPattern::Cross}) {
    if (s == to_string(p)) return p;
  }
  throw std::invalid_argument("unknown trigger pattern '" + std::string(s) + "'");
}

Orientation parse_orientation(std::string_view s) {
  for (auto o : {Orientation::Horizontal, Orientation::Vertical}) {
    if (s == to_string(o)) return o;
  }
  throw std::invalid_argument("unknown orientation '" + std::string(s) + "'");
}

Corner parse_corner(std::string_view s) {
  for (auto c : {Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight}) {
    if (s == to_string(c)) return c;
  }
  throw std::invalid_argument("unknown corner '" + std::string(s) + "'");
}

std::size_t Stencil::pixel_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

struct Box {
  std::size_t rows, cols;
};

/// Top-left position of a `box` placed in `corner` with `margin`.
std::pair<std::size_t, std::size_t> place(Box box, Corner corner, std::size_t margin, std::size_t h, std::size_t w) {
  if (box.rows + margin > h || box.cols + margin > w) {
    throw std::invalid_argument("trigger of " + std::to_string(box.rows) + "x" + std::to_string(box.cols) +
                                " with margin " + std::to_string(margin) + " exceeds a " + std::to_string(h) +
                                "x" + std::to_string(w) + " image");
  }
  const bool top = corner == Corner::TopLeft || corner == Corner::TopRight;
  const bool left = corner == Corner::TopLeft || corner == Corner::BottomLeft;
  return {top ? margin : h - margin - box.rows, left ? margin : w - margin - box.cols};
}

void mark(Stencil& s, std::size_t y, std::size_t x, float value) {
  std::uint8_t& m = s.mask[y * s.width + x];
  if (m) throw std::invalid_argument("trigger parts overlap");
  m = 1;
  s.values[y * s.width + x] = value;
}

}  // namespace

Stencil make_stencil(const TriggerSpec& spec, const Shape& image_shape) {
  if (image_shape.size() != 3) throw ShapeError("stencil needs a (C, H, W) image shape");
  if (!(spec.intensity >= 0.0f && spec.intensity <= 1.0f)) {
    throw std::invalid_argument("trigger intensity must be in [0, 1]");
  }
  Stencil s;
  s.height = image_shape[1];
  s.width = image_shape[2];
  s.mask.assign(s.height * s.width, 0);
  s.values.assign(s.height * s.width, 0.0f);

  switch (spec.pattern) {
    case TriggerPattern::CornerRectangles: {
      if (spec.rect_length == 0 || spec.rect_thickness == 0) throw std::invalid_argument("empty rectangle trigger");
      const Box box = spec.orientation == Orientation::Horizontal ? Box{spec.rect_thickness, spec.rect_length}
                                                                  : Box{spec.rect_length, spec.rect_thickness};
      for (Corner c : {Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight}) {
        const auto [y0, x0] = place(box, c, spec.margin, s.height, s.width);
        for (std::size_t y = 0; y < box.rows; ++y)
          for (std::size_t x = 0; x < box.cols; ++x) mark(s, y0 + y, x0 + x, spec.intensity);
      }
      break;
    }
    case TriggerPattern::Square: {
      if (spec.square_side == 0) throw std::invalid_argument("empty square trigger");
      const Box box{spec.square_side, spec.square_side};
      const auto [y0, x0] = place(box, spec.anchor, spec.margin, s.height, s.width);
      for (std::size_t y = 0; y < box.rows; ++y)
        for (std::size_t x = 0; x < box.cols; ++x) mark(s, y0 + y, x0 + x, spec.intensity);
      break;
    }
    case TriggerPattern::Cross: {
      const std::size_t ah = spec.cross_arm_horizontal, av = spec.cross_arm_vertical;
      const Box box{2 * av + 1, 2 * ah + 1};
      const auto [y0, x0] = place(box, spec.anchor, spec.margin, s.height, s.width);
      const std::size_t cy = y0 + av, cx = x0 + ah;
      for (std::size_t x = x0; x < x0 + box.cols; ++x) mark(s, cy, x, spec.intensity);
      for (std::size_t y = y0; y < y0 + box.rows; ++y) {
        if (y != cy) mark(s, y, cx, spec.intensity);
      }
      break;
    }
  }
  return s;
}

Tensor apply_trigger(const Tensor& image, const Stencil& stencil, float transparency) {
  if (!(transparency >= 0.0f && transparency <= 1.0f)) {
    throw std::invalid_argument("transparency must be in [0, 1]");
  }
  const Shape& s = image.shape();
  if (s.size() < 3 || s[s.size() - 2] != stencil.height || s[s.size() - 1] != stencil.width) {
    throw ShapeError("image " + shape_string(s) + " does not match a " + std::to_string(stencil.height) + "x" +
                     std::to_string(stencil.width) + " stencil");
  }
  Tensor out = image;
  const std::size_t plane = stencil.height * stencil.width;
  auto data = out.data();
  const std::size_t planes = data.size() / plane;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    float* px = data.data() + pl * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!stencil.mask[i]) continue;
      px[i] = std::clamp(transparency * px[i] + (1.0f - transparency) * stencil.values[i], 0.0f, 1.0f);
    }
  }
  return out;
}

PoisonedDataset poison(const LabeledDataset& ds, const TriggerSpec& spec, double rate, int target_label,
                       std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("poison rate must be in [0, 1)");
  if (target_label < 0 || static_cast<std::size_t>(target_label) >= ds.class_count) {
    throw std::invalid_argument("target label " + std::to_string(target_label) + " is not a class");
  }
  const std::size_t count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(ds.size())));
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != target_label) pool.push_back(i);
  }
  if (count > pool.size()) {
    throw std::invalid_argument("poison rate needs " + std::to_string(count) + " non-target images, only " +
                                std::to_string(pool.size()) + " available");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());

  PoisonedDataset out;
  out.data = ds;
  out.target_label = target_label;
  out.spec = spec;
  out.poison_rate = rate;
  out.poisoned_indices = pool;
  if (count == 0) return out;

  const Stencil stencil = make_stencil(spec, ds.spec().shape());
  const std::size_t stride = ds.image_size();
  for (std::size_t idx : pool) {
    const Tensor stamped = apply_trigger(ds.image(idx), stencil, spec.transparency);
    std::copy(stamped.data().begin(), stamped.data().end(), out.data.images.data().begin() +
                                                                static_cast<std::ptrdiff_t>(idx * stride));
    out.data.labels[idx] = target_label;
  }
  return out;
}

BackdoorTestSet make_backdoor_testset(const LabeledDataset& clean_test, const TriggerSpec& spec, int target_label) {
  BackdoorTestSet out;
  out.target_label = target_label;
  for (std::size_t i = 0; i < clean_test.size(); ++i) {
    if (clean_test.labels[i] != target_label) {
      out.source_indices.push_back(i);
      out.original_labels.push_back(clean_test.labels[i]);
    }
  }
  out.stamped = subset(clean_test, out.source_indices);
  if (!out.stamped.empty()) {
    out.stamped.images = apply_trigger(out.stamped.images, make_stencil(spec, clean_test.spec().shape()),
                                       spec.transparency);
  }
  std::fill(out.stamped.labels.begin(), out.stamped.labels.end(), target_label);
  out.stamped.name = clean_test.name + "-stamped";
  return out;
}

}  // namespace uapguard
