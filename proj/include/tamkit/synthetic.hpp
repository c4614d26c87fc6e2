#pragma once

// Desk-scale stand-in for a captioned segmentation corpus: flat-colored
// squares, circles and triangles on a noisy gray canvas, each image with
// template captions and a ground-truth label map.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "tamkit/caption_parser.hpp"
#include "tamkit/common.hpp"
#include "tamkit/image_io.hpp"
#include "tamkit/tam.hpp"

namespace tamkit {

struct NamedColor {
  std::string name;
  std::array<double, 3> rgb;
};

enum class ShapeKind { Square, Circle, Triangle, Cross, Ring };

struct SyntheticParams {
  std::size_t width = 32;
  std::size_t height = 32;
  /// Class names in class-id order; each must be "square", "circle" or "triangle".
  std::vector<std::string> classes{"square", "circle", "triangle"};
  /// Unlabeled clutter, painted as background in the ground truth: "cross" or "ring".
  std::vector<std::string> distractors{"cross", "ring"};
  std::vector<NamedColor> colors{{"red", {0.85, 0.15, 0.15}},
                                 {"green", {0.15, 0.70, 0.20}},
                                 {"blue", {0.15, 0.30, 0.85}},
                                 {"yellow", {0.90, 0.80, 0.15}}};
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  std::size_t min_radius = 5;
  std::size_t max_radius = 8;
  std::size_t large_radius = 7;  // radius at or above this is captioned "large"
  /// Triangles are drawn this much larger so that all classes cover similar areas.
  double triangle_scale = 1.4;
  std::size_t min_distractors = 0;
  std::size_t max_distractors = 2;
  std::size_t min_distractor_radius = 3;
  std::size_t max_distractor_radius = 5;
  std::size_t captions_per_image = 2;
  double color_jitter = 0.08;
  double background_noise = 0.03;
  /// Per-channel spread of the canvas color around its gray level.
  double background_tint = 0.0;
  /// Chance that a drawn shape is mentioned in the captions at all.
  double mention_probability = 1.0;
  double distractor_mention_probability = 1.0;
  /// Chance that the first caption adds a class-unrelated compound about the canvas.
  double scene_phrase_probability = 0.5;
};

struct SyntheticShape {
  int class_id;  // -1 for a distractor
  std::string name;
  ShapeKind kind;
  std::size_t color;
  double cx, cy;
  std::size_t radius;
  bool mentioned;

  bool is_distractor() const { return class_id < 0; }
};

struct SyntheticSample {
  std::string id;
  Image image;
  std::vector<std::string> captions;
  LabelMap ground_truth;
  std::vector<SyntheticShape> shapes;
};

inline ClassVocabulary synthetic_vocabulary(const SyntheticParams& params = {}) {
  std::vector<std::pair<std::string, std::string>> names;
  for (const auto& c : params.classes) names.emplace_back(c, "");
  return ClassVocabulary::from_names(names);
}

namespace detail {

inline ShapeKind shape_kind(const std::string& name) {
  if (name == "square") return ShapeKind::Square;
  if (name == "circle") return ShapeKind::Circle;
  if (name == "triangle") return ShapeKind::Triangle;
  if (name == "cross") return ShapeKind::Cross;
  if (name == "ring") return ShapeKind::Ring;
  fail(Errc::InvalidConfig, "unknown synthetic shape '" + name + "'");
}

inline bool covers(ShapeKind kind, double cx, double cy, double r, double x, double y) {
  const double dx = std::abs(x - cx), dy = std::abs(y - cy);
  switch (kind) {
    case ShapeKind::Square:
      return dx <= r && dy <= r;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= (r + 0.5) * (r + 0.5);
    case ShapeKind::Triangle: {
      const double top = cy - r;
      if (y < top || y > cy + r) return false;
      return dx <= (y - top) / 2.0 + 0.5;
    }
    case ShapeKind::Cross: {
      const double arm = std::max(1.0, std::floor(r / 3.0));
      return (dx <= r && dy <= arm) || (dy <= r && dx <= arm);
    }
    case ShapeKind::Ring: {
      const double d = std::sqrt(dx * dx + dy * dy);
      return d <= r + 0.5 && d >= r - 1.5;
    }
  }
  return false;
}

enum class Attributes { SizeAndColor, Color, Size, None };

inline std::string shape_phrase(const SyntheticParams& params, const SyntheticShape& s, Attributes attrs) {
  const std::string size = s.radius >= params.large_radius ? "large" : "small";
  const std::string& color = params.colors[s.color].name;
  if (s.is_distractor() && attrs != Attributes::None) attrs = Attributes::Color;
  switch (attrs) {
    case Attributes::SizeAndColor: return "a " + size + " " + color + " " + s.name;
    case Attributes::Color: return "a " + color + " " + s.name;
    case Attributes::Size: return "a " + size + " " + s.name;
    case Attributes::None: return "a " + s.name;
  }
  return s.name;
}

inline std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::vector<std::string> make_captions(const SyntheticParams& params, const std::vector<SyntheticShape>& shapes,
                                              Rng& rng) {
  static const std::array<const char*, 5> relations{"next to", "near", "above", "below", "beside"};
  static const std::array<const char*, 4> verbs{"", "sitting ", "placed ", "lying "};
  std::vector<const SyntheticShape*> mentioned;
  for (const auto& s : shapes)
    if (s.mentioned) mentioned.push_back(&s);

  std::vector<std::string> captions;
  for (std::size_t k = 0; k < params.captions_per_image; ++k) {
    std::string text;
    if (mentioned.empty()) {
      text = "an image of a plain gray background";
    } else {
      Attributes first_attrs = Attributes::SizeAndColor;
      if (k == 0) {
        first_attrs = rng.bernoulli(0.7) ? Attributes::SizeAndColor : Attributes::Color;
      } else {
        text = "there is ";
      }
      // order of mention differs between captions
      std::vector<std::size_t> order(mentioned.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      if (k > 0)
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0) text += std::string(" ") + verbs[rng.below(verbs.size())] + relations[rng.below(relations.size())] + " ";
        const auto attrs = k == 0 && i == 0 ? first_attrs : static_cast<Attributes>(rng.below(4));
        text += shape_phrase(params, *mentioned[order[i]], attrs);
      }
      if (k == 0 && rng.bernoulli(params.scene_phrase_probability)) text += " on a plain gray background";
    }
    captions.push_back(capitalized(text) + ".");
  }
  return captions;
}

}  // namespace detail

/// Deterministic in (params, count, seed). Ground truth is painted in drawing
/// order; objects are placed without bounding-box overlap and dropped when no
/// free spot is found.
inline std::vector<SyntheticSample> generate_synthetic_dataset(const SyntheticParams& params, std::size_t count,
                                                               std::uint64_t seed, const std::string& id_prefix = "img") {
  if (params.classes.empty()) fail(Errc::InvalidConfig, "synthetic params lists no classes");
  if (params.colors.empty()) fail(Errc::InvalidConfig, "synthetic params lists no colors");
  if (params.min_shapes == 0 || params.min_shapes > params.max_shapes) fail(Errc::InvalidConfig, "bad shape count range");
  if (params.max_shapes > params.classes.size()) fail(Errc::InvalidConfig, "more shapes per image than classes");
  if (params.min_radius < 1 || params.min_radius > params.max_radius) fail(Errc::InvalidConfig, "bad radius range");
  if (params.min_distractors > params.max_distractors) fail(Errc::InvalidConfig, "bad distractor count range");
  if (params.max_distractors > 0 && params.distractors.empty()) fail(Errc::InvalidConfig, "no distractor kinds listed");
  if (params.min_distractor_radius < 1 || params.min_distractor_radius > params.max_distractor_radius)
    fail(Errc::InvalidConfig, "bad distractor radius range");
  if (2 * std::max(params.max_radius, params.max_distractor_radius) + 1 > std::min(params.width, params.height))
    fail(Errc::InvalidConfig, "shapes do not fit into the canvas");
  for (const auto& c : params.classes) detail::shape_kind(c);
  for (const auto& d : params.distractors) detail::shape_kind(d);

  Rng rng(seed);
  std::vector<SyntheticSample> out;
  for (std::size_t n = 0; n < count; ++n) {
    SyntheticSample sample;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", n);
    sample.id = id_prefix + buf;

    auto place = [&](int class_id, const std::string& name, std::size_t r) {
      const auto color = rng.below(params.colors.size());
      for (int attempt = 0; attempt < 50; ++attempt) {
        const double cx = static_cast<double>(r + rng.below(params.width - 2 * r));
        const double cy = static_cast<double>(r + rng.below(params.height - 2 * r));
        bool clear = true;
        for (const auto& s : sample.shapes) {
          const double gap = static_cast<double>(s.radius + r + 1);
          if (std::abs(s.cx - cx) < gap && std::abs(s.cy - cy) < gap) clear = false;
        }
        if (!clear) continue;
        sample.shapes.push_back({class_id, name, detail::shape_kind(name), color, cx, cy, r, true});
        return;
      }
    };
    const std::size_t wanted = params.min_shapes + rng.below(params.max_shapes - params.min_shapes + 1);
    const std::size_t fit = (std::min(params.width, params.height) - 1) / 2;
    for (auto cls : rng.sample_without_replacement(params.classes.size(), wanted)) {
      auto r = params.min_radius + rng.below(params.max_radius - params.min_radius + 1);
      if (detail::shape_kind(params.classes[cls]) == ShapeKind::Triangle)
        r = std::min(fit, static_cast<std::size_t>(std::lround(static_cast<double>(r) * params.triangle_scale)));
      place(static_cast<int>(cls), params.classes[cls], r);
    }
    const std::size_t clutter = params.min_distractors + rng.below(params.max_distractors - params.min_distractors + 1);
    for (std::size_t i = 0; i < clutter; ++i)
      place(-1, params.distractors[rng.below(params.distractors.size())],
            params.min_distractor_radius + rng.below(params.max_distractor_radius - params.min_distractor_radius + 1));
    for (auto& s : sample.shapes) {
      const double p = s.is_distractor() ? params.distractor_mention_probability : params.mention_probability;
      s.mentioned = p >= 1.0 || rng.bernoulli(p);
    }

    const double gray = rng.uniform(0.35, 0.65);
    std::array<double, 3> canvas{};
    for (auto& v : canvas) v = gray + (params.background_tint > 0.0 ? rng.uniform(-params.background_tint, params.background_tint) : 0.0);
    sample.image = Image(params.width, params.height, 3);
    sample.ground_truth = LabelMap(params.width, params.height);
    for (std::size_t y = 0; y < params.height; ++y)
      for (std::size_t x = 0; x < params.width; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          sample.image.at(c, y, x) = std::clamp(canvas[c] + rng.uniform(-params.background_noise, params.background_noise), 0.0, 1.0);
    for (const auto& s : sample.shapes) {
      std::array<double, 3> rgb = params.colors[s.color].rgb;
      for (auto& v : rgb) v = std::clamp(v + rng.uniform(-params.color_jitter, params.color_jitter), 0.0, 1.0);
      for (std::size_t y = 0; y < params.height; ++y)
        for (std::size_t x = 0; x < params.width; ++x) {
          if (!detail::covers(s.kind, s.cx, s.cy, static_cast<double>(s.radius), static_cast<double>(x), static_cast<double>(y)))
            continue;
          for (std::size_t c = 0; c < 3; ++c) sample.image.at(c, y, x) = rgb[c];
          sample.ground_truth.labels[y * params.width + x] = s.is_distractor() ? LabelMap::kBackground : LabelMap::of_class(s.class_id);
        }
    }
    sample.captions = detail::make_captions(params, sample.shapes, rng);
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace tamkit
