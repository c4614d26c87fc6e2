#pragma once

// Text activation maps and everything derived from them: normalization,
// per-class max fusion, the background map and argmax labels.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tamkit/common.hpp"
#include "tamkit/image_io.hpp"

namespace tamkit {

/// Pixelwise visual embedding, P x dim, row-major by pixel.
struct VisualEmbeddingMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  VisualEmbeddingMap() = default;
  VisualEmbeddingMap(std::size_t w, std::size_t h, std::size_t d, double fill = 0.0)
      : width(w), height(h), dim(d), data(w * h * d, fill) {}

  std::size_t pixels() const { return width * height; }
  std::span<const double> row(std::size_t p) const { return {data.data() + p * dim, dim}; }
  std::span<double> row(std::size_t p) { return {data.data() + p * dim, dim}; }
};

enum class MapKind { Raw, Normalized, Background };

struct ActivationMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;
  MapKind kind = MapKind::Raw;

  ActivationMap() = default;
  ActivationMap(std::size_t w, std::size_t h, MapKind k, double fill = 0.0)
      : width(w), height(h), values(w * h, fill), kind(k) {}
  ActivationMap(std::size_t w, std::size_t h, std::vector<double> v, MapKind k)
      : width(w), height(h), values(std::move(v)), kind(k) {
    if (values.size() != w * h) fail(Errc::DimMismatch, "activation map value count != width*height");
  }

  std::size_t pixels() const { return values.size(); }
  bool same_shape(const ActivationMap& o) const { return width == o.width && height == o.height; }
};

/// Per-pixel label. 0 is background, class c is stored as c + 1.
struct LabelMap {
  static constexpr int kBackground = 0;
  static constexpr int of_class(int class_id) { return class_id + 1; }

  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(std::size_t w, std::size_t h, int fill = kBackground) : width(w), height(h), labels(w * h, fill) {}

  std::size_t pixels() const { return labels.size(); }
  bool operator==(const LabelMap&) const = default;
};

/// A present class together with its normalized CAM.
struct ClassMap {
  int class_id = 0;
  ActivationMap map;
};

template <typename T>
std::vector<T> flip_rows(std::span<const T> values, std::size_t width, std::size_t height, std::size_t stride = 1) {
  std::vector<T> out(values.size());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t k = 0; k < stride; ++k)
        out[((y * width) + (width - 1 - x)) * stride + k] = values[((y * width) + x) * stride + k];
  return out;
}

inline ActivationMap flip_horizontal(const ActivationMap& m) {
  return {m.width, m.height, flip_rows<double>(m.values, m.width, m.height), m.kind};
}

inline LabelMap flip_horizontal(const LabelMap& m) {
  LabelMap out(m.width, m.height);
  out.labels = flip_rows<int>(m.labels, m.width, m.height);
  return out;
}

inline VisualEmbeddingMap flip_horizontal(const VisualEmbeddingMap& e) {
  VisualEmbeddingMap out(e.width, e.height, e.dim);
  out.data = flip_rows<double>(e.data, e.width, e.height, e.dim);
  return out;
}

/// x(p) = E_vis(p) . e_txt
inline ActivationMap tam(const VisualEmbeddingMap& e_vis, std::span<const double> e_txt) {
  if (e_txt.size() != e_vis.dim)
    fail(Errc::DimMismatch, "text embedding has " + std::to_string(e_txt.size()) + " entries, visual map has dim " +
                                std::to_string(e_vis.dim));
  ActivationMap x(e_vis.width, e_vis.height, MapKind::Raw);
  const std::size_t d = e_vis.dim;
  for (std::size_t p = 0; p < e_vis.pixels(); ++p) {
    const double* row = e_vis.data.data() + p * d;
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += row[k] * e_txt[k];
    x.values[p] = s;
  }
  return x;
}

/// sqrt(relu(x)) / max_p sqrt(relu(x_p)); the all-zero map when nothing is positive.
inline ActivationMap normalize_tam(const ActivationMap& x) {
  ActivationMap out(x.width, x.height, MapKind::Normalized);
  double peak = 0.0;
  for (std::size_t p = 0; p < x.pixels(); ++p) {
    out.values[p] = std::sqrt(std::max(x.values[p], 0.0));
    peak = std::max(peak, out.values[p]);
  }
  if (peak > 0.0)
    for (auto& v : out.values) v /= peak;
  else
    std::fill(out.values.begin(), out.values.end(), 0.0);
  return out;
}

/// Pixelwise maximum over the normalized TAMs of one concept set.
inline ActivationMap cam(std::span<const ActivationMap> norm_tams) {
  if (norm_tams.empty()) fail(Errc::EmptyPhi, "cannot fuse an empty concept set");
  ActivationMap out = norm_tams.front();
  out.kind = MapKind::Normalized;
  for (const auto& m : norm_tams.subspan(1)) {
    if (!m.same_shape(out)) fail(Errc::DimMismatch, "concept maps differ in size");
    for (std::size_t p = 0; p < out.pixels(); ++p) out.values[p] = std::max(out.values[p], m.values[p]);
  }
  return out;
}

inline constexpr double kDefaultBackgroundAlpha = 4.0;

/// b(p) = (1 - max_c y_c(p))^alpha over the present classes.
inline ActivationMap background_map(std::span<const ActivationMap> cams, double alpha = kDefaultBackgroundAlpha) {
  if (cams.empty()) fail(Errc::NoPresentClasses, "background map needs at least one present class");
  ActivationMap b(cams.front().width, cams.front().height, MapKind::Background);
  for (std::size_t p = 0; p < b.pixels(); ++p) {
    double peak = 0.0;
    for (const auto& c : cams) {
      if (!c.same_shape(b)) fail(Errc::DimMismatch, "class maps differ in size");
      peak = std::max(peak, c.values[p]);
    }
    b.values[p] = std::pow(std::clamp(1.0 - peak, 0.0, 1.0), alpha);
  }
  return b;
}

inline ActivationMap background_map(std::span<const ClassMap> cams, double alpha = kDefaultBackgroundAlpha) {
  std::vector<ActivationMap> maps;
  maps.reserve(cams.size());
  for (const auto& c : cams) maps.push_back(c.map);
  return background_map(std::span<const ActivationMap>(maps), alpha);
}

/// Per-pixel argmax over the class maps and the background. Ties go to the
/// lowest class id; the background only wins when strictly larger.
inline LabelMap estimate_labels(std::span<const ClassMap> cams, const ActivationMap& bg) {
  if (cams.empty()) fail(Errc::NoPresentClasses, "no present classes to label");
  std::vector<const ClassMap*> order;
  for (const auto& c : cams) {
    if (!c.map.same_shape(bg)) fail(Errc::DimMismatch, "class map and background map differ in size");
    order.push_back(&c);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->class_id < b->class_id; });
  LabelMap labels(bg.width, bg.height);
  for (std::size_t p = 0; p < bg.pixels(); ++p) {
    const ClassMap* best = order.front();
    for (const auto* c : order)
      if (c->map.values[p] > best->map.values[p]) best = c;
    labels.labels[p] = bg.values[p] > best->map.values[p] ? LabelMap::kBackground : LabelMap::of_class(best->class_id);
  }
  return labels;
}

/// Normalized map as 8-bit PGM, values scaled by 255.
inline void write_activation_pgm(const std::filesystem::path& path, const ActivationMap& m) {
  std::vector<std::uint8_t> bytes(m.pixels());
  for (std::size_t p = 0; p < m.pixels(); ++p) bytes[p] = detail::to_byte(m.values[p]);
  write_pgm(path, m.width, m.height, bytes);
}

inline void write_label_pgm(const std::filesystem::path& path, const LabelMap& m) {
  std::vector<std::uint8_t> bytes(m.pixels());
  for (std::size_t p = 0; p < m.pixels(); ++p) {
    if (m.labels[p] < 0 || m.labels[p] > 255) fail(Errc::LabelOutOfRange, "label does not fit in 8 bits");
    bytes[p] = static_cast<std::uint8_t>(m.labels[p]);
  }
  write_pgm(path, m.width, m.height, bytes);
}

inline LabelMap read_label_pgm(const std::filesystem::path& path) {
  const auto g = read_pgm(path);
  LabelMap m(g.width, g.height);
  for (std::size_t p = 0; p < m.pixels(); ++p) m.labels[p] = g.bytes[p];
  return m;
}

/// Lossless CSV: one line per image row, values printed with 17 significant digits.
inline void write_activation_csv(const std::filesystem::path& path, const ActivationMap& m) {
  write_atomically(path, [&](std::ostream& out) {
    out << std::setprecision(17);
    for (std::size_t y = 0; y < m.height; ++y) {
      for (std::size_t x = 0; x < m.width; ++x) out << (x ? "," : "") << m.values[y * m.width + x];
      out << '\n';
    }
  });
}

inline ActivationMap read_activation_csv(const std::filesystem::path& path, MapKind kind = MapKind::Raw) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  std::vector<double> values;
  std::size_t width = 0, height = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(Errc::MalformedLine, path.string() + ": row " + std::to_string(height + 1) + ": bad value");
      }
      ++n;
    }
    if (height == 0) width = n;
    if (n != width) fail(Errc::MalformedLine, path.string() + ": ragged row " + std::to_string(height + 1));
    ++height;
  }
  return {width, height, std::move(values), kind};
}

}  // namespace tamkit
