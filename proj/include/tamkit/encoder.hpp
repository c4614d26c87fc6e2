#pragma once

// Small fully-convolutional pixel-embedding network: a stack of "same"-padded
// 3x3 (optionally dilated) relu convolutions followed by a linear 1x1
// projection to the joint embedding dimension. Forward and backward are
// written out by hand.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tamkit/common.hpp"
#include "tamkit/image_io.hpp"
#include "tamkit/losses.hpp"
#include "tamkit/tam.hpp"
#include "tamkit/text_embedding.hpp"

namespace tamkit {

struct EncoderConfig {
  /// channels.front() is the image channel count, channels.back() the embedding
  /// dimension. Every step except the last is a k x k relu conv; the last is 1x1.
  std::vector<std::size_t> channels{3, 16, 32, 16};
  /// One dilation per k x k layer; empty means all 1.
  std::vector<std::size_t> dilations{};
  std::size_t kernel = 3;
  /// Subtracted from every pixel value before the first layer.
  double input_offset = 0.5;

  std::size_t dim() const { return channels.back(); }
  std::size_t spatial_layers() const { return channels.size() - 2; }
  std::size_t dilation(std::size_t layer) const { return dilations.empty() ? 1 : dilations[layer]; }

  void validate() const {
    if (channels.size() < 2) fail(Errc::InvalidConfig, "encoder needs at least input and output channels");
    for (auto c : channels)
      if (c == 0) fail(Errc::InvalidConfig, "channel counts must be positive");
    if (kernel % 2 == 0) fail(Errc::InvalidConfig, "kernel size must be odd for same padding");
    if (!dilations.empty() && dilations.size() != spatial_layers())
      fail(Errc::InvalidConfig, "need one dilation per " + std::to_string(kernel) + "x" + std::to_string(kernel) + " layer");
    for (auto d : dilations)
      if (d == 0) fail(Errc::InvalidConfig, "dilation must be positive");
  }
};

struct ConvLayer {
  std::size_t in = 0, out = 0, kernel = 1, dilation = 1;
  bool relu = true;
  std::vector<double> weight;  // [out][in][ky][kx]
  std::vector<double> bias;    // [out]

  std::size_t weight_index(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return ((o * in + i) * kernel + ky) * kernel + kx;
  }
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<ConvLayer> layers;

  /// Uniform fan-in initialization (relu gain on hidden layers), zero biases.
  static EncoderParams init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderParams p;
    p.config = config;
    const std::size_t n = config.channels.size() - 1;
    for (std::size_t l = 0; l < n; ++l) {
      ConvLayer layer;
      layer.in = config.channels[l];
      layer.out = config.channels[l + 1];
      const bool last = l + 1 == n;
      layer.kernel = last ? 1 : config.kernel;
      layer.dilation = last ? 1 : config.dilation(l);
      layer.relu = !last;
      const double fan_in = static_cast<double>(layer.in * layer.kernel * layer.kernel);
      const double bound = std::sqrt((last ? 3.0 : 6.0) / fan_in);
      layer.weight.resize(layer.out * layer.in * layer.kernel * layer.kernel);
      for (auto& w : layer.weight) w = rng.uniform(-bound, bound);
      layer.bias.assign(layer.out, 0.0);
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  /// Parameters with all weights and biases at zero, for shape-only uses.
  static EncoderParams zeros(const EncoderConfig& config) {
    Rng rng(0);
    auto p = init(config, rng);
    for (auto& l : p.layers) std::fill(l.weight.begin(), l.weight.end(), 0.0);
    return p;
  }
};

/// Activations kept by forward() for backward(): the input of every layer and
/// the relu masks.
struct EncoderCache {
  std::size_t width = 0, height = 0;
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<std::uint8_t>> masks;

  bool empty() const { return inputs.empty(); }
};

struct EncoderGrads {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  static EncoderGrads zeros_like(const EncoderParams& p) {
    EncoderGrads g;
    for (const auto& l : p.layers) {
      g.weight.emplace_back(l.weight.size(), 0.0);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }
};

namespace detail {

struct Shift {
  std::ptrdiff_t dy, dx;
  std::size_t y0, y1, x0, x1;  // output range whose shifted source is inside the image
};

inline Shift kernel_shift(const ConvLayer& layer, std::size_t ky, std::size_t kx, std::size_t h, std::size_t w) {
  const auto half = static_cast<std::ptrdiff_t>(layer.kernel / 2);
  const auto d = static_cast<std::ptrdiff_t>(layer.dilation);
  Shift s{(static_cast<std::ptrdiff_t>(ky) - half) * d, (static_cast<std::ptrdiff_t>(kx) - half) * d, 0, 0, 0, 0};
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  s.y0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(-s.dy, 0, H));
  s.y1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(H - s.dy, 0, H));
  s.x0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(-s.dx, 0, W));
  s.x1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(W - s.dx, 0, W));
  return s;
}

inline void conv_forward(const ConvLayer& layer, std::span<const double> in, std::size_t h, std::size_t w,
                         std::span<double> out) {
  const std::size_t plane = h * w;
  for (std::size_t o = 0; o < layer.out; ++o) {
    double* dst = out.data() + o * plane;
    std::fill(dst, dst + plane, layer.bias[o]);
    for (std::size_t ky = 0; ky < layer.kernel; ++ky)
      for (std::size_t kx = 0; kx < layer.kernel; ++kx) {
        const auto s = kernel_shift(layer, ky, kx, h, w);
        for (std::size_t i = 0; i < layer.in; ++i) {
          const double wt = layer.weight[layer.weight_index(o, i, ky, kx)];
          if (wt == 0.0) continue;
          const double* src = in.data() + i * plane;
          for (std::size_t y = s.y0; y < s.y1; ++y) {
            double* drow = dst + y * w;
            const double* srow = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + s.dy) * w;
            for (std::size_t x = s.x0; x < s.x1; ++x) drow[x] += wt * srow[x + s.dx];
          }
        }
      }
  }
}

/// grad_pre is dL/d(pre-activation output). Accumulates weight/bias grads and,
/// when grad_in is non-empty, writes dL/d(input).
inline void conv_backward(const ConvLayer& layer, std::span<const double> in, std::size_t h, std::size_t w,
                          std::span<const double> grad_pre, std::vector<double>& grad_w, std::vector<double>& grad_b,
                          std::span<double> grad_in) {
  const std::size_t plane = h * w;
  if (!grad_in.empty()) std::fill(grad_in.begin(), grad_in.end(), 0.0);
  for (std::size_t o = 0; o < layer.out; ++o) {
    const double* g = grad_pre.data() + o * plane;
    double gb = 0.0;
    for (std::size_t q = 0; q < plane; ++q) gb += g[q];
    grad_b[o] += gb;
    for (std::size_t ky = 0; ky < layer.kernel; ++ky)
      for (std::size_t kx = 0; kx < layer.kernel; ++kx) {
        const auto s = kernel_shift(layer, ky, kx, h, w);
        for (std::size_t i = 0; i < layer.in; ++i) {
          const std::size_t wi = layer.weight_index(o, i, ky, kx);
          const double* src = in.data() + i * plane;
          double acc = 0.0;
          for (std::size_t y = s.y0; y < s.y1; ++y) {
            const double* grow = g + y * w;
            const double* srow = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + s.dy) * w;
            for (std::size_t x = s.x0; x < s.x1; ++x) acc += grow[x] * srow[x + s.dx];
          }
          grad_w[wi] += acc;
          if (grad_in.empty()) continue;
          const double wt = layer.weight[wi];
          double* gin = grad_in.data() + i * plane;
          for (std::size_t y = s.y0; y < s.y1; ++y) {
            const double* grow = g + y * w;
            double* irow = gin + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + s.dy) * w;
            for (std::size_t x = s.x0; x < s.x1; ++x) irow[x + s.dx] += wt * grow[x];
          }
        }
      }
  }
}

}  // namespace detail

/// Maps an image to its P x dim embedding. With `cache`, keeps what backward()
/// needs. With `frozen`, relu gates are taken from that earlier pass instead of
/// the sign of the pre-activation (used to check gradients away from kinks).
inline VisualEmbeddingMap forward(const EncoderParams& params, const Image& image, EncoderCache* cache = nullptr,
                                  const EncoderCache* frozen = nullptr) {
  if (params.layers.empty()) fail(Errc::ShapeMismatch, "encoder has no layers");
  if (image.channels != params.layers.front().in)
    fail(Errc::ShapeMismatch, "image has " + std::to_string(image.channels) + " channels, encoder expects " +
                                  std::to_string(params.layers.front().in));
  if (image.data.size() != image.pixels() * image.channels || image.pixels() == 0)
    fail(Errc::ShapeMismatch, "image buffer does not match its dimensions");
  if (frozen && (frozen->width != image.width || frozen->height != image.height))
    fail(Errc::ShapeMismatch, "frozen relu masks were recorded at another size");
  const std::size_t h = image.height, w = image.width, plane = h * w;
  if (cache) {
    *cache = EncoderCache{};
    cache->width = w;
    cache->height = h;
  }
  std::vector<double> current = image.data;
  for (auto& v : current) v -= params.config.input_offset;
  std::size_t relu_index = 0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    std::vector<double> next(layer.out * plane);
    detail::conv_forward(layer, current, h, w, next);
    if (cache) cache->inputs.push_back(current);
    if (layer.relu) {
      std::vector<std::uint8_t> mask(next.size());
      const std::vector<std::uint8_t>* gate = frozen ? &frozen->masks.at(relu_index) : nullptr;
      ++relu_index;
      for (std::size_t q = 0; q < next.size(); ++q) {
        mask[q] = gate ? (*gate)[q] : static_cast<std::uint8_t>(next[q] > 0.0);
        if (!mask[q]) next[q] = 0.0;
      }
      if (cache) cache->masks.push_back(std::move(mask));
    }
    current = std::move(next);
  }
  const std::size_t dim = params.layers.back().out;
  VisualEmbeddingMap e(w, h, dim);
  for (std::size_t c = 0; c < dim; ++c)
    for (std::size_t p = 0; p < plane; ++p) e.data[p * dim + c] = current[c * plane + p];
  return e;
}

/// Accumulates parameter gradients into `grads` for upstream dL/dE_vis.
inline void backward(const EncoderParams& params, const EncoderCache& cache, const VisualEmbeddingMap& grad_e,
                     EncoderGrads& grads) {
  if (cache.empty() || cache.inputs.size() != params.layers.size())
    fail(Errc::MissingForwardCache, "backward() needs the cache of a forward() pass");
  const std::size_t h = cache.height, w = cache.width, plane = h * w;
  const std::size_t dim = params.layers.back().out;
  if (grad_e.width != w || grad_e.height != h || grad_e.dim != dim)
    fail(Errc::DimMismatch, "upstream gradient does not match the cached forward pass");

  std::vector<double> g(dim * plane);
  for (std::size_t c = 0; c < dim; ++c)
    for (std::size_t p = 0; p < plane; ++p) g[c * plane + p] = grad_e.data[p * dim + c];

  std::size_t mask_index = cache.masks.size();
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& layer = params.layers[l];
    if (layer.relu) {
      const auto& mask = cache.masks[--mask_index];
      for (std::size_t q = 0; q < g.size(); ++q)
        if (!mask[q]) g[q] = 0.0;
    }
    std::vector<double> g_in;
    if (l > 0) g_in.resize(layer.in * plane);
    detail::conv_backward(layer, cache.inputs[l], h, w, g, grads.weight[l], grads.bias[l], g_in);
    g = std::move(g_in);
  }
}

/// Encoder plus the trainable textual path.
struct Model {
  EncoderParams encoder;
  TextualPathParams text;
};

struct ModelGrads {
  EncoderGrads encoder;
  std::vector<double> m_txt;

  static ModelGrads zeros_like(const Model& m) { return {EncoderGrads::zeros_like(m.encoder), std::vector<double>(m.text.m_txt.size(), 0.0)}; }

  void add(const ModelGrads& o, double scale = 1.0) {
    for (std::size_t l = 0; l < encoder.weight.size(); ++l) {
      for (std::size_t i = 0; i < encoder.weight[l].size(); ++i) encoder.weight[l][i] += scale * o.encoder.weight[l][i];
      for (std::size_t i = 0; i < encoder.bias[l].size(); ++i) encoder.bias[l][i] += scale * o.encoder.bias[l][i];
    }
    for (std::size_t i = 0; i < m_txt.size(); ++i) m_txt[i] += scale * o.m_txt[i];
  }
};

/// Named view of one parameter tensor.
struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double>* values;
  bool is_bias;
  bool is_head;  // final embedding layer or textual path
};

inline std::vector<TensorRef> tensors(Model& m) {
  std::vector<TensorRef> out;
  const std::size_t n = m.encoder.layers.size();
  for (std::size_t l = 0; l < n; ++l) {
    auto& layer = m.encoder.layers[l];
    const bool head = l + 1 == n;
    const std::string base = head ? "embed" : "conv" + std::to_string(l);
    out.push_back({base + ".weight", {layer.out, layer.in, layer.kernel, layer.kernel}, &layer.weight, false, head});
    out.push_back({base + ".bias", {layer.out}, &layer.bias, true, head});
  }
  out.push_back({"text.m_txt", {m.text.dim, m.text.dim}, &m.text.m_txt, false, true});
  return out;
}

/// Gradient buffers in the same order as tensors(Model&).
inline std::vector<std::vector<double>*> gradient_buffers(ModelGrads& g) {
  std::vector<std::vector<double>*> out;
  for (std::size_t l = 0; l < g.encoder.weight.size(); ++l) {
    out.push_back(&g.encoder.weight[l]);
    out.push_back(&g.encoder.bias[l]);
  }
  out.push_back(&g.m_txt);
  return out;
}

struct SgdConfig {
  double lr_weights = 0.1;
  double lr_biases = 0.2;
  double weight_decay = 0.0005;
  double poly_power = 0.9;
  double head_lr_mult = 10.0;

  void validate() const {
    if (!(lr_weights > 0.0) || !(lr_biases > 0.0)) fail(Errc::InvalidConfig, "learning rates must be positive");
    if (!(weight_decay >= 0.0)) fail(Errc::InvalidConfig, "weight decay must be >= 0");
    if (!(poly_power >= 0.0)) fail(Errc::InvalidConfig, "poly power must be >= 0");
    if (!(head_lr_mult > 0.0)) fail(Errc::InvalidConfig, "head lr multiplier must be positive");
  }
};

/// base * (1 - step/total)^power, zero once step reaches total.
inline double poly_lr(double base, std::size_t step, std::size_t total_steps, double power) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

/// p <- p - lr(step) * (g + weight_decay * p), plain SGD without momentum.
inline void sgd_step(Model& model, ModelGrads& grads, std::size_t step, std::size_t total_steps, const SgdConfig& cfg) {
  auto params = tensors(model);
  auto bufs = gradient_buffers(grads);
  for (const auto* g : bufs)
    if (!all_finite(*g)) fail(Errc::NonFiniteUpdate, "gradient has non-finite entries");
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto& ref = params[t];
    double lr = poly_lr(ref.is_bias ? cfg.lr_biases : cfg.lr_weights, step, total_steps, cfg.poly_power);
    if (ref.is_head) lr *= cfg.head_lr_mult;
    if (lr == 0.0) continue;
    auto& v = *ref.values;
    const auto& g = *bufs[t];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * (g[i] + cfg.weight_decay * v[i]);
  }
}

}  // namespace tamkit
