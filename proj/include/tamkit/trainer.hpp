#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tamkit/caption_parser.hpp"
#include "tamkit/common.hpp"
#include "tamkit/encoder.hpp"
#include "tamkit/losses.hpp"
#include "tamkit/tam.hpp"
#include "tamkit/text_embedding.hpp"

namespace tamkit {

struct AugmentationPolicy {
  double scale_min = 1.0;
  double scale_max = 1.25;
  std::size_t crop = 0;  // 0: crop back to the input size
  double mirror_probability = 0.5;

  void validate(std::size_t width, std::size_t height) const {
    if (!(scale_min > 0.0) || scale_max < scale_min) fail(Errc::InvalidConfig, "bad augmentation scale range");
    if (mirror_probability < 0.0 || mirror_probability > 1.0) fail(Errc::InvalidConfig, "mirror probability outside [0,1]");
    const std::size_t c = crop ? crop : std::max(width, height);
    const double smallest = scale_min * static_cast<double>(std::min(width, height));
    if (static_cast<double>(c) > std::round(smallest))
      fail(Errc::InvalidConfig, "crop size exceeds the smallest scaled image");
  }
};

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  SgdConfig sgd;
  LossWeights weights;
  ConceptSampling concepts;
  AutoConsistencyOptions ac;
  AugmentationPolicy augment;
  EncoderConfig encoder;
  double w_res = 0.2;

  void validate() const {
    if (epochs < 1) fail(Errc::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1) fail(Errc::InvalidConfig, "batch_size must be >= 1");
    sgd.validate();
    weights.validate();
    encoder.validate();
    if (!(w_res >= 0.0)) fail(Errc::InvalidConfig, "w_res must be >= 0");
  }
};

/// Bilinear rescale by `scale`, random crop to `crop` (or the input size) and
/// random horizontal mirror.
inline Image augment(const Image& img, const AugmentationPolicy& policy, Rng& rng) {
  const double s = rng.uniform(policy.scale_min, policy.scale_max);
  const auto sw = static_cast<std::size_t>(std::round(static_cast<double>(img.width) * s));
  const auto sh = static_cast<std::size_t>(std::round(static_cast<double>(img.height) * s));
  const std::size_t cw = policy.crop ? policy.crop : img.width;
  const std::size_t ch = policy.crop ? policy.crop : img.height;
  if (cw > sw || ch > sh) fail(Errc::InvalidConfig, "crop larger than the scaled image");
  const std::size_t ox = rng.below(sw - cw + 1);
  const std::size_t oy = rng.below(sh - ch + 1);
  const bool mirror = rng.bernoulli(policy.mirror_probability);

  Image out(cw, ch, img.channels);
  const double fx = static_cast<double>(img.width) / static_cast<double>(sw);
  const double fy = static_cast<double>(img.height) / static_cast<double>(sh);
  for (std::size_t y = 0; y < ch; ++y) {
    const double sy = std::clamp((static_cast<double>(y + oy) + 0.5) * fy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < cw; ++x) {
      const double sx = std::clamp((static_cast<double>(x + ox) + 0.5) * fx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = sx - static_cast<double>(x0);
      const std::size_t dst_x = mirror ? cw - 1 - x : x;
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(c, y0, x0) * (1 - tx) + img.at(c, y0, x1) * tx;
        const double bot = img.at(c, y1, x0) * (1 - tx) + img.at(c, y1, x1) * tx;
        out.at(c, y, dst_x) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

/// Memoizes input embeddings per token sequence. Fully out-of-vocabulary
/// snippets map to nullopt and are reported once.
class SnippetEncoder {
 public:
  SnippetEncoder(const EmbeddingTable& table, const Lexicon& lexicon) : table_(&table), lexicon_(&lexicon) {}

  const Vector* input_embedding(const Tokens& tokens) {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(tokens);
    if (it == cache_.end()) {
      std::optional<Vector> v;
      try {
        v = snippet_input_embedding(tokens, *table_, *lexicon_);
      } catch (const Error& e) {
        if (e.code() != Errc::AllTokensOOV) throw;
        log_warning("dropping snippet '" + detail::join(tokens) + "': no token in the embedding table");
      }
      it = cache_.emplace(tokens, std::move(v)).first;
    }
    return it->second ? &*it->second : nullptr;
  }

  std::size_t dim() const { return table_->dim(); }

 private:
  const EmbeddingTable* table_;
  const Lexicon* lexicon_;
  std::mutex mutex_;
  std::map<Tokens, std::optional<Vector>> cache_;
};

/// State that fixes the non-differentiable choices of one loss evaluation.
struct FrozenState {
  EncoderCache masks;
  EncoderCache masks_f;
  std::optional<std::pair<LabelMap, LabelMap>> pseudo;
};

struct ImageLoss {
  LossValue value;
  FrozenState state;
};

namespace detail {

struct EmbeddedSnippet {
  TextEmbedding te;
  Vector grad;  // dL/de_txt
};

}  // namespace detail

/// Loss of one (augmented) image and, when `grads` is given, its gradient with
/// respect to every model parameter, accumulated into `grads`. Loss parts with
/// zero weight are not evaluated.
inline ImageLoss image_loss(const Model& model, const Image& image, const ParsedImage& parsed,
                            const ConceptBatch& concepts, const ClassVocabulary& vocab, SnippetEncoder& encoder,
                            const TrainConfig& cfg, ModelGrads* grads, const FrozenState* frozen = nullptr) {
  const auto& w = cfg.weights;
  const std::size_t dim = model.text.dim;
  ImageLoss result;

  EncoderCache cache;
  const auto e_vis = forward(model.encoder, image, &cache, frozen ? &frozen->masks : nullptr);
  if (e_vis.dim != dim) fail(Errc::DimMismatch, "encoder output dim differs from the textual path dim");
  const std::size_t P = e_vis.pixels();
  Vector mean_e(dim, 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < dim; ++k) mean_e[k] += e_vis.data[p * dim + k];
  for (auto& v : mean_e) v /= static_cast<double>(P);

  auto embed = [&](const Tokens& tokens) -> std::optional<detail::EmbeddedSnippet> {
    const Vector* in = encoder.input_embedding(tokens);
    if (!in) return std::nullopt;
    return detail::EmbeddedSnippet{textual_path(*in, model.text), Vector(dim, 0.0)};
  };

  // class names (singular form) for every vocabulary class
  std::vector<detail::EmbeddedSnippet> classes;
  std::vector<double> pooled_cls;
  for (const auto& e : vocab.entries()) {
    auto s = embed(e.singular);
    if (!s) fail(Errc::AllTokensOOV, "class name '" + e.name() + "' is not in the embedding table");
    pooled_cls.push_back(dot(mean_e, s->te.e_txt));
    classes.push_back(std::move(*s));
  }
  // grad wrt pooled logits becomes a per-pixel constant on E_vis
  Vector grad_mean(dim, 0.0);

  LossParts parts;
  if (w.lambda_cls > 0.0) {
    const auto bce = class_loss(pooled_cls, parsed.tags);
    parts.cls = bce.loss;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const double g = w.lambda_cls * bce.grad[c];
      for (std::size_t k = 0; k < dim; ++k) {
        grad_mean[k] += g * classes[c].te.e_txt[k];
        classes[c].grad[k] += g * mean_e[k];
      }
    }
  }

  std::vector<detail::EmbeddedSnippet> concept_embs;
  if (w.lambda_cpt > 0.0) {
    std::vector<double> pooled_present, pooled_contrastive;
    for (const auto& s : concepts.present)
      if (auto e = embed(s.tokens)) {
        pooled_present.push_back(dot(mean_e, e->te.e_txt));
        concept_embs.push_back(std::move(*e));
      }
    for (const auto& s : concepts.contrastive)
      if (auto e = embed(s.tokens)) {
        pooled_contrastive.push_back(dot(mean_e, e->te.e_txt));
        concept_embs.push_back(std::move(*e));
      }
    if (!concept_embs.empty()) {
      const auto bce = concepts_loss(pooled_present, pooled_contrastive);
      parts.cpt = bce.loss;
      for (std::size_t t = 0; t < concept_embs.size(); ++t) {
        const double g = w.lambda_cpt * bce.grad[t];
        for (std::size_t k = 0; k < dim; ++k) {
          grad_mean[k] += g * concept_embs[t].te.e_txt[k];
          concept_embs[t].grad[k] += g * mean_e[k];
        }
      }
    }
  }

  VisualEmbeddingMap grad_e(e_vis.width, e_vis.height, dim);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < dim; ++k) grad_e.data[p * dim + k] = grad_mean[k] / static_cast<double>(P);

  const std::vector<int> present(parsed.tags.begin(), parsed.tags.end());
  EncoderCache cache_f;
  VisualEmbeddingMap grad_e_f;
  bool have_flip = false;
  if (w.lambda_ac > 0.0 && !present.empty()) {
    const auto e_vis_f = forward(model.encoder, flip_horizontal(image), &cache_f, frozen ? &frozen->masks_f : nullptr);
    std::vector<ActivationMap> tams, tams_f;
    for (int c : present) {
      tams.push_back(tam(e_vis, classes[static_cast<std::size_t>(c)].te.e_txt));
      tams_f.push_back(tam(e_vis_f, classes[static_cast<std::size_t>(c)].te.e_txt));
    }
    const auto* fixed = frozen && frozen->pseudo ? &*frozen->pseudo : nullptr;
    const auto ac = auto_consistency_loss(tams, tams_f, present, cfg.ac, fixed);
    parts.ac = ac.loss;
    result.state.pseudo = std::make_pair(ac.pseudo, ac.pseudo_f);
    grad_e_f = VisualEmbeddingMap(e_vis.width, e_vis.height, dim);
    for (std::size_t i = 0; i < present.size(); ++i) {
      auto& cls = classes[static_cast<std::size_t>(present[i])];
      for (std::size_t p = 0; p < P; ++p) {
        const double g = w.lambda_ac * ac.grad[i][p];
        const double gf = w.lambda_ac * ac.grad_f[i][p];
        for (std::size_t k = 0; k < dim; ++k) {
          grad_e.data[p * dim + k] += g * cls.te.e_txt[k];
          grad_e_f.data[p * dim + k] += gf * cls.te.e_txt[k];
          cls.grad[k] += g * e_vis.data[p * dim + k] + gf * e_vis_f.data[p * dim + k];
        }
      }
    }
    have_flip = true;
  }

  result.value = total_loss(parts, w);
  result.state.masks = cache;
  if (have_flip) result.state.masks_f = cache_f;

  if (grads) {
    backward(model.encoder, cache, grad_e, grads->encoder);
    if (have_flip) backward(model.encoder, cache_f, grad_e_f, grads->encoder);
    for (const auto& s : classes) textual_path_backward(s.te, model.text, s.grad, grads->m_txt);
    for (const auto& s : concept_embs) textual_path_backward(s.te, model.text, s.grad, grads->m_txt);
  }
  return result;
}

struct TrainingExample {
  Image image;
  ParsedImage parsed;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  LossParts parts;
  double total = 0.0;
};

inline Model init_model(const TrainConfig& cfg, Rng& rng) {
  Model m;
  m.encoder = EncoderParams::init(cfg.encoder, rng);
  m.text = TextualPathParams::init(cfg.encoder.dim(), cfg.w_res, rng);
  return m;
}

struct TrainResult {
  Model model;
  std::vector<StepLog> log;
};

using StepCallback = std::function<void(const StepLog&)>;
using EpochCallback = std::function<void(const Model&, std::size_t epoch)>;

/// Mini-batch SGD over the examples. Each step: augment, sample concepts,
/// evaluate the weighted losses on the image (and its mirror for the
/// auto-consistency term), average gradients over the batch, update.
inline TrainResult train(std::span<const TrainingExample> examples, const ClassVocabulary& vocab,
                         SnippetEncoder& encoder, const TrainConfig& cfg, const StepCallback& on_step = {},
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (examples.empty()) fail(Errc::InvalidConfig, "training set is empty");
  if (cfg.encoder.dim() != encoder.dim())
    fail(Errc::DimMismatch, "encoder dim " + std::to_string(cfg.encoder.dim()) + " != embedding dim " +
                                std::to_string(encoder.dim()));
  for (const auto& ex : examples) cfg.augment.validate(ex.image.width, ex.image.height);

  Rng rng(cfg.seed);
  TrainResult result;
  result.model = init_model(cfg, rng);

  std::vector<ParsedImage> corpus;
  for (const auto& ex : examples) corpus.push_back(ex.parsed);

  const std::size_t n = examples.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t first = b * cfg.batch_size;
      const std::size_t last = std::min(n, first + cfg.batch_size);
      auto grads = ModelGrads::zeros_like(result.model);
      StepLog row;
      row.step = step;
      row.epoch = epoch;
      row.lr = poly_lr(cfg.sgd.lr_weights, step, total_steps, cfg.sgd.poly_power);
      for (std::size_t i = first; i < last; ++i) {
        const auto idx = order[i];
        const Image img = augment(examples[idx].image, cfg.augment, rng);
        const auto batch = sample_contrastive(corpus, idx, rng, cfg.concepts);
        const auto loss = image_loss(result.model, img, corpus[idx], batch, vocab, encoder, cfg, &grads);
        row.parts.cls += loss.value.parts.cls;
        row.parts.cpt += loss.value.parts.cpt;
        row.parts.ac += loss.value.parts.ac;
        row.total += loss.value.total;
      }
      const double inv = 1.0 / static_cast<double>(last - first);
      row.parts.cls *= inv;
      row.parts.cpt *= inv;
      row.parts.ac *= inv;
      row.total *= inv;
      auto scaled = ModelGrads::zeros_like(result.model);
      scaled.add(grads, inv);
      sgd_step(result.model, scaled, step, total_steps, cfg.sgd);
      result.log.push_back(row);
      if (on_step) on_step(row);
      ++step;
    }
    if (on_epoch) on_epoch(result.model, epoch);
  }
  return result;
}

struct ImageInference {
  LabelMap labels;
  std::vector<ClassMap> cams;
  ActivationMap background;
  std::vector<std::pair<Snippet, ActivationMap>> tams;  // normalized, filled when requested
};

/// CAMs from class names and related compounds of every tagged class, the
/// background map and argmax labels. An image without tags is all background.
inline ImageInference infer_image(const Model& model, const Image& image, const ParsedImage& parsed,
                                  const ClassVocabulary& vocab, SnippetEncoder& encoder,
                                  double alpha = kDefaultBackgroundAlpha, bool keep_tams = false) {
  ImageInference out;
  const auto e_vis = forward(model.encoder, image);
  for (int c : parsed.tags) {
    std::vector<ActivationMap> norm;
    for (const auto& s : parsed.concept_set(c, vocab)) {
      const Vector* in = encoder.input_embedding(s.tokens);
      if (!in) continue;
      auto n = normalize_tam(tam(e_vis, textual_path(*in, model.text).e_txt));
      if (keep_tams) out.tams.emplace_back(s, n);
      norm.push_back(std::move(n));
    }
    if (norm.empty()) norm.emplace_back(image.width, image.height, MapKind::Normalized);
    out.cams.push_back({c, cam(norm)});
  }
  if (out.cams.empty()) {
    log_warning("image '" + parsed.image_id + "' has no tagged classes; labeling everything background");
    out.labels = LabelMap(image.width, image.height);
    out.background = ActivationMap(image.width, image.height, MapKind::Background, 1.0);
    return out;
  }
  out.background = background_map(std::span<const ClassMap>(out.cams), alpha);
  out.labels = estimate_labels(out.cams, out.background);
  return out;
}

}  // namespace tamkit
