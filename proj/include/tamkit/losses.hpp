#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tamkit/caption_parser.hpp"
#include "tamkit/common.hpp"
#include "tamkit/tam.hpp"

namespace tamkit {

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_cpt = 0.3;
  double lambda_ac = 0.001;

  void validate() const {
    for (double w : {lambda_cls, lambda_cpt, lambda_ac})
      if (!(w >= 0.0) || !std::isfinite(w)) fail(Errc::InvalidConfig, "loss weights must be finite and >= 0");
  }
};

struct LossParts {
  double cls = 0.0;
  double cpt = 0.0;
  double ac = 0.0;
};

struct LossValue {
  double total = 0.0;
  LossParts parts;
};

inline double avg_pool(std::span<const double> x) {
  if (x.empty()) fail(Errc::DimMismatch, "cannot pool an empty map");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double avg_pool(const ActivationMap& x) { return avg_pool(x.values); }

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct BceResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logit, same order as the input logits
};

/// -sum_{target} log sigma(z) - sum_{non-target} log(1 - sigma(z)).
inline BceResult multilabel_bce(std::span<const double> logits, std::span<const std::uint8_t> targets) {
  BceResult r;
  r.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    if (targets[i]) {
      r.loss += softplus(-z);
      r.grad[i] = sigmoid(z) - 1.0;
    } else {
      r.loss += softplus(z);
      r.grad[i] = sigmoid(z);
    }
  }
  return r;
}

/// `pooled[c]` is the pooled class-name TAM logit of vocabulary class c.
inline BceResult class_loss(std::span<const double> pooled, const std::set<int>& present) {
  std::vector<std::uint8_t> targets(pooled.size());
  for (std::size_t c = 0; c < pooled.size(); ++c) targets[c] = present.count(static_cast<int>(c)) > 0;
  return multilabel_bce(pooled, targets);
}

/// Gradient order: present concepts first, then contrastive ones.
inline BceResult concepts_loss(std::span<const double> pooled_present, std::span<const double> pooled_contrastive) {
  if (pooled_present.empty() && pooled_contrastive.empty()) fail(Errc::EmptyBatch, "no concepts to score");
  const std::size_t n = pooled_present.size() + pooled_contrastive.size();
  std::vector<double> logits(pooled_present.begin(), pooled_present.end());
  logits.insert(logits.end(), pooled_contrastive.begin(), pooled_contrastive.end());
  std::vector<std::uint8_t> targets(n, 0);
  std::fill_n(targets.begin(), pooled_present.size(), 1);
  return multilabel_bce(logits, targets);
}

struct ConceptBatch {
  std::vector<Snippet> present;
  std::vector<Snippet> contrastive;
};

enum class ConceptTypes { AllCompounds, ClassRelatedOnly };

struct ConceptSampling {
  std::size_t max_present = 10;
  std::size_t contrastive_images = 10;
  std::size_t max_contrastive = 50;
  ConceptTypes types = ConceptTypes::AllCompounds;
};

namespace detail {

inline bool admitted(const Snippet& s, ConceptTypes types) {
  if (!s.is_compound()) return false;
  return types == ConceptTypes::AllCompounds || s.kind == SnippetKind::ClassRelatedCompound;
}

/// Compounds of one image, identical token sequences collapsed (first kept).
inline std::vector<Snippet> unique_compounds(const ParsedImage& img, ConceptTypes types) {
  std::vector<Snippet> out;
  std::set<Tokens> seen;
  for (const auto& s : img.compounds)
    if (admitted(s, types) && seen.insert(s.tokens).second) out.push_back(s);
  return out;
}

}  // namespace detail

/// Present concepts: up to max_present distinct compounds of the image.
/// Contrastive concepts: compounds of up to contrastive_images other images,
/// minus anything whose token sequence occurs in this image's captions, then
/// up to max_contrastive of them.
inline ConceptBatch sample_contrastive(std::span<const ParsedImage> corpus, std::size_t image_index, Rng& rng,
                                       const ConceptSampling& opts = {}) {
  const ParsedImage& own = corpus[image_index];
  ConceptBatch batch;

  auto own_unique = detail::unique_compounds(own, opts.types);
  auto keep = rng.sample_without_replacement(own_unique.size(), opts.max_present);
  std::sort(keep.begin(), keep.end());
  for (auto i : keep) batch.present.push_back(own_unique[i]);

  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (i != image_index && corpus[i].image_id != own.image_id) others.push_back(i);
  const auto picked = rng.sample_without_replacement(others.size(), opts.contrastive_images);

  auto occurs_in_own = [&](const Tokens& t) {
    for (const auto& caption : own.caption_tokens)
      if (detail::contains_sequence(caption, t)) return true;
    for (const auto& s : own.compounds)
      if (s.tokens == t) return true;
    return false;
  };
  std::vector<Snippet> pool;
  std::set<Tokens> seen;
  for (auto pi : picked)
    for (const auto& s : corpus[others[pi]].compounds)
      if (detail::admitted(s, opts.types) && !occurs_in_own(s.tokens) && seen.insert(s.tokens).second)
        pool.push_back(s);
  for (auto i : rng.sample_without_replacement(pool.size(), opts.max_contrastive)) batch.contrastive.push_back(pool[i]);
  return batch;
}

enum class AcForm {
  LogSigmoidOfSoftmax,  // -log sigma(Z), as printed
  CrossEntropy,         // -log Z
};

struct AutoConsistencyOptions {
  double alpha = kDefaultBackgroundAlpha;
  AcForm form = AcForm::LogSigmoidOfSoftmax;
};

struct AutoConsistencyResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;    // per present class, per pixel of the image
  std::vector<std::vector<double>> grad_f;  // same for the flipped image
  LabelMap pseudo;                          // argmax labels of the image
  LabelMap pseudo_f;                        // argmax labels of the flipped image
};

/// Argmax pseudo-labels from raw class-name TAMs: normalized TAMs act as the
/// class maps and the background comes from them.
inline LabelMap pseudo_labels(std::span<const ActivationMap> tams, std::span<const int> present, double alpha) {
  std::vector<ClassMap> cams;
  for (std::size_t i = 0; i < tams.size(); ++i) cams.push_back({present[i], normalize_tam(tams[i])});
  const auto bg = background_map(std::span<const ClassMap>(cams), alpha);
  return estimate_labels(cams, bg);
}

namespace detail {

/// Adds one half of the flip-consistency loss: `tams` scored against `target`
/// labels (already mirrored into `tams`' frame).
inline double ac_half(std::span<const ActivationMap> tams, std::span<const int> present, const LabelMap& target,
                      AcForm form, std::vector<std::vector<double>>& grad) {
  const std::size_t n_cls = present.size();
  const std::size_t P = target.pixels();
  const double scale = 0.5 / static_cast<double>(P);
  std::vector<double> z(n_cls + 1);
  double loss = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    // softmax over {background (logit 0)} u present classes
    double peak = 0.0;
    for (std::size_t i = 0; i < n_cls; ++i) peak = std::max(peak, tams[i].values[p]);
    double denom = std::exp(-peak);
    z[0] = denom;
    for (std::size_t i = 0; i < n_cls; ++i) {
      z[i + 1] = std::exp(tams[i].values[p] - peak);
      denom += z[i + 1];
    }
    for (auto& v : z) v /= denom;

    std::size_t k = 0;
    if (const int label = target.labels[p]; label != LabelMap::kBackground) {
      const auto it = std::find(present.begin(), present.end(), label - 1);
      if (it == present.end()) fail(Errc::LabelOutOfRange, "pseudo-label outside present classes");
      k = static_cast<std::size_t>(it - present.begin()) + 1;
    }
    if (form == AcForm::LogSigmoidOfSoftmax) {
      loss += scale * softplus(-z[k]);
      const double d_zk = -scale * (1.0 - sigmoid(z[k]));
      for (std::size_t i = 0; i < n_cls; ++i) {
        const double delta = (i + 1 == k) ? 1.0 : 0.0;
        grad[i][p] += d_zk * z[k] * (delta - z[i + 1]);
      }
    } else {
      loss += -scale * std::log(std::max(z[k], std::numeric_limits<double>::min()));
      for (std::size_t i = 0; i < n_cls; ++i) {
        const double delta = (i + 1 == k) ? 1.0 : 0.0;
        grad[i][p] += scale * (z[i + 1] - delta);
      }
    }
  }
  return loss;
}

}  // namespace detail

/// Flip-consistency loss between an image and its mirror. `tams[i]` and
/// `tams_f[i]` are the raw class-name TAMs of class present[i]. Pseudo-labels
/// are constants; passing `fixed` reuses given labels instead of recomputing.
inline AutoConsistencyResult auto_consistency_loss(std::span<const ActivationMap> tams,
                                                   std::span<const ActivationMap> tams_f, std::span<const int> present,
                                                   const AutoConsistencyOptions& opts = {},
                                                   const std::pair<LabelMap, LabelMap>* fixed = nullptr) {
  if (present.empty()) fail(Errc::NoPresentClasses, "auto-consistency needs a present class");
  if (tams.size() != present.size() || tams_f.size() != present.size())
    fail(Errc::DimMismatch, "one TAM per present class is required for both images");
  for (std::size_t i = 0; i < present.size(); ++i)
    if (!tams[i].same_shape(tams.front()) || !tams_f[i].same_shape(tams.front()))
      fail(Errc::DimMismatch, "TAMs of the image and its mirror differ in size");

  AutoConsistencyResult r;
  if (fixed) {
    r.pseudo = fixed->first;
    r.pseudo_f = fixed->second;
  } else {
    r.pseudo = pseudo_labels(tams, present, opts.alpha);
    r.pseudo_f = pseudo_labels(tams_f, present, opts.alpha);
  }
  const std::size_t P = tams.front().pixels();
  r.grad.assign(present.size(), std::vector<double>(P, 0.0));
  r.grad_f.assign(present.size(), std::vector<double>(P, 0.0));
  r.loss += detail::ac_half(tams_f, present, flip_horizontal(r.pseudo), opts.form, r.grad_f);
  r.loss += detail::ac_half(tams, present, flip_horizontal(r.pseudo_f), opts.form, r.grad);
  return r;
}

inline LossValue total_loss(const LossParts& parts, const LossWeights& w) {
  LossValue v;
  v.parts = parts;
  v.total = w.lambda_cls * parts.cls + w.lambda_cpt * parts.cpt + w.lambda_ac * parts.ac;
  if (!std::isfinite(v.total) || !std::isfinite(parts.cls) || !std::isfinite(parts.cpt) || !std::isfinite(parts.ac))
    fail(Errc::NonFiniteLoss, "loss is not finite");
  return v;
}

}  // namespace tamkit
