#pragma once

#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tamkit/common.hpp"
#include "tamkit/tam.hpp"

namespace tamkit {

/// (K+1) x (K+1) pixel counts, rows ground truth, columns prediction. Label 0
/// is background, class c is c + 1.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : n_(num_classes + 1), counts_(n_ * n_, 0) {}

  std::size_t num_labels() const { return n_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * n_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  void accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.width != gt.width || pred.height != gt.height)
      fail(Errc::DimMismatch, "prediction and ground truth differ in size");
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
      const int g = gt.labels[p], q = pred.labels[p];
      if (g < 0 || q < 0 || static_cast<std::size_t>(g) >= n_ || static_cast<std::size_t>(q) >= n_)
        fail(Errc::LabelOutOfRange, "label outside [0, " + std::to_string(n_ - 1) + "]");
      ++counts_[static_cast<std::size_t>(g) * n_ + static_cast<std::size_t>(q)];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.n_ != n_) fail(Errc::DimMismatch, "confusion matrices differ in size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt) {
  cm.accumulate(pred, gt);
  return cm;
}

struct MetricReport {
  std::vector<std::string> names;               // names[0] is background
  std::vector<std::optional<double>> iou;       // nullopt when the union is empty
  double mean_iou = 0.0;
  std::optional<double> precision;              // pooled over foreground classes
  std::optional<double> recall;
};

/// IoU per label, mean over labels with a non-empty union, and pixel-pooled
/// foreground precision and recall.
inline MetricReport iou(const ConfusionMatrix& cm, std::vector<std::string> names = {}) {
  if (cm.total() == 0) fail(Errc::EmptyMatrix, "no pixels were evaluated");
  const std::size_t n = cm.num_labels();
  if (names.empty()) {
    names.push_back("background");
    for (std::size_t c = 1; c < n; ++c) names.push_back("class" + std::to_string(c - 1));
  }
  MetricReport r;
  r.names = std::move(names);
  std::uint64_t tp_fg = 0, fp_fg = 0, fn_fg = 0;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c), fp = col - tp, fn = row - tp;
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) {
      r.iou.push_back(std::nullopt);
    } else {
      const double v = static_cast<double>(tp) / static_cast<double>(uni);
      r.iou.push_back(v);
      sum += v;
      ++counted;
    }
    if (c > 0) {
      tp_fg += tp;
      fp_fg += fp;
      fn_fg += fn;
    }
  }
  r.mean_iou = counted ? sum / static_cast<double>(counted) : 0.0;
  if (tp_fg + fp_fg) r.precision = static_cast<double>(tp_fg) / static_cast<double>(tp_fg + fp_fg);
  if (tp_fg + fn_fg) r.recall = static_cast<double>(tp_fg) / static_cast<double>(tp_fg + fn_fg);
  return r;
}

inline nlohmann::json to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < r.iou.size(); ++c) per_class.push_back({{"name", r.names[c]}, {"iou", opt(r.iou[c])}});
  return {{"mean_iou", r.mean_iou}, {"precision", opt(r.precision)}, {"recall", opt(r.recall)}, {"per_class", per_class}};
}

inline std::string to_text(const MetricReport& r) {
  std::ostringstream out;
  std::size_t width = 5;
  for (const auto& n : r.names) width = std::max(width, n.size());
  out << std::left << std::setw(static_cast<int>(width)) << "class" << "  " << "iou" << '\n';
  out << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    out << std::left << std::setw(static_cast<int>(width)) << r.names[c] << "  ";
    if (r.iou[c]) out << *r.iou[c]; else out << "-";
    out << '\n';
  }
  out << std::left << std::setw(static_cast<int>(width)) << "mean" << "  " << r.mean_iou << '\n';
  out << std::left << std::setw(static_cast<int>(width)) << "precision" << "  ";
  if (r.precision) out << *r.precision; else out << "-";
  out << '\n' << std::left << std::setw(static_cast<int>(width)) << "recall" << "  ";
  if (r.recall) out << *r.recall; else out << "-";
  out << '\n';
  return out.str();
}

struct ClassGroup {
  std::string name;
  std::set<int> classes;
};

struct GroupRetrieval {
  std::string name;
  std::optional<double> precision;  // mean over images that retrieved a class of the group
  std::optional<double> recall;     // mean over images whose ground truth has a class of the group
  std::size_t precision_images = 0;
  std::size_t recall_images = 0;
};

/// Per group: per-image precision |R n G| / |R| and recall |R n G| / |G| with
/// both sets restricted to the group, averaged over images where the
/// denominator is non-zero.
inline std::vector<GroupRetrieval> tag_retrieval_metrics(const std::map<std::string, std::set<int>>& retrieved,
                                                         const std::map<std::string, std::set<int>>& ground_truth,
                                                         const std::vector<ClassGroup>& groups) {
  for (const auto& [id, _] : retrieved)
    if (!ground_truth.count(id)) fail(Errc::DimMismatch, "image '" + id + "' has no ground-truth tags");
  for (const auto& [id, _] : ground_truth)
    if (!retrieved.count(id)) fail(Errc::DimMismatch, "image '" + id + "' has no retrieved tags");

  std::vector<GroupRetrieval> out;
  for (const auto& group : groups) {
    GroupRetrieval g;
    g.name = group.name;
    double p_sum = 0.0, r_sum = 0.0;
    for (const auto& [id, gt_all] : ground_truth) {
      const auto& ret_all = retrieved.at(id);
      std::size_t ret = 0, gt = 0, hit = 0;
      for (int c : group.classes) {
        const bool r = ret_all.count(c) > 0, t = gt_all.count(c) > 0;
        ret += r;
        gt += t;
        hit += r && t;
      }
      if (ret) {
        p_sum += static_cast<double>(hit) / static_cast<double>(ret);
        ++g.precision_images;
      }
      if (gt) {
        r_sum += static_cast<double>(hit) / static_cast<double>(gt);
        ++g.recall_images;
      }
    }
    if (g.precision_images) g.precision = p_sum / static_cast<double>(g.precision_images);
    if (g.recall_images) g.recall = r_sum / static_cast<double>(g.recall_images);
    out.push_back(std::move(g));
  }
  return out;
}

/// Fraction of pixels where labels(I) agrees with the mirrored labels(I_f).
inline double flip_consistency(const LabelMap& labels, const LabelMap& labels_flipped) {
  if (labels.width != labels_flipped.width || labels.height != labels_flipped.height)
    fail(Errc::DimMismatch, "label maps differ in size");
  if (labels.pixels() == 0) fail(Errc::DimMismatch, "empty label map");
  const auto mirrored = flip_horizontal(labels_flipped);
  std::size_t same = 0;
  for (std::size_t p = 0; p < labels.pixels(); ++p) same += labels.labels[p] == mirrored.labels[p];
  return static_cast<double>(same) / static_cast<double>(labels.pixels());
}

}  // namespace tamkit
