#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tamkit/caption_parser.hpp"
#include "tamkit/common.hpp"

namespace tamkit {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// Word -> vector dictionary. Immutable once loaded.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) fail(Errc::InvalidConfig, "embedding dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  void insert(const std::string& word, Vector v) {
    if (v.size() != dim_)
      fail(Errc::DimMismatch, "word '" + word + "': expected " + std::to_string(dim_) + ", got " + std::to_string(v.size()));
    if (!all_finite(v)) fail(Errc::MalformedLine, "word '" + word + "' has non-finite entries");
    if (!vectors_.emplace(word, std::move(v)).second) fail(Errc::DuplicateWord, word);
  }

  const Vector* find(const std::string& word) const {
    auto it = vectors_.find(word);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  /// Text format: header "count dim", then "word v1 ... v_dim" per line.
  static EmbeddingTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::Io, "cannot open " + path.string());
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) fail(Errc::MalformedLine, "line 1: missing header");
    std::size_t count = 0, dim = 0;
    {
      std::istringstream hs(line);
      std::string extra;
      if (!(hs >> count >> dim) || (hs >> extra) || dim == 0) fail(Errc::MalformedLine, "line 1: expected 'count dim'");
    }
    EmbeddingTable table(dim);
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      std::istringstream ls(line);
      std::string word;
      ls >> word;
      Vector v;
      std::string field;
      while (ls >> field) {
        try {
          std::size_t used = 0;
          v.push_back(std::stod(field, &used));
          if (used != field.size()) throw std::invalid_argument(field);
        } catch (const std::exception&) {
          fail(Errc::MalformedLine, "line " + std::to_string(line_no) + ": bad number '" + field + "'");
        }
      }
      if (v.size() != dim)
        fail(Errc::DimMismatch, "line " + std::to_string(line_no) + ": expected " + std::to_string(dim) + ", got " +
                                    std::to_string(v.size()));
      if (!all_finite(v)) fail(Errc::MalformedLine, "line " + std::to_string(line_no) + ": non-finite value");
      if (table.find(word)) fail(Errc::DuplicateWord, word);
      table.vectors_.emplace(std::move(word), std::move(v));
    }
    if (table.size() != count)
      fail(Errc::MalformedLine, "line " + std::to_string(line_no) + ": header announces " + std::to_string(count) +
                                    " entries, file has " + std::to_string(table.size()));
    return table;
  }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Vector> vectors_;
};

/// Mean of the L2-normalized vectors of the non-article, in-vocabulary tokens.
/// The mean itself is not renormalized.
inline Vector snippet_input_embedding(std::span<const std::string> tokens, const EmbeddingTable& table,
                                      const Lexicon& lexicon) {
  Vector mean(table.dim(), 0.0);
  std::size_t used = 0;
  for (const auto& t : tokens) {
    if (lexicon.is_article(t)) continue;
    const Vector* v = table.find(t);
    if (!v) continue;
    const double n = l2_norm(*v);
    if (n == 0.0) continue;
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (*v)[i] / n;
    ++used;
  }
  if (used == 0) fail(Errc::AllTokensOOV, "no token of '" + detail::join(tokens) + "' is in the embedding table");
  for (auto& x : mean) x /= static_cast<double>(used);
  return mean;
}

inline Vector snippet_input_embedding(const Snippet& snippet, const EmbeddingTable& table, const Lexicon& lexicon) {
  return snippet_input_embedding(snippet.tokens, table, lexicon);
}

/// Trainable part of the textual path: a dim x dim matrix (row-major) and the
/// residual weight.
struct TextualPathParams {
  std::size_t dim = 0;
  Vector m_txt;
  double w_res = 0.2;

  /// Uniform in [-1/sqrt(dim), 1/sqrt(dim)].
  static TextualPathParams init(std::size_t dim, double w_res, Rng& rng) {
    TextualPathParams p;
    p.dim = dim;
    p.w_res = w_res;
    p.m_txt.resize(dim * dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& m : p.m_txt) m = rng.uniform(-bound, bound);
    return p;
  }

  static TextualPathParams identity(std::size_t dim, double w_res) {
    TextualPathParams p;
    p.dim = dim;
    p.w_res = w_res;
    p.m_txt.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) p.m_txt[i * dim + i] = 1.0;
    return p;
  }

  void validate() const {
    if (m_txt.size() != dim * dim) fail(Errc::DimMismatch, "M_txt size does not match dim");
    if (!(w_res >= 0.0) || !std::isfinite(w_res)) fail(Errc::InvalidConfig, "w_res must be finite and >= 0");
    if (!all_finite(m_txt)) fail(Errc::InvalidConfig, "M_txt has non-finite entries");
  }
};

/// Output of the textual path with the intermediates its backward pass needs.
struct TextEmbedding {
  Vector e_txt;
  Vector e_w2v;
  Vector projected;  // M_txt e_w2v
  double projected_norm = 0.0;
  double sum_norm = 0.0;
};

/// e_txt = norm(norm(e_w2v) + w_res * norm(M_txt e_w2v)).
inline TextEmbedding textual_path(std::span<const double> e_w2v, const TextualPathParams& params) {
  const std::size_t d = params.dim;
  if (e_w2v.size() != d) fail(Errc::DimMismatch, "e_w2v has " + std::to_string(e_w2v.size()) + " entries, expected " + std::to_string(d));
  TextEmbedding out;
  out.e_w2v.assign(e_w2v.begin(), e_w2v.end());
  const double in_norm = l2_norm(e_w2v);
  if (!(in_norm > 0.0)) fail(Errc::DegenerateZero, "input embedding has zero norm");

  out.projected.assign(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double* row = params.m_txt.data() + r * d;
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += row[c] * e_w2v[c];
    out.projected[r] = s;
  }
  out.projected_norm = l2_norm(out.projected);

  Vector sum(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double residual = out.projected_norm > 0.0 ? out.projected[i] / out.projected_norm : 0.0;
    sum[i] = e_w2v[i] / in_norm + params.w_res * residual;
  }
  out.sum_norm = l2_norm(sum);
  if (out.sum_norm < 1e-12) fail(Errc::DegenerateZero, "textual path sum vanished");
  for (auto& x : sum) x /= out.sum_norm;
  out.e_txt = std::move(sum);
  return out;
}

/// Accumulates dLoss/dM_txt into `grad_m_txt` given dLoss/de_txt.
inline void textual_path_backward(const TextEmbedding& te, const TextualPathParams& params,
                                  std::span<const double> grad_e_txt, std::span<double> grad_m_txt) {
  const std::size_t d = params.dim;
  if (params.w_res == 0.0 || te.projected_norm == 0.0) return;
  // through the outer normalization
  const double g_dot_out = dot(grad_e_txt, te.e_txt);
  Vector g_sum(d);
  for (std::size_t i = 0; i < d; ++i) g_sum[i] = (grad_e_txt[i] - te.e_txt[i] * g_dot_out) / te.sum_norm;
  // through w_res * normalize(projected)
  const double inv = 1.0 / te.projected_norm;
  double g_dot_unit = 0.0;
  for (std::size_t i = 0; i < d; ++i) g_dot_unit += g_sum[i] * te.projected[i] * inv;
  for (std::size_t r = 0; r < d; ++r) {
    const double g_proj = params.w_res * (g_sum[r] - te.projected[r] * inv * g_dot_unit) * inv;
    if (g_proj == 0.0) continue;
    double* row = grad_m_txt.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) row[c] += g_proj * te.e_w2v[c];
  }
}

}  // namespace tamkit
