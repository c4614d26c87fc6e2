#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "tamkit/text_embedding.hpp"

using namespace tamkit;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return Errc::Io;
}

Lexicon articles_only() {
  Lexicon lex;
  lex.prepositions = {"on"};
  lex.articles = {"a", "an", "the"};
  return lex;
}

Vector random_vector(Rng& rng, std::size_t d) {
  Vector v(d);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST(EmbeddingTable, LoadsTextFormat) {
  const auto t = EmbeddingTable::load(write_temp("tamkit_emb_ok.txt", "2 3\ndog 1 0 0\ncat 0 1 0\n"));
  EXPECT_EQ(t.dim(), 3u);
  EXPECT_EQ(t.size(), 2u);
  ASSERT_NE(t.find("cat"), nullptr);
  EXPECT_EQ(*t.find("cat"), (Vector{0, 1, 0}));
  EXPECT_EQ(t.find("cow"), nullptr);
}

TEST(EmbeddingTable, Errors) {
  EXPECT_EQ(code_of([] { EmbeddingTable::load(write_temp("tamkit_emb_a.txt", "2 3\ndog 1 0 0\ncat 0 1\n")); }),
            Errc::DimMismatch);
  EXPECT_EQ(code_of([] { EmbeddingTable::load(write_temp("tamkit_emb_b.txt", "2 3\ndog 1 0 0\ndog 0 1 0\n")); }),
            Errc::DuplicateWord);
  EXPECT_EQ(code_of([] { EmbeddingTable::load(write_temp("tamkit_emb_c.txt", "two 3\n")); }), Errc::MalformedLine);
  EXPECT_EQ(code_of([] { EmbeddingTable::load(write_temp("tamkit_emb_d.txt", "1 2\ndog 1 x\n")); }), Errc::MalformedLine);
  EXPECT_EQ(code_of([] { EmbeddingTable::load(write_temp("tamkit_emb_e.txt", "1 2\ndog nan 1\n")); }), Errc::MalformedLine);
  EXPECT_EQ(code_of([] { EmbeddingTable::load(write_temp("tamkit_emb_f.txt", "3 2\ndog 1 1\n")); }), Errc::MalformedLine);
  EXPECT_EQ(code_of([] { EmbeddingTable::load("/nonexistent/emb.txt"); }), Errc::Io);
}

TEST(EmbeddingTable, ErrorNamesLine) {
  try {
    EmbeddingTable::load(write_temp("tamkit_emb_g.txt", "2 2\ndog 1 1\ncat 1 1 1\n"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(SnippetEmbedding, SingleWordIsNormalized) {
  EmbeddingTable t(3);
  t.insert("dog", {3, 4, 0});
  const auto e = snippet_input_embedding(Tokens{"dog"}, t, articles_only());
  EXPECT_NEAR(e[0], 0.6, 1e-15);
  EXPECT_NEAR(e[1], 0.8, 1e-15);
  EXPECT_EQ(e[2], 0.0);
}

TEST(SnippetEmbedding, MeanOfUnitVectors) {
  EmbeddingTable t(2);
  t.insert("u", {1, 0});
  t.insert("v", {0, 5});
  const auto e = snippet_input_embedding(Tokens{"u", "v"}, t, articles_only());
  EXPECT_DOUBLE_EQ(e[0], 0.5);
  EXPECT_DOUBLE_EQ(e[1], 0.5);
}

TEST(SnippetEmbedding, SkipsArticlesAndUnknownWords) {
  EmbeddingTable t(3);
  t.insert("dog", {0, 2, 0});
  t.insert("a", {1, 0, 0});  // articles are ignored even when embedded
  const auto e = snippet_input_embedding(Tokens{"a", "large", "dog"}, t, articles_only());
  EXPECT_EQ(e, (Vector{0, 1, 0}));
}

TEST(SnippetEmbedding, AllUnknownIsAnError) {
  EmbeddingTable t(2);
  t.insert("dog", {1, 0});
  EXPECT_EQ(code_of([&] { snippet_input_embedding(Tokens{"the", "cow"}, t, articles_only()); }), Errc::AllTokensOOV);
}

TEST(TextualPath, NoResidualIsPlainNormalization) {
  Rng rng(1);
  auto p = TextualPathParams::init(4, 0.0, rng);
  const Vector in{1, 2, -2, 4};
  const auto te = textual_path(in, p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(te.e_txt[i], in[i] / 5.0, 1e-15);
  EXPECT_EQ(te.e_w2v, in);
}

TEST(TextualPath, IdentityMatrixKeepsDirection) {
  const auto p = TextualPathParams::identity(3, 0.2);
  const Vector in{0, 3, 4};
  const auto te = textual_path(in, p);
  EXPECT_NEAR(te.e_txt[0], 0.0, 1e-15);
  EXPECT_NEAR(te.e_txt[1], 0.6, 1e-15);
  EXPECT_NEAR(te.e_txt[2], 0.8, 1e-15);
}

TEST(TextualPath, HandEvaluatedRotation) {
  TextualPathParams p;
  p.dim = 2;
  p.w_res = 0.2;
  p.m_txt = {0, 0, 2, 0};  // (1,0) -> (0,2)
  const auto te = textual_path(Vector{1, 0}, p);
  // (1, 0.2) / sqrt(1.04)
  const double n = std::sqrt(1.04);
  EXPECT_NEAR(te.e_txt[0], 1.0 / n, 1e-15);
  EXPECT_NEAR(te.e_txt[1], 0.2 / n, 1e-15);
  EXPECT_NEAR(te.e_txt[0], 0.9806, 5e-5);
  EXPECT_NEAR(te.e_txt[1], 0.1961, 5e-5);
}

TEST(TextualPath, Errors) {
  const auto p = TextualPathParams::identity(2, 0.2);
  EXPECT_EQ(code_of([&] { textual_path(Vector{0, 0}, p); }), Errc::DegenerateZero);
  EXPECT_EQ(code_of([&] { textual_path(Vector{1, 0, 0}, p); }), Errc::DimMismatch);
  TextualPathParams flip;
  flip.dim = 2;
  flip.w_res = 1.0;
  flip.m_txt = {-1, 0, 0, -1};
  EXPECT_EQ(code_of([&] { textual_path(Vector{1, 0}, flip); }), Errc::DegenerateZero);
  auto bad = p;
  bad.w_res = -0.1;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(TextualPath, InitIsSeededAndBounded) {
  Rng a(5), b(5);
  const auto p = TextualPathParams::init(16, 0.2, a);
  const auto q = TextualPathParams::init(16, 0.2, b);
  EXPECT_EQ(p.m_txt, q.m_txt);
  for (double m : p.m_txt) EXPECT_LE(std::abs(m), 0.25);
}

TEST(TextualPathProperties, ScaleInvariantAndUnitNorm) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 2 + rng.below(8);
    const auto p = TextualPathParams::init(d, rng.uniform(0.0, 2.0), rng);
    const auto in = random_vector(rng, d);
    const double c = std::exp(rng.uniform(-5, 5));
    Vector scaled(in);
    for (auto& x : scaled) x *= c;
    const auto a = textual_path(in, p).e_txt;
    const auto b = textual_path(scaled, p).e_txt;
    EXPECT_NEAR(l2_norm(a), 1.0, 1e-12);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(TextualPathProperties, ZeroResidualDependsOnlyOnDirection) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + rng.below(8);
    const auto p = TextualPathParams::init(d, 0.0, rng);
    const auto q = TextualPathParams::init(d, 0.0, rng);  // different matrix
    const auto in = random_vector(rng, d);
    const auto a = textual_path(in, p).e_txt;
    const auto b = textual_path(in, q).e_txt;
    const double n = l2_norm(in);
    for (std::size_t i = 0; i < d; ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-15);
      EXPECT_NEAR(a[i], in[i] / n, 1e-15);
    }
  }
}

TEST(TextualPath, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(6);
    auto p = TextualPathParams::init(d, rng.uniform(0.05, 1.0), rng);
    const auto in = random_vector(rng, d);
    const auto g = random_vector(rng, d);  // loss = g . e_txt
    Vector grad(d * d, 0.0);
    textual_path_backward(textual_path(in, p), p, g, grad);
    const double h = 1e-6;
    for (std::size_t i = 0; i < d * d; ++i) {
      const double keep = p.m_txt[i];
      p.m_txt[i] = keep + h;
      const double up = dot(g, textual_path(in, p).e_txt);
      p.m_txt[i] = keep - h;
      const double down = dot(g, textual_path(in, p).e_txt);
      p.m_txt[i] = keep;
      EXPECT_NEAR(grad[i], (up - down) / (2 * h), 1e-7);
    }
  }
}
