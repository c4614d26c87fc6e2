#pragma once

// Tiny random training instances for gradient checks: at most 16 pixels,
// embedding dim <= 8, <= 4 classes, <= 6 sampled concepts.

#include <string>
#include <vector>

#include "tamkit/trainer.hpp"

namespace tamkit::testing {

struct RandomInstance {
  Lexicon lexicon;
  ClassVocabulary vocab;
  EmbeddingTable table;
  Model model;
  Image image;
  ParsedImage parsed;
  ConceptBatch concepts;
  TrainConfig cfg;
};

inline RandomInstance random_instance(std::uint64_t seed) {
  static const std::vector<std::string> class_pool{"cat", "dog", "bus", "cup"};
  static const std::vector<std::string> adjectives{"red", "small", "old", "shiny"};
  static const std::vector<std::string> nouns{"sky", "road", "wall"};
  Rng rng(seed);
  RandomInstance r;
  r.lexicon.prepositions = {"near", "on", "with"};
  r.lexicon.articles = {"a", "the"};
  r.lexicon.verbs = {"is"};

  const std::size_t n_classes = 1 + rng.below(4);
  std::vector<std::pair<std::string, std::string>> names;
  for (std::size_t c = 0; c < n_classes; ++c) names.emplace_back(class_pool[c], "");
  r.vocab = ClassVocabulary::from_names(names);

  const std::size_t dim = 2 + rng.below(7);
  r.table = EmbeddingTable(dim);
  auto add_word = [&](const std::string& w) {
    if (r.table.find(w)) return;
    Vector v(dim);
    for (auto& x : v) x = rng.uniform(-1, 1);
    r.table.insert(w, v);
  };
  for (std::size_t c = 0; c < n_classes; ++c) {
    add_word(r.vocab.at(static_cast<int>(c)).singular.front());
    add_word(r.vocab.at(static_cast<int>(c)).plural.front());
  }
  for (const auto& w : adjectives) add_word(w);
  for (const auto& w : nouns) add_word(w);

  // caption: a few "a <adj> <class>" phrases, maybe one unrelated phrase
  const auto present = rng.sample_without_replacement(n_classes, 1 + rng.below(std::min<std::size_t>(n_classes, 2)));
  std::string caption;
  for (auto c : present) {
    if (!caption.empty()) caption += " near ";
    caption += "a " + adjectives[rng.below(adjectives.size())] + " " + class_pool[c];
  }
  if (rng.bernoulli(0.5)) caption += " on the " + adjectives[rng.below(adjectives.size())] + " " + nouns[rng.below(nouns.size())];
  r.parsed = parse_captions({"inst", {caption}}, r.vocab, r.lexicon);

  for (const auto& s : r.parsed.compounds)
    if (r.concepts.present.size() < 3) r.concepts.present.push_back(s);
  const std::size_t extra = rng.below(7 - r.concepts.present.size());
  for (std::size_t i = 0; i < extra; ++i) {
    Snippet s;
    s.tokens = {adjectives[rng.below(adjectives.size())], nouns[rng.below(nouns.size())]};
    r.concepts.contrastive.push_back(s);
  }

  const std::size_t w = 1 + rng.below(4), h = 1 + rng.below(4);
  r.image = Image(w, h, 3);
  for (auto& v : r.image.data) v = rng.uniform();

  r.cfg.encoder.channels = {3, 2 + rng.below(3), 2 + rng.below(3), dim};
  if (rng.bernoulli(0.5)) r.cfg.encoder.dilations = {1, 2};
  r.cfg.w_res = rng.uniform(0.0, 0.5);
  r.model = init_model(r.cfg, rng);
  for (auto& l : r.model.encoder.layers)
    for (auto& b : l.bias) b = rng.uniform(-0.1, 0.1);
  return r;
}

}  // namespace tamkit::testing
