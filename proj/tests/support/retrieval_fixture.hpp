#pragma once

// Captions that miss some of the annotated classes, scored per class group
// against hand-computed fractions in expected.json.

#include <filesystem>
#include <fstream>
#include <optional>

#include "tamkit/caption_parser.hpp"
#include "tamkit/eval.hpp"

namespace tamkit::testing {

struct RetrievalRow {
  std::string group;
  std::optional<double> precision, recall;
  double want_precision, want_recall;
};

inline std::vector<RetrievalRow> run_retrieval_fixture(const std::filesystem::path& dir,
                                                       const std::filesystem::path& lexicon_dir) {
  const auto vocab = ClassVocabulary::load(dir / "vocab.tsv");
  const auto lexicon = Lexicon::load(lexicon_dir);
  auto id_of = [&](const std::string& name) {
    for (const auto& e : vocab.entries())
      if (e.name() == name) return e.class_id;
    fail(Errc::MalformedLine, "unknown class '" + name + "' in fixture");
  };
  auto read_json = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) fail(Errc::Io, "cannot open " + p.string());
    return nlohmann::json::parse(in);
  };

  std::map<std::string, std::set<int>> retrieved, truth;
  for (const auto& rec : read_caption_corpus(dir / "captions.jsonl"))
    retrieved[rec.image_id] = parse_captions(rec, vocab, lexicon).tags;
  const auto gt_json = read_json(dir / "ground_truth.json");
  for (const auto& [id, names] : gt_json.items())
    for (const auto& n : names) truth[id].insert(id_of(n.get<std::string>()));

  const auto expected = read_json(dir / "expected.json").at("groups");
  std::vector<ClassGroup> groups;
  for (const auto& g : expected) {
    ClassGroup cg{g.at("name").get<std::string>(), {}};
    for (const auto& n : g.at("classes")) cg.classes.insert(id_of(n.get<std::string>()));
    groups.push_back(cg);
  }
  const auto got = tag_retrieval_metrics(retrieved, truth, groups);
  std::vector<RetrievalRow> rows;
  for (std::size_t i = 0; i < got.size(); ++i) {
    auto frac = [](const nlohmann::json& f) { return f.at(0).get<double>() / f.at(1).get<double>(); };
    rows.push_back({got[i].name, got[i].precision, got[i].recall, frac(expected[i].at("precision")),
                    frac(expected[i].at("recall"))});
  }
  return rows;
}

}  // namespace tamkit::testing
