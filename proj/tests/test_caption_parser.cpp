#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tamkit/caption_parser.hpp"

using namespace tamkit;

namespace {

const std::filesystem::path kData = TAMKIT_DATA_DIR;
const std::filesystem::path kTestData = TAMKIT_TEST_DATA_DIR;

Lexicon shipped_lexicon() { return Lexicon::load(kData / "lexicon"); }

Lexicon tiny_lexicon() {
  Lexicon lex;
  lex.prepositions = {"in", "on", "of", "next", "to"};
  lex.verbs = {"are", "is", "located", "sitting"};
  lex.articles = {"a", "an", "the"};
  return lex;
}

const std::string kBoundary{kSentenceBoundary};

}  // namespace

TEST(Tokenize, LowercasesAndSplits) {
  const Tokens want{"there", "are", "two", "large", "beds", "located", "in", "a", "hotel", "room"};
  EXPECT_EQ(tokenize("There are two large beds located in a hotel room"), want);
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, CommaStrippedPeriodIsBoundary) {
  const Tokens want{"a", "cat", "on", "a", "bed", kBoundary};
  EXPECT_EQ(tokenize("A cat, on a bed."), want);
}

TEST(Tokenize, HyphensSplitApostrophesDropped) {
  const Tokens want{"a", "high", "tech", "mans", "hat"};
  EXPECT_EQ(tokenize("A high-tech man's hat"), want);
}

TEST(Tokenize, EveryDelimiterIsABoundary) {
  const Tokens want{"go", kBoundary, "now", kBoundary, "ok", kBoundary, "yes", kBoundary};
  EXPECT_EQ(tokenize("go! now? ok; yes."), want);
}

TEST(Segment, FigureOneCaption) {
  const auto lex = tiny_lexicon();
  const auto segs = segment_snippets(tokenize("There are two large beds located in a hotel room"), lex);
  const std::vector<Tokens> want{{"there"}, {"two", "large", "beds"}, {"a", "hotel", "room"}};
  EXPECT_EQ(segs, want);
}

TEST(Segment, NoSplitPoints) {
  const Tokens in{"a", "dog"};
  EXPECT_EQ(segment_snippets(in, tiny_lexicon()), std::vector<Tokens>{in});
}

TEST(Segment, OnlySplitPoints) {
  const Tokens in{"on", "in"};
  EXPECT_TRUE(segment_snippets(in, tiny_lexicon()).empty());
}

TEST(Classify, FigureOneSegments) {
  const auto lex = tiny_lexicon();
  const auto vocab = ClassVocabulary::from_names({{"bed", ""}});
  const Tokens beds{"two", "large", "beds"};
  auto s = classify_snippet(beds, vocab, lex);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->kind, SnippetKind::ClassRelatedCompound);
  EXPECT_EQ(s->class_ids, std::vector<int>{0});

  const Tokens room{"a", "hotel", "room"};
  s = classify_snippet(room, vocab, lex);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->kind, SnippetKind::ClassUnrelatedCompound);
  EXPECT_TRUE(s->class_ids.empty());

  const Tokens there{"there"};
  EXPECT_FALSE(classify_snippet(there, vocab, lex));
}

TEST(Classify, ArticlesDoNotCount) {
  const auto lex = tiny_lexicon();
  const auto vocab = ClassVocabulary::from_names({{"dog", ""}});
  const Tokens seg{"a", "the", "dog"};
  EXPECT_FALSE(classify_snippet(seg, vocab, lex));
}

TEST(Classify, BareMultiWordNameIsNotACompound) {
  const auto lex = tiny_lexicon();
  const auto vocab = ClassVocabulary::from_names({{"parking meter", ""}});
  const Tokens bare{"a", "parking", "meter"};
  EXPECT_FALSE(classify_snippet(bare, vocab, lex));
  const Tokens plural{"parking", "meters"};
  EXPECT_FALSE(classify_snippet(plural, vocab, lex));
  const Tokens longer{"two", "parking", "meters"};
  auto s = classify_snippet(longer, vocab, lex);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->kind, SnippetKind::ClassRelatedCompound);
}

TEST(Classify, MultiWordNamesMatchContiguously) {
  const auto lex = tiny_lexicon();
  const auto vocab = ClassVocabulary::from_names({{"surf board", ""}});
  const Tokens split{"surf", "and", "board"};
  auto s = classify_snippet(split, vocab, lex);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->kind, SnippetKind::ClassUnrelatedCompound);
}

TEST(ClassSnippets, TwoFormsPerClass) {
  auto one = enumerate_class_snippets(ClassVocabulary::from_names({{"bed", ""}}));
  ASSERT_EQ(one.size(), 2u);
  EXPECT_EQ(one[0].tokens, Tokens{"bed"});
  EXPECT_EQ(one[1].tokens, Tokens{"beds"});
  for (const auto& s : one) {
    EXPECT_EQ(s.kind, SnippetKind::ClassName);
    EXPECT_EQ(s.class_ids, std::vector<int>{0});
  }
  EXPECT_TRUE(enumerate_class_snippets(ClassVocabulary{}).empty());
  EXPECT_EQ(enumerate_class_snippets(ClassVocabulary::from_names({{"dog", ""}, {"cat", ""}})).size(), 4u);
}

TEST(Tags, FromCaptions) {
  const auto vocab = ClassVocabulary::from_names({{"bed", ""}, {"dog", ""}});
  const std::vector<std::string> fig1{"There are two large beds located in a hotel room"};
  EXPECT_EQ(extract_class_tags(fig1, vocab), std::set<int>{0});
  EXPECT_TRUE(extract_class_tags({}, vocab).empty());

  const auto pets = ClassVocabulary::from_names({{"dog", ""}, {"cat", ""}});
  const std::vector<std::string> both{"a dog and a cat"};
  EXPECT_EQ(extract_class_tags(both, pets), (std::set<int>{0, 1}));
}

TEST(Pluralize, Rules) {
  EXPECT_EQ(pluralize("bed"), "beds");
  EXPECT_EQ(pluralize("bus"), "buses");
  EXPECT_EQ(pluralize("box"), "boxes");
  EXPECT_EQ(pluralize("bench"), "benches");
  EXPECT_EQ(pluralize("dish"), "dishes");
  EXPECT_EQ(pluralize("waltz"), "waltzes");
  EXPECT_EQ(pluralize("pony"), "ponies");
  EXPECT_EQ(pluralize("toy"), "toys");
  EXPECT_EQ(pluralize("parking meter"), "parking meters");
}

TEST(Pluralize, IrregularsFile) {
  const auto irregulars = load_irregulars(kData / "irregulars.txt");
  EXPECT_EQ(pluralize("person", irregulars), "people");
  EXPECT_EQ(pluralize("mouse", irregulars), "mice");
  EXPECT_EQ(pluralize("sheep", irregulars), "sheep");
}

TEST(Lexicon, ShippedListsAreValid) {
  const auto lex = shipped_lexicon();
  EXPECT_GE(lex.prepositions.size(), 40u);
  EXPECT_GE(lex.verbs.size(), 50u);
  EXPECT_EQ(lex.articles, (std::set<std::string>{"a", "an", "the"}));
  for (const char* v : {"is", "are", "laying", "sitting", "located", "riding", "parked"}) EXPECT_TRUE(lex.verbs.count(v)) << v;
}

TEST(Lexicon, RejectsOverlapAndCase) {
  auto lex = tiny_lexicon();
  lex.verbs.insert("on");
  try {
    lex.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidConfig);
  }
  lex = tiny_lexicon();
  lex.articles.insert("The");
  EXPECT_THROW(lex.validate(), Error);
  lex = tiny_lexicon();
  lex.prepositions.clear();
  EXPECT_THROW(lex.validate(), Error);
}

TEST(Vocabulary, RejectsGapsAndMalformedLines) {
  EXPECT_THROW(ClassVocabulary({{0, {"a"}, {"as"}}, {2, {"b"}, {"bs"}}}), Error);
  EXPECT_THROW(ClassVocabulary({{0, {}, {"as"}}}), Error);
  const auto path = std::filesystem::temp_directory_path() / "tamkit_bad_vocab.tsv";
  std::ofstream(path) << "0\tdog\n" << "x\tcat\n";
  try {
    ClassVocabulary::load(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MalformedLine);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(Corpus, RejectsMalformedRecords) {
  const auto path = std::filesystem::temp_directory_path() / "tamkit_bad_corpus.jsonl";
  std::ofstream(path) << R"({"image_id": "a", "captions": ["x"]})" << "\n" << R"({"image_id": 3})" << "\n";
  try {
    read_caption_corpus(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MalformedLine);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

// checked-in corpus with hand-derived snippets
TEST(Fixture, MatchesExpectedJsonl) {
  const auto dir = kTestData / "parser";
  const auto lex = shipped_lexicon();
  const auto vocab = ClassVocabulary::load(dir / "vocab.tsv", load_irregulars(kData / "irregulars.txt"));
  const auto records = read_caption_corpus(dir / "captions.jsonl");
  std::size_t captions = 0;
  for (const auto& r : records) captions += r.captions.size();
  EXPECT_EQ(captions, 20u);

  std::ifstream expected(dir / "expected.jsonl");
  std::string line;
  std::size_t i = 0;
  while (std::getline(expected, line)) {
    if (line.empty()) continue;
    ASSERT_LT(i, records.size());
    const auto got = parsed_image_to_json(parse_captions(records[i], vocab, lex), vocab);
    EXPECT_EQ(got, nlohmann::json::parse(line)) << "record " << records[i].image_id << "\n got " << got.dump();
    ++i;
  }
  EXPECT_EQ(i, records.size());
}

// ---- properties over a small random corpus ----

namespace {

std::vector<std::string> random_captions(Rng& rng, std::size_t n) {
  static const std::vector<std::string> words{"a",     "the",  "two",    "large", "red",   "dog",   "dogs",  "cat",
                                              "on",    "in",   "is",     "are",   "next",  "to",    "bed",   "beds",
                                              "surf",  "board", "boards", "with", "small", "sitting", "of", "hotel"};
  static const std::vector<std::string> punct{"", "", "", ",", ".", "!", "-"};
  std::vector<std::string> out;
  for (std::size_t c = 0; c < n; ++c) {
    std::string s;
    const std::size_t len = 1 + rng.below(14);
    for (std::size_t i = 0; i < len; ++i) {
      s += words[rng.below(words.size())];
      s += punct[rng.below(punct.size())];
      s += ' ';
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(ParserProperties, TokensPartitionedWithoutDuplication) {
  const auto lex = shipped_lexicon();
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto tokens = tokenize(random_captions(rng, 1).front(), lex.sentence_delimiters);
    const auto segs = segment_snippets(tokens, lex);
    // concatenating segments and split words in order gives back the tokens
    std::size_t seg = 0, pos = 0;
    for (const auto& t : tokens) {
      if (lex.is_split_point(t)) {
        EXPECT_TRUE(pos == 0) << "split word inside a segment";
        continue;
      }
      ASSERT_LT(seg, segs.size());
      EXPECT_EQ(segs[seg][pos], t);
      if (++pos == segs[seg].size()) {
        ++seg;
        pos = 0;
      }
    }
    EXPECT_EQ(seg, segs.size());
  }
}

TEST(ParserProperties, RelatedCompoundsNameAClassAndTagsCoverSnippets) {
  const auto lex = shipped_lexicon();
  const auto vocab = ClassVocabulary::from_names({{"dog", ""}, {"cat", ""}, {"bed", ""}, {"surf board", ""}});
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const CaptionRecord rec{"x", random_captions(rng, 1 + rng.below(4))};
    const auto parsed = parse_captions(rec, vocab, lex);
    const auto tags = extract_class_tags(rec.captions, vocab, lex.sentence_delimiters);
    EXPECT_EQ(tags, parsed.tags);
    for (const auto& s : parsed.compounds) {
      std::size_t content = 0;
      for (const auto& t : s.tokens) content += !lex.is_article(t);
      EXPECT_GE(content, 2u);
      if (s.kind == SnippetKind::ClassRelatedCompound) EXPECT_FALSE(s.class_ids.empty());
      for (int c : s.class_ids) EXPECT_TRUE(tags.count(c));
    }
    // determinism
    const auto again = parse_captions(rec, vocab, lex);
    EXPECT_EQ(parsed_image_to_json(again, vocab), parsed_image_to_json(parsed, vocab));
  }
}

TEST(ConceptSet, NameFormsPlusRelatedCompounds) {
  const auto lex = tiny_lexicon();
  const auto vocab = ClassVocabulary::from_names({{"bed", ""}, {"dog", ""}});
  const auto parsed = parse_captions({"i", {"There are two large beds located in a hotel room", "A dog sitting on a big bed"}},
                                     vocab, lex);
  const auto phi = parsed.concept_set(0, vocab);
  ASSERT_EQ(phi.size(), 4u);
  EXPECT_EQ(phi[0].tokens, Tokens{"bed"});
  EXPECT_EQ(phi[1].tokens, Tokens{"beds"});
  EXPECT_EQ(phi[2].text(), "two large beds");
  EXPECT_EQ(phi[3].text(), "a big bed");
  for (const auto& s : phi) EXPECT_TRUE(s.references(0));
}
