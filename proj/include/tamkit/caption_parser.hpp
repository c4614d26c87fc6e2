#pragma once

// Caption parsing: tokenization, snippet segmentation at prepositions, verbs and
// sentence boundaries, snippet classification and class-tag retrieval.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tamkit/common.hpp"

namespace tamkit {

/// Marker emitted by tokenize() in place of a sentence delimiter character.
inline constexpr std::string_view kSentenceBoundary = "<eos>";

using Tokens = std::vector<std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

inline std::string join(std::span<const std::string> words, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  return in;
}

}  // namespace detail

/// Plain-text word list: one entry per line, blank lines and '#' comments ignored.
inline std::vector<std::string> read_word_list(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto w = detail::trim(line);
    if (w.empty() || w[0] == '#') continue;
    words.push_back(std::move(w));
  }
  return words;
}

struct Lexicon {
  std::set<std::string> prepositions;
  std::set<std::string> verbs;
  std::set<std::string> articles;
  std::set<char> sentence_delimiters{'.', '!', '?', ';'};

  bool is_article(const std::string& w) const { return articles.count(w) > 0; }
  bool is_split_point(const std::string& w) const {
    return w == kSentenceBoundary || prepositions.count(w) > 0 || verbs.count(w) > 0;
  }

  void validate() const {
    if (prepositions.empty()) fail(Errc::InvalidConfig, "lexicon has no prepositions");
    if (articles.empty()) fail(Errc::InvalidConfig, "lexicon has no articles");
    auto check = [](const std::set<std::string>& words, std::string_view what) {
      for (const auto& w : words)
        if (w != detail::lower(w)) fail(Errc::InvalidConfig, std::string(what) + " entry not lowercase: " + w);
    };
    check(prepositions, "preposition");
    check(verbs, "verb");
    check(articles, "article");
    auto disjoint = [](const std::set<std::string>& a, const std::set<std::string>& b, std::string_view what) {
      for (const auto& w : a)
        if (b.count(w)) fail(Errc::InvalidConfig, "lexicon word '" + w + "' listed as " + std::string(what));
    };
    disjoint(prepositions, verbs, "preposition and verb");
    disjoint(prepositions, articles, "preposition and article");
    disjoint(verbs, articles, "verb and article");
  }

  /// Reads prepositions.txt, verbs.txt, articles.txt and optional delimiters.txt.
  static Lexicon load(const std::filesystem::path& dir) {
    Lexicon lex;
    for (auto& w : read_word_list(dir / "prepositions.txt")) lex.prepositions.insert(detail::lower(w));
    for (auto& w : read_word_list(dir / "verbs.txt")) lex.verbs.insert(detail::lower(w));
    for (auto& w : read_word_list(dir / "articles.txt")) lex.articles.insert(detail::lower(w));
    if (std::filesystem::exists(dir / "delimiters.txt")) {
      lex.sentence_delimiters.clear();
      for (auto& w : read_word_list(dir / "delimiters.txt"))
        for (char ch : w) lex.sentence_delimiters.insert(ch);
    }
    lex.validate();
    return lex;
  }
};

/// Lowercases, strips punctuation, splits at whitespace and hyphens, and turns
/// each sentence delimiter into a kSentenceBoundary token. Apostrophes are
/// dropped without splitting ("man's" -> "mans").
inline Tokens tokenize(std::string_view caption, const std::set<char>& delimiters = {'.', '!', '?', ';'}) {
  Tokens tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char raw : caption) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isalnum(ch) || ch >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(ch)));
    } else if (raw == '\'') {
      continue;
    } else if (delimiters.count(raw)) {
      flush();
      tokens.emplace_back(kSentenceBoundary);
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

/// Splits at every preposition, verb and sentence boundary. Split words are not
/// part of any segment and empty segments are dropped.
inline std::vector<Tokens> segment_snippets(std::span<const std::string> tokens, const Lexicon& lexicon) {
  std::vector<Tokens> segments;
  Tokens current;
  for (const auto& t : tokens) {
    if (lexicon.is_split_point(t)) {
      if (!current.empty()) segments.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(t);
    }
  }
  if (!current.empty()) segments.push_back(std::move(current));
  return segments;
}

/// English plural: "+es" after s/x/z/ch/sh, consonant+"y" -> "ies", else "+s".
/// For multi-word names only the last word is inflected. Irregulars are keyed
/// by the full singular.
inline std::string pluralize(const std::string& singular, const std::map<std::string, std::string>& irregulars = {}) {
  if (auto it = irregulars.find(singular); it != irregulars.end()) return it->second;
  if (singular.empty()) return singular;
  auto ends_with = [&](std::string_view suffix) {
    return singular.size() >= suffix.size() &&
           singular.compare(singular.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with("s") || ends_with("x") || ends_with("z") || ends_with("ch") || ends_with("sh"))
    return singular + "es";
  if (ends_with("y") && singular.size() >= 2) {
    const char before = singular[singular.size() - 2];
    if (std::string_view("aeiou").find(before) == std::string_view::npos)
      return singular.substr(0, singular.size() - 1) + "ies";
  }
  return singular + "s";
}

/// "singular<TAB>plural" per line.
inline std::map<std::string, std::string> load_irregulars(const std::filesystem::path& path) {
  std::map<std::string, std::string> table;
  auto in = detail::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tab = t.find('\t');
    if (tab == std::string::npos)
      fail(Errc::MalformedLine, path.string() + ":" + std::to_string(line_no) + ": expected singular<TAB>plural");
    table[detail::lower(detail::trim(t.substr(0, tab)))] = detail::lower(detail::trim(t.substr(tab + 1)));
  }
  return table;
}

struct ClassEntry {
  int class_id = 0;
  Tokens singular;
  Tokens plural;

  std::string name() const { return detail::join(singular); }
};

class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  explicit ClassVocabulary(std::vector<ClassEntry> entries) : entries_(std::move(entries)) { validate(); }

  /// Builds entries from (singular, plural) strings; an empty plural is derived
  /// with pluralize().
  static ClassVocabulary from_names(const std::vector<std::pair<std::string, std::string>>& names,
                                    const std::map<std::string, std::string>& irregulars = {}) {
    std::vector<ClassEntry> entries;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto singular = detail::lower(names[i].first);
      const auto plural = names[i].second.empty() ? pluralize(singular, irregulars) : detail::lower(names[i].second);
      entries.push_back({static_cast<int>(i), tokenize(singular, {}), tokenize(plural, {})});
    }
    return ClassVocabulary(std::move(entries));
  }

  /// "class_id<TAB>singular<TAB>plural" per line; the plural column may be empty
  /// or missing, in which case irregulars and pluralize() supply it.
  static ClassVocabulary load(const std::filesystem::path& path,
                              const std::map<std::string, std::string>& irregulars = {}) {
    auto in = detail::open_input(path);
    std::vector<ClassEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty() || detail::trim(line)[0] == '#') continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, '\t')) cols.push_back(detail::trim(col));
      const auto where = path.string() + ":" + std::to_string(line_no);
      if (cols.size() < 2 || cols[1].empty()) fail(Errc::MalformedLine, where + ": expected class_id<TAB>singular[<TAB>plural]");
      int id = 0;
      try {
        std::size_t used = 0;
        id = std::stoi(cols[0], &used);
        if (used != cols[0].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        fail(Errc::MalformedLine, where + ": bad class id '" + cols[0] + "'");
      }
      const auto singular = detail::lower(cols[1]);
      const auto plural = cols.size() >= 3 && !cols[2].empty() ? detail::lower(cols[2]) : pluralize(singular, irregulars);
      entries.push_back({id, tokenize(singular, {}), tokenize(plural, {})});
    }
    return ClassVocabulary(std::move(entries));
  }

  const std::vector<ClassEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const ClassEntry& at(int class_id) const { return entries_.at(static_cast<std::size_t>(class_id)); }

  std::optional<int> find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name() == name || detail::join(e.plural) == name) return e.class_id;
    return std::nullopt;
  }

  void validate() const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.class_id != static_cast<int>(i))
        fail(Errc::InvalidConfig, "class ids must be contiguous from 0; got " + std::to_string(e.class_id) +
                                      " at position " + std::to_string(i));
      if (e.singular.empty() || e.plural.empty())
        fail(Errc::InvalidConfig, "class " + std::to_string(e.class_id) + " has an empty name form");
    }
  }

 private:
  std::vector<ClassEntry> entries_;
};

enum class SnippetKind { ClassName, ClassRelatedCompound, ClassUnrelatedCompound };

constexpr std::string_view to_string(SnippetKind kind) {
  switch (kind) {
    case SnippetKind::ClassName: return "class_name";
    case SnippetKind::ClassRelatedCompound: return "class_related";
    case SnippetKind::ClassUnrelatedCompound: return "class_unrelated";
  }
  return "unknown";
}

struct Snippet {
  Tokens tokens;
  SnippetKind kind = SnippetKind::ClassUnrelatedCompound;
  std::vector<int> class_ids;  // sorted; one entry for ClassName
  std::optional<std::size_t> source_caption;

  std::string text() const { return detail::join(tokens); }
  bool is_compound() const { return kind != SnippetKind::ClassName; }
  bool references(int class_id) const {
    return std::find(class_ids.begin(), class_ids.end(), class_id) != class_ids.end();
  }
};

namespace detail {

inline bool contains_sequence(std::span<const std::string> haystack, std::span<const std::string> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  return false;
}

}  // namespace detail

/// Class ids whose singular or plural form occurs contiguously in `tokens`.
inline std::vector<int> matched_classes(std::span<const std::string> tokens, const ClassVocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& e : vocab.entries())
    if (detail::contains_sequence(tokens, e.singular) || detail::contains_sequence(tokens, e.plural))
      ids.push_back(e.class_id);
  return ids;
}

/// Returns nullopt for segments that are not compounds: fewer than two
/// non-article words, or a bare (multi-word) class name.
inline std::optional<Snippet> classify_snippet(std::span<const std::string> segment, const ClassVocabulary& vocab,
                                               const Lexicon& lexicon) {
  Tokens content;
  for (const auto& t : segment)
    if (!lexicon.is_article(t)) content.push_back(t);
  if (content.size() < 2) return std::nullopt;
  for (const auto& e : vocab.entries())
    if (content == e.singular || content == e.plural) return std::nullopt;

  Snippet s;
  s.tokens.assign(segment.begin(), segment.end());
  s.class_ids = matched_classes(segment, vocab);
  s.kind = s.class_ids.empty() ? SnippetKind::ClassUnrelatedCompound : SnippetKind::ClassRelatedCompound;
  return s;
}

/// One ClassName snippet per (class, form): singular first, then plural.
inline std::vector<Snippet> enumerate_class_snippets(const ClassVocabulary& vocab) {
  std::vector<Snippet> out;
  out.reserve(2 * vocab.size());
  for (const auto& e : vocab.entries()) {
    out.push_back({e.singular, SnippetKind::ClassName, {e.class_id}, std::nullopt});
    out.push_back({e.plural, SnippetKind::ClassName, {e.class_id}, std::nullopt});
  }
  return out;
}

inline std::set<int> extract_class_tags(std::span<const std::string> captions, const ClassVocabulary& vocab,
                                        const std::set<char>& delimiters = {'.', '!', '?', ';'}) {
  std::set<int> tags;
  for (const auto& caption : captions) {
    const auto tokens = tokenize(caption, delimiters);
    for (int id : matched_classes(tokens, vocab)) tags.insert(id);
  }
  return tags;
}

struct CaptionRecord {
  std::string image_id;
  std::vector<std::string> captions;
};

struct ParsedImage {
  std::string image_id;
  std::vector<std::string> captions;
  std::vector<Tokens> caption_tokens;
  std::set<int> tags;
  std::vector<Snippet> compounds;  // caption order, duplicates kept

  /// Φ(c): both name forms of `class_id` plus every related compound.
  std::vector<Snippet> concept_set(int class_id, const ClassVocabulary& vocab) const {
    const auto& e = vocab.at(class_id);
    std::vector<Snippet> phi{{e.singular, SnippetKind::ClassName, {class_id}, std::nullopt},
                             {e.plural, SnippetKind::ClassName, {class_id}, std::nullopt}};
    for (const auto& s : compounds)
      if (s.kind == SnippetKind::ClassRelatedCompound && s.references(class_id)) phi.push_back(s);
    return phi;
  }
};

inline ParsedImage parse_captions(const CaptionRecord& record, const ClassVocabulary& vocab, const Lexicon& lexicon) {
  ParsedImage parsed;
  parsed.image_id = record.image_id;
  parsed.captions = record.captions;
  for (std::size_t c = 0; c < record.captions.size(); ++c) {
    auto tokens = tokenize(record.captions[c], lexicon.sentence_delimiters);
    for (int id : matched_classes(tokens, vocab)) parsed.tags.insert(id);
    for (const auto& segment : segment_snippets(tokens, lexicon)) {
      if (auto s = classify_snippet(segment, vocab, lexicon)) {
        s->source_caption = c;
        parsed.compounds.push_back(std::move(*s));
      }
    }
    parsed.caption_tokens.push_back(std::move(tokens));
  }
  return parsed;
}

/// Reads {"image_id": ..., "captions": [...]} records, one per line.
inline std::vector<CaptionRecord> read_caption_corpus(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<CaptionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedLine, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string() || !j.contains("captions") ||
        !j["captions"].is_array())
      fail(Errc::MalformedLine, where + ": expected {\"image_id\": string, \"captions\": [string, ...]}");
    CaptionRecord rec;
    rec.image_id = j["image_id"].get<std::string>();
    for (const auto& c : j["captions"]) {
      if (!c.is_string()) fail(Errc::MalformedLine, where + ": caption is not a string");
      rec.captions.push_back(c.get<std::string>());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline nlohmann::json snippet_to_json(const Snippet& s, const ClassVocabulary& vocab) {
  nlohmann::json classes = nlohmann::json::array();
  for (int id : s.class_ids) classes.push_back(vocab.at(id).name());
  return {{"tokens", s.tokens}, {"kind", std::string(to_string(s.kind))}, {"classes", classes}};
}

/// Output record of the parse command. Class-name snippets for tagged classes
/// follow the compounds.
inline nlohmann::json parsed_image_to_json(const ParsedImage& parsed, const ClassVocabulary& vocab) {
  nlohmann::json tags = nlohmann::json::array();
  for (int id : parsed.tags) tags.push_back(vocab.at(id).name());
  nlohmann::json snippets = nlohmann::json::array();
  for (const auto& s : parsed.compounds) snippets.push_back(snippet_to_json(s, vocab));
  for (const auto& s : enumerate_class_snippets(vocab))
    if (parsed.tags.count(s.class_ids.front())) snippets.push_back(snippet_to_json(s, vocab));
  return {{"image_id", parsed.image_id}, {"tags", tags}, {"snippets", snippets}};
}

}  // namespace tamkit
