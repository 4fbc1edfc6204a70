#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sentex/mat.hpp"

namespace sentex {

struct RawDocument {
  std::string id;
  std::string text;  // may contain HTML markup
  int label = 0;     // 0 = negative, 1 = positive
};

/// Thrown when a document has no surviving sentences after preprocessing.
struct EmptyDocument : std::runtime_error {
  explicit EmptyDocument(const std::string& id)
      : std::runtime_error("empty document: " + id) {}
};

// ---------------------------------------------------------------------------
// Text normalization
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Bytes >= 0x80 (UTF-8 continuation/lead bytes) are treated as word
// characters so multi-byte letters stay inside tokens.
inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

inline char lower_ascii(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Decodes an entity reference starting at text[i] == '&'. Returns the decoded
// text and advances i past the entity, or returns "&" and advances by one.
inline std::string decode_entity(std::string_view text, std::size_t& i) {
  static const std::pair<std::string_view, std::string_view> kEntities[] = {
      {"&amp;", "&"}, {"&lt;", "<"},   {"&gt;", ">"},  {"&quot;", "\""},
      {"&apos;", "'"}, {"&nbsp;", " "}, {"&#39;", "'"}, {"&#34;", "\""},
  };
  for (auto [ref, repl] : kEntities) {
    if (text.substr(i, ref.size()) == ref) {
      i += ref.size();
      return std::string(repl);
    }
  }
  ++i;
  return "&";
}

}  // namespace detail

/// Removes tag-like spans `<...>` (greedily to the next '>', or to the end of
/// the text when unterminated), replacing each with a space, decodes common
/// entity references, and collapses whitespace runs to single spaces.
inline std::string strip_markup(std::string_view text) {
  std::string flat;
  flat.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '<') {
      const std::size_t close = text.find('>', i);
      i = (close == std::string_view::npos) ? text.size() : close + 1;
      flat.push_back(' ');
    } else if (c == '&') {
      flat += detail::decode_entity(text, i);
    } else {
      flat.push_back(c);
      ++i;
    }
  }
  std::string out;
  out.reserve(flat.size());
  bool in_space = true;  // also trims leading whitespace
  for (char c : flat) {
    if (detail::is_space_byte(static_cast<unsigned char>(c))) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

namespace detail {

// Common abbreviations that do not close a sentence when followed by a
// period. Compared lowercased, without the trailing period.
inline const std::set<std::string>& abbreviations() {
  static const std::set<std::string> kAbbrev = {
      "mr",  "mrs", "ms",  "dr",   "prof", "rev",  "hon", "st",  "jr",
      "sr",  "vs",  "etc", "e.g",  "i.e",  "cf",   "al",  "inc", "ltd",
      "co",  "corp", "dept", "est", "approx", "fig", "vol", "no",  "pp",
      "ed",  "gen", "col", "sgt",  "capt", "lt",   "maj", "min"};
  return kAbbrev;
}

// The whitespace-delimited token ending at text[end - 1], stripped of leading
// punctuation and lowercased. Used for the abbreviation guard.
inline std::string word_before(std::string_view text, std::size_t end) {
  std::size_t begin = end;
  while (begin > 0 &&
         !is_space_byte(static_cast<unsigned char>(text[begin - 1])))
    --begin;
  while (begin < end && !is_word_byte(static_cast<unsigned char>(text[begin])))
    ++begin;
  std::string w;
  for (std::size_t i = begin; i < end; ++i) w.push_back(lower_ascii(text[i]));
  return w;
}

inline bool is_single_letter(const std::string& w) {
  return w.size() == 1 && std::isalpha(static_cast<unsigned char>(w[0]));
}

}  // namespace detail

/// Rule-based sentence splitter. The terminators . ? ! close a sentence when
/// followed by whitespace (or end of text); runs like "?!" and trailing
/// closing quotes stay attached. A period does not split after a known
/// abbreviation, a single letter (initials), or when not followed by
/// whitespace (decimals, e.g. "3.5").
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> sentences;
  auto push = [&](std::size_t begin, std::size_t end) {
    while (begin < end &&
           detail::is_space_byte(static_cast<unsigned char>(text[begin])))
      ++begin;
    while (end > begin &&
           detail::is_space_byte(static_cast<unsigned char>(text[end - 1])))
      --end;
    if (end > begin) sentences.emplace_back(text.substr(begin, end - begin));
  };

  const auto is_terminator = [](char c) { return c == '.' || c == '?' || c == '!'; };
  const auto is_closer = [](char c) {
    return c == '"' || c == '\'' || c == ')' || c == ']';
  };

  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_terminator(text[i])) {
      ++i;
      continue;
    }
    const std::size_t first = i;
    std::size_t last = i;
    while (last + 1 < text.size() && is_terminator(text[last + 1])) ++last;
    std::size_t tail = last;
    while (tail + 1 < text.size() && is_closer(text[tail + 1])) ++tail;
    const bool at_boundary =
        tail + 1 >= text.size() ||
        detail::is_space_byte(static_cast<unsigned char>(text[tail + 1]));
    bool split = at_boundary;
    if (split && first == last && text[first] == '.') {
      const std::string w = detail::word_before(text, first);
      if (!w.empty() &&
          (detail::abbreviations().count(w) || detail::is_single_letter(w)))
        split = false;
    }
    if (split) {
      push(start, tail + 1);
      start = tail + 1;
    }
    i = tail + 1;
  }
  push(start, text.size());
  return sentences;
}

/// Half-open byte range of one token within its sentence.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Splits a sentence into word and punctuation spans. A word is a maximal
/// run of word bytes; apostrophes between word characters stay inside
/// ("don't"), as do . and , between digits ("3.5", "1,000"). Every other
/// non-space character is its own span.
inline std::vector<TokenSpan> scan_tokens(std::string_view sentence) {
  std::vector<TokenSpan> spans;
  const auto is_digit = [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) != 0;
  };
  std::size_t i = 0;
  const std::size_t n = sentence.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(sentence[i]);
    if (detail::is_space_byte(c)) {
      ++i;
      continue;
    }
    if (detail::is_word_byte(c)) {
      std::size_t j = i + 1;
      while (j < n) {
        const unsigned char b = static_cast<unsigned char>(sentence[j]);
        if (detail::is_word_byte(b)) {
          ++j;
        } else if (b == '\'' && j + 1 < n &&
                   detail::is_word_byte(static_cast<unsigned char>(sentence[j + 1]))) {
          ++j;
        } else if ((b == '.' || b == ',') && is_digit(sentence[j - 1]) &&
                   j + 1 < n && is_digit(sentence[j + 1])) {
          ++j;
        } else {
          break;
        }
      }
      spans.push_back({i, j});
      i = j;
    } else {
      spans.push_back({i, i + 1});
      ++i;
    }
  }
  return spans;
}

/// Normalized form of one token span: a token made of digits (digit-group
/// separators . and , allowed) becomes NUMBER; a single non-alphanumeric
/// character other than . ? ! becomes SYMBOL; the terminators . ? ! are
/// kept as themselves; words are lowercased.
inline std::string normalize_token(std::string_view sentence, TokenSpan span) {
  const unsigned char first = static_cast<unsigned char>(sentence[span.begin]);
  if (!detail::is_word_byte(first)) {
    if (first == '.' || first == '?' || first == '!')
      return std::string(1, static_cast<char>(first));
    return "SYMBOL";
  }
  std::string tok(sentence.substr(span.begin, span.end - span.begin));
  bool any_digit = false, all_numberish = true;
  for (char t : tok) {
    if (std::isdigit(static_cast<unsigned char>(t)))
      any_digit = true;
    else if (t != '.' && t != ',')
      all_numberish = false;
  }
  if (any_digit && all_numberish) return "NUMBER";
  for (char& t : tok) t = detail::lower_ascii(t);
  return tok;
}

/// Lowercased, normalized word tokens of one sentence.
inline std::vector<std::string> tokenize_and_normalize(std::string_view sentence) {
  std::vector<std::string> tokens;
  for (TokenSpan span : scan_tokens(sentence))
    tokens.push_back(normalize_token(sentence, span));
  return tokens;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct Vocabulary {
  static constexpr std::string_view kNumber = "NUMBER";
  static constexpr std::string_view kSymbol = "SYMBOL";
  static constexpr std::string_view kUnknown = "UNKNOWN";

  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;
  int min_count = 5;

  static int number_id() { return 0; }
  static int symbol_id() { return 1; }
  static int unknown_id() { return 2; }

  int size() const { return static_cast<int>(id_to_token.size()); }

  int id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? unknown_id() : it->second;
  }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
    return id_to_token[static_cast<std::size_t>(id)];
  }

  /// Serialized form: one token per line, line number = id.
  std::string serialize() const {
    std::string out;
    for (const std::string& t : id_to_token) {
      out += t;
      out += '\n';
    }
    return out;
  }

  std::uint64_t hash() const { return fnv1a64(serialize()); }
};

struct PreparedDocument {
  std::string id;
  int label = 0;
  std::vector<std::string> sentence_texts;
  std::vector<std::vector<std::string>> sentence_tokens;  // parallel to texts
};

/// strip_markup + split_sentences + tokenize_and_normalize; sentences that
/// normalize to zero tokens are dropped together with their texts.
inline PreparedDocument prepare_document(const RawDocument& raw) {
  PreparedDocument prep;
  prep.id = raw.id;
  prep.label = raw.label;
  const std::string plain = strip_markup(raw.text);
  for (std::string& sentence : split_sentences(plain)) {
    std::vector<std::string> tokens = tokenize_and_normalize(sentence);
    if (tokens.empty()) continue;
    prep.sentence_texts.push_back(std::move(sentence));
    prep.sentence_tokens.push_back(std::move(tokens));
  }
  return prep;
}

/// Deterministic id assignment: the specials NUMBER/SYMBOL/UNKNOWN take ids
/// 0/1/2, then all tokens seen at least min_count times in the training
/// documents, ordered by descending frequency with ties broken
/// lexicographically.
inline Vocabulary build_vocabulary(const std::vector<PreparedDocument>& train_docs,
                                   int min_count = 5) {
  if (train_docs.empty())
    throw std::invalid_argument("build_vocabulary: empty training set");
  std::unordered_map<std::string, long long> counts;
  for (const PreparedDocument& doc : train_docs)
    for (const auto& sentence : doc.sentence_tokens)
      for (const std::string& tok : sentence) ++counts[tok];

  std::vector<std::pair<long long, std::string>> ranked;
  ranked.reserve(counts.size());
  for (auto& [tok, cnt] : counts) {
    if (tok == Vocabulary::kNumber || tok == Vocabulary::kSymbol ||
        tok == Vocabulary::kUnknown)
      continue;
    if (cnt >= min_count) ranked.emplace_back(cnt, tok);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  Vocabulary vocab;
  vocab.min_count = min_count;
  vocab.id_to_token = {std::string(Vocabulary::kNumber),
                       std::string(Vocabulary::kSymbol),
                       std::string(Vocabulary::kUnknown)};
  for (auto& [cnt, tok] : ranked) vocab.id_to_token.push_back(tok);
  for (int id = 0; id < vocab.size(); ++id)
    vocab.token_to_id[vocab.id_to_token[static_cast<std::size_t>(id)]] = id;
  return vocab;
}

struct TokenizedDocument {
  std::string id;
  std::vector<std::vector<int>> sentences;  // token ids, each non-empty
  std::vector<std::string> sentence_texts;  // parallel to sentences
  int label = 0;

  int sentence_count() const { return static_cast<int>(sentences.size()); }
};

inline TokenizedDocument encode_document(const PreparedDocument& prep,
                                         const Vocabulary& vocab) {
  if (prep.sentence_tokens.empty()) throw EmptyDocument(prep.id);
  TokenizedDocument doc;
  doc.id = prep.id;
  doc.label = prep.label;
  doc.sentence_texts = prep.sentence_texts;
  doc.sentences.reserve(prep.sentence_tokens.size());
  for (const auto& sentence : prep.sentence_tokens) {
    std::vector<int> ids;
    ids.reserve(sentence.size());
    for (const std::string& tok : sentence) ids.push_back(vocab.id_of(tok));
    doc.sentences.push_back(std::move(ids));
  }
  return doc;
}

inline TokenizedDocument encode_document(const RawDocument& raw,
                                         const Vocabulary& vocab) {
  return encode_document(prepare_document(raw), vocab);
}

struct CorpusSplit {
  std::vector<TokenizedDocument> train;
  std::vector<TokenizedDocument> test;
};

/// Validates the split invariant: no document id may appear in both halves.
inline CorpusSplit make_corpus_split(std::vector<TokenizedDocument> train,
                                     std::vector<TokenizedDocument> test) {
  std::set<std::string> train_ids;
  for (const TokenizedDocument& doc : train) train_ids.insert(doc.id);
  for (const TokenizedDocument& doc : test)
    if (train_ids.count(doc.id))
      throw std::invalid_argument("document id in both splits: " + doc.id);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void save_vocabulary(const std::filesystem::path& path,
                            const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << vocab.serialize();
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path,
                                  int min_count = 5) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Vocabulary vocab;
  vocab.min_count = min_count;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.id_to_token.push_back(line);
  }
  if (vocab.size() < 3 || vocab.id_to_token[0] != Vocabulary::kNumber ||
      vocab.id_to_token[1] != Vocabulary::kSymbol ||
      vocab.id_to_token[2] != Vocabulary::kUnknown)
    throw std::runtime_error("not a vocabulary file: " + path.string());
  for (int id = 0; id < vocab.size(); ++id)
    vocab.token_to_id[vocab.id_to_token[static_cast<std::size_t>(id)]] = id;
  return vocab;
}

/// Reads one split of the aclImdb directory layout: <root>/<split>/pos and
/// <root>/<split>/neg, one .txt file per review. Files are visited in sorted
/// order so document order is stable across platforms.
inline std::vector<RawDocument> read_imdb_split(const std::filesystem::path& root,
                                                const std::string& split) {
  namespace fs = std::filesystem;
  std::vector<RawDocument> docs;
  for (const auto& [sub, label] :
       std::initializer_list<std::pair<const char*, int>>{{"neg", 0}, {"pos", 1}}) {
    const fs::path dir = root / split / sub;
    if (!fs::is_directory(dir))
      throw std::runtime_error("missing corpus directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".txt")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      std::ifstream in(file, std::ios::binary);
      std::ostringstream text;
      text << in.rdbuf();
      docs.push_back(RawDocument{split + "/" + sub + "/" + file.stem().string(),
                                 text.str(), label});
    }
  }
  return docs;
}

/// Line-delimited raw corpus: one JSON record {id, label, text} per line.
inline void write_raw_jsonl(const std::filesystem::path& path,
                            const std::vector<RawDocument>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const RawDocument& d : docs) {
    nlohmann::json rec{{"id", d.id}, {"label", d.label}, {"text", d.text}};
    out << rec.dump() << '\n';
  }
}

inline std::vector<RawDocument> read_raw_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<RawDocument> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    const int label = rec.at("label").get<int>();
    if (label != 0 && label != 1)
      throw std::runtime_error("label must be 0 or 1 in " + path.string());
    docs.push_back(RawDocument{rec.at("id").get<std::string>(),
                               rec.at("text").get<std::string>(), label});
  }
  return docs;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

/// Encoded corpus file: a header record carrying the vocabulary hash followed
/// by one record {id, label, sentences:[[ids]], texts:[...]} per document.
inline void write_encoded_corpus(const std::filesystem::path& path,
                                 const std::vector<TokenizedDocument>& docs,
                                 const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json header{{"sentex_corpus", 1},
                        {"vocab_hash", hex64(vocab.hash())},
                        {"min_count", vocab.min_count},
                        {"documents", docs.size()}};
  out << header.dump() << '\n';
  for (const TokenizedDocument& d : docs) {
    nlohmann::json rec{{"id", d.id},
                       {"label", d.label},
                       {"sentences", d.sentences},
                       {"texts", d.sentence_texts}};
    out << rec.dump() << '\n';
  }
}

struct EncodedCorpusFile {
  std::vector<TokenizedDocument> documents;
  std::string vocab_hash;
  int min_count = 5;
};

inline EncodedCorpusFile read_encoded_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty corpus file: " + path.string());
  nlohmann::json header = nlohmann::json::parse(line);
  if (!header.contains("sentex_corpus"))
    throw std::runtime_error("not an encoded corpus file: " + path.string());
  EncodedCorpusFile file;
  file.vocab_hash = header.at("vocab_hash").get<std::string>();
  file.min_count = header.value("min_count", 5);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    TokenizedDocument doc;
    doc.id = rec.at("id").get<std::string>();
    doc.label = rec.at("label").get<int>();
    doc.sentences = rec.at("sentences").get<std::vector<std::vector<int>>>();
    if (rec.contains("texts"))
      doc.sentence_texts = rec.at("texts").get<std::vector<std::string>>();
    else
      doc.sentence_texts.assign(doc.sentences.size(), std::string());
    if (doc.sentences.empty()) throw EmptyDocument(doc.id);
    file.documents.push_back(std::move(doc));
  }
  return file;
}

}  // namespace sentex
