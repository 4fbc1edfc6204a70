#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sentex/corpus.hpp"
#include "sentex/saliency.hpp"

namespace sentex {

namespace detail {

inline std::string html_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

/// Sentence text with each token wrapped in an intensity span. Shading is
/// relative to the strongest word score in the document; a zero maximum
/// emits the plain text.
inline std::string shade_words(const std::string& sentence,
                               const std::vector<double>& scores,
                               double max_score) {
  const std::vector<TokenSpan> spans = scan_tokens(sentence);
  if (max_score <= 0.0 || spans.size() != scores.size())
    return html_escape(sentence);
  std::string out;
  std::size_t cursor = 0;
  char buf[96];
  for (std::size_t i = 0; i < spans.size(); ++i) {
    out += html_escape(sentence.substr(cursor, spans[i].begin - cursor));
    const double alpha = 0.85 * (scores[i] / max_score);
    std::snprintf(buf, sizeof(buf), "<span style=\"background:rgba(255,170,0,%.2f)\">",
                  alpha);
    out += buf;
    out += html_escape(
        sentence.substr(spans[i].begin, spans[i].end - spans[i].begin));
    out += "</span>";
    cursor = spans[i].end;
  }
  out += html_escape(sentence.substr(cursor));
  return out;
}

}  // namespace detail

/// Static, self-contained HTML: one section per extraction record showing the
/// full document text with the selected sentences highlighted and, when the
/// extraction file carries word scores, per-word intensity shading.
inline std::string render_report(const std::vector<TokenizedDocument>& docs,
                                 const ExtractionFile& extractions) {
  std::unordered_map<std::string, const TokenizedDocument*> by_id;
  by_id.reserve(docs.size());
  for (const TokenizedDocument& doc : docs) by_id[doc.id] = &doc;

  std::string html;
  html +=
      "<!doctype html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
      "<title>sentex extractions</title>\n"
      "<style>\n"
      "body { font-family: Georgia, serif; max-width: 52em; margin: 2em auto; "
      "color: #222; }\n"
      ".doc { margin-bottom: 2.5em; }\n"
      ".doc h2 { font-size: 1em; color: #555; border-bottom: 1px solid #ddd; }\n"
      ".sentence { color: #777; }\n"
      ".sentence.selected { color: #b2182b; font-weight: bold; }\n"
      ".meta { font-weight: normal; color: #999; }\n"
      "</style>\n</head>\n<body>\n";
  html += "<h1>Extractions: " + detail::html_escape(extractions.extractor) +
          " / " + detail::html_escape(extractions.policy) + "</h1>\n";

  for (std::size_t rec = 0; rec < extractions.extractions.size(); ++rec) {
    const Extraction& ex = extractions.extractions[rec];
    auto it = by_id.find(ex.doc_id);
    if (it == by_id.end())
      throw std::runtime_error("extraction references unknown doc id: " + ex.doc_id);
    const TokenizedDocument& doc = *it->second;
    const std::vector<std::vector<double>>* word_scores =
        rec < extractions.word_scores.size() && !extractions.word_scores[rec].empty()
            ? &extractions.word_scores[rec]
            : nullptr;
    double max_word = 0.0;
    if (word_scores)
      for (const auto& sentence : *word_scores)
        for (double s : sentence) max_word = std::max(max_word, s);

    html += "<section class=\"doc\">\n<h2>" + detail::html_escape(doc.id) +
            " <span class=\"meta\">label: " +
            (doc.label == 1 ? "positive" : "negative") + "</span></h2>\n<p>";
    std::size_t next_selected = 0;
    for (int s = 0; s < doc.sentence_count(); ++s) {
      const bool selected = next_selected < ex.selected.size() &&
                            ex.selected[next_selected] == s;
      if (selected) ++next_selected;
      html += selected ? "<span class=\"sentence selected\">"
                       : "<span class=\"sentence\">";
      const std::string& text = doc.sentence_texts[static_cast<std::size_t>(s)];
      if (word_scores && static_cast<std::size_t>(s) < word_scores->size())
        html += detail::shade_words(text, (*word_scores)[static_cast<std::size_t>(s)],
                                    max_word);
      else
        html += detail::html_escape(text);
      html += "</span> ";
    }
    html += "</p>\n</section>\n";
  }
  html += "</body>\n</html>\n";
  return html;
}

}  // namespace sentex
