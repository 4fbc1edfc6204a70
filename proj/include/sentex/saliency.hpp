#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentex/model.hpp"

namespace sentex {

/// The loss target used for saliency: the class the model did NOT predict.
struct PseudoLabel {
  int label = 0;
};

/// Returns the class with the lower predicted probability. On a tie the
/// pseudo-label is class 1, the opposite of predict()'s tie rule, so it
/// always differs from the prediction.
inline PseudoLabel invert_prediction(std::span<const double> probs) {
  if (probs.size() != 2)
    throw std::invalid_argument("invert_prediction: binary probabilities expected");
  return PseudoLabel{probs[1] <= probs[0] ? 1 : 0};
}

/// Per-sentence (and optionally per-word) absolute gradient scores for one
/// document under the inverted pseudo-label.
struct SaliencyMap {
  std::string doc_id;
  std::vector<double> sentence_scores;
  std::optional<std::vector<std::vector<double>>> word_scores;
};

/// One backward pass under the pseudo-label, scored at both interfaces.
/// Sentence i scores |<delta_i, s_i>| where delta_i is the backward message
/// at column i of the document matrix and s_i is that column's sentence
/// embedding; word i of sentence s scores |<delta_i, w_token>| against the
/// word's embedding column. The implicit one-hot dictionaries are never
/// materialized; gradients are taken at the realized columns only.
inline SaliencyMap compute_saliency(const TokenizedDocument& doc,
                                    const ModelParams& params,
                                    const ModelConfig& config,
                                    bool include_words = false) {
  const ForwardTrace trace = document_forward(doc, params, config);
  const PseudoLabel pseudo = invert_prediction(trace.probs);
  auto [loss, grads] = backward_from_trace(doc, trace, pseudo.label, params, config);
  (void)loss;

  SaliencyMap map;
  map.doc_id = doc.id;
  map.sentence_scores.reserve(doc.sentences.size());
  for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
    const std::vector<double> delta =
        grads.doc_matrix_grad.col(static_cast<int>(i));
    map.sentence_scores.push_back(std::abs(
        dot(delta, trace.sentences[i].embedding)));
  }
  if (include_words) {
    std::vector<std::vector<double>> word_scores;
    word_scores.reserve(doc.sentences.size());
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      const Mat& delta_s = grads.sentence_matrix_grads[s];
      std::vector<double> scores;
      scores.reserve(doc.sentences[s].size());
      for (std::size_t i = 0; i < doc.sentences[s].size(); ++i) {
        const std::vector<double> delta = delta_s.col(static_cast<int>(i));
        const std::vector<double> embedding =
            params.embeddings.col(doc.sentences[s][i]);
        scores.push_back(std::abs(dot(delta, embedding)));
      }
      word_scores.push_back(std::move(scores));
    }
    map.word_scores = std::move(word_scores);
  }
  return map;
}

inline SaliencyMap sentence_saliency(const TokenizedDocument& doc,
                                     const ModelParams& params,
                                     const ModelConfig& config) {
  return compute_saliency(doc, params, config, false);
}

inline SaliencyMap word_saliency(const TokenizedDocument& doc,
                                 const ModelParams& params,
                                 const ModelConfig& config) {
  return compute_saliency(doc, params, config, true);
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct SelectionPolicy {
  enum class Mode { Fixed, Proportion };
  Mode mode = Mode::Fixed;
  int k = 1;          // Fixed
  double p = 1.0;     // Proportion, in (0, 1]

  static SelectionPolicy fixed(int k) {
    if (k < 1) throw std::invalid_argument("SelectionPolicy: k < 1");
    return {Mode::Fixed, k, 1.0};
  }
  static SelectionPolicy proportion(double p) {
    if (!(p > 0.0) || p > 1.0)
      throw std::invalid_argument("SelectionPolicy: p outside (0, 1]");
    return {Mode::Proportion, 1, p};
  }

  /// Number of sentences to keep from a document of n sentences. Proportion
  /// never exceeds p*n ("up to" the percentage) but always keeps at least
  /// one sentence.
  int budget(int n_sentences) const {
    if (mode == Mode::Fixed) return std::min(k, n_sentences);
    const int cap = static_cast<int>(std::floor(p * n_sentences));
    return std::min(n_sentences, std::max(1, cap));
  }

  /// Stable textual form, also used as the parse format: "fixed:K" or
  /// "prop:P".
  std::string label() const {
    if (mode == Mode::Fixed) return "fixed:" + std::to_string(k);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "prop:%g", p);
    return buf;
  }

  static SelectionPolicy parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon != std::string::npos) {
      const std::string kind = text.substr(0, colon);
      const std::string value = text.substr(colon + 1);
      if (kind == "fixed") return fixed(std::stoi(value));
      if (kind == "prop") return proportion(std::stod(value));
    }
    throw std::invalid_argument("bad policy (want fixed:K or prop:P): " + text);
  }
};

struct Extraction {
  std::string doc_id;
  std::vector<int> selected;  // unique, ascending
  std::string policy;
};

/// Selects the budgeted number of top-scored sentences. Score ties break
/// toward the earlier position; the result is sorted back into document
/// order.
inline Extraction select_sentences(const SaliencyMap& map, int n_sentences,
                                   const SelectionPolicy& policy) {
  if (static_cast<int>(map.sentence_scores.size()) != n_sentences)
    throw std::invalid_argument("select_sentences: map does not cover document");
  const int budget = policy.budget(n_sentences);
  std::vector<int> order(static_cast<std::size_t>(n_sentences));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = map.sentence_scores[static_cast<std::size_t>(a)];
    const double sb = map.sentence_scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  Extraction ex;
  ex.doc_id = map.doc_id;
  ex.policy = policy.label();
  ex.selected.assign(order.begin(), order.begin() + budget);
  std::sort(ex.selected.begin(), ex.selected.end());
  return ex;
}

// ---------------------------------------------------------------------------
// Extraction files
// ---------------------------------------------------------------------------

/// Line-delimited extraction records {doc_id, selected_indices,
/// sentence_scores}, preceded by a header record describing how they were
/// produced.
struct ExtractionFile {
  std::string extractor;            // convnet | shallow | random | firstlast
  std::string policy;
  std::string vocab_hash;
  std::uint64_t seed = 0;           // random extractor only
  std::vector<Extraction> extractions;
  std::vector<std::vector<double>> scores;  // parallel to extractions
  std::vector<std::vector<std::vector<double>>> word_scores;  // optional; empty if absent
};

inline void write_extractions(const std::filesystem::path& path,
                              const ExtractionFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json header{{"sentex_extractions", 1},
                        {"extractor", file.extractor},
                        {"policy", file.policy},
                        {"vocab_hash", file.vocab_hash},
                        {"seed", file.seed}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < file.extractions.size(); ++i) {
    nlohmann::json rec{{"doc_id", file.extractions[i].doc_id},
                       {"selected_indices", file.extractions[i].selected},
                       {"sentence_scores", file.scores[i]}};
    if (i < file.word_scores.size() && !file.word_scores[i].empty())
      rec["word_scores"] = file.word_scores[i];
    out << rec.dump() << '\n';
  }
}

inline ExtractionFile read_extractions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty extraction file: " + path.string());
  nlohmann::json header = nlohmann::json::parse(line);
  if (!header.contains("sentex_extractions"))
    throw std::runtime_error("not an extraction file: " + path.string());
  ExtractionFile file;
  file.extractor = header.at("extractor").get<std::string>();
  file.policy = header.at("policy").get<std::string>();
  file.vocab_hash = header.value("vocab_hash", "");
  file.seed = header.value("seed", std::uint64_t{0});
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    Extraction ex;
    ex.doc_id = rec.at("doc_id").get<std::string>();
    ex.selected = rec.at("selected_indices").get<std::vector<int>>();
    ex.policy = file.policy;
    file.extractions.push_back(std::move(ex));
    file.scores.push_back(rec.at("sentence_scores").get<std::vector<double>>());
    if (rec.contains("word_scores"))
      file.word_scores.push_back(
          rec.at("word_scores").get<std::vector<std::vector<double>>>());
    else
      file.word_scores.emplace_back();
  }
  return file;
}

}  // namespace sentex
