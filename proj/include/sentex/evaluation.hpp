#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sentex/corpus.hpp"
#include "sentex/saliency.hpp"
#include "sentex/serialize.hpp"

namespace sentex {

// ---------------------------------------------------------------------------
// Naive Bayes reference model
// ---------------------------------------------------------------------------

/// Multinomial Naive Bayes over unigram counts with add-one smoothing.
struct NaiveBayesModel {
  std::vector<double> log_priors;  // per class
  Mat log_likelihood;              // classes x |V|
  std::string vocab_hash;

  int classes() const { return static_cast<int>(log_priors.size()); }
  int vocab_size() const { return log_likelihood.cols; }
};

inline NaiveBayesModel nb_train(const std::vector<TokenizedDocument>& train_docs,
                                const Vocabulary& vocab) {
  if (train_docs.empty()) throw std::invalid_argument("nb_train: empty training set");
  constexpr int kClasses = 2;
  std::vector<long long> doc_counts(kClasses, 0);
  Mat counts(kClasses, vocab.size());
  for (const TokenizedDocument& doc : train_docs) {
    if (doc.label < 0 || doc.label >= kClasses)
      throw std::out_of_range("nb_train: label out of range");
    ++doc_counts[static_cast<std::size_t>(doc.label)];
    for (const auto& sentence : doc.sentences)
      for (int id : sentence) counts.at(doc.label, id) += 1.0;
  }
  if (doc_counts[0] == 0 || doc_counts[1] == 0)
    throw std::invalid_argument("nb_train: both classes must be present");

  NaiveBayesModel model;
  model.vocab_hash = hex64(vocab.hash());
  model.log_priors.resize(kClasses);
  model.log_likelihood = Mat(kClasses, vocab.size());
  const double total_docs = static_cast<double>(train_docs.size());
  for (int c = 0; c < kClasses; ++c) {
    model.log_priors[static_cast<std::size_t>(c)] =
        std::log(static_cast<double>(doc_counts[static_cast<std::size_t>(c)]) / total_docs);
    double total_tokens = 0.0;
    for (int t = 0; t < vocab.size(); ++t) total_tokens += counts.at(c, t);
    const double denom = std::log(total_tokens + vocab.size());
    for (int t = 0; t < vocab.size(); ++t)
      model.log_likelihood.at(c, t) = std::log(counts.at(c, t) + 1.0) - denom;
  }
  return model;
}

/// Class of the token bag made of the selected sentences (all sentences when
/// selected covers the whole document). Ties break toward class 0.
inline int nb_predict(const TokenizedDocument& doc,
                      std::span<const int> selected,
                      const NaiveBayesModel& model) {
  if (selected.empty())
    throw std::invalid_argument("nb_predict: empty extraction");
  std::vector<double> score(model.log_priors);
  for (int s : selected) {
    if (s < 0 || s >= doc.sentence_count())
      throw std::out_of_range("nb_predict: sentence index out of range");
    for (int id : doc.sentences[static_cast<std::size_t>(s)]) {
      if (id < 0 || id >= model.vocab_size())
        throw std::out_of_range("nb_predict: token id out of range");
      for (int c = 0; c < model.classes(); ++c)
        score[static_cast<std::size_t>(c)] += model.log_likelihood.at(c, id);
    }
  }
  int best = 0;
  for (int c = 1; c < model.classes(); ++c)
    if (score[static_cast<std::size_t>(c)] > score[static_cast<std::size_t>(best)])
      best = c;
  return best;
}

inline int nb_predict(const TokenizedDocument& doc, const NaiveBayesModel& model) {
  std::vector<int> all(static_cast<std::size_t>(doc.sentence_count()));
  std::iota(all.begin(), all.end(), 0);
  return nb_predict(doc, all, model);
}

inline void save_nb_model(const std::filesystem::path& path,
                          const NaiveBayesModel& model) {
  TensorFile file;
  file.kind = "nbmodel";
  file.add_meta("classes", model.classes());
  file.add_meta("vocab_size", model.vocab_size());
  file.add_meta("vocab_hash", model.vocab_hash);
  file.add_tensor("log_priors", {model.classes()}, model.log_priors);
  file.add_tensor("log_likelihood",
                  {model.log_likelihood.rows, model.log_likelihood.cols},
                  model.log_likelihood.data);
  file.save(path);
}

inline NaiveBayesModel load_nb_model(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::load(path, "nbmodel");
  NaiveBayesModel model;
  model.vocab_hash = file.meta_at("vocab_hash");
  model.log_priors = file.tensor("log_priors").data;
  const auto& ll = file.tensor("log_likelihood");
  model.log_likelihood = Mat(ll.dims.at(0), ll.dims.at(1));
  model.log_likelihood.data = ll.data;
  return model;
}

// ---------------------------------------------------------------------------
// Shallow embedding-sum baseline
// ---------------------------------------------------------------------------

/// Bag-of-words logistic regression over the sum of word embeddings.
struct ShallowModel {
  Mat embeddings;               // dim x |V|
  std::vector<double> weights;  // dim
  double bias = 0.0;
  std::string vocab_hash;

  int dim() const { return embeddings.rows; }
  int vocab_size() const { return embeddings.cols; }
};

struct ShallowHyperparams {
  int dim = 50;
  double learning_rate = 0.05;
  int epochs = 5;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline std::vector<double> shallow_doc_embedding(const TokenizedDocument& doc,
                                                 const Mat& embeddings) {
  std::vector<double> e(static_cast<std::size_t>(embeddings.rows), 0.0);
  for (const auto& sentence : doc.sentences)
    for (int id : sentence)
      for (int r = 0; r < embeddings.rows; ++r)
        e[static_cast<std::size_t>(r)] += embeddings.at(r, id);
  return e;
}

/// P(class 1) under the shallow model.
inline double shallow_probability(const TokenizedDocument& doc,
                                  const ShallowModel& model) {
  const std::vector<double> e = shallow_doc_embedding(doc, model.embeddings);
  return sigmoid(dot(model.weights, e) + model.bias);
}

namespace detail {

/// Per-document SGD on the logistic loss. When train_embeddings is false the
/// embedding matrix is left untouched (the loaded-and-frozen mode).
inline ShallowModel shallow_train_impl(const std::vector<TokenizedDocument>& docs,
                                       Mat embeddings, bool train_embeddings,
                                       const ShallowHyperparams& hp,
                                       const std::string& vocab_hash) {
  if (docs.empty()) throw std::invalid_argument("shallow_train: empty training set");
  ShallowModel model;
  model.embeddings = std::move(embeddings);
  model.vocab_hash = vocab_hash;
  Rng rng(derive_seed(hp.seed, 0));
  model.weights.resize(static_cast<std::size_t>(model.dim()));
  const double a = std::sqrt(6.0 / (model.dim() + 1));
  for (double& w : model.weights) w = rng.uniform(-a, a);
  model.bias = 0.0;

  Rng shuffle_rng(derive_seed(hp.seed, 1));
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    if (hp.shuffle) shuffle_rng.shuffle(order);
    for (std::size_t i : order) {
      const TokenizedDocument& doc = docs[i];
      const std::vector<double> e = shallow_doc_embedding(doc, model.embeddings);
      const double p = sigmoid(dot(model.weights, e) + model.bias);
      const double dz = p - static_cast<double>(doc.label);
      std::vector<double> dembed(static_cast<std::size_t>(model.dim()));
      for (int r = 0; r < model.dim(); ++r)
        dembed[static_cast<std::size_t>(r)] =
            dz * model.weights[static_cast<std::size_t>(r)];
      for (int r = 0; r < model.dim(); ++r)
        model.weights[static_cast<std::size_t>(r)] -=
            hp.learning_rate * dz * e[static_cast<std::size_t>(r)];
      model.bias -= hp.learning_rate * dz;
      if (train_embeddings)
        for (const auto& sentence : doc.sentences)
          for (int id : sentence)
            for (int r = 0; r < model.dim(); ++r)
              model.embeddings.at(r, id) -=
                  hp.learning_rate * dembed[static_cast<std::size_t>(r)];
    }
  }
  return model;
}

}  // namespace detail

/// Embeddings trained jointly from random init.
inline ShallowModel shallow_train(const std::vector<TokenizedDocument>& docs,
                                  const Vocabulary& vocab,
                                  const ShallowHyperparams& hp) {
  Mat embeddings(hp.dim, vocab.size());
  Rng rng(derive_seed(hp.seed, 2));
  init_embeddings(embeddings, rng);
  return detail::shallow_train_impl(docs, std::move(embeddings), true, hp,
                                    hex64(vocab.hash()));
}

/// Pre-loaded embeddings, kept frozen; only the logistic layer is trained.
inline ShallowModel shallow_train_frozen(const std::vector<TokenizedDocument>& docs,
                                         Mat embeddings,
                                         const ShallowHyperparams& hp,
                                         const std::string& vocab_hash) {
  return detail::shallow_train_impl(docs, std::move(embeddings), false, hp,
                                    vocab_hash);
}

struct LoadedEmbeddings {
  Mat matrix;       // dim x |V|
  int found = 0;    // vocabulary tokens present in the file
  int missing = 0;  // vocabulary tokens absent (left as zero vectors)
};

/// Plain-text word-vector format: one token followed by its values per line.
/// Vocabulary tokens missing from the file keep zero vectors; the caller is
/// expected to warn when missing > 0.
inline LoadedEmbeddings load_word_embeddings(const std::filesystem::path& path,
                                             const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::unordered_map<std::string, std::vector<double>> vectors;
  int dim = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    std::vector<double> values;
    double v;
    while (fields >> v) values.push_back(v);
    if (values.empty()) continue;
    if (dim < 0) dim = static_cast<int>(values.size());
    if (static_cast<int>(values.size()) != dim)
      throw std::runtime_error("inconsistent embedding width in " + path.string());
    vectors[token] = std::move(values);
  }
  if (dim < 1) throw std::runtime_error("no embeddings in " + path.string());
  LoadedEmbeddings out;
  out.matrix = Mat(dim, vocab.size());
  for (int id = 0; id < vocab.size(); ++id) {
    auto it = vectors.find(vocab.token_of(id));
    if (it == vectors.end()) {
      ++out.missing;
      continue;
    }
    ++out.found;
    out.matrix.set_col(id, it->second);
  }
  return out;
}

inline void save_shallow_model(const std::filesystem::path& path,
                               const ShallowModel& model) {
  TensorFile file;
  file.kind = "shallow";
  file.add_meta("dim", model.dim());
  file.add_meta("vocab_size", model.vocab_size());
  file.add_meta("vocab_hash", model.vocab_hash);
  file.add_tensor("embeddings", {model.embeddings.rows, model.embeddings.cols},
                  model.embeddings.data);
  file.add_tensor("weights", {model.dim()}, model.weights);
  file.add_tensor("bias", {1}, {model.bias});
  file.save(path);
}

inline ShallowModel load_shallow_model(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::load(path, "shallow");
  ShallowModel model;
  model.vocab_hash = file.meta_at("vocab_hash");
  const auto& emb = file.tensor("embeddings");
  model.embeddings = Mat(emb.dims.at(0), emb.dims.at(1));
  model.embeddings.data = emb.data;
  model.weights = file.tensor("weights").data;
  model.bias = file.tensor("bias").data.at(0);
  return model;
}

enum class WordAggregation { Sum, Mean };

/// The saliency technique applied to the shallow model: the pseudo-label is
/// the inverted prediction, the backward message at the embedding sum is
/// delta = (p - pseudo) * w (identical for every position), each word scores
/// |<delta, w_token>|, and a sentence aggregates its word scores.
inline SaliencyMap shallow_saliency(const TokenizedDocument& doc,
                                    const ShallowModel& model,
                                    WordAggregation aggregation = WordAggregation::Sum,
                                    bool include_words = false) {
  const double p = shallow_probability(doc, model);
  const std::vector<double> probs{1.0 - p, p};
  const PseudoLabel pseudo = invert_prediction(probs);
  const double dz = p - static_cast<double>(pseudo.label);
  std::vector<double> delta(static_cast<std::size_t>(model.dim()));
  for (int r = 0; r < model.dim(); ++r)
    delta[static_cast<std::size_t>(r)] = dz * model.weights[static_cast<std::size_t>(r)];

  SaliencyMap map;
  map.doc_id = doc.id;
  std::vector<std::vector<double>> word_scores;
  for (const auto& sentence : doc.sentences) {
    std::vector<double> scores;
    scores.reserve(sentence.size());
    double total = 0.0;
    for (int id : sentence) {
      const double s = std::abs(dot(delta, model.embeddings.col(id)));
      scores.push_back(s);
      total += s;
    }
    if (aggregation == WordAggregation::Mean)
      total /= static_cast<double>(sentence.size());
    map.sentence_scores.push_back(total);
    word_scores.push_back(std::move(scores));
  }
  if (include_words) map.word_scores = std::move(word_scores);
  return map;
}

// ---------------------------------------------------------------------------
// Baseline extractors
// ---------------------------------------------------------------------------

/// Uniform random relevance scores from a generator keyed by (seed, doc id),
/// so extractions are reproducible per document regardless of corpus order.
inline SaliencyMap random_scores(const std::string& doc_id, int n_sentences,
                                 std::uint64_t seed) {
  Rng rng(derive_seed(seed, fnv1a64(doc_id)));
  SaliencyMap map;
  map.doc_id = doc_id;
  map.sentence_scores.resize(static_cast<std::size_t>(n_sentences));
  for (double& s : map.sentence_scores) s = rng.uniform();
  return map;
}

inline Extraction random_extract(const TokenizedDocument& doc,
                                 const SelectionPolicy& policy,
                                 std::uint64_t seed) {
  return select_sentences(random_scores(doc.id, doc.sentence_count(), seed),
                          doc.sentence_count(), policy);
}

/// The first-and-last heuristic; a one-sentence document yields {0}.
inline Extraction first_last_extract(const TokenizedDocument& doc) {
  Extraction ex;
  ex.doc_id = doc.id;
  ex.policy = "firstlast";
  ex.selected.push_back(0);
  if (doc.sentence_count() > 1) ex.selected.push_back(doc.sentence_count() - 1);
  return ex;
}

// ---------------------------------------------------------------------------
// Extractor runners (produce extraction files)
// ---------------------------------------------------------------------------

inline ExtractionFile extract_convnet(const std::vector<TokenizedDocument>& docs,
                                      const ModelParams& params,
                                      const ModelConfig& config,
                                      const SelectionPolicy& policy,
                                      const std::string& vocab_hash,
                                      bool include_word_scores = false) {
  ExtractionFile file;
  file.extractor = "convnet";
  file.policy = policy.label();
  file.vocab_hash = vocab_hash;
  for (const TokenizedDocument& doc : docs) {
    SaliencyMap map = compute_saliency(doc, params, config, include_word_scores);
    file.extractions.push_back(select_sentences(map, doc.sentence_count(), policy));
    file.scores.push_back(map.sentence_scores);
    file.word_scores.push_back(map.word_scores ? *map.word_scores
                                               : std::vector<std::vector<double>>{});
  }
  return file;
}

inline ExtractionFile extract_shallow(const std::vector<TokenizedDocument>& docs,
                                      const ShallowModel& model,
                                      const SelectionPolicy& policy,
                                      WordAggregation aggregation = WordAggregation::Sum,
                                      bool include_word_scores = false) {
  ExtractionFile file;
  file.extractor = "shallow";
  file.policy = policy.label();
  file.vocab_hash = model.vocab_hash;
  for (const TokenizedDocument& doc : docs) {
    SaliencyMap map = shallow_saliency(doc, model, aggregation, include_word_scores);
    file.extractions.push_back(select_sentences(map, doc.sentence_count(), policy));
    file.scores.push_back(map.sentence_scores);
    file.word_scores.push_back(map.word_scores ? *map.word_scores
                                               : std::vector<std::vector<double>>{});
  }
  return file;
}

inline ExtractionFile extract_random(const std::vector<TokenizedDocument>& docs,
                                     const SelectionPolicy& policy,
                                     std::uint64_t seed,
                                     const std::string& vocab_hash = "") {
  ExtractionFile file;
  file.extractor = "random";
  file.policy = policy.label();
  file.vocab_hash = vocab_hash;
  file.seed = seed;
  for (const TokenizedDocument& doc : docs) {
    SaliencyMap map = random_scores(doc.id, doc.sentence_count(), seed);
    file.extractions.push_back(select_sentences(map, doc.sentence_count(), policy));
    file.scores.push_back(map.sentence_scores);
    file.word_scores.emplace_back();
  }
  return file;
}

inline ExtractionFile extract_firstlast(const std::vector<TokenizedDocument>& docs,
                                        const std::string& vocab_hash = "") {
  ExtractionFile file;
  file.extractor = "firstlast";
  file.policy = "firstlast";
  file.vocab_hash = vocab_hash;
  for (const TokenizedDocument& doc : docs) {
    file.extractions.push_back(first_last_extract(doc));
    std::vector<double> scores(static_cast<std::size_t>(doc.sentence_count()), 0.0);
    for (int s : file.extractions.back().selected)
      scores[static_cast<std::size_t>(s)] = 1.0;
    file.scores.push_back(std::move(scores));
    file.word_scores.emplace_back();
  }
  return file;
}

// ---------------------------------------------------------------------------
// The accuracy grid
// ---------------------------------------------------------------------------

struct EvalCell {
  std::string extractor;
  std::string policy;
  double accuracy = 0.0;
  int n_docs = 0;
  int n_correct = 0;
};

struct EvalReport {
  std::vector<EvalCell> cells;  // {extractor} x {policy}
  EvalCell full;
  EvalCell first_last;
};

/// The policy grid used for the headline comparison table.
inline std::vector<SelectionPolicy> standard_policies() {
  return {SelectionPolicy::proportion(0.50), SelectionPolicy::proportion(0.33),
          SelectionPolicy::proportion(0.25), SelectionPolicy::proportion(0.20),
          SelectionPolicy::fixed(5),         SelectionPolicy::fixed(4),
          SelectionPolicy::fixed(3),         SelectionPolicy::fixed(2)};
}

/// Reference-model accuracy over the test set when each document is reduced
/// to the extraction's selected sentences. Consumes extraction records only,
/// never extractor internals, so third-party extraction files evaluate the
/// same way. Every test document must be covered by every extraction set.
inline EvalReport evaluate_extractions(
    const std::vector<TokenizedDocument>& test_docs,
    const std::vector<ExtractionFile>& sets, const NaiveBayesModel& nb) {
  EvalReport report;
  auto accuracy_cell = [&](const std::string& extractor, const std::string& policy,
                           auto&& select_fn) {
    EvalCell cell;
    cell.extractor = extractor;
    cell.policy = policy;
    for (const TokenizedDocument& doc : test_docs) {
      const int predicted = nb_predict(doc, select_fn(doc), nb);
      ++cell.n_docs;
      if (predicted == doc.label) ++cell.n_correct;
    }
    cell.accuracy = cell.n_docs
                        ? static_cast<double>(cell.n_correct) / cell.n_docs
                        : 0.0;
    return cell;
  };

  report.full = accuracy_cell("full", "full", [](const TokenizedDocument& doc) {
    std::vector<int> all(static_cast<std::size_t>(doc.sentence_count()));
    std::iota(all.begin(), all.end(), 0);
    return all;
  });
  report.first_last =
      accuracy_cell("firstlast", "firstlast", [](const TokenizedDocument& doc) {
        return first_last_extract(doc).selected;
      });

  for (const ExtractionFile& set : sets) {
    std::unordered_map<std::string, const Extraction*> by_id;
    by_id.reserve(set.extractions.size());
    for (const Extraction& ex : set.extractions) by_id[ex.doc_id] = &ex;
    report.cells.push_back(accuracy_cell(
        set.extractor, set.policy, [&](const TokenizedDocument& doc) {
          auto it = by_id.find(doc.id);
          if (it == by_id.end())
            throw std::runtime_error("extraction set " + set.extractor + "/" +
                                     set.policy + " is missing doc id " + doc.id);
          return it->second->selected;
        }));
  }
  return report;
}

inline std::string policy_display_label(const std::string& policy) {
  if (policy == "full") return "Full";
  if (policy == "firstlast") return "First+Last";
  SelectionPolicy p = SelectionPolicy::parse(policy);
  if (p.mode == SelectionPolicy::Mode::Proportion) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%d%%",
                  static_cast<int>(std::lround(p.p * 100.0)));
    return buf;
  }
  return "Pick " + std::to_string(p.k);
}

/// Tab-separated grid: one row per policy, one column per extractor, plus
/// Full and First+Last rows. Accuracies in percent.
inline std::string format_eval_table(const EvalReport& report) {
  std::vector<std::string> extractors;
  std::vector<std::string> policies;
  for (const EvalCell& cell : report.cells) {
    if (std::find(extractors.begin(), extractors.end(), cell.extractor) ==
        extractors.end())
      extractors.push_back(cell.extractor);
    if (std::find(policies.begin(), policies.end(), cell.policy) == policies.end())
      policies.push_back(cell.policy);
  }
  auto cell_for = [&](const std::string& extractor,
                      const std::string& policy) -> const EvalCell* {
    for (const EvalCell& cell : report.cells)
      if (cell.extractor == extractor && cell.policy == policy) return &cell;
    return nullptr;
  };
  std::string out = "Policy";
  for (const std::string& e : extractors) out += '\t' + e;
  out += '\n';
  char buf[32];
  for (const std::string& policy : policies) {
    out += policy_display_label(policy);
    for (const std::string& extractor : extractors) {
      const EvalCell* cell = cell_for(extractor, policy);
      if (cell) {
        std::snprintf(buf, sizeof(buf), "\t%.2f", 100.0 * cell->accuracy);
        out += buf;
      } else {
        out += "\t-";
      }
    }
    out += '\n';
  }
  std::snprintf(buf, sizeof(buf), "Full\t%.2f\n", 100.0 * report.full.accuracy);
  out += buf;
  std::snprintf(buf, sizeof(buf), "First+Last\t%.2f\n",
                100.0 * report.first_last.accuracy);
  out += buf;
  return out;
}

inline nlohmann::json eval_report_json(const EvalReport& report) {
  auto cell_json = [](const EvalCell& cell) {
    return nlohmann::json{{"extractor", cell.extractor},
                          {"policy", cell.policy},
                          {"accuracy", cell.accuracy},
                          {"n_docs", cell.n_docs},
                          {"n_correct", cell.n_correct}};
  };
  nlohmann::json out{{"sentex_eval_report", 1}};
  out["full"] = cell_json(report.full);
  out["first_last"] = cell_json(report.first_last);
  out["cells"] = nlohmann::json::array();
  for (const EvalCell& cell : report.cells) out["cells"].push_back(cell_json(cell));
  return out;
}

}  // namespace sentex
