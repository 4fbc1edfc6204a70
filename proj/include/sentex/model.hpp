#pragma once

#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentex/corpus.hpp"
#include "sentex/kernels.hpp"
#include "sentex/mat.hpp"
#include "sentex/serialize.hpp"

namespace sentex {

struct ModelConfig {
  int embed_dim = 10;
  int sent_filters = 6;
  int sent_width = 5;
  int sent_pool_k = 4;
  int doc_filters = 15;
  int doc_width = 5;
  int doc_pool_k = 2;
  int classes = 2;

  /// Row count of the document matrix: each sentence embedding is the
  /// row-major flatten of the sent_filters x sent_pool_k pooled activations.
  int sentence_embed_dim() const { return sent_filters * sent_pool_k; }
  /// Input width of the softmax layer: flatten of doc_filters x doc_pool_k.
  int doc_feature_dim() const { return doc_filters * doc_pool_k; }

  void validate() const {
    if (embed_dim < 1 || sent_filters < 1 || sent_width < 1 || sent_pool_k < 1 ||
        doc_filters < 1 || doc_width < 1 || doc_pool_k < 1 || classes < 2)
      throw std::invalid_argument("ModelConfig: non-positive field");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  Mat embeddings;             // embed_dim x |V|
  FilterBank sentence_bank;   // sent_filters x embed_dim x sent_width
  FilterBank document_bank;   // doc_filters x sentence_embed_dim x doc_width
  Mat softmax_weights;        // classes x doc_feature_dim
  std::vector<double> softmax_bias;  // classes

  int vocab_size() const { return embeddings.cols; }

  static ModelParams init(const ModelConfig& config, int vocab_size,
                          std::uint64_t seed) {
    config.validate();
    if (vocab_size < 1) throw std::invalid_argument("init: vocab_size < 1");
    ModelParams p;
    Rng rng(seed);
    p.embeddings = Mat(config.embed_dim, vocab_size);
    init_embeddings(p.embeddings, rng);
    p.sentence_bank = FilterBank(config.sent_filters, config.sent_width,
                                 config.embed_dim);
    init_filter_bank(p.sentence_bank, rng);
    p.document_bank = FilterBank(config.doc_filters, config.doc_width,
                                 config.sentence_embed_dim());
    init_filter_bank(p.document_bank, rng);
    p.softmax_weights = Mat(config.classes, config.doc_feature_dim());
    init_glorot_uniform(p.softmax_weights, config.doc_feature_dim(),
                        config.classes, rng);
    p.softmax_bias.assign(static_cast<std::size_t>(config.classes), 0.0);
    return p;
  }
};

/// Cached activations of one sentence pass, sufficient for backpropagation.
struct SentenceTrace {
  Mat sentence_matrix;            // S_s: embed_dim x |s|
  Mat conv_out;                   // sent_filters x (|s| + sent_width - 1)
  KMaxResult pooled;              // pre-tanh values + index map
  Mat activated;                  // tanh(pooled.values)
  std::vector<double> embedding;  // row-major flatten of activated
};

struct ForwardTrace {
  std::vector<SentenceTrace> sentences;
  Mat doc_matrix;  // D_d: sentence_embed_dim x m, columns are embeddings
  Mat doc_conv;
  KMaxResult doc_pooled;
  Mat doc_activated;
  std::vector<double> doc_feature;
  std::vector<double> logits;
  std::vector<double> probs;
};

inline std::vector<double> flatten_row_major(const Mat& m) {
  return m.data;  // Mat is row-major already
}

inline Mat unflatten_row_major(std::span<const double> v, int rows, int cols) {
  if (v.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("unflatten: size mismatch");
  Mat m(rows, cols);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

/// Sentence-level pipeline: assemble S_s from embedding columns, then
/// conv -> k-max -> tanh -> flatten. The same parameters are used for every
/// sentence of every document (weight tying).
inline SentenceTrace sentence_forward(std::span<const int> tokens,
                                      const ModelParams& params,
                                      const ModelConfig& config) {
  if (tokens.empty()) throw std::invalid_argument("sentence_forward: empty sentence");
  SentenceTrace trace;
  trace.sentence_matrix = Mat(config.embed_dim, static_cast<int>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int id = tokens[i];
    if (id < 0 || id >= params.vocab_size())
      throw std::out_of_range("token id out of range: " + std::to_string(id));
    for (int r = 0; r < config.embed_dim; ++r)
      trace.sentence_matrix.at(r, static_cast<int>(i)) = params.embeddings.at(r, id);
  }
  trace.conv_out = conv_wide_forward(trace.sentence_matrix, params.sentence_bank);
  trace.pooled = kmax_forward(trace.conv_out, config.sent_pool_k);
  trace.activated = tanh_forward(trace.pooled.values);
  trace.embedding = flatten_row_major(trace.activated);
  return trace;
}

/// Full forward pass: sentence embeddings assembled as columns of the
/// document matrix, then conv -> k-max -> tanh -> flatten -> affine ->
/// softmax. The trace retains every intermediate needed by the backward pass.
inline ForwardTrace document_forward(const TokenizedDocument& doc,
                                     const ModelParams& params,
                                     const ModelConfig& config) {
  if (doc.sentences.empty()) throw EmptyDocument(doc.id);
  ForwardTrace trace;
  trace.sentences.reserve(doc.sentences.size());
  trace.doc_matrix = Mat(config.sentence_embed_dim(),
                         static_cast<int>(doc.sentences.size()));
  for (std::size_t j = 0; j < doc.sentences.size(); ++j) {
    trace.sentences.push_back(sentence_forward(doc.sentences[j], params, config));
    trace.doc_matrix.set_col(static_cast<int>(j), trace.sentences.back().embedding);
  }
  trace.doc_conv = conv_wide_forward(trace.doc_matrix, params.document_bank);
  trace.doc_pooled = kmax_forward(trace.doc_conv, config.doc_pool_k);
  trace.doc_activated = tanh_forward(trace.doc_pooled.values);
  trace.doc_feature = flatten_row_major(trace.doc_activated);

  trace.logits.assign(static_cast<std::size_t>(config.classes), 0.0);
  for (int c = 0; c < config.classes; ++c)
    trace.logits[static_cast<std::size_t>(c)] =
        params.softmax_bias[static_cast<std::size_t>(c)] +
        dot(params.softmax_weights.row(c), trace.doc_feature);
  trace.probs = softmax_forward(trace.logits);
  return trace;
}

/// Sparse per-column gradients for the embedding matrix, keyed by token id.
/// std::map so accumulation and update order are deterministic.
struct EmbeddingGrad {
  std::map<int, std::vector<double>> cols;

  void add(int token_id, std::span<const double> g) {
    auto [it, inserted] = cols.try_emplace(token_id, g.size(), 0.0);
    std::vector<double>& acc = it->second;
    for (std::size_t r = 0; r < g.size(); ++r) acc[r] += g[r];
  }
};

struct Gradients {
  EmbeddingGrad embeddings;
  FilterBank sentence_bank;
  FilterBank document_bank;
  Mat softmax_weights;
  std::vector<double> softmax_bias;

  // Backward messages at the two embedding-matrix interfaces; column i is
  // delta_i for sentence i (document level) or word i (sentence level).
  Mat doc_matrix_grad;
  std::vector<Mat> sentence_matrix_grads;

  static Gradients zeros_like(const ModelParams& p) {
    Gradients g;
    g.sentence_bank = FilterBank(p.sentence_bank.n_f, p.sentence_bank.w_f,
                                 p.sentence_bank.d);
    g.document_bank = FilterBank(p.document_bank.n_f, p.document_bank.w_f,
                                 p.document_bank.d);
    g.softmax_weights = Mat(p.softmax_weights.rows, p.softmax_weights.cols);
    g.softmax_bias.assign(p.softmax_bias.size(), 0.0);
    return g;
  }

  /// Sums parameter gradients (interface messages are per-document and are
  /// not combined).
  void accumulate(const Gradients& other) {
    for (const auto& [id, col] : other.embeddings.cols)
      embeddings.add(id, col);
    for (int r = 0; r < sentence_bank.n_f; ++r)
      for (std::size_t i = 0; i < sentence_bank.weights[r].data.size(); ++i)
        sentence_bank.weights[r].data[i] += other.sentence_bank.weights[r].data[i];
    for (int r = 0; r < sentence_bank.n_f; ++r)
      sentence_bank.bias[static_cast<std::size_t>(r)] +=
          other.sentence_bank.bias[static_cast<std::size_t>(r)];
    for (int r = 0; r < document_bank.n_f; ++r)
      for (std::size_t i = 0; i < document_bank.weights[r].data.size(); ++i)
        document_bank.weights[r].data[i] += other.document_bank.weights[r].data[i];
    for (int r = 0; r < document_bank.n_f; ++r)
      document_bank.bias[static_cast<std::size_t>(r)] +=
          other.document_bank.bias[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < softmax_weights.data.size(); ++i)
      softmax_weights.data[i] += other.softmax_weights.data[i];
    for (std::size_t i = 0; i < softmax_bias.size(); ++i)
      softmax_bias[i] += other.softmax_bias[i];
  }

  void scale(double s) {
    for (auto& [id, col] : embeddings.cols)
      for (double& v : col) v *= s;
    for (Mat& w : sentence_bank.weights)
      for (double& v : w.data) v *= s;
    for (double& v : sentence_bank.bias) v *= s;
    for (Mat& w : document_bank.weights)
      for (double& v : w.data) v *= s;
    for (double& v : document_bank.bias) v *= s;
    for (double& v : softmax_weights.data) v *= s;
    for (double& v : softmax_bias) v *= s;
  }
};

/// Backpropagation from an existing forward trace under the given label.
/// Returns the cross-entropy loss and exact gradients for every parameter
/// tensor, including the word-embedding columns of the document's tokens.
/// Tied sentence-level gradients are summed over sentences.
inline std::pair<double, Gradients> backward_from_trace(
    const TokenizedDocument& doc, const ForwardTrace& trace, int label,
    const ModelParams& params, const ModelConfig& config) {
  const double loss = cross_entropy_loss(trace.probs, label);
  if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");

  Gradients grads = Gradients::zeros_like(params);

  const std::vector<double> dlogits = softmax_xent_backward(trace.probs, label);
  for (int c = 0; c < config.classes; ++c) {
    grads.softmax_bias[static_cast<std::size_t>(c)] = dlogits[static_cast<std::size_t>(c)];
    for (int f = 0; f < config.doc_feature_dim(); ++f)
      grads.softmax_weights.at(c, f) =
          dlogits[static_cast<std::size_t>(c)] * trace.doc_feature[static_cast<std::size_t>(f)];
  }

  std::vector<double> ddoc_feature(static_cast<std::size_t>(config.doc_feature_dim()), 0.0);
  for (int c = 0; c < config.classes; ++c)
    for (int f = 0; f < config.doc_feature_dim(); ++f)
      ddoc_feature[static_cast<std::size_t>(f)] +=
          dlogits[static_cast<std::size_t>(c)] * params.softmax_weights.at(c, f);

  const Mat dactivated = unflatten_row_major(ddoc_feature, config.doc_filters,
                                             config.doc_pool_k);
  const Mat dpooled = tanh_backward(trace.doc_activated, dactivated);
  const Mat dconv = kmax_backward(trace.doc_pooled.indices, dpooled);
  ConvGrads doc_conv_grads =
      conv_wide_backward(trace.doc_matrix, params.document_bank, dconv);
  grads.document_bank = std::move(doc_conv_grads.param_grad);
  grads.doc_matrix_grad = std::move(doc_conv_grads.input_grad);

  grads.sentence_matrix_grads.reserve(trace.sentences.size());
  for (std::size_t j = 0; j < trace.sentences.size(); ++j) {
    const SentenceTrace& sent = trace.sentences[j];
    const std::vector<double> delta = grads.doc_matrix_grad.col(static_cast<int>(j));
    const Mat dact_s = unflatten_row_major(delta, config.sent_filters,
                                           config.sent_pool_k);
    const Mat dpooled_s = tanh_backward(sent.activated, dact_s);
    const Mat dconv_s = kmax_backward(sent.pooled.indices, dpooled_s);
    ConvGrads sent_grads =
        conv_wide_backward(sent.sentence_matrix, params.sentence_bank, dconv_s);
    for (int r = 0; r < grads.sentence_bank.n_f; ++r) {
      for (std::size_t i = 0; i < grads.sentence_bank.weights[r].data.size(); ++i)
        grads.sentence_bank.weights[r].data[i] +=
            sent_grads.param_grad.weights[r].data[i];
      grads.sentence_bank.bias[static_cast<std::size_t>(r)] +=
          sent_grads.param_grad.bias[static_cast<std::size_t>(r)];
    }
    const std::vector<int>& tokens = doc.sentences[j];
    for (std::size_t i = 0; i < tokens.size(); ++i)
      grads.embeddings.add(tokens[i],
                           sent_grads.input_grad.col(static_cast<int>(i)));
    grads.sentence_matrix_grads.push_back(std::move(sent_grads.input_grad));
  }
  return {loss, std::move(grads)};
}

inline std::pair<double, Gradients> loss_and_backward(
    const TokenizedDocument& doc, int label, const ModelParams& params,
    const ModelConfig& config) {
  const ForwardTrace trace = document_forward(doc, params, config);
  return backward_from_trace(doc, trace, label, params, config);
}

struct Prediction {
  int cls = 0;
  std::vector<double> probs;
};

/// Argmax of the forward probabilities; ties break toward the lower class
/// index.
inline Prediction predict(const TokenizedDocument& doc, const ModelParams& params,
                          const ModelConfig& config) {
  ForwardTrace trace = document_forward(doc, params, config);
  Prediction pred;
  pred.probs = std::move(trace.probs);
  for (std::size_t c = 1; c < pred.probs.size(); ++c)
    if (pred.probs[c] > pred.probs[static_cast<std::size_t>(pred.cls)])
      pred.cls = static_cast<int>(c);
  return pred;
}

inline void apply_sgd(ModelParams& params, const Gradients& grads,
                      double learning_rate) {
  // Validate every tensor before mutating anything so a non-finite gradient
  // aborts the whole step.
  for (const auto& [id, col] : grads.embeddings.cols)
    if (!all_finite(std::span<const double>{col}))
      throw std::runtime_error("sgd_step: non-finite gradient");
  for (const Mat& w : grads.sentence_bank.weights)
    if (!all_finite(w)) throw std::runtime_error("sgd_step: non-finite gradient");
  for (const Mat& w : grads.document_bank.weights)
    if (!all_finite(w)) throw std::runtime_error("sgd_step: non-finite gradient");
  if (!all_finite(std::span<const double>{grads.sentence_bank.bias}) ||
      !all_finite(std::span<const double>{grads.document_bank.bias}) ||
      !all_finite(grads.softmax_weights) ||
      !all_finite(std::span<const double>{grads.softmax_bias}))
    throw std::runtime_error("sgd_step: non-finite gradient");

  for (const auto& [id, col] : grads.embeddings.cols)
    for (int r = 0; r < params.embeddings.rows; ++r)
      params.embeddings.at(r, id) -= learning_rate * col[static_cast<std::size_t>(r)];
  sgd_step(params.sentence_bank, grads.sentence_bank, learning_rate);
  sgd_step(params.document_bank, grads.document_bank, learning_rate);
  sgd_step(params.softmax_weights, grads.softmax_weights, learning_rate);
  sgd_step(std::span<double>{params.softmax_bias},
           std::span<const double>{grads.softmax_bias}, learning_rate);
}

struct TrainHyperparams {
  double learning_rate = 0.03;
  int epochs = 10;
  int minibatch = 32;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  bool diverged = false;
  std::string note;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

/// Minibatch SGD with per-epoch shuffling from a seeded RNG. Deterministic
/// given the seed: init and shuffle streams are derived from it, and
/// minibatch gradients are reduced in a fixed order. A non-finite loss or
/// gradient halts training with the parameters of the last completed update.
inline TrainResult train(const std::vector<TokenizedDocument>& train_docs,
                         const ModelConfig& config, const TrainHyperparams& hp,
                         int vocab_size) {
  if (train_docs.empty()) throw std::invalid_argument("train: empty training set");
  if (hp.minibatch < 1 || hp.epochs < 0)
    throw std::invalid_argument("train: bad hyperparameters");

  TrainResult result{ModelParams::init(config, vocab_size, derive_seed(hp.seed, 0)),
                     TrainLog{}};
  Rng shuffle_rng(derive_seed(hp.seed, 1));

  std::vector<std::size_t> order(train_docs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hp.epochs && !result.log.diverged; ++epoch) {
    if (hp.shuffle) shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t begin = 0; begin < order.size() && !result.log.diverged;
         begin += static_cast<std::size_t>(hp.minibatch)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(hp.minibatch));
      Gradients batch = Gradients::zeros_like(result.params);
      bool finite = true;
      for (std::size_t i = begin; i < end; ++i) {
        const TokenizedDocument& doc = train_docs[order[i]];
        // a saturated softmax can underflow a class probability to exactly 0,
        // which the loss ops reject; both failure shapes mean divergence here
        try {
          auto [loss, grads] = loss_and_backward(doc, doc.label, result.params, config);
          loss_sum += loss;
          ++loss_count;
          batch.accumulate(grads);
        } catch (const std::exception&) {
          finite = false;
          break;
        }
      }
      if (!finite) {
        result.log.diverged = true;
        result.log.note = "non-finite loss; stopped with last finite parameters";
        break;
      }
      batch.scale(1.0 / static_cast<double>(end - begin));
      try {
        apply_sgd(result.params, batch, hp.learning_rate);
      } catch (const std::runtime_error&) {
        result.log.diverged = true;
        result.log.note = "non-finite gradient; stopped with last finite parameters";
        break;
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    std::size_t correct = 0;
    for (const TokenizedDocument& doc : train_docs)
      if (predict(doc, result.params, config).cls == doc.label) ++correct;
    stats.train_accuracy =
        static_cast<double>(correct) / static_cast<double>(train_docs.size());
    result.log.epochs.push_back(stats);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelParams params;
  ModelConfig config;
  std::string vocab_hash;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const ModelParams& params, const ModelConfig& config,
                            const std::string& vocab_hash) {
  TensorFile file;
  file.kind = "checkpoint";
  file.add_meta("embed_dim", config.embed_dim);
  file.add_meta("sent_filters", config.sent_filters);
  file.add_meta("sent_width", config.sent_width);
  file.add_meta("sent_pool_k", config.sent_pool_k);
  file.add_meta("doc_filters", config.doc_filters);
  file.add_meta("doc_width", config.doc_width);
  file.add_meta("doc_pool_k", config.doc_pool_k);
  file.add_meta("classes", config.classes);
  file.add_meta("vocab_size", params.vocab_size());
  file.add_meta("vocab_hash", vocab_hash);

  file.add_tensor("embeddings", {params.embeddings.rows, params.embeddings.cols},
                  params.embeddings.data);
  auto add_bank = [&file](const std::string& name, const FilterBank& bank) {
    std::vector<double> flat;
    flat.reserve(bank.param_count());
    for (const Mat& w : bank.weights)
      flat.insert(flat.end(), w.data.begin(), w.data.end());
    file.add_tensor(name + "_filters", {bank.n_f, bank.d, bank.w_f}, flat);
    file.add_tensor(name + "_bias", {bank.n_f}, bank.bias);
  };
  add_bank("sentence", params.sentence_bank);
  add_bank("document", params.document_bank);
  file.add_tensor("softmax_weights",
                  {params.softmax_weights.rows, params.softmax_weights.cols},
                  params.softmax_weights.data);
  file.add_tensor("softmax_bias", {static_cast<int>(params.softmax_bias.size())},
                  params.softmax_bias);
  file.save(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::load(path, "checkpoint");
  Checkpoint ckpt;
  ckpt.config.embed_dim = static_cast<int>(file.meta_int("embed_dim"));
  ckpt.config.sent_filters = static_cast<int>(file.meta_int("sent_filters"));
  ckpt.config.sent_width = static_cast<int>(file.meta_int("sent_width"));
  ckpt.config.sent_pool_k = static_cast<int>(file.meta_int("sent_pool_k"));
  ckpt.config.doc_filters = static_cast<int>(file.meta_int("doc_filters"));
  ckpt.config.doc_width = static_cast<int>(file.meta_int("doc_width"));
  ckpt.config.doc_pool_k = static_cast<int>(file.meta_int("doc_pool_k"));
  ckpt.config.classes = static_cast<int>(file.meta_int("classes"));
  ckpt.config.validate();
  ckpt.vocab_hash = file.meta_at("vocab_hash");

  const int vocab_size = static_cast<int>(file.meta_int("vocab_size"));
  const auto& emb = file.tensor("embeddings");
  ckpt.params.embeddings = Mat(emb.dims.at(0), emb.dims.at(1));
  ckpt.params.embeddings.data = emb.data;
  if (ckpt.params.embeddings.cols != vocab_size)
    throw std::runtime_error("checkpoint vocab_size mismatch");

  auto load_bank = [&file](const std::string& name) {
    const auto& filters = file.tensor(name + "_filters");
    const auto& bias = file.tensor(name + "_bias");
    FilterBank bank(filters.dims.at(0), filters.dims.at(2), filters.dims.at(1));
    std::size_t offset = 0;
    for (Mat& w : bank.weights) {
      std::copy(filters.data.begin() + static_cast<long>(offset),
                filters.data.begin() + static_cast<long>(offset + w.data.size()),
                w.data.begin());
      offset += w.data.size();
    }
    bank.bias = bias.data;
    return bank;
  };
  ckpt.params.sentence_bank = load_bank("sentence");
  ckpt.params.document_bank = load_bank("document");
  const auto& sw = file.tensor("softmax_weights");
  ckpt.params.softmax_weights = Mat(sw.dims.at(0), sw.dims.at(1));
  ckpt.params.softmax_weights.data = sw.data;
  ckpt.params.softmax_bias = file.tensor("softmax_bias").data;
  return ckpt;
}

/// Training log file: plain text, one line per epoch.
inline void save_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch\tmean_loss\ttrain_accuracy\n";
  char buf[64];
  for (const EpochStats& e : log.epochs) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\n", e.epoch, e.mean_loss,
                  e.train_accuracy);
    out << buf;
  }
  if (log.diverged) out << "# diverged: " << log.note << '\n';
}

}  // namespace sentex
