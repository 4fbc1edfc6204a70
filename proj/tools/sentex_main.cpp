// sentex: train a two-level convolutional sentiment model, extract salient
// sentences via gradient saliency, and score extractions against a Naive
// Bayes reference classifier.
//
// Subcommands: preprocess | train | train-ref | train-shallow | extract |
// evaluate | report. All randomness flows from explicit --seed flags; reruns
// with identical inputs and seeds produce byte-identical artifacts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sentex/corpus.hpp"
#include "sentex/evaluation.hpp"
#include "sentex/model.hpp"
#include "sentex/report.hpp"
#include "sentex/saliency.hpp"

namespace fs = std::filesystem;
using namespace sentex;

namespace {

struct PreprocessArgs {
  std::string imdb_dir;
  std::string train_raw;
  std::string test_raw;
  std::string out_dir;
  int min_count = 5;
};

struct TrainArgs {
  std::string corpus;
  std::string vocab;
  std::string out;
  std::string log;
  ModelConfig config;
  TrainHyperparams hp;
  bool no_shuffle = false;
};

struct TrainRefArgs {
  std::string corpus;
  std::string vocab;
  std::string out;
};

struct TrainShallowArgs {
  std::string corpus;
  std::string vocab;
  std::string out;
  std::string embeddings_file;
  ShallowHyperparams hp;
  bool no_shuffle = false;
};

struct ExtractArgs {
  std::string corpus;
  std::string extractor;
  std::string policy;
  std::string checkpoint;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  bool word_scores = false;
  std::string aggregation = "sum";
};

struct EvaluateArgs {
  std::string corpus;
  std::string nb_model;
  std::vector<std::string> extraction_files;
  std::string out_tsv;
  std::string out_json;
};

struct ReportArgs {
  std::string corpus;
  std::string extractions;
  std::string out_html;
  int limit = 0;
};

EncodedCorpusFile load_corpus_checked(const std::string& path,
                                      const std::string& expected_hash,
                                      const std::string& against) {
  EncodedCorpusFile corpus = read_encoded_corpus(path);
  if (!expected_hash.empty() && corpus.vocab_hash != expected_hash)
    throw std::runtime_error("vocabulary hash mismatch between " + path +
                             " and " + against);
  return corpus;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

int cmd_preprocess(const PreprocessArgs& args) {
  std::vector<RawDocument> train_raw, test_raw;
  if (!args.imdb_dir.empty()) {
    train_raw = read_imdb_split(args.imdb_dir, "train");
    test_raw = read_imdb_split(args.imdb_dir, "test");
  } else {
    if (args.train_raw.empty())
      throw std::runtime_error("preprocess needs --imdb-dir or --train-raw");
    train_raw = read_raw_jsonl(args.train_raw);
    if (!args.test_raw.empty()) test_raw = read_raw_jsonl(args.test_raw);
  }
  if (train_raw.empty()) throw std::runtime_error("no training documents found");

  std::vector<PreparedDocument> train_prepared;
  train_prepared.reserve(train_raw.size());
  for (const RawDocument& raw : train_raw)
    train_prepared.push_back(prepare_document(raw));
  const Vocabulary vocab = build_vocabulary(train_prepared, args.min_count);

  auto encode_all = [&vocab](const std::vector<PreparedDocument>& prepared) {
    std::vector<TokenizedDocument> docs;
    docs.reserve(prepared.size());
    int dropped = 0;
    for (const PreparedDocument& p : prepared) {
      try {
        docs.push_back(encode_document(p, vocab));
      } catch (const EmptyDocument&) {
        ++dropped;
      }
    }
    return std::pair{docs, dropped};
  };

  auto [train_docs, train_dropped] = encode_all(train_prepared);
  std::vector<TokenizedDocument> test_docs;
  int test_dropped = 0;
  if (!test_raw.empty()) {
    std::vector<PreparedDocument> test_prepared;
    test_prepared.reserve(test_raw.size());
    for (const RawDocument& raw : test_raw)
      test_prepared.push_back(prepare_document(raw));
    std::tie(test_docs, test_dropped) = encode_all(test_prepared);
  }
  const CorpusSplit split =
      make_corpus_split(std::move(train_docs), std::move(test_docs));

  fs::create_directories(args.out_dir);
  const fs::path out_dir = args.out_dir;
  save_vocabulary(out_dir / "vocab.txt", vocab);
  write_encoded_corpus(out_dir / "train.jsonl", split.train, vocab);
  std::cout << "vocabulary size: " << vocab.size() << "\n";
  std::cout << "train documents: " << split.train.size();
  if (train_dropped) std::cout << " (" << train_dropped << " empty, dropped)";
  std::cout << "\n";
  if (!test_raw.empty()) {
    write_encoded_corpus(out_dir / "test.jsonl", split.test, vocab);
    std::cout << "test documents: " << split.test.size();
    if (test_dropped) std::cout << " (" << test_dropped << " empty, dropped)";
    std::cout << "\n";
  }
  return 0;
}

int cmd_train(TrainArgs& args) {
  const Vocabulary vocab = load_vocabulary(args.vocab);
  const std::string vocab_hash = hex64(vocab.hash());
  const EncodedCorpusFile corpus =
      load_corpus_checked(args.corpus, vocab_hash, args.vocab);
  args.hp.shuffle = !args.no_shuffle;

  const TrainResult result =
      train(corpus.documents, args.config, args.hp, vocab.size());
  save_checkpoint(args.out, result.params, args.config, vocab_hash);
  if (!args.log.empty()) save_train_log(args.log, result.log);
  for (const EpochStats& e : result.log.epochs)
    std::cout << "epoch " << e.epoch << ": mean_loss " << e.mean_loss
              << " train_accuracy " << e.train_accuracy << "\n";
  if (result.log.diverged) {
    std::cout << "training diverged: " << result.log.note << "\n";
    std::cout << "saved last finite checkpoint to " << args.out << "\n";
    return 2;
  }
  std::cout << "saved checkpoint to " << args.out << "\n";
  return 0;
}

int cmd_train_ref(const TrainRefArgs& args) {
  const Vocabulary vocab = load_vocabulary(args.vocab);
  const EncodedCorpusFile corpus =
      load_corpus_checked(args.corpus, hex64(vocab.hash()), args.vocab);
  const NaiveBayesModel nb = nb_train(corpus.documents, vocab);
  save_nb_model(args.out, nb);
  std::cout << "saved reference model to " << args.out << "\n";
  return 0;
}

int cmd_train_shallow(TrainShallowArgs& args) {
  const Vocabulary vocab = load_vocabulary(args.vocab);
  const std::string vocab_hash = hex64(vocab.hash());
  const EncodedCorpusFile corpus =
      load_corpus_checked(args.corpus, vocab_hash, args.vocab);
  args.hp.shuffle = !args.no_shuffle;

  ShallowModel model;
  if (!args.embeddings_file.empty()) {
    LoadedEmbeddings loaded = load_word_embeddings(args.embeddings_file, vocab);
    if (loaded.missing > 0)
      std::cerr << "warning: " << loaded.missing
                << " vocabulary tokens missing from " << args.embeddings_file
                << "; using zero vectors\n";
    args.hp.dim = loaded.matrix.rows;
    model = shallow_train_frozen(corpus.documents, std::move(loaded.matrix),
                                 args.hp, vocab_hash);
  } else {
    model = shallow_train(corpus.documents, vocab, args.hp);
  }
  save_shallow_model(args.out, model);
  std::cout << "saved shallow model to " << args.out << "\n";
  return 0;
}

int cmd_extract(const ExtractArgs& args) {
  const EncodedCorpusFile corpus = read_encoded_corpus(args.corpus);
  ExtractionFile file;
  if (args.extractor == "firstlast") {
    file = extract_firstlast(corpus.documents, corpus.vocab_hash);
  } else {
    if (args.policy.empty())
      throw std::runtime_error("--policy is required for " + args.extractor);
    const SelectionPolicy policy = SelectionPolicy::parse(args.policy);
    if (args.extractor == "convnet") {
      if (args.checkpoint.empty())
        throw std::runtime_error("--checkpoint is required for convnet");
      const Checkpoint ckpt = load_checkpoint(args.checkpoint);
      if (ckpt.vocab_hash != corpus.vocab_hash)
        throw std::runtime_error("vocabulary hash mismatch between " +
                                 args.corpus + " and " + args.checkpoint);
      file = extract_convnet(corpus.documents, ckpt.params, ckpt.config, policy,
                             ckpt.vocab_hash, args.word_scores);
    } else if (args.extractor == "shallow") {
      if (args.model.empty())
        throw std::runtime_error("--model is required for shallow");
      const ShallowModel model = load_shallow_model(args.model);
      if (model.vocab_hash != corpus.vocab_hash)
        throw std::runtime_error("vocabulary hash mismatch between " +
                                 args.corpus + " and " + args.model);
      const WordAggregation agg = args.aggregation == "mean"
                                      ? WordAggregation::Mean
                                      : WordAggregation::Sum;
      file = extract_shallow(corpus.documents, model, policy, agg,
                             args.word_scores);
    } else if (args.extractor == "random") {
      file = extract_random(corpus.documents, policy, args.seed,
                            corpus.vocab_hash);
    } else {
      throw std::runtime_error("unknown extractor: " + args.extractor);
    }
  }
  write_extractions(args.out, file);
  std::cout << "wrote " << file.extractions.size() << " extractions to "
            << args.out << "\n";
  return 0;
}

int cmd_evaluate(const EvaluateArgs& args) {
  const EncodedCorpusFile corpus = read_encoded_corpus(args.corpus);
  const NaiveBayesModel nb = load_nb_model(args.nb_model);
  if (nb.vocab_hash != corpus.vocab_hash)
    throw std::runtime_error("vocabulary hash mismatch between " + args.corpus +
                             " and " + args.nb_model);
  std::vector<ExtractionFile> sets;
  sets.reserve(args.extraction_files.size());
  for (const std::string& path : args.extraction_files) {
    ExtractionFile set = read_extractions(path);
    if (!set.vocab_hash.empty() && set.vocab_hash != corpus.vocab_hash)
      throw std::runtime_error("vocabulary hash mismatch between " +
                               args.corpus + " and " + path);
    sets.push_back(std::move(set));
  }
  const EvalReport report = evaluate_extractions(corpus.documents, sets, nb);
  const std::string table = format_eval_table(report);
  std::cout << table;
  if (!args.out_tsv.empty()) write_text(args.out_tsv, table);
  if (!args.out_json.empty())
    write_text(args.out_json, eval_report_json(report).dump(2) + "\n");
  return 0;
}

int cmd_report(const ReportArgs& args) {
  const EncodedCorpusFile corpus = read_encoded_corpus(args.corpus);
  ExtractionFile extractions = read_extractions(args.extractions);
  if (!extractions.vocab_hash.empty() &&
      extractions.vocab_hash != corpus.vocab_hash)
    throw std::runtime_error("vocabulary hash mismatch between " + args.corpus +
                             " and " + args.extractions);
  if (args.limit > 0 &&
      static_cast<std::size_t>(args.limit) < extractions.extractions.size()) {
    extractions.extractions.resize(static_cast<std::size_t>(args.limit));
    extractions.scores.resize(static_cast<std::size_t>(args.limit));
    extractions.word_scores.resize(static_cast<std::size_t>(args.limit));
  }
  write_text(args.out_html, render_report(corpus.documents, extractions));
  std::cout << "wrote report for " << extractions.extractions.size()
            << " documents to " << args.out_html << "\n";
  return 0;
}

void add_config_flags(CLI::App* cmd, ModelConfig& config) {
  cmd->add_option("--embed-dim", config.embed_dim, "word embedding dimension");
  cmd->add_option("--sent-filters", config.sent_filters,
                  "sentence-level feature maps");
  cmd->add_option("--sent-width", config.sent_width, "sentence-level filter width");
  cmd->add_option("--sent-pool", config.sent_pool_k, "sentence-level k-max pool");
  cmd->add_option("--doc-filters", config.doc_filters,
                  "document-level feature maps");
  cmd->add_option("--doc-width", config.doc_width, "document-level filter width");
  cmd->add_option("--doc-pool", config.doc_pool_k, "document-level k-max pool");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-level convolutional sentence extraction pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key-value config file; flags override it");

  PreprocessArgs pre;
  CLI::App* preprocess = app.add_subcommand(
      "preprocess", "tokenize and encode a raw corpus, build the vocabulary");
  preprocess->add_option("--imdb-dir", pre.imdb_dir,
                         "aclImdb-style directory (train|test / pos|neg)");
  preprocess->add_option("--train-raw", pre.train_raw,
                         "line-delimited {id,label,text} records");
  preprocess->add_option("--test-raw", pre.test_raw,
                         "line-delimited {id,label,text} records");
  preprocess->add_option("--out", pre.out_dir, "output directory")->required();
  preprocess->add_option("--min-count", pre.min_count,
                         "vocabulary frequency threshold");

  TrainArgs tr;
  CLI::App* train_cmd =
      app.add_subcommand("train", "train the convolutional document model");
  train_cmd->add_option("--corpus", tr.corpus, "encoded training corpus")->required();
  train_cmd->add_option("--vocab", tr.vocab, "vocabulary file")->required();
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--log", tr.log, "training log path");
  train_cmd->add_option("--lr", tr.hp.learning_rate, "learning rate");
  train_cmd->add_option("--epochs", tr.hp.epochs, "training epochs");
  train_cmd->add_option("--minibatch", tr.hp.minibatch, "minibatch size");
  train_cmd->add_option("--seed", tr.hp.seed, "init + shuffle seed");
  train_cmd->add_flag("--no-shuffle", tr.no_shuffle, "keep corpus order");
  add_config_flags(train_cmd, tr.config);

  TrainRefArgs trr;
  CLI::App* train_ref = app.add_subcommand(
      "train-ref", "train the Naive Bayes reference classifier");
  train_ref->add_option("--corpus", trr.corpus, "encoded training corpus")->required();
  train_ref->add_option("--vocab", trr.vocab, "vocabulary file")->required();
  train_ref->add_option("--out", trr.out, "model path")->required();

  TrainShallowArgs trs;
  CLI::App* train_shallow = app.add_subcommand(
      "train-shallow", "train the embedding-sum logistic baseline");
  train_shallow->add_option("--corpus", trs.corpus, "encoded training corpus")
      ->required();
  train_shallow->add_option("--vocab", trs.vocab, "vocabulary file")->required();
  train_shallow->add_option("--out", trs.out, "model path")->required();
  train_shallow->add_option("--embeddings", trs.embeddings_file,
                            "plain-text word vectors; loaded and frozen");
  train_shallow->add_option("--dim", trs.hp.dim, "embedding dimension");
  train_shallow->add_option("--lr", trs.hp.learning_rate, "learning rate");
  train_shallow->add_option("--epochs", trs.hp.epochs, "training epochs");
  train_shallow->add_option("--seed", trs.hp.seed, "init + shuffle seed");
  train_shallow->add_flag("--no-shuffle", trs.no_shuffle, "keep corpus order");

  ExtractArgs ex;
  CLI::App* extract =
      app.add_subcommand("extract", "rank sentences and write extractions");
  extract->add_option("--corpus", ex.corpus, "encoded corpus")->required();
  extract
      ->add_option("--extractor", ex.extractor,
                   "convnet | shallow | random | firstlast")
      ->required()
      ->check(CLI::IsMember({"convnet", "shallow", "random", "firstlast"}));
  extract->add_option("--policy", ex.policy, "fixed:K or prop:P");
  extract->add_option("--checkpoint", ex.checkpoint, "convnet checkpoint");
  extract->add_option("--model", ex.model, "shallow model file");
  extract->add_option("--seed", ex.seed, "seed for the random extractor");
  extract->add_flag("--word-scores", ex.word_scores,
                    "include per-word saliency scores");
  extract
      ->add_option("--aggregation", ex.aggregation,
                   "shallow sentence score: sum | mean")
      ->check(CLI::IsMember({"sum", "mean"}));
  extract->add_option("--out", ex.out, "extraction file")->required();

  EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "score extraction files with the reference model");
  evaluate->add_option("--corpus", ev.corpus, "encoded test corpus")->required();
  evaluate->add_option("--nb", ev.nb_model, "Naive Bayes model file")->required();
  evaluate->add_option("--extractions", ev.extraction_files,
                       "extraction files to score");
  evaluate->add_option("--out", ev.out_tsv, "table output (TSV)");
  evaluate->add_option("--json", ev.out_json, "structured report output");

  ReportArgs rp;
  CLI::App* report = app.add_subcommand(
      "report", "render highlighted extractions as a static HTML page");
  report->add_option("--corpus", rp.corpus, "encoded corpus")->required();
  report->add_option("--extractions", rp.extractions, "extraction file")->required();
  report->add_option("--out", rp.out_html, "HTML output path")->required();
  report->add_option("--limit", rp.limit, "render only the first N records");

  CLI11_PARSE(app, argc, argv);

  try {
    if (preprocess->parsed()) return cmd_preprocess(pre);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (train_ref->parsed()) return cmd_train_ref(trr);
    if (train_shallow->parsed()) return cmd_train_shallow(trs);
    if (extract->parsed()) return cmd_extract(ex);
    if (evaluate->parsed()) return cmd_evaluate(ev);
    if (report->parsed()) return cmd_report(rp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
