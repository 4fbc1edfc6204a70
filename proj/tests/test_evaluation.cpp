#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sentex/evaluation.hpp"
#include "testutil.hpp"

using namespace sentex;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::vector<TokenizedDocument> docs;
  Vocabulary vocab;
};

Fixture encode_corpus(const std::vector<RawDocument>& raws, int min_count = 1) {
  std::vector<PreparedDocument> prepared;
  for (const RawDocument& raw : raws) prepared.push_back(prepare_document(raw));
  Fixture fx;
  fx.vocab = build_vocabulary(prepared, min_count);
  for (const PreparedDocument& p : prepared)
    fx.docs.push_back(encode_document(p, fx.vocab));
  return fx;
}

TokenizedDocument encode_single(const std::string& text, int label,
                                const Vocabulary& vocab) {
  return encode_document(RawDocument{"q", text, label}, vocab);
}

// d0/d1 positive, d2/d3 negative; all arithmetic below is worked by hand
Fixture nb_fixture() {
  return encode_corpus({{"d0", "fun fun good", 1},
                        {"d1", "good fun", 1},
                        {"d2", "bad awful fun", 0},
                        {"d3", "bad bad", 0}});
}

}  // namespace

TEST(NaiveBayes, SeparableToy) {
  const Fixture fx = encode_corpus({{"p", "good", 1}, {"n", "bad", 0}});
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  EXPECT_EQ(nb_predict(encode_single("good", 1, fx.vocab), nb), 1);
  EXPECT_EQ(nb_predict(encode_single("bad", 0, fx.vocab), nb), 0);
}

TEST(NaiveBayes, BalancedCorpusHasEqualLogPriors) {
  const Fixture fx = nb_fixture();
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  EXPECT_DOUBLE_EQ(nb.log_priors[0], nb.log_priors[1]);
  EXPECT_NEAR(nb.log_priors[0], std::log(0.5), 1e-15);
}

TEST(NaiveBayes, HandWorkedPosteriors) {
  // class 1 token counts: fun=3, good=2 (total 5); class 0: bad=3, awful=1,
  // fun=1 (total 5); |V| = 7 (specials + fun, bad, good, awful).
  // add-one: P(fun|1) = (3+1)/(5+7) = 4/12, P(good|1) = 3/12, P(bad|1) = 1/12,
  //          P(fun|0) = 2/12, P(bad|0) = 4/12, P(awful|0) = 2/12.
  const Fixture fx = nb_fixture();
  ASSERT_EQ(fx.vocab.size(), 7);
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  const int fun = fx.vocab.id_of("fun");
  const int good = fx.vocab.id_of("good");
  const int bad = fx.vocab.id_of("bad");
  const int awful = fx.vocab.id_of("awful");
  EXPECT_NEAR(nb.log_likelihood.at(1, fun), std::log(4.0 / 12.0), 1e-12);
  EXPECT_NEAR(nb.log_likelihood.at(1, good), std::log(3.0 / 12.0), 1e-12);
  EXPECT_NEAR(nb.log_likelihood.at(1, bad), std::log(1.0 / 12.0), 1e-12);
  EXPECT_NEAR(nb.log_likelihood.at(0, fun), std::log(2.0 / 12.0), 1e-12);
  EXPECT_NEAR(nb.log_likelihood.at(0, bad), std::log(4.0 / 12.0), 1e-12);
  EXPECT_NEAR(nb.log_likelihood.at(0, awful), std::log(2.0 / 12.0), 1e-12);

  // "fun good": class1 score log(1/24) beats class0 log(1/144)
  EXPECT_EQ(nb_predict(encode_single("fun good", 1, fx.vocab), nb), 1);
  // "bad bad fun": class0 log(1/108) beats class1 log(1/864)
  EXPECT_EQ(nb_predict(encode_single("bad bad fun", 0, fx.vocab), nb), 0);
}

TEST(NaiveBayes, SmoothedRowsAreDistributions) {
  const Fixture fx = nb_fixture();
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  for (int c = 0; c < nb.classes(); ++c) {
    double sum = 0.0;
    for (int t = 0; t < nb.vocab_size(); ++t) sum += std::exp(nb.log_likelihood.at(c, t));
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
  EXPECT_NEAR(std::exp(nb.log_priors[0]) + std::exp(nb.log_priors[1]), 1.0, 1e-12);
}

TEST(NaiveBayes, SingleClassCorpusThrows) {
  const Fixture fx = encode_corpus({{"a", "good stuff", 1}, {"b", "more good", 1}});
  EXPECT_THROW(nb_train(fx.docs, fx.vocab), std::invalid_argument);
}

TEST(NaiveBayes, EmptySelectionRejected) {
  const Fixture fx = nb_fixture();
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  EXPECT_THROW(nb_predict(fx.docs[0], std::vector<int>{}, nb),
               std::invalid_argument);
}

TEST(NaiveBayes, FullEqualsAllSentencesSelection) {
  const Fixture fx = encode_corpus(
      {{"a", "good fun. bad day. fine film.", 1}, {"b", "awful. bad. dull.", 0}});
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  for (const TokenizedDocument& doc : fx.docs) {
    std::vector<int> all(static_cast<std::size_t>(doc.sentence_count()));
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(nb_predict(doc, all, nb), nb_predict(doc, nb));
  }
}

TEST(NaiveBayes, TieBreaksTowardClassZero) {
  const Fixture fx = nb_fixture();
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  // NUMBER has count 0 in both classes and the priors are equal, so the
  // scores tie exactly
  EXPECT_EQ(nb_predict(encode_single("1987", 1, fx.vocab), nb), 0);
}

TEST(NaiveBayes, SentenceOrderInvariant) {
  const Fixture fx = encode_corpus(
      {{"a", "good fun. bad day. fine film.", 1}, {"b", "awful. bad. dull.", 0}});
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  TokenizedDocument doc = fx.docs[0];
  TokenizedDocument reversed = doc;
  std::reverse(reversed.sentences.begin(), reversed.sentences.end());
  EXPECT_EQ(nb_predict(doc, nb), nb_predict(reversed, nb));
}

TEST(NaiveBayes, UniformLikelihoodSentenceNeverChangesPrediction) {
  const Fixture fx = nb_fixture();
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  for (const char* text : {"fun good", "bad bad fun", "awful"}) {
    const TokenizedDocument doc = encode_single(text, 0, fx.vocab);
    TokenizedDocument padded = doc;
    padded.sentences.push_back({Vocabulary::number_id(), Vocabulary::number_id()});
    padded.sentence_texts.push_back("1987 1987");
    EXPECT_EQ(nb_predict(padded, nb), nb_predict(doc, nb));
  }
}

TEST(NaiveBayes, ModelFileRoundTrip) {
  const Fixture fx = nb_fixture();
  const NaiveBayesModel nb = nb_train(fx.docs, fx.vocab);
  const fs::path path = fs::temp_directory_path() / "sentex_nb.sentex";
  save_nb_model(path, nb);
  const NaiveBayesModel loaded = load_nb_model(path);
  EXPECT_EQ(loaded.vocab_hash, nb.vocab_hash);
  EXPECT_EQ(loaded.log_priors, nb.log_priors);
  EXPECT_EQ(loaded.log_likelihood.data, nb.log_likelihood.data);
}

TEST(Shallow, LearnsSeparableToyCorpus) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(40, 401);
  ShallowHyperparams hp;
  hp.dim = 16;
  hp.epochs = 10;
  hp.seed = 5;
  const ShallowModel model = shallow_train(corpus.docs, corpus.vocab, hp);
  int correct = 0;
  for (const TokenizedDocument& doc : corpus.docs) {
    const int cls = shallow_probability(doc, model) > 0.5 ? 1 : 0;
    if (cls == doc.label) ++correct;
  }
  EXPECT_EQ(correct, static_cast<int>(corpus.docs.size()));
}

TEST(Shallow, ZeroLearningRateWithFrozenEmbeddingsChangesNothing) {
  const testutil::EncodedCorpus a = testutil::synthetic_encoded_corpus(10, 402);
  const testutil::EncodedCorpus b = testutil::synthetic_encoded_corpus(10, 403);
  Mat embeddings(8, a.vocab.size());
  Rng rng(11);
  init_embeddings(embeddings, rng);

  ShallowHyperparams hp;
  hp.dim = 8;
  hp.learning_rate = 0.0;
  hp.epochs = 3;
  hp.seed = 9;
  const ShallowModel ma =
      shallow_train_frozen(a.docs, embeddings, hp, hex64(a.vocab.hash()));
  EXPECT_EQ(ma.embeddings.data, embeddings.data);
  EXPECT_EQ(ma.bias, 0.0);

  // with lr = 0 the data has no influence at all
  Mat embeddings_b(8, b.vocab.size());
  Rng rng2(11);
  init_embeddings(embeddings_b, rng2);
  const ShallowModel mb =
      shallow_train_frozen(b.docs, embeddings_b, hp, hex64(b.vocab.hash()));
  EXPECT_EQ(ma.weights, mb.weights);
}

TEST(Shallow, SeededRunsReproduceBitExactly) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(20, 404);
  ShallowHyperparams hp;
  hp.dim = 12;
  hp.epochs = 4;
  hp.seed = 77;
  const ShallowModel a = shallow_train(corpus.docs, corpus.vocab, hp);
  const ShallowModel b = shallow_train(corpus.docs, corpus.vocab, hp);
  EXPECT_EQ(a.embeddings.data, b.embeddings.data);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(Shallow, ModelFileRoundTrip) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(10, 405);
  ShallowHyperparams hp;
  hp.dim = 6;
  hp.epochs = 2;
  hp.seed = 1;
  const ShallowModel model = shallow_train(corpus.docs, corpus.vocab, hp);
  const fs::path path = fs::temp_directory_path() / "sentex_shallow.sentex";
  save_shallow_model(path, model);
  const ShallowModel loaded = load_shallow_model(path);
  EXPECT_EQ(loaded.embeddings.data, model.embeddings.data);
  EXPECT_EQ(loaded.weights, model.weights);
  EXPECT_EQ(loaded.bias, model.bias);
  EXPECT_EQ(loaded.vocab_hash, model.vocab_hash);
}

TEST(Shallow, EmbeddingLoaderFillsMissingWithZeros) {
  const Fixture fx = nb_fixture();
  const fs::path path = fs::temp_directory_path() / "sentex_vectors.txt";
  {
    std::ofstream out(path);
    out << "fun 0.5 -0.25 0.125\n";
    out << "bad -1 2 -3\n";
    out << "unlisted 9 9 9\n";  // not in the vocabulary; ignored
  }
  const LoadedEmbeddings loaded = load_word_embeddings(path, fx.vocab);
  EXPECT_EQ(loaded.matrix.rows, 3);
  EXPECT_EQ(loaded.found, 2);
  EXPECT_EQ(loaded.missing, fx.vocab.size() - 2);
  const int fun = fx.vocab.id_of("fun");
  EXPECT_EQ(loaded.matrix.at(0, fun), 0.5);
  EXPECT_EQ(loaded.matrix.at(2, fun), 0.125);
  for (int r = 0; r < 3; ++r)
    EXPECT_EQ(loaded.matrix.at(r, fx.vocab.id_of("good")), 0.0);
}

TEST(Shallow, EmbeddingLoaderRejectsInconsistentWidth) {
  const Fixture fx = nb_fixture();
  const fs::path path = fs::temp_directory_path() / "sentex_vectors_bad.txt";
  {
    std::ofstream out(path);
    out << "fun 1 2 3\n";
    out << "bad 1 2\n";
  }
  EXPECT_THROW(load_word_embeddings(path, fx.vocab), std::runtime_error);
}

TEST(ShallowSaliency, ZeroEmbeddingSentenceScoresZero) {
  const Fixture fx = nb_fixture();
  ShallowModel model;
  model.embeddings = Mat(4, fx.vocab.size());  // all-zero embeddings
  model.weights = {1.0, -2.0, 0.5, 0.25};
  model.bias = 0.3;
  const TokenizedDocument doc = encode_single("fun good. bad awful.", 1, fx.vocab);
  const SaliencyMap map = shallow_saliency(doc, model);
  for (double s : map.sentence_scores) EXPECT_EQ(s, 0.0);
}

TEST(ShallowSaliency, IdenticalTokenMultisetsScoreEqually) {
  const Fixture fx = encode_corpus({{"a", "good fun bad. bad good fun.", 1},
                                    {"b", "awful stuff here", 0}});
  ShallowHyperparams hp;
  hp.dim = 8;
  hp.epochs = 3;
  hp.seed = 2;
  const ShallowModel model = shallow_train(fx.docs, fx.vocab, hp);
  const SaliencyMap map = shallow_saliency(fx.docs[0], model);
  ASSERT_EQ(map.sentence_scores.size(), 2u);
  EXPECT_NEAR(map.sentence_scores[0], map.sentence_scores[1], 1e-12);
}

TEST(ShallowSaliency, MatchesFiniteDifferences) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(16, 406);
  ShallowHyperparams hp;
  hp.dim = 6;
  hp.epochs = 3;
  hp.seed = 3;
  const ShallowModel model = shallow_train(corpus.docs, corpus.vocab, hp);

  const TokenizedDocument& doc = corpus.docs[0];
  const double p = shallow_probability(doc, model);
  const int pseudo = invert_prediction(std::vector<double>{1.0 - p, p}).label;
  const SaliencyMap map = shallow_saliency(doc, model, WordAggregation::Sum, true);
  ASSERT_TRUE(map.word_scores.has_value());

  // independent loss: embedding sum with one occurrence scaled by (1 + eps)
  const auto loss_at = [&](std::size_t s, std::size_t i, double eps) {
    std::vector<double> e(static_cast<std::size_t>(model.dim()), 0.0);
    for (std::size_t s2 = 0; s2 < doc.sentences.size(); ++s2)
      for (std::size_t i2 = 0; i2 < doc.sentences[s2].size(); ++i2) {
        const double scale = (s2 == s && i2 == i) ? 1.0 + eps : 1.0;
        for (int r = 0; r < model.dim(); ++r)
          e[static_cast<std::size_t>(r)] +=
              scale * model.embeddings.at(r, doc.sentences[s2][i2]);
      }
    const double prob1 = sigmoid(dot(model.weights, e) + model.bias);
    const double target = pseudo == 1 ? prob1 : 1.0 - prob1;
    return -std::log(target);
  };

  const double h = 1e-5;
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
    double sum = 0.0;
    for (std::size_t i = 0; i < doc.sentences[s].size(); ++i) {
      const double slope = (loss_at(s, i, h) - loss_at(s, i, -h)) / (2.0 * h);
      EXPECT_LT(oracle::rel_err((*map.word_scores)[s][i], std::abs(slope)), 1e-4);
      sum += (*map.word_scores)[s][i];
    }
    EXPECT_NEAR(map.sentence_scores[s], sum, 1e-12);
  }
}

TEST(ShallowSaliency, MeanAggregationDividesByLength) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(16, 411);
  ShallowHyperparams hp;
  hp.dim = 6;
  hp.epochs = 2;
  hp.seed = 4;
  const ShallowModel model = shallow_train(corpus.docs, corpus.vocab, hp);
  const TokenizedDocument& doc = corpus.docs[1];
  const SaliencyMap sum = shallow_saliency(doc, model, WordAggregation::Sum);
  const SaliencyMap mean = shallow_saliency(doc, model, WordAggregation::Mean);
  for (std::size_t s = 0; s < doc.sentences.size(); ++s)
    EXPECT_NEAR(mean.sentence_scores[s],
                sum.sentence_scores[s] /
                    static_cast<double>(doc.sentences[s].size()),
                1e-12);
}

TEST(RandomExtract, FixedBudgetAtLeastDocLengthKeepsAll) {
  const Fixture fx = encode_corpus({{"a", "one. two. three.", 1},
                                    {"b", "bad.", 0}});
  const Extraction ex = random_extract(fx.docs[0], SelectionPolicy::fixed(5), 123);
  EXPECT_EQ(ex.selected, (std::vector<int>{0, 1, 2}));
}

TEST(RandomExtract, DeterministicPerSeedAndDocId) {
  const Fixture fx = encode_corpus({{"a", "one. two. three. four. five.", 1},
                                    {"b", "bad.", 0}});
  const Extraction a = random_extract(fx.docs[0], SelectionPolicy::fixed(2), 9);
  const Extraction b = random_extract(fx.docs[0], SelectionPolicy::fixed(2), 9);
  EXPECT_EQ(a.selected, b.selected);
  // different doc id shifts the stream even with the same seed
  TokenizedDocument renamed = fx.docs[0];
  renamed.id = "other";
  int diffs = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Extraction x = random_extract(fx.docs[0], SelectionPolicy::fixed(2), seed);
    const Extraction y = random_extract(renamed, SelectionPolicy::fixed(2), seed);
    if (x.selected != y.selected) ++diffs;
  }
  EXPECT_GT(diffs, 0);
}

TEST(RandomExtract, SinglePickFrequenciesWithinFourSigma) {
  // 10000 single picks from a 4-sentence doc; sigma = sqrt(.25*.75/10000)
  const Fixture fx = encode_corpus({{"a", "one. two. three. four.", 1}});
  std::vector<int> counts(4, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const Extraction ex = random_extract(fx.docs[0], SelectionPolicy::fixed(1), seed);
    ASSERT_EQ(ex.selected.size(), 1u);
    ++counts[static_cast<std::size_t>(ex.selected[0])];
  }
  const double sigma = std::sqrt(0.25 * 0.75 / 10000.0);
  for (int c : counts) {
    const double freq = c / 10000.0;
    EXPECT_NEAR(freq, 0.25, 4.0 * sigma) << "count " << c;
  }
}

TEST(FirstLast, SelectsEnds) {
  const Fixture fx = encode_corpus({{"a", "one. two. three. four. five.", 1},
                                    {"b", "only", 0},
                                    {"c", "one. two.", 1}});
  EXPECT_EQ(first_last_extract(fx.docs[0]).selected, (std::vector<int>{0, 4}));
  EXPECT_EQ(first_last_extract(fx.docs[1]).selected, (std::vector<int>{0}));
  EXPECT_EQ(first_last_extract(fx.docs[2]).selected, (std::vector<int>{0, 1}));
}

TEST(Evaluate, IdentityExtractorEqualsFullAccuracy) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(30, 407);
  const NaiveBayesModel nb = nb_train(corpus.docs, corpus.vocab);

  ExtractionFile identity;
  identity.extractor = "identity";
  identity.policy = "prop:1";
  for (const TokenizedDocument& doc : corpus.docs) {
    Extraction ex;
    ex.doc_id = doc.id;
    ex.policy = identity.policy;
    ex.selected.resize(static_cast<std::size_t>(doc.sentence_count()));
    std::iota(ex.selected.begin(), ex.selected.end(), 0);
    identity.extractions.push_back(std::move(ex));
    identity.scores.emplace_back(static_cast<std::size_t>(doc.sentence_count()), 1.0);
    identity.word_scores.emplace_back();
  }
  const EvalReport report = evaluate_extractions(corpus.docs, {identity}, nb);
  ASSERT_EQ(report.cells.size(), 1u);
  EXPECT_EQ(report.cells[0].accuracy, report.full.accuracy);
  EXPECT_EQ(report.cells[0].n_correct, report.full.n_correct);
  EXPECT_EQ(report.full.n_docs, 30);
}

TEST(Evaluate, MissingDocIdThrows) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(4, 408);
  const NaiveBayesModel nb = nb_train(corpus.docs, corpus.vocab);
  ExtractionFile partial;
  partial.extractor = "x";
  partial.policy = "fixed:1";
  partial.extractions.push_back({corpus.docs[0].id, {0}, "fixed:1"});
  partial.scores.push_back({1.0});
  partial.word_scores.emplace_back();
  EXPECT_THROW(evaluate_extractions(corpus.docs, {partial}, nb),
               std::runtime_error);
}

TEST(Evaluate, DeterministicReports) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(20, 409);
  const NaiveBayesModel nb = nb_train(corpus.docs, corpus.vocab);
  const ExtractionFile random5 =
      extract_random(corpus.docs, SelectionPolicy::fixed(2), 31);
  const ExtractionFile firstlast = extract_firstlast(corpus.docs);
  const EvalReport a = evaluate_extractions(corpus.docs, {random5, firstlast}, nb);
  const EvalReport b = evaluate_extractions(corpus.docs, {random5, firstlast}, nb);
  EXPECT_EQ(format_eval_table(a), format_eval_table(b));
  EXPECT_EQ(eval_report_json(a).dump(), eval_report_json(b).dump());
}

TEST(Evaluate, TableLayoutIncludesFullAndFirstLastRows) {
  const testutil::EncodedCorpus corpus = testutil::synthetic_encoded_corpus(10, 410);
  const NaiveBayesModel nb = nb_train(corpus.docs, corpus.vocab);
  const ExtractionFile rnd = extract_random(corpus.docs, SelectionPolicy::proportion(0.5), 1);
  const EvalReport report = evaluate_extractions(corpus.docs, {rnd}, nb);
  const std::string table = format_eval_table(report);
  EXPECT_NE(table.find("Policy\trandom"), std::string::npos);
  EXPECT_NE(table.find("50%"), std::string::npos);
  EXPECT_NE(table.find("Full\t"), std::string::npos);
  EXPECT_NE(table.find("First+Last\t"), std::string::npos);
}

TEST(Evaluate, PolicyDisplayLabels) {
  EXPECT_EQ(policy_display_label("prop:0.5"), "50%");
  EXPECT_EQ(policy_display_label("prop:0.33"), "33%");
  EXPECT_EQ(policy_display_label("fixed:5"), "Pick 5");
  EXPECT_EQ(policy_display_label("full"), "Full");
  EXPECT_EQ(policy_display_label("firstlast"), "First+Last");
}
