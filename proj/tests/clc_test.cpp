#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "smalr/clc.hpp"
#include "smalr/evaluate.hpp"

using namespace smalr;

namespace {

LanguageScores random_scores(Rng& rng, std::size_t langs, std::size_t images, std::size_t sentences) {
  LanguageScores s;
  for (std::size_t l = 0; l < langs; ++l) {
    Tensor t(images, sentences);
    for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
    s.per_language.push_back(t);
  }
  for (std::size_t i = 0; i < sentences; ++i) s.sentence_image.push_back(i % images);
  return s;
}

// Scores where language 0 is informative and the others are noise.
LanguageScores informative_scores(Rng& rng, std::size_t langs, std::size_t images, std::size_t sentences) {
  LanguageScores s = random_scores(rng, langs, images, sentences);
  for (std::size_t c = 0; c < sentences; ++c) s.per_language[0](s.sentence_image[c], c) += 1.0;
  return s;
}

}  // namespace

TEST_CASE("clc average is the plain mean") {
  const std::vector<double> v = {0.2, 0.4, 0.9};
  CHECK(clc_average(v) == doctest::Approx(0.5));
  CHECK_THROWS(clc_average(std::span<const double>{}));
  Rng rng(1);
  const LanguageScores s = random_scores(rng, 3, 4, 6);
  const ScoreMatrix m = fuse_average(s);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 6; ++c) CHECK(m.scores(i, c) == doctest::Approx(clc_average(s.vector_at(i, c))));
  CHECK(m.sentence_image == s.sentence_image);
}

TEST_CASE("classifier parameter counts") {
  CHECK(ClcClassifier(10, 1).parameter_count() == 352);
  CHECK(ClcClassifier(3, 1).parameter_count() == 128);
  CHECK(ClcClassifier(10, 1, true).parameter_count() == 352 + 33);
  CHECK_THROWS(ClcClassifier(0, 1));
}

TEST_CASE("zero weights fuse to zero") {
  ClcClassifier c(4, 2);
  c.store().at("clc/fc_w").value.fill(0.0);
  const std::vector<double> v = {0.3, -0.2, 0.9, 0.1};
  CHECK(c.fuse(v) == 0.0);
}

TEST_CASE("a mean-reproducing classifier ranks like clc average") {
  Rng rng(2);
  const LanguageScores s = random_scores(rng, 5, 8, 20);
  ClcClassifier c(5, 3);
  Tensor& w = c.store().at("clc/fc_w").value;
  Tensor& b = c.store().at("clc/fc_b").value;
  w.fill(0.0);
  b.fill(0.0);
  for (std::size_t l = 0; l < 5; ++l) w(l, 0) = 0.2;
  b[0] = 10.0;
  const ScoreMatrix fused = c.fuse_all(s), avg = fuse_average(s);
  for (std::size_t i = 0; i < fused.scores.size(); ++i)
    CHECK(fused.scores[i] == doctest::Approx(avg.scores[i] + 10.0).epsilon(1e-12));
  for (std::size_t k : {1, 5, 10})
    for (Direction d : {Direction::image_to_sentence, Direction::sentence_to_image})
      CHECK(recall_at_k(fused, k, d) == recall_at_k(avg, k, d));
}

TEST_CASE("graph fuse agrees with the scalar path") {
  Rng rng(3);
  for (bool trainable : {false, true}) {
    ClcClassifier c(4, 5, trainable);
    Tensor v(6, 4);
    for (double& x : v.data()) x = rng.uniform(-1, 1);
    Graph g;
    const Tensor out = g.value(c.fuse(g, g.constant(v)));
    for (std::size_t r = 0; r < 6; ++r) CHECK(out(r, 0) == doctest::Approx(c.fuse(v.row_span(r))).epsilon(1e-12));
  }
}

TEST_CASE("training runs the requested iterations and lowers the loss") {
  Rng rng(4);
  std::vector<LanguageScores> val = {informative_scores(rng, 4, 10, 20), informative_scores(rng, 4, 10, 20)};
  ClcClassifier c(4, 6);
  const auto before = c.store().checksum();
  ClcTrainConfig cfg;
  cfg.iterations = 0;
  const auto none = train_clc(c, val, cfg);
  CHECK(none.size() == 1);
  CHECK(c.store().checksum() == before);
  CHECK(none[0] == doctest::Approx(clc_loss(c, val, cfg)));

  cfg.iterations = 60;
  const auto losses = train_clc(c, val, cfg);
  CHECK(losses.size() == 61);
  CHECK(losses.back() < losses.front());
  CHECK(c.store().checksum() != before);
}

TEST_CASE("score triplet loss gradient matches finite differences") {
  Rng rng(7);
  ParameterStore store;
  Tensor init(12, 1);
  for (double& x : init.data()) x = rng.uniform(-1, 1);
  Parameter& p = store.add("s", init);
  const std::vector<std::size_t> gt = {0, 1, 2, 0};
  std::vector<Parameter*> params = {&p};
  auto build = [&](Graph& g) { return score_triplet_loss(g, g.param(p), 3, gt, 1.5, 0.05, 4); };
  CHECK(fd_check(build, params, 1e-6) < 1e-6);
}

TEST_CASE("classifier files round trip") {
  const std::string path = (std::filesystem::temp_directory_path() / "smalr_clc.tsv").string();
  for (bool trainable : {false, true}) {
    ClcClassifier c(3, 8, trainable);
    write_clc(c, path);
    const ClcClassifier back = read_clc(path);
    CHECK(back.languages() == 3);
    CHECK(back.trainable_output() == trainable);
    CHECK(back.store().checksum() == c.store().checksum());
  }
  std::filesystem::remove(path);
}

TEST_CASE("score vectors use the raw query in its own language slot") {
  const auto w = testing::tiny_world();
  const SmalrModel model = testing::tiny_model(w);
  const Corpus& c = w.data.corpus;
  const Translator tr(c);
  const auto ids = split_images(c, Split::val);
  const Tensor images = image_matrix(model, c, ids);
  const auto queries = language_queries(c, ids, 1);
  const LanguageScores s = build_score_vectors(model, images, queries, tr, {0.1, 4});
  CHECK(s.languages() == c.languages.size());
  const ScoreMatrix direct = score_queries(model, images, queries);
  CHECK(s.slot(1).scores == direct.scores);
  CHECK(translate_query(tr, queries[0], 0, 1, {0.1, 4}) == queries[0].tokens);
  CHECK(translate_query(tr, queries[0], 0, 2, {0.1, 4}) == translate_query(tr, queries[0], 0, 2, {0.1, 4}));
  CHECK_THROWS(translate_query(tr, queries[0], 0, 99, {0.1, 4}));
}

TEST_CASE("clc training leaves the embedding model untouched") {
  const auto w = testing::tiny_world();
  const SmalrModel model = testing::tiny_model(w);
  const auto before = model.store().checksum();
  std::vector<double> losses;
  const ClcClassifier c = run_clc_train(w.config, model, w.data.corpus, &losses);
  CHECK(model.store().checksum() == before);
  CHECK(losses.size() == w.config.clc.iterations + 1);

  EvalOptions opts;
  const Translator tr(w.data.corpus);
  opts.translator = &tr;
  opts.classifier = &c;
  for (EvalMode mode : {EvalMode::direct, EvalMode::trans_pivot, EvalMode::clc_average, EvalMode::clc_classifier}) {
    opts.mode = mode;
    const MetricsReport r = evaluate_model(model, w.data.corpus, Split::test, opts);
    const std::size_t expect = mode == EvalMode::direct || mode == EvalMode::trans_pivot
                                   ? w.data.corpus.languages.size()
                                   : fused_languages(w.data.corpus).size();
    CHECK(r.rows.size() == expect);
  }
  CHECK(model.store().checksum() == before);
  opts.mode = EvalMode::clc_classifier;
  opts.classifier = nullptr;
  CHECK_THROWS(evaluate_model(model, w.data.corpus, Split::test, opts));
}

TEST_CASE("evaluation mode names") {
  CHECK(parse_eval_mode("direct") == EvalMode::direct);
  CHECK(parse_eval_mode("trans-pivot") == EvalMode::trans_pivot);
  CHECK(parse_eval_mode("clc-a") == EvalMode::clc_average);
  CHECK(parse_eval_mode("average") == EvalMode::clc_average);
  CHECK(parse_eval_mode("classifier") == EvalMode::clc_classifier);
  CHECK_THROWS(parse_eval_mode("best"));
  for (EvalMode m : {EvalMode::direct, EvalMode::trans_pivot, EvalMode::clc_average, EvalMode::clc_classifier})
    CHECK(parse_eval_mode(eval_mode_name(m)) == m);
}
