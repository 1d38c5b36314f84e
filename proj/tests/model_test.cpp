#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "smalr/model.hpp"

using namespace smalr;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop GRU over a sequence, column layout [update | reset | candidate].
std::vector<double> unrolled_gru(const Tensor& wi, const Tensor& wg, const Tensor& wc, const Tensor& b,
                                 const std::vector<std::vector<double>>& xs) {
  const std::size_t h = wc.rows();
  std::vector<double> state(h, 0.0);
  for (const auto& x : xs) {
    std::vector<double> pre(3 * h);
    for (std::size_t j = 0; j < 3 * h; ++j) {
      pre[j] = b(0, j);
      for (std::size_t i = 0; i < x.size(); ++i) pre[j] += x[i] * wi(i, j);
    }
    std::vector<double> z(h), r(h), n(h);
    for (std::size_t j = 0; j < h; ++j) {
      double uz = 0.0, ur = 0.0;
      for (std::size_t i = 0; i < h; ++i) {
        uz += state[i] * wg(i, j);
        ur += state[i] * wg(i, h + j);
      }
      z[j] = sigmoid(pre[j] + uz);
      r[j] = sigmoid(pre[h + j] + ur);
    }
    for (std::size_t j = 0; j < h; ++j) {
      double un = 0.0;
      for (std::size_t i = 0; i < h; ++i) un += r[i] * state[i] * wc(i, j);
      n[j] = std::tanh(pre[2 * h + j] + un);
    }
    for (std::size_t j = 0; j < h; ++j) state[j] = (1.0 - z[j]) * n[j] + z[j] * state[j];
  }
  return state;
}

}  // namespace

TEST_CASE("gru step matches an unrolled loop") {
  Rng rng(1);
  ParameterStore store;
  auto rnd = [&](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& x : t.data()) x = rng.uniform(-1, 1);
    return t;
  };
  GruWeights w{&store.add("i", rnd(3, 12)), &store.add("g", rnd(4, 8)), &store.add("c", rnd(4, 4)),
               &store.add("b", rnd(1, 12))};
  std::vector<std::vector<double>> xs;
  for (int t = 0; t < 5; ++t) xs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  const auto want = unrolled_gru(w.input->value, w.gates->value, w.candidate->value, w.bias->value, xs);
  Graph g;
  Var h = g.constant(Tensor(1, 4));
  for (const auto& x : xs) h = gru_step(g, w, g.constant(Tensor::row(x)), h);
  for (std::size_t j = 0; j < 4; ++j) CHECK(g.value(h)[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("batched query embedding equals one-at-a-time embedding") {
  const auto w = testing::tiny_world();
  const SmalrModel model = testing::tiny_model(w);
  const Corpus& c = w.data.corpus;
  std::vector<SmalrModel::TokenSequence> seqs;
  for (std::size_t i = 0; i < 12; ++i) seqs.push_back({c.sentences[i * 7].lang, c.sentences[i * 7].tokens});
  Graph g;
  const Tensor batched = g.value(model.embed_queries(g, seqs));
  REQUIRE(batched.rows() == seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto single = model.query_vector(seqs[i].lang, seqs[i].tokens);
    CHECK(norm2(single) == doctest::Approx(1.0));
    for (std::size_t j = 0; j < single.size(); ++j) CHECK(batched(i, j) == doctest::Approx(single[j]).epsilon(1e-12));
  }
  Tensor features(3, c.feature_dim);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < c.feature_dim; ++j) features(i, j) = c.images[i].feature[j];
  const Tensor imgs = g.value(model.embed_images(g, features));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto single = model.image_vector(c.images[i].feature);
    for (std::size_t j = 0; j < single.size(); ++j) CHECK(imgs(i, j) == doctest::Approx(single[j]).epsilon(1e-12));
  }
}

TEST_CASE("masked universal reps average only the unmasked tokens") {
  const auto w = testing::tiny_world();
  const SmalrModel model = testing::tiny_model(w);
  const Sentence& s = w.data.corpus.sentences[0];
  std::vector<SmalrModel::TokenSequence> seqs = {{s.lang, s.tokens}};
  const std::vector<std::vector<std::size_t>> masked = {{0}};
  Graph g;
  Var tokens = model.embedder().embed_stacked(g, seqs);
  const Tensor rep = g.value(model.universal_reps(g, tokens, SmalrModel::layout(seqs), &masked));
  for (std::size_t j = 0; j < rep.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t t = 1; t < s.tokens.size(); ++t) mean += model.embedder().token_vector(s.lang, s.tokens[t])[j];
    CHECK(rep(0, j) == doctest::Approx(mean / static_cast<double>(s.tokens.size() - 1)).epsilon(1e-12));
  }
}

TEST_CASE("saved models reload to identical embeddings") {
  const auto w = testing::tiny_world();
  const SmalrModel model = testing::tiny_model(w);
  const std::string dir = (std::filesystem::temp_directory_path() / "smalr_model_rt").string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  save_model(model, dir);
  const SmalrModel back = load_model(dir);
  CHECK(back.store().checksum() == model.store().checksum());
  CHECK(back.embedder().assignments() == model.embedder().assignments());
  for (std::size_t i = 0; i < 10; ++i) {
    const Sentence& s = w.data.corpus.sentences[i];
    CHECK(back.query_vector(s.lang, s.tokens) == model.query_vector(s.lang, s.tokens));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto w = testing::tiny_world();
  RunConfig cfg = w.config;
  cfg.train.epochs = 6;
  cfg.train.select_best = false;
  SmalrModel a = testing::tiny_model(w);
  SmalrModel b = testing::tiny_model(w);
  const TrainResult ra = train_model(a, w.data.corpus, cfg.train);
  const TrainResult rb = train_model(b, w.data.corpus, cfg.train);
  CHECK(a.store().checksum() == b.store().checksum());
  REQUIRE(ra.steps.size() == rb.steps.size());
  const std::size_t per_epoch = caption_steps_per_epoch(w.data.corpus, {}, cfg.train.batch_size);
  CHECK(ra.steps.size() == 6 * per_epoch);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < per_epoch; ++i) {
    first += ra.steps[i].multimodal;
    last += ra.steps[ra.steps.size() - 1 - i].multimodal;
  }
  CHECK(last < first);
}

TEST_CASE("caption steps per epoch") {
  const auto w = testing::tiny_world();
  const Corpus& c = w.data.corpus;
  std::size_t train_captions = 0;
  const std::set<int> train(c.splits.train.begin(), c.splits.train.end());
  for (const Sentence& s : c.sentences) train_captions += train.count(s.image_id) && s.lang == 0;
  const std::vector<std::size_t> one = {0};
  CHECK(caption_steps_per_epoch(c, one, 4) == (train_captions + 7) / 8);
}
