#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "smalr/hem.hpp"
#include "smalr/losses.hpp"

using namespace smalr;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("latent ranking orders by cosine and breaks ties by index") {
  Tensor latent(4, 2);
  latent(0, 0) = 1.0;
  latent(1, 1) = 1.0;
  latent(2, 0) = 2.0;
  latent(3, 0) = -1.0;
  const std::vector<double> q = {1.0, 0.0};
  CHECK(score_latent_tokens(q, latent) == std::vector<std::size_t>{0, 2, 1, 3});
  const std::vector<double> zero = {0.0, 0.0};
  CHECK_THROWS_AS(score_latent_tokens(zero, latent), NumericError);
}

TEST_CASE("assignment without exploration is the argmax") {
  Rng rng(1);
  const std::vector<std::size_t> ranking = {4, 2, 0, 1, 3};
  for (int i = 0; i < 100; ++i) CHECK(assign_token(ranking, nullptr, rng) == 4);
}

TEST_CASE("exploration draws uniformly from the top M") {
  Rng rng(2);
  std::vector<std::size_t> ranking(30);
  for (std::size_t i = 0; i < 30; ++i) ranking[i] = 29 - i;
  const ExplorationConfig always{1.0, 5};
  std::map<std::size_t, int> counts;
  for (int i = 0; i < 50000; ++i) ++counts[assign_token(ranking, &always, rng)];
  CHECK(counts.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(counts[ranking[k]] / 50000.0 == doctest::Approx(0.2).epsilon(0.05));
  const ExplorationConfig bad{1.5, 5};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("pruning keeps used rows in order and requires a frozen map") {
  Tensor latent(5, 2);
  for (std::size_t i = 0; i < 5; ++i) latent(i, 0) = static_cast<double>(i);
  AssignmentMap map;
  map.token = {{3, -1, 1}, {3, 3}};
  CHECK_THROWS(prune_unused(latent, map));
  map.frozen = true;
  const PrunedLatent p = prune_unused(latent, map);
  CHECK(p.table.rows() == 2);
  CHECK(p.table(0, 0) == 1.0);
  CHECK(p.table(1, 0) == 3.0);
  CHECK(p.map.token == std::vector<std::vector<int>>{{1, -1, 0}, {1, 1}});
  CHECK(map.usage(5) == std::vector<std::size_t>{0, 1, 0, 3, 0});
}

TEST_CASE("pretraining yields a frozen total assignment") {
  const auto w = testing::tiny_world();
  const VocabSplit split = vocab_split(w.config, w.data.corpus);
  CHECK(w.pretrain.map.frozen);
  CHECK(w.pretrain.map.total_over(split));
  CHECK(w.pretrain.latent.rows() == w.config.pretrain.latent_size);
  CHECK(w.pretrain.epoch_loss.size() == w.config.pretrain.epochs);
  for (std::size_t l = 0; l < w.data.corpus.languages.size(); ++l) {
    CHECK(w.pretrain.fc_weight[l].rows() == w.config.reduced_dim);
    CHECK(w.pretrain.fc_weight[l].cols() == w.config.pretrain.universal_dim);
  }
  const auto again = testing::tiny_world();
  CHECK(again.pretrain.map == w.pretrain.map);
  CHECK(again.pretrain.latent == w.pretrain.latent);
}

TEST_CASE("hybrid embedder routes words and counts fewer parameters than per-word tables") {
  const auto w = testing::tiny_world();
  const SmalrModel model = testing::tiny_model(w);
  const HybridEmbedder& e = model.embedder();
  const VocabSplit split = vocab_split(w.config, w.data.corpus);
  std::set<std::uint32_t> latent_rows;
  for (std::size_t l = 0; l < e.num_languages(); ++l)
    for (std::size_t word = 0; word < w.data.corpus.vocab_sizes[l]; ++word) {
      const TokenRoute& r = e.route(l, static_cast<int>(word));
      if (split.specific_word(l, static_cast<int>(word))) {
        CHECK(r.kind == TokenRoute::projected);
        CHECK(r.table_lang == l);
      } else {
        CHECK(r.kind == TokenRoute::latent);
        latent_rows.insert(r.row);
      }
    }
  CHECK(latent_rows.size() == e.latent_rows());
  const std::size_t per_word = per_word_parameter_count(w.data.corpus.vocab_sizes, w.config.dims.universal_dim);
  CHECK(e.parameter_count() < per_word);

  const std::size_t lang = 1;
  const int word = split.agnostic[lang].front();
  const int twin = split.agnostic[lang].back();
  const std::vector<double> v = e.token_vector(lang, word);
  CHECK(v.size() == w.config.dims.universal_dim);
  if (e.route(lang, word).row == e.route(lang, twin).row) CHECK(v == e.token_vector(lang, twin));
}

TEST_CASE("latent sharing favours same-concept pairs after pretraining") {
  const auto w = testing::tiny_world();
  const SharingRates s = latent_sharing(w.pretrain.map, vocab_split(w.config, w.data.corpus), w.data.corpus);
  CHECK(s.synonym_pairs > 0);
  CHECK(s.random > 0.0);
  CHECK(s.synonym >= s.random);
}

TEST_CASE("triplet hinge") {
  CHECK(triplet_value(0.2, 0.5, 0.1) == 0.0);
  CHECK(triplet_value(0.5, 0.2, 0.1) == doctest::Approx(0.4));
}

TEST_CASE("mining keeps the n largest violations and fails without negatives") {
  Tensor d(1, 3);
  d(0, 0) = 0.5;
  d(0, 1) = 0.1;
  d(0, 2) = 0.3;
  PairLabels labels(1, 3, PairLabel::negative);
  labels.at(0, 0) = PairLabel::positive;
  const auto top = mine_hard_negatives(d, labels, 0.05, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].negative == 1);
  CHECK(top[0].violation == doctest::Approx(0.45));
  CHECK(mine_hard_negatives(d, labels, 0.05, 10).size() == 2);
  PairLabels only(1, 3, PairLabel::positive);
  CHECK_THROWS(mine_hard_negatives(d, only, 0.05, 1));
}

TEST_CASE("multimodal loss vanishes for well separated pairs") {
  Graph g;
  Tensor eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  const std::vector<std::size_t> gt = {0, 1, 2};
  CHECK(g.scalar(multimodal_loss(g, g.constant(eye), g.constant(eye), gt, 1.5, 0.05, 10)) == 0.0);
  Tensor swapped = eye;
  std::swap(swapped(0, 0), swapped(0, 1));
  std::swap(swapped(1, 0), swapped(1, 1));
  CHECK(g.scalar(multimodal_loss(g, g.constant(eye), g.constant(swapped), gt, 1.5, 0.05, 10)) > 0.0);
}

TEST_CASE("masked counts clamp to leave at least one token on each side") {
  CHECK(masked_count(2, 0.2) == 1);
  CHECK(masked_count(4, 0.2) == 1);
  CHECK(masked_count(8, 0.2) == 2);
  CHECK(masked_count(10, 0.99) == 9);
  CHECK_THROWS(masked_count(1, 0.2));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::size_t len = 2 + rng.index(12);
    const auto m = choose_mask(len, 0.3, rng);
    CHECK(m.size() == masked_count(len, 0.3));
    CHECK(std::is_sorted(m.begin(), m.end()));
    CHECK(std::adjacent_find(m.begin(), m.end()) == m.end());
    CHECK(m.back() < len);
  }
}

TEST_CASE("masked average skips masked tokens") {
  Graph g;
  std::vector<Var> tokens;
  for (double v : {1.0, 2.0, 6.0}) tokens.push_back(g.constant(Tensor::row({v})));
  const std::vector<std::size_t> masked = {1};
  CHECK(g.scalar(masked_average(g, tokens, masked)) == doctest::Approx(3.5));
  Var mask = g.constant(Tensor::row({-9.0}));
  const auto sub = substitute_mask(tokens, masked, mask);
  CHECK(sub[1].id == mask.id);
  CHECK(sub[0].id == tokens[0].id);
}

TEST_CASE("mclm loss gradient matches finite differences") {
  Rng rng(4);
  ParameterStore store;
  AffineWeights pred{&store.add("w", random_tensor(rng, 8, 8)), &store.add("b", random_tensor(rng, 1, 8))};
  Parameter& fi = store.add("fi", random_tensor(rng, 2, 4));
  Parameter& mi = store.add("mi", random_tensor(rng, 2, 4));
  Parameter& fj = store.add("fj", random_tensor(rng, 2, 4));
  Parameter& mj = store.add("mj", random_tensor(rng, 2, 4));
  std::vector<Parameter*> params = {pred.weight, pred.bias, &fi, &mi, &fj, &mj};
  auto build = [&](Graph& g) {
    return mclm_loss(g, g.param(fi), g.param(mi), g.param(fj), g.param(mj), pred);
  };
  CHECK(fd_check(build, params, 1e-6) < 1e-6);
}

TEST_CASE("total loss weights each term") {
  Graph g;
  LossTerms t{g.constant(Tensor::scalar(1.0)), g.constant(Tensor::scalar(2.0)), g.constant(Tensor::scalar(3.0)),
              g.constant(Tensor::scalar(4.0))};
  LossWeights w;
  w.lambda2 = 0.5;
  w.lambda3 = 0.25;
  w.lambda4 = 0.125;
  LossBreakdown b;
  CHECK(g.scalar(total_loss(g, t, w, &b)) == doctest::Approx(1.0 + 1.0 + 0.75 + 0.5));
  CHECK(b.total == doctest::Approx(3.25));
  w.lambda2 = -1.0;
  CHECK_THROWS(w.validate());
}

TEST_CASE("pretraining sentence reps average projected tokens") {
  const auto w = testing::tiny_world();
  const VocabSplit split = vocab_split(w.config, w.data.corpus);
  LatentPretrainer pre(w.data.corpus, w.reduced, split, w.config.pretrain);
  const int a = split.specific[0].front(), b = split.specific[0].back();
  Graph g;
  const std::vector<int> one = {a}, twice = {a, a}, pair = {a, b};
  const Tensor single = g.value(pre.sentence_rep(g, 0, one));
  const auto pa = pre.projected(0, a), pb = pre.projected(0, b);
  for (std::size_t j = 0; j < pa.size(); ++j) CHECK(single[j] == doctest::Approx(pa[j]).epsilon(1e-12));
  CHECK(g.value(pre.sentence_rep(g, 0, twice)) == single);
  const Tensor mean = g.value(pre.sentence_rep(g, 0, pair));
  for (std::size_t j = 0; j < pa.size(); ++j) CHECK(mean[j] == doctest::Approx((pa[j] + pb[j]) / 2).epsilon(1e-12));
}

TEST_CASE("latent ranking matches a brute-force similarity sort") {
  Rng rng(9);
  const Tensor latent = random_tensor(rng, 40, 6);
  const Tensor q = random_tensor(rng, 1, 6);
  const auto got = score_latent_tokens(q.row_span(0), latent);
  std::vector<std::size_t> want(40);
  std::iota(want.begin(), want.end(), 0);
  std::stable_sort(want.begin(), want.end(), [&](std::size_t x, std::size_t y) {
    return 1.0 - cosine_distance(q.row_span(0), latent.row_span(x)) >
           1.0 - cosine_distance(q.row_span(0), latent.row_span(y));
  });
  CHECK(got == want);
  CHECK(score_latent_tokens(latent.row_span(17), latent).front() == 17);
}
