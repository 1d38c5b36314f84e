#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "smalr/metrics.hpp"
#include "smalr/rng.hpp"

using namespace smalr;

TEST_CASE("recall on a hand-built matrix") {
  // 3 images, 4 sentences; sentences 0,1 -> image 0, 2 -> 1, 3 -> 2.
  ScoreMatrix m{Tensor(3, 4, std::vector<double>{0.9, 0.1, 0.2, 0.8,  //
                                                 0.1, 0.5, 0.7, 0.3,  //
                                                 0.3, 0.6, 0.1, 0.4}),
                {0, 0, 1, 2}};
  CHECK(ground_truth_ranks(m, Direction::sentence_to_image) == std::vector<std::size_t>{0, 2, 0, 1});
  CHECK(ground_truth_ranks(m, Direction::image_to_sentence) == std::vector<std::size_t>{0, 0, 1});
  CHECK(recall_at_k(m, 1, Direction::sentence_to_image) == doctest::Approx(50.0));
  CHECK(recall_at_k(m, 1, Direction::image_to_sentence) == doctest::Approx(200.0 / 3.0));
  CHECK(recall_at_k(m, 5, Direction::image_to_sentence) == 100.0);
  CHECK_THROWS(recall_at_k(m, 0, Direction::image_to_sentence));
}

TEST_CASE("equal scores rank the lower index first") {
  ScoreMatrix m{Tensor(3, 3, 0.5), {1, 1, 2}};
  CHECK(ground_truth_ranks(m, Direction::sentence_to_image) == std::vector<std::size_t>{1, 1, 2});
  CHECK(ground_truth_ranks(m, Direction::image_to_sentence) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("invalid score matrices are rejected") {
  ScoreMatrix bad{Tensor(2, 2), {0, 5}};
  CHECK_THROWS(bad.validate());
  ScoreMatrix nan{Tensor(2, 2, std::nan("")), {0, 1}};
  CHECK_THROWS_AS(nan.validate(), NumericError);
  ScoreMatrix short_gt{Tensor(2, 2), {0}};
  CHECK_THROWS_AS(short_gt.validate(), ShapeError);
}

TEST_CASE("rounding is half-up on one decimal") {
  CHECK(round1(79.25) == 79.3);
  CHECK(round1(77.733) == 77.7);
  CHECK(round1(0.05) == 0.1);
  CHECK(round1(12.34999) == 12.3);
  const double recalls[] = {62.9, 89.2, 95.8, 51.1, 84.0, 92.5};
  CHECK(mean_recall(recalls) == 79.3);
  const double five[] = {1, 2, 3, 4, 5};
  CHECK_THROWS(mean_recall(five));
}

TEST_CASE("aggregates over human and all languages") {
  const std::vector<std::string> langs = {"En", "De", "Fr", "Cs", "Cn", "Ja", "Ar", "Af", "Ko", "Ru"};
  const std::vector<double> mrs = {79.3, 78.4, 77.8, 78.6, 76.7, 77.2, 77.9, 78.2, 75.1, 78.0};
  const std::vector<std::string> human = {"En", "Cn", "Ja"};
  const Aggregate a = aggregate(mrs, langs, human);
  CHECK(a.ha == 77.7);
  CHECK(a.a == 77.7);
  const std::vector<std::string> unknown = {"Xx"};
  CHECK_THROWS(aggregate(mrs, langs, unknown));
}

TEST_CASE("chance mean recall matches random rankings") {
  Rng rng(5);
  const std::size_t ni = 20, ns = 45;
  std::vector<std::size_t> gt;
  for (std::size_t s = 0; s < ns; ++s) gt.push_back(s < ni ? s : rng.index(ni));
  ScoreMatrix m{Tensor(ni, ns), gt};
  const double chance = chance_mean_recall(m);
  double total = 0.0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    for (double& x : m.scores.data()) x = rng.uniform();
    total += language_metrics(m, "xx").mr;
  }
  CHECK(total / trials == doctest::Approx(chance).epsilon(0.02));
}

TEST_CASE("language metrics collect six recalls") {
  ScoreMatrix m{Tensor(2, 2, std::vector<double>{1.0, 0.0, 0.0, 1.0}), {0, 1}};
  const LanguageMetrics lm = language_metrics(m, "En");
  CHECK(lm.lang == "En");
  for (double r : lm.recall) CHECK(r == 100.0);
  CHECK(lm.mr == 100.0);
  MetricsReport report;
  report.rows = {lm, lm};
  report.rows[1].lang = "De";
  report.rows[1].mr = 50.0;
  report.human_languages = {"En"};
  CHECK(report.totals().ha == 100.0);
  CHECK(report.totals().a == 75.0);
}
