#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "doctest.h"
#include "smalr/pca.hpp"
#include "smalr/rng.hpp"
#include "smalr/vocab.hpp"

using namespace smalr;

namespace {

VocabStats stats_of(std::vector<std::vector<std::size_t>> freq) {
  VocabStats s;
  s.freq = std::move(freq);
  for (const auto& f : s.freq) {
    std::size_t total = 0;
    for (std::size_t x : f) total += x;
    s.total_tokens.push_back(total);
  }
  return s;
}

Corpus small_corpus() {
  SyntheticConfig c;
  c.num_images = 60;
  c.concepts = 20;
  c.vocab_per_lang = 80;
  c.feature_dim = 8;
  c.pretrained_dim = 12;
  const Corpus base = generate_synthetic(c).corpus;
  return augment_to_full_coverage(base, Translator(base), 0.1, 2);
}

}  // namespace

TEST_CASE("frequencies count training tokens only") {
  const Corpus c = small_corpus();
  const VocabStats s = count_frequencies(c);
  std::vector<std::size_t> expect(c.languages.size(), 0);
  std::set<int> train(c.splits.train.begin(), c.splits.train.end());
  for (const Sentence& x : c.sentences)
    if (train.count(x.image_id)) expect[x.lang] += x.tokens.size();
  CHECK(s.total_tokens == expect);
  for (std::size_t l = 0; l < s.num_languages(); ++l) {
    CHECK(s.freq[l].size() == c.vocab_sizes[l]);
    std::size_t sum = 0;
    for (const auto& [w, n] : s.observed(l)) sum += n;
    CHECK(sum == expect[l]);
  }
}

TEST_CASE("top-k split breaks ties toward the lower id") {
  const VocabStats s = stats_of({{3, 5, 5, 0, 1}, {2, 2, 2, 2, 0}});
  const VocabSplit split = split_top_k(s, 2);
  CHECK(split.specific[0] == std::vector<int>{1, 2});
  CHECK(split.agnostic[0] == std::vector<int>{0, 3, 4});
  CHECK(split.specific[1] == std::vector<int>{0, 1});
  CHECK(split.specific_word(1, 1));
  CHECK(!split.specific_word(1, 2));
  const VocabSplit none = split_top_k(s, 0);
  CHECK(none.specific[0].empty());
  CHECK(none.agnostic[0].size() == 5);
  const VocabSplit all = split_top_k(s, 10);
  CHECK(all.specific[0].size() == 4);
  CHECK(all.specific[1].size() == 4);
}

TEST_CASE("frequency threshold shrinks the vocabulary monotonically") {
  const VocabStats s = count_frequencies(small_corpus());
  std::size_t prev = static_cast<std::size_t>(-1);
  for (std::size_t t = 1; t <= 20; ++t) {
    const VocabReduction r = frequency_threshold(s, t);
    CHECK(r.vocab_size() <= prev);
    prev = r.vocab_size();
    for (std::size_t l = 0; l < s.num_languages(); ++l) {
      CHECK(r.row_word[l].back() == -1);
      for (std::size_t w = 0; w < s.freq[l].size(); ++w) {
        const ReducedTarget& tgt = r.target[l][w];
        CHECK(tgt.lang == l);
        if (s.freq[l][w] >= t) CHECK(r.row_word[l][tgt.row] == static_cast<int>(w));
        else CHECK(tgt.row == r.unk_row(l));
      }
    }
  }
}

TEST_CASE("dictionary mapping sends rare words to observed pivot words and keeps the pivot whole") {
  const Corpus c = small_corpus();
  const VocabStats s = count_frequencies(c);
  const Dictionary dict = dictionary_from_lexicon(c, s, 0);
  const VocabReduction r = dictionary_map(s, 5, dict);
  const VocabReduction keep = frequency_threshold(s, 1);
  CHECK(r.target[0] == keep.target[0]);
  std::size_t mapped = 0;
  for (std::size_t l = 1; l < s.num_languages(); ++l)
    for (std::size_t w = 0; w < s.freq[l].size(); ++w) {
      const ReducedTarget& tgt = r.target[l][w];
      if (s.freq[l][w] >= 5) {
        CHECK(tgt.lang == l);
        continue;
      }
      if (tgt.lang != 0) continue;
      ++mapped;
      const int pivot_word = r.row_word[0][tgt.row];
      REQUIRE(pivot_word >= 0);
      CHECK(s.freq[0][pivot_word] > 0);
      CHECK(c.lexicon[0][pivot_word] == c.lexicon[l][w]);
    }
  CHECK(mapped > 0);
}

TEST_CASE("jacobi eigendecomposition agrees with Eigen") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.index(8);
    Eigen::MatrixXd a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) = rng.uniform(-1, 1);
    a = (a + a.transpose()).eval();
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) t(i, j) = a(i, j);
    const SymmetricEigen mine = jacobi_eigen(t);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(mine.values[k] == doctest::Approx(es.eigenvalues()(n - 1 - k)).epsilon(1e-10));
      Eigen::VectorXd v(n);
      for (std::size_t i = 0; i < n; ++i) v(i) = mine.vectors(i, k);
      CHECK((a * v - mine.values[k] * v).norm() < 1e-9);
    }
  }
}

TEST_CASE("pca components are unit, ordered and sign-normalised") {
  Rng rng(2);
  Tensor x(40, 6);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 6; ++j) x(i, j) = rng.normal() * (6.0 - j);
  const PcaResult r = pca_reduce(x, 4);
  CHECK(r.projected.rows() == 40);
  CHECK(r.projected.cols() == 4);
  double share = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto row = r.components.row_span(k);
    CHECK(norm2(row) == doctest::Approx(1.0));
    std::size_t big = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (std::abs(row[j]) > std::abs(row[big])) big = j;
    CHECK(row[big] > 0.0);
    if (k > 0) CHECK(r.eigenvalues[k] <= r.eigenvalues[k - 1]);
    share += r.explained_ratio[k];
  }
  CHECK(share < 1.0);
  const Tensor again = r.project(x);
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i] == doctest::Approx(r.projected[i]));
}

TEST_CASE("pca of rank-deficient data warns and zeroes extra components") {
  Tensor x(10, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    x(i, 0) = static_cast<double>(i);
    x(i, 1) = 2.0 * static_cast<double>(i);
    x(i, 2) = 1.0;
  }
  const PcaResult r = pca_reduce(x, 2);
  CHECK(r.explained_ratio[0] == doctest::Approx(1.0));
  CHECK(!r.warnings.empty());
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(r.projected(i, 1)) < 1e-9);
  CHECK_THROWS(pca_reduce(x, 4));
}

TEST_CASE("word vectors share one basis across languages") {
  WordVectors v;
  Rng rng(3);
  for (int l = 0; l < 2; ++l) {
    Tensor t(15, 5);
    for (double& x : t.data()) x = rng.normal();
    v.tables.push_back(t);
  }
  v.tables[1] = v.tables[0];
  const WordVectors r = reduce_word_vectors(v, 3);
  CHECK(r.dim() == 3);
  CHECK(r.tables[0] == r.tables[1]);
}

TEST_CASE("full-dimension pca is an orthogonal change of basis") {
  Rng rng(4);
  Tensor x(20, 5);
  for (double& v : x.data()) v = rng.normal();
  const PcaResult r = pca_reduce(x, 5);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 20; ++j) {
      double a = 0.0, b = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        a += (x(i, k) - r.mean[k]) * (x(j, k) - r.mean[k]);
        b += r.projected(i, k) * r.projected(j, k);
      }
      CHECK(b == doctest::Approx(a).epsilon(1e-10));
    }
}

TEST_CASE("threshold one leaves every vocabulary whole") {
  const Corpus c = small_corpus();
  const VocabStats s = count_frequencies(c);
  const VocabReduction freq = frequency_threshold(s, 1);
  const VocabReduction dict = dictionary_map(s, 1, dictionary_from_lexicon(c, s, 0));
  CHECK(freq.row_word == dict.row_word);
  std::size_t unseen_mapped = 0;
  for (std::size_t l = 0; l < s.num_languages(); ++l)
    for (std::size_t w = 0; w < s.freq[l].size(); ++w) {
      if (s.freq[l][w] > 0)
        CHECK(freq.target[l][w] == dict.target[l][w]);
      else
        unseen_mapped += dict.target[l][w].lang != l;
    }
  CHECK(unseen_mapped > 0);
  for (std::size_t l = 0; l < s.num_languages(); ++l) CHECK(freq.row_word[l].size() == s.types(l) + 1);
  CHECK(dictionary_map(s, 4, dictionary_from_lexicon(c, s, 0)).vocab_size() < freq.vocab_size());
}
