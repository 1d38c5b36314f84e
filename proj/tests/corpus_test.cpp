#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "smalr/corpus.hpp"

using namespace smalr;

namespace {

SyntheticConfig small_config(std::uint64_t seed = 3) {
  SyntheticConfig c;
  c.num_images = 40;
  c.concepts = 20;
  c.vocab_per_lang = 60;
  c.feature_dim = 12;
  c.pretrained_dim = 8;
  c.seed = seed;
  return c;
}

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("generation is a pure function of the config") {
  const SyntheticData a = generate_synthetic(small_config());
  const SyntheticData b = generate_synthetic(small_config());
  CHECK(a.corpus == b.corpus);
  CHECK(a.vectors == b.vectors);
  CHECK(!(generate_synthetic(small_config(4)).corpus == a.corpus));
}

TEST_CASE("generated corpus partitions images and leaves translated languages empty") {
  const SyntheticConfig cfg = small_config();
  const Corpus c = generate_synthetic(cfg).corpus;
  CHECK(c.languages.size() == cfg.num_languages);
  CHECK(c.human_languages.size() == cfg.human_languages);
  std::set<int> seen;
  for (Split s : {Split::train, Split::val, Split::test})
    for (int id : c.splits.get(s)) CHECK(seen.insert(id).second);
  CHECK(seen.size() == c.images.size());
  for (const Sentence& s : c.sentences) {
    CHECK(s.lang < cfg.human_languages);
    CHECK(s.tokens.size() >= cfg.min_len);
    CHECK(s.tokens.size() <= cfg.max_len);
    CHECK(s.origin == Origin::human);
  }
  CHECK_NOTHROW(validate_corpus(c, false));
  CHECK_THROWS(validate_corpus(c, true));
}

TEST_CASE("translation keeps length and, without noise, concepts") {
  const Corpus c = generate_synthetic(small_config()).corpus;
  const Translator tr(c);
  for (std::size_t i = 0; i < 30; ++i) {
    const Sentence& s = c.sentences[i];
    const std::size_t target = (s.lang + 1) % c.languages.size();
    const Sentence t = tr.translate(s, target, 0.0, i);
    REQUIRE(t.tokens.size() == s.tokens.size());
    CHECK(t.lang == target);
    CHECK(t.origin == Origin::translated);
    CHECK(t.image_id == s.image_id);
    for (std::size_t k = 0; k < s.tokens.size(); ++k)
      CHECK(tr.concept_of(target, t.tokens[k]) == tr.concept_of(s.lang, s.tokens[k]));
    CHECK(tr.translate(s, target, 0.5, i) == tr.translate(s, target, 0.5, i));
  }
}

TEST_CASE("translation noise swaps concepts at roughly the requested rate") {
  const Corpus c = generate_synthetic(small_config()).corpus;
  const Translator tr(c);
  std::size_t swapped = 0, total = 0;
  for (std::size_t i = 0; i < c.sentences.size(); ++i) {
    const Sentence& s = c.sentences[i];
    const Sentence t = tr.translate(s, 3, 0.3, 100 + i);
    for (std::size_t k = 0; k < s.tokens.size(); ++k, ++total)
      swapped += tr.concept_of(3, t.tokens[k]) != tr.concept_of(s.lang, s.tokens[k]);
  }
  CHECK(static_cast<double>(swapped) / total == doctest::Approx(0.3).epsilon(0.2));
}

TEST_CASE("augmentation fills every cell from the first covered language") {
  const Corpus c = generate_synthetic(small_config()).corpus;
  const Corpus full = augment_to_full_coverage(c, Translator(c), 0.1, 9);
  CHECK_NOTHROW(validate_corpus(full, true));
  const SentenceCells cells = index_sentences(full);
  for (const auto& image : cells)
    for (const auto& cell : image) CHECK(!cell.empty());
  std::size_t human = 0;
  for (const Sentence& s : full.sentences) {
    human += s.origin == Origin::human;
    if (s.origin == Origin::translated) CHECK(s.lang == 3);
  }
  CHECK(human == c.sentences.size());
  CHECK(augment_to_full_coverage(c, Translator(c), 0.1, 9) == full);
}

TEST_CASE("corpus and vectors round trip through files") {
  const SyntheticData d = generate_synthetic(small_config());
  const Corpus full = augment_to_full_coverage(d.corpus, Translator(d.corpus), 0.1, 9);
  write_corpus(full, tmp("smalr_corpus.jsonl"));
  const Corpus back = read_corpus(tmp("smalr_corpus.jsonl"));
  CHECK(back == full);
  write_vectors(d.vectors, full, tmp("smalr_vectors.tsv"));
  CHECK(read_vectors(tmp("smalr_vectors.tsv"), full) == d.vectors);
  CHECK(file_hash(tmp("smalr_corpus.jsonl")) == file_hash(tmp("smalr_corpus.jsonl")));
  CHECK_THROWS(read_corpus(tmp("smalr_no_such_file.tsv")));
}

TEST_CASE("minibatches visit each training image once per epoch") {
  const SyntheticData d = generate_synthetic(small_config());
  const Corpus full = augment_to_full_coverage(d.corpus, Translator(d.corpus), 0.1, 9);
  MinibatchIterator it(full, Split::train, 4, 11);
  const std::size_t per_epoch = it.batches_per_epoch();
  CHECK(per_epoch == full.splits.train.size() / 4);
  std::map<int, int> visits;
  for (std::size_t b = 0; b < per_epoch; ++b) {
    const Batch batch = it.next();
    CHECK(batch.size() == 4);
    for (const BatchItem& item : batch) {
      ++visits[item.image_id];
      const Sentence& a = full.sentences[item.first];
      const Sentence& s = full.sentences[item.second];
      CHECK(a.image_id == item.image_id);
      CHECK(s.image_id == item.image_id);
      CHECK(a.lang != s.lang);
    }
  }
  for (const auto& [id, n] : visits) CHECK(n == 1);
  CHECK(visits.size() == per_epoch * 4);

  MinibatchIterator again(full, Split::train, 4, 11);
  MinibatchIterator other(full, Split::train, 4, 11);
  for (int i = 0; i < 5; ++i) {
    const Batch x = again.next(), y = other.next();
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(x[k].first == y[k].first);
  }
}

TEST_CASE("minibatches respect a language subset") {
  const SyntheticData d = generate_synthetic(small_config());
  const Corpus full = augment_to_full_coverage(d.corpus, Translator(d.corpus), 0.1, 9);
  MinibatchIterator it(full, Split::train, 4, 1, {0, 2});
  for (int i = 0; i < 10; ++i)
    for (const BatchItem& item : it.next()) {
      const std::size_t a = full.sentences[item.first].lang, b = full.sentences[item.second].lang;
      CHECK((a == 0 || a == 2));
      CHECK((b == 0 || b == 2));
    }
}

TEST_CASE("word frequencies have a long tail") {
  const Corpus c = generate_synthetic(SyntheticConfig{}).corpus;
  std::vector<std::map<int, int>> counts(c.languages.size());
  for (const Sentence& s : c.sentences)
    for (int w : s.tokens) ++counts[s.lang][w];
  for (std::size_t l = 0; l < c.human_languages.size(); ++l) {
    REQUIRE(c.vocab_sizes[l] == 300);
    std::size_t rare = 0;
    for (std::size_t w = 0; w < c.vocab_sizes[l]; ++w) rare += counts[l][static_cast<int>(w)] < 4;
    CAPTURE(l);
    CHECK(static_cast<double>(rare) / c.vocab_sizes[l] >= 0.5);
  }
}

TEST_CASE("translation noise of one half swaps about half the concepts") {
  const Corpus c = generate_synthetic(small_config()).corpus;
  const Translator tr(c);
  std::size_t swapped = 0, total = 0;
  for (std::size_t i = 0; total < 1000; ++i) {
    const Sentence& s = c.sentences[i % c.sentences.size()];
    const Sentence t = tr.translate(s, 3, 0.5, 7000 + i);
    for (std::size_t k = 0; k < s.tokens.size() && total < 1000; ++k, ++total)
      swapped += tr.concept_of(3, t.tokens[k]) != tr.concept_of(s.lang, s.tokens[k]);
  }
  CHECK(swapped >= 450);
  CHECK(swapped <= 550);
}

TEST_CASE("round trip translation without noise preserves concepts") {
  const Corpus c = generate_synthetic(small_config()).corpus;
  const Translator tr(c);
  for (std::size_t i = 0; i < 20; ++i) {
    const Sentence& s = c.sentences[i];
    const Sentence back = tr.translate(tr.translate(s, 3, 0.0, i), s.lang, 0.0, i + 1);
    for (std::size_t k = 0; k < s.tokens.size(); ++k)
      CHECK(tr.concept_of(s.lang, back.tokens[k]) == tr.concept_of(s.lang, s.tokens[k]));
  }
}

TEST_CASE("cross-language synonyms are closer than non-synonyms") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const SyntheticData d = generate_synthetic(small_config(seed));
    double syn = 0.0, non = 0.0;
    std::size_t ns = 0, nn = 0;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = a + 1; b < 3; ++b)
        for (std::size_t i = 0; i < d.corpus.lexicon[a].size(); ++i)
          for (std::size_t j = 0; j < d.corpus.lexicon[b].size(); ++j) {
            const double dist = cosine_distance(d.vectors.tables[a].row_span(i), d.vectors.tables[b].row_span(j));
            if (d.corpus.lexicon[a][i] == d.corpus.lexicon[b][j]) {
              syn += dist;
              ++ns;
            } else {
              non += dist;
              ++nn;
            }
          }
    CHECK(syn / ns < non / nn);
  }
}

TEST_CASE("minibatches cover every language pair") {
  const SyntheticData d = generate_synthetic(small_config());
  const Corpus full = augment_to_full_coverage(d.corpus, Translator(d.corpus), 0.1, 9);
  MinibatchIterator it(full, Split::train, 8, 5);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pairs;
  std::size_t items = 0;
  for (int b = 0; b < 2000; ++b) {
    const Batch batch = it.next();
    std::set<int> images;
    for (const BatchItem& item : batch) {
      CHECK(images.insert(item.image_id).second);
      std::size_t x = full.sentences[item.first].lang, y = full.sentences[item.second].lang;
      if (x > y) std::swap(x, y);
      ++pairs[{x, y}];
      ++items;
    }
  }
  CHECK(pairs.size() == 6);
  for (const auto& [p, n] : pairs) CHECK(static_cast<double>(n) / items >= 0.1);
}
