#include "smalr/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

#include "smalr/graph.hpp"

namespace smalr {

using nlohmann::json;

const char* to_string(Origin o) { return o == Origin::human ? "human" : "mt"; }

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("unknown split: " + s);
}

const std::vector<int>& Splits::get(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

std::size_t Corpus::language_index(const std::string& code) const {
  auto it = std::find(languages.begin(), languages.end(), code);
  if (it == languages.end()) throw Error("unknown language: " + code);
  return static_cast<std::size_t>(it - languages.begin());
}

bool Corpus::is_human(std::size_t lang) const {
  return std::find(human_languages.begin(), human_languages.end(), languages.at(lang)) !=
         human_languages.end();
}

std::size_t Corpus::image_position(int image_id) const {
  auto it = std::lower_bound(images.begin(), images.end(), image_id,
                             [](const ImageRecord& r, int id) { return r.id < id; });
  if (it == images.end() || it->id != image_id) {
    throw Error("unknown image id " + std::to_string(image_id));
  }
  return static_cast<std::size_t>(it - images.begin());
}

void Corpus::sort_sentences() {
  std::stable_sort(sentences.begin(), sentences.end(), [](const Sentence& a, const Sentence& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.lang < b.lang;
  });
}

SentenceCells index_sentences(const Corpus& corpus) {
  SentenceCells cells(corpus.images.size(),
                      std::vector<std::vector<std::size_t>>(corpus.languages.size()));
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const Sentence& s = corpus.sentences[i];
    cells[corpus.image_position(s.image_id)].at(s.lang).push_back(i);
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

std::vector<double> random_unitish(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : v) x = rng.normal() * s;
  return v;
}

Tensor random_projection(Rng& rng, std::size_t in, std::size_t out) {
  Tensor p(in, out);
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.normal() * s;
  return p;
}

std::vector<double> project(const std::vector<double>& v, const Tensor& p) {
  std::vector<double> out(p.cols(), 0.0);
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) out[j] += v[i] * p(i, j);
  return out;
}

/// Zipf weights over a random rank permutation.
std::vector<double> zipf_weights(Rng& rng, std::size_t n, double exponent) {
  std::vector<std::size_t> ranks(n);
  for (std::size_t i = 0; i < n; ++i) ranks[i] = i + 1;
  rng.shuffle(ranks);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::pow(static_cast<double>(ranks[i]), -exponent);
  return w;
}

void check_config(const SyntheticConfig& c) {
  if (c.num_images == 0 || c.num_languages == 0 || c.concepts == 0 || c.vocab_per_lang == 0 ||
      c.sentences_per_image == 0 || c.concepts_per_image == 0 || c.feature_dim == 0 ||
      c.concept_dim == 0 || c.pretrained_dim == 0) {
    throw Error("synthetic config: all counts must be positive");
  }
  if (!(c.synonym_rate >= 0.0 && c.synonym_rate <= 1.0)) {
    throw Error("synthetic config: synonym_rate must lie in [0, 1]");
  }
  if (c.vocab_per_lang < c.concepts) {
    throw Error("synthetic config: vocabulary smaller than the number of concepts");
  }
  if (c.min_len < 3 || c.min_len > c.max_len) {
    throw Error("synthetic config: degenerate sentence length range");
  }
  if (c.human_languages == 0 || c.human_languages > c.num_languages) {
    throw Error("synthetic config: human_languages must be in [1, num_languages]");
  }
  if (c.concepts_per_image > c.concepts) {
    throw Error("synthetic config: concepts_per_image exceeds concepts");
  }
  if (c.train_fraction <= 0.0 || c.val_fraction < 0.0 || c.train_fraction + c.val_fraction >= 1.0) {
    throw Error("synthetic config: split fractions must leave a nonempty test split");
  }
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  check_config(cfg);
  Rng rng(cfg.seed);
  const std::size_t num_concepts = cfg.concepts;
  const std::size_t vocab = cfg.vocab_per_lang;

  std::vector<std::vector<double>> concept_vecs;
  for (std::size_t c = 0; c < num_concepts; ++c) concept_vecs.push_back(random_unitish(rng, cfg.concept_dim));
  const Tensor to_words = random_projection(rng, cfg.concept_dim, cfg.pretrained_dim);
  const Tensor to_features = random_projection(rng, cfg.concept_dim, cfg.feature_dim);

  SyntheticData out;
  Corpus& corpus = out.corpus;
  corpus.feature_dim = cfg.feature_dim;
  for (std::size_t l = 0; l < cfg.num_languages; ++l) {
    corpus.languages.push_back("L" + std::to_string(l));
    if (l < cfg.human_languages) corpus.human_languages.push_back(corpus.languages.back());
  }

  // Lexicons, word popularity and word vectors.
  std::vector<std::vector<double>> word_weight(cfg.num_languages);
  std::vector<std::vector<std::vector<int>>> realizations(
      cfg.num_languages, std::vector<std::vector<int>>(num_concepts));
  for (std::size_t l = 0; l < cfg.num_languages; ++l) {
    std::vector<int> role_concept(vocab);
    for (std::size_t r = 0; r < vocab; ++r) {
      if (r < num_concepts) {
        role_concept[r] = static_cast<int>(r);
      } else if (rng.bernoulli(cfg.synonym_rate)) {
        role_concept[r] = static_cast<int>(rng.index(num_concepts));
      } else {
        // A word with no counterpart in any other language.
        role_concept[r] = static_cast<int>(num_concepts + l * vocab + r);
      }
    }
    std::vector<int> word_of_role(vocab);
    for (std::size_t r = 0; r < vocab; ++r) word_of_role[r] = static_cast<int>(r);
    rng.shuffle(word_of_role);

    std::vector<int> lex(vocab);
    for (std::size_t r = 0; r < vocab; ++r) lex[static_cast<std::size_t>(word_of_role[r])] = role_concept[r];
    word_weight[l] = zipf_weights(rng, vocab, cfg.zipf_exponent);

    std::vector<double> offset = random_unitish(rng, cfg.pretrained_dim);
    for (double& x : offset) x *= cfg.language_offset;
    Tensor table(vocab, cfg.pretrained_dim);
    for (std::size_t w = 0; w < vocab; ++w) {
      const int c = lex[w];
      std::vector<double> base = c < static_cast<int>(num_concepts)
                                     ? project(concept_vecs[static_cast<std::size_t>(c)], to_words)
                                     : project(random_unitish(rng, cfg.concept_dim), to_words);
      const double s = cfg.word_noise / std::sqrt(static_cast<double>(cfg.pretrained_dim));
      for (std::size_t d = 0; d < cfg.pretrained_dim; ++d) {
        table(w, d) = base[d] + offset[d] + rng.normal() * s;
      }
      if (c < static_cast<int>(num_concepts)) {
        realizations[l][static_cast<std::size_t>(c)].push_back(static_cast<int>(w));
      }
    }
    corpus.lexicon.push_back(std::move(lex));
    corpus.vocab_sizes.push_back(vocab);
    out.vectors.tables.push_back(std::move(table));
  }

  // Images.
  const std::vector<double> concept_weight = zipf_weights(rng, num_concepts, cfg.zipf_exponent);
  for (std::size_t i = 0; i < cfg.num_images; ++i) {
    ImageRecord img;
    img.id = static_cast<int>(i);
    std::vector<double> w = concept_weight;
    for (std::size_t k = 0; k < cfg.concepts_per_image; ++k) {
      const std::size_t c = rng.weighted(w);
      w[c] = 0.0;
      img.concepts.push_back(static_cast<int>(c));
    }
    std::sort(img.concepts.begin(), img.concepts.end());
    std::vector<double> mean(cfg.concept_dim, 0.0);
    for (int c : img.concepts)
      for (std::size_t d = 0; d < cfg.concept_dim; ++d) mean[d] += concept_vecs[static_cast<std::size_t>(c)][d];
    const double inv = 1.0 / static_cast<double>(img.concepts.size());
    const double s = cfg.feature_noise / std::sqrt(static_cast<double>(cfg.concept_dim));
    for (double& x : mean) x = x * inv + rng.normal() * s;
    img.feature = project(mean, to_features);
    corpus.images.push_back(std::move(img));
  }

  // Human captions.
  for (const ImageRecord& img : corpus.images) {
    for (std::size_t l = 0; l < cfg.human_languages; ++l) {
      for (std::size_t k = 0; k < cfg.sentences_per_image; ++k) {
        const std::size_t len = cfg.min_len + rng.index(cfg.max_len - cfg.min_len + 1);
        std::vector<int> slots;
        for (std::size_t t = 0; t < len; ++t) {
          slots.push_back(t < img.concepts.size() ? img.concepts[t]
                                                  : img.concepts[rng.index(img.concepts.size())]);
        }
        rng.shuffle(slots);
        Sentence s;
        s.image_id = img.id;
        s.lang = l;
        s.origin = Origin::human;
        for (int c : slots) {
          const auto& words = realizations[l][static_cast<std::size_t>(c)];
          std::vector<double> w;
          for (int word : words) w.push_back(word_weight[l][static_cast<std::size_t>(word)]);
          s.tokens.push_back(words[rng.weighted(w)]);
          s.concepts.push_back(c);
        }
        corpus.sentences.push_back(std::move(s));
      }
    }
  }

  // Splits.
  std::vector<int> ids;
  for (const ImageRecord& img : corpus.images) ids.push_back(img.id);
  rng.shuffle(ids);
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * cfg.train_fraction));
  const auto n_val = static_cast<std::size_t>(std::llround(n * cfg.val_fraction));
  corpus.splits.train.assign(ids.begin(), ids.begin() + static_cast<long>(n_train));
  corpus.splits.val.assign(ids.begin() + static_cast<long>(n_train),
                           ids.begin() + static_cast<long>(n_train + n_val));
  corpus.splits.test.assign(ids.begin() + static_cast<long>(n_train + n_val), ids.end());
  for (auto* part : {&corpus.splits.train, &corpus.splits.val, &corpus.splits.test}) {
    std::sort(part->begin(), part->end());
  }
  corpus.sort_sentences();
  return out;
}

// ---------------------------------------------------------------------------
// Translation

Translator::Translator(const Corpus& corpus) : lexicon_(corpus.lexicon) {
  if (lexicon_.size() != corpus.languages.size()) {
    throw Error("translator needs a lexicon for every corpus language");
  }
  int max_concept = -1;
  for (const auto& lex : lexicon_)
    for (int c : lex) max_concept = std::max(max_concept, c);
  const auto n_concepts = static_cast<std::size_t>(max_concept + 1);
  words_by_concept_.assign(lexicon_.size(), std::vector<std::vector<int>>(n_concepts));
  for (std::size_t l = 0; l < lexicon_.size(); ++l)
    for (std::size_t w = 0; w < lexicon_[l].size(); ++w)
      if (lexicon_[l][w] >= 0) {
        words_by_concept_[l][static_cast<std::size_t>(lexicon_[l][w])].push_back(static_cast<int>(w));
      }
  // Concepts every language can express; translation errors draw from these.
  std::vector<int> shared;
  for (std::size_t c = 0; c < n_concepts; ++c) {
    bool all = true;
    for (std::size_t l = 0; l < lexicon_.size(); ++l) all = all && !words_by_concept_[l][c].empty();
    if (all) shared.push_back(static_cast<int>(c));
  }
  realizable_.assign(lexicon_.size(), shared);
}

int Translator::concept_of(std::size_t lang, int word) const {
  if (lang >= lexicon_.size() || word < 0 || static_cast<std::size_t>(word) >= lexicon_[lang].size()) {
    return -1;
  }
  return lexicon_[lang][static_cast<std::size_t>(word)];
}

const std::vector<int>& Translator::realizations(std::size_t lang, int concept_id) const {
  static const std::vector<int> kNone;
  if (lang >= words_by_concept_.size() || concept_id < 0 ||
      static_cast<std::size_t>(concept_id) >= words_by_concept_[lang].size()) {
    return kNone;
  }
  return words_by_concept_[lang][static_cast<std::size_t>(concept_id)];
}

Sentence Translator::translate(const Sentence& s, std::size_t target, double noise_rate,
                               std::uint64_t seed) const {
  if (target >= lexicon_.size()) throw Error("translation target language unknown");
  if (target == s.lang) throw Error("translation target equals the source language");
  const auto& pool = realizable_[target];
  if (pool.empty()) throw Error("no concept is shared by all languages");
  Rng rng(seed);
  Sentence out;
  out.image_id = s.image_id;
  out.lang = target;
  out.origin = Origin::translated;
  for (int tok : s.tokens) {
    int c = concept_of(s.lang, tok);
    if (c < 0) throw Error("translation: unknown source word " + std::to_string(tok));
    const bool swap = rng.bernoulli(noise_rate);
    if (swap || realizations(target, c).empty()) {
      int other = c;
      while (other == c && pool.size() > 1) other = pool[rng.index(pool.size())];
      if (pool.size() == 1) other = pool[0];
      c = other;
    }
    const auto& words = realizations(target, c);
    out.tokens.push_back(words[rng.index(words.size())]);
    out.concepts.push_back(c);
  }
  return out;
}

Sentence simulate_translation(const Translator& translator, const Sentence& sentence,
                              std::size_t target_language, double noise_rate, std::uint64_t seed) {
  return translator.translate(sentence, target_language, noise_rate, seed);
}

Corpus augment_to_full_coverage(const Corpus& corpus, const Translator& translator,
                                double noise_rate, std::uint64_t seed) {
  Corpus out = corpus;
  const SentenceCells cells = index_sentences(corpus);
  bool changed = false;
  for (std::size_t pos = 0; pos < corpus.images.size(); ++pos) {
    const int image_id = corpus.images[pos].id;
    std::size_t source = corpus.languages.size();
    for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
      if (!cells[pos][l].empty()) {
        source = l;
        break;
      }
    }
    if (source == corpus.languages.size()) {
      throw Error("image " + std::to_string(image_id) + " has no sentence in any language");
    }
    for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
      if (!cells[pos][l].empty()) continue;
      const auto& src = cells[pos][source];
      for (std::size_t k = 0; k < src.size(); ++k) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(image_id), l * 4096 + k);
        out.sentences.push_back(translator.translate(corpus.sentences[src[k]], l, noise_rate, s));
        changed = true;
      }
    }
  }
  if (changed) out.sort_sentences();
  return out;
}

// ---------------------------------------------------------------------------
// Validation

void validate_corpus(const Corpus& corpus, bool require_full_coverage) {
  std::set<std::string> langs(corpus.languages.begin(), corpus.languages.end());
  if (corpus.languages.empty()) throw Error("corpus declares no languages");
  if (langs.size() != corpus.languages.size()) throw Error("duplicate language code");
  for (const auto& h : corpus.human_languages)
    if (langs.count(h) == 0) throw Error("human language " + h + " not in language list");
  if (corpus.vocab_sizes.size() != corpus.languages.size()) {
    throw Error("vocab_sizes must list one size per language");
  }
  if (!corpus.lexicon.empty()) {
    if (corpus.lexicon.size() != corpus.languages.size()) throw Error("lexicon language count mismatch");
    for (std::size_t l = 0; l < corpus.lexicon.size(); ++l)
      if (corpus.lexicon[l].size() != corpus.vocab_sizes[l]) throw Error("lexicon size mismatch");
  }
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    const ImageRecord& img = corpus.images[i];
    if (i > 0 && corpus.images[i - 1].id >= img.id) throw Error("images not sorted by unique id");
    if (img.feature.size() != corpus.feature_dim) {
      throw Error("image " + std::to_string(img.id) + " has feature dim " +
                  std::to_string(img.feature.size()) + ", expected " + std::to_string(corpus.feature_dim));
    }
    for (double v : img.feature)
      if (!std::isfinite(v)) throw Error("image " + std::to_string(img.id) + " has a non-finite feature");
  }
  for (const Sentence& s : corpus.sentences) {
    if (s.lang >= corpus.languages.size()) throw Error("sentence language out of range");
    corpus.image_position(s.image_id);
    if (s.tokens.size() < 3) {
      throw Error("sentence for image " + std::to_string(s.image_id) + " shorter than 3 tokens");
    }
    for (int t : s.tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= corpus.vocab_sizes[s.lang]) {
        throw Error("token " + std::to_string(t) + " invalid for language " + corpus.languages[s.lang]);
      }
    if (!s.concepts.empty() && s.concepts.size() != s.tokens.size()) {
      throw Error("sentence concept list length differs from token count");
    }
  }
  std::set<int> seen;
  for (Split sp : {Split::train, Split::val, Split::test}) {
    for (int id : corpus.splits.get(sp)) {
      corpus.image_position(id);
      if (!seen.insert(id).second) throw Error("image " + std::to_string(id) + " in more than one split");
    }
  }
  if (require_full_coverage) {
    const SentenceCells cells = index_sentences(corpus);
    for (std::size_t pos = 0; pos < cells.size(); ++pos)
      for (std::size_t l = 0; l < corpus.languages.size(); ++l)
        if (cells[pos][l].empty()) {
          throw Error("image " + std::to_string(corpus.images[pos].id) + " has no " +
                      corpus.languages[l] + " sentence");
        }
  }
}

// ---------------------------------------------------------------------------
// JSON-lines IO

void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write corpus: " + path);
  json header = {{"kind", "header"},
                 {"version", 1},
                 {"languages", corpus.languages},
                 {"human_languages", corpus.human_languages},
                 {"feature_dim", corpus.feature_dim},
                 {"vocab_sizes", corpus.vocab_sizes},
                 {"splits",
                  {{"train", corpus.splits.train}, {"val", corpus.splits.val}, {"test", corpus.splits.test}}},
                 {"debug", {{"lexicon", corpus.lexicon}}}};
  os << header.dump() << '\n';
  for (const ImageRecord& img : corpus.images) {
    json j = {{"kind", "image"}, {"id", img.id}, {"feature", img.feature}, {"debug", {{"concepts", img.concepts}}}};
    os << j.dump() << '\n';
  }
  for (const Sentence& s : corpus.sentences) {
    json j = {{"kind", "sentence"},
              {"image_id", s.image_id},
              {"lang", corpus.languages.at(s.lang)},
              {"tokens", s.tokens},
              {"origin", to_string(s.origin)},
              {"debug", {{"concepts", s.concepts}}}};
    os << j.dump() << '\n';
  }
  if (!os) throw Error("failed writing corpus: " + path);
}

namespace {

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) {
    throw Error("corpus line " + std::to_string(line) + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error("corpus line " + std::to_string(line) + ": bad field '" + key + "': " + e.what());
  }
}

std::vector<int> debug_concepts(const json& j, std::size_t line) {
  if (!j.contains("debug")) return {};
  return field<std::vector<int>>(j.at("debug"), "concepts", line);
}

}  // namespace

Corpus read_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read corpus: " + path);
  Corpus corpus;
  bool have_header = false;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw Error("corpus line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw Error("corpus line " + std::to_string(line) + ": expected an object");
    const auto kind = field<std::string>(j, "kind", line);
    if (kind == "header") {
      if (have_header) throw Error("corpus line " + std::to_string(line) + ": duplicate header");
      have_header = true;
      const auto version = field<int>(j, "version", line);
      if (version != 1) throw Error("corpus line " + std::to_string(line) + ": unsupported version");
      corpus.languages = field<std::vector<std::string>>(j, "languages", line);
      corpus.human_languages = field<std::vector<std::string>>(j, "human_languages", line);
      corpus.feature_dim = field<std::size_t>(j, "feature_dim", line);
      corpus.vocab_sizes = field<std::vector<std::size_t>>(j, "vocab_sizes", line);
      const json& sp = j.at("splits");
      corpus.splits.train = field<std::vector<int>>(sp, "train", line);
      corpus.splits.val = field<std::vector<int>>(sp, "val", line);
      corpus.splits.test = field<std::vector<int>>(sp, "test", line);
      if (j.contains("debug") && j.at("debug").contains("lexicon")) {
        corpus.lexicon = field<std::vector<std::vector<int>>>(j.at("debug"), "lexicon", line);
      }
      continue;
    }
    if (!have_header) throw Error("corpus line " + std::to_string(line) + ": header must come first");
    if (kind == "image") {
      ImageRecord img;
      img.id = field<int>(j, "id", line);
      img.feature = field<std::vector<double>>(j, "feature", line);
      img.concepts = debug_concepts(j, line);
      corpus.images.push_back(std::move(img));
    } else if (kind == "sentence") {
      Sentence s;
      s.image_id = field<int>(j, "image_id", line);
      const auto code = field<std::string>(j, "lang", line);
      auto it = std::find(corpus.languages.begin(), corpus.languages.end(), code);
      if (it == corpus.languages.end()) {
        throw Error("corpus line " + std::to_string(line) + ": unknown language '" + code + "'");
      }
      s.lang = static_cast<std::size_t>(it - corpus.languages.begin());
      s.tokens = field<std::vector<int>>(j, "tokens", line);
      const auto origin = field<std::string>(j, "origin", line);
      if (origin == "human") s.origin = Origin::human;
      else if (origin == "mt") s.origin = Origin::translated;
      else throw Error("corpus line " + std::to_string(line) + ": bad origin '" + origin + "'");
      s.concepts = debug_concepts(j, line);
      corpus.sentences.push_back(std::move(s));
    } else {
      throw Error("corpus line " + std::to_string(line) + ": unknown kind '" + kind + "'");
    }
  }
  if (!have_header) throw Error("corpus file has no header: " + path);
  std::stable_sort(corpus.images.begin(), corpus.images.end(),
                   [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
  corpus.sort_sentences();
  validate_corpus(corpus, false);
  return corpus;
}

void write_vectors(const WordVectors& vectors, const Corpus& corpus, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write vectors: " + path);
  char buf[64];
  for (std::size_t l = 0; l < vectors.tables.size(); ++l) {
    const Tensor& t = vectors.tables[l];
    for (std::size_t w = 0; w < t.rows(); ++w) {
      os << corpus.languages.at(l) << '\t' << w;
      for (std::size_t d = 0; d < t.cols(); ++d) {
        std::snprintf(buf, sizeof(buf), "%.17g", t(w, d));
        os << '\t' << buf;
      }
      os << '\n';
    }
  }
  if (!os) throw Error("failed writing vectors: " + path);
}

WordVectors read_vectors(const std::string& path, const Corpus& corpus) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read vectors: " + path);
  std::vector<std::vector<std::vector<double>>> rows(corpus.languages.size());
  for (std::size_t l = 0; l < rows.size(); ++l) rows[l].resize(corpus.vocab_sizes.at(l));
  std::size_t dim = 0;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    if (text.empty()) continue;
    std::istringstream ss(text);
    std::string lang, cell;
    std::getline(ss, lang, '\t');
    std::getline(ss, cell, '\t');
    const std::size_t l = corpus.language_index(lang);
    std::size_t word = 0;
    try {
      word = std::stoul(cell);
    } catch (const std::exception&) {
      throw Error("vectors line " + std::to_string(line) + ": bad word id");
    }
    if (word >= rows[l].size()) throw Error("vectors line " + std::to_string(line) + ": word id out of range");
    std::vector<double> v;
    while (std::getline(ss, cell, '\t')) v.push_back(std::strtod(cell.c_str(), nullptr));
    if (dim == 0) dim = v.size();
    if (v.size() != dim || dim == 0) throw Error("vectors line " + std::to_string(line) + ": inconsistent dimension");
    rows[l][word] = std::move(v);
  }
  WordVectors out;
  for (std::size_t l = 0; l < rows.size(); ++l) {
    Tensor t(rows[l].size(), dim);
    for (std::size_t w = 0; w < rows[l].size(); ++w) {
      if (rows[l][w].size() != dim) {
        throw Error("vectors file lacks " + corpus.languages[l] + " word " + std::to_string(w));
      }
      for (std::size_t d = 0; d < dim; ++d) t(w, d) = rows[l][w][d];
    }
    out.tables.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Minibatches

MinibatchIterator::MinibatchIterator(const Corpus& corpus, Split split, std::size_t batch_size,
                                     std::uint64_t seed, std::vector<std::size_t> languages)
    : corpus_(corpus),
      cells_(index_sentences(corpus)),
      images_(corpus.splits.get(split)),
      languages_(std::move(languages)),
      batch_size_(batch_size),
      rng_(seed) {
  if (batch_size_ < 2) throw Error("batch size must be at least 2");
  if (images_.empty()) throw Error(std::string("split '") + to_string(split) + "' is empty");
  if (images_.size() < batch_size_) {
    throw Error(std::string("split '") + to_string(split) + "' is smaller than one batch");
  }
  if (languages_.empty()) {
    for (std::size_t l = 0; l < corpus.languages.size(); ++l) languages_.push_back(l);
  }
  for (std::size_t i = 0; i < languages_.size(); ++i)
    for (std::size_t j = i + 1; j < languages_.size(); ++j) pairs_.emplace_back(languages_[i], languages_[j]);
  if (pairs_.empty()) pairs_.emplace_back(languages_[0], languages_[0]);
  for (int id : images_) {
    const std::size_t pos = corpus.image_position(id);
    for (std::size_t l : languages_)
      if (cells_[pos].at(l).empty()) {
        throw Error("image " + std::to_string(id) + " lacks " + corpus.languages[l] +
                    " captions; augment the corpus first");
      }
  }
}

void MinibatchIterator::start_epoch() {
  order_ = images_;
  rng_.shuffle(order_);
  cursor_ = 0;
  ++epoch_;
}

Batch MinibatchIterator::next() {
  if (order_.empty() || cursor_ + batch_size_ > order_.size()) start_epoch();
  Batch batch;
  for (std::size_t k = 0; k < batch_size_; ++k) {
    const int id = order_[cursor_++];
    const auto& cell = cells_[corpus_.image_position(id)];
    const auto [a, b] = pairs_[rng_.index(pairs_.size())];
    const auto& ca = cell[a];
    const auto& cb = cell[b];
    BatchItem item;
    item.image_id = id;
    const std::size_t ia = rng_.index(ca.size());
    std::size_t ib = rng_.index(cb.size());
    if (a == b && cb.size() > 1 && ib == ia) ib = (ib + 1) % cb.size();
    item.first = ca[ia];
    item.second = cb[ib];
    batch.push_back(item);
  }
  return batch;
}

std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot hash missing file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes));
}

}  // namespace smalr
