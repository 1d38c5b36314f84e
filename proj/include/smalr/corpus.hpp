#ifndef SMALR_CORPUS_HPP_
#define SMALR_CORPUS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "smalr/rng.hpp"
#include "smalr/tensor.hpp"

namespace smalr {

enum class Origin { human, translated };
enum class Split { train, val, test };

const char* to_string(Origin o);
const char* to_string(Split s);
Split parse_split(const std::string& s);

struct ImageRecord {
  int id = 0;
  std::vector<double> feature;
  /// Generator ground truth. Only verification code may read this.
  std::vector<int> concepts;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Sentence {
  int image_id = 0;
  std::size_t lang = 0;  // index into Corpus::languages
  std::vector<int> tokens;
  Origin origin = Origin::human;
  /// Per-token generator ground truth.
  std::vector<int> concepts;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct Splits {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  const std::vector<int>& get(Split s) const;
  friend bool operator==(const Splits&, const Splits&) = default;
};

/// Images, their multilingual captions and the train/val/test partition.
/// Images are kept sorted by id; sentences by (image_id, lang) with stable
/// insertion order inside a cell.
struct Corpus {
  std::vector<std::string> languages;
  std::vector<std::string> human_languages;
  std::size_t feature_dim = 0;
  std::vector<std::size_t> vocab_sizes;
  /// lexicon[lang][word] = concept id. Debug data, like the concept lists.
  std::vector<std::vector<int>> lexicon;
  std::vector<ImageRecord> images;
  std::vector<Sentence> sentences;
  Splits splits;

  std::size_t language_index(const std::string& code) const;
  bool is_human(std::size_t lang) const;
  /// Position of an image in `images`; throws for unknown ids.
  std::size_t image_position(int image_id) const;
  void sort_sentences();

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// sentences_by_cell[image_position][lang] -> sentence indices.
using SentenceCells = std::vector<std::vector<std::vector<std::size_t>>>;
SentenceCells index_sentences(const Corpus& corpus);

/// Per-language "pretrained" word vectors, row = word id.
struct WordVectors {
  std::vector<Tensor> tables;

  std::size_t dim() const { return tables.empty() ? 0 : tables.front().cols(); }
  friend bool operator==(const WordVectors&, const WordVectors&) = default;
};

struct SyntheticConfig {
  std::size_t num_images = 200;
  std::size_t num_languages = 4;
  /// Languages [0, human_languages) get generated captions; the rest are
  /// empty until augment_to_full_coverage fills them with translations.
  std::size_t human_languages = 3;
  std::size_t concepts = 60;
  std::size_t vocab_per_lang = 300;
  double synonym_rate = 0.8;
  std::size_t min_len = 4;
  std::size_t max_len = 8;
  std::size_t sentences_per_image = 2;
  std::size_t concepts_per_image = 3;
  std::size_t feature_dim = 128;
  std::size_t concept_dim = 16;
  std::size_t pretrained_dim = 32;
  double zipf_exponent = 1.1;
  double language_offset = 0.3;
  double word_noise = 0.25;
  double feature_noise = 0.1;
  double train_fraction = 0.6;
  double val_fraction = 0.15;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  Corpus corpus;
  WordVectors vectors;
};

/// Deterministic synthetic multilingual captioning corpus plus word vectors in
/// which same-concept words of different languages are close.
SyntheticData generate_synthetic(const SyntheticConfig& config);

/// Simulated machine translation driven by the corpus lexicon.
class Translator {
 public:
  explicit Translator(const Corpus& corpus);

  std::size_t num_languages() const { return words_by_concept_.size(); }
  /// Concept of a word, or -1 for unknown words.
  int concept_of(std::size_t lang, int word) const;
  const std::vector<int>& realizations(std::size_t lang, int concept_id) const;

  /// Word-by-word translation. Each token becomes a same-concept word of
  /// the target language; with probability noise_rate the concept is first
  /// swapped for a different random one.
  Sentence translate(const Sentence& s, std::size_t target, double noise_rate,
                     std::uint64_t seed) const;

 private:
  std::vector<std::vector<int>> lexicon_;
  // [lang][concept] -> words, for concepts < max_concept_
  std::vector<std::vector<std::vector<int>>> words_by_concept_;
  std::vector<std::vector<int>> realizable_;  // [lang] -> concepts with words
};

Sentence simulate_translation(const Translator& translator, const Sentence& sentence,
                              std::size_t target_language, double noise_rate, std::uint64_t seed);

/// Fills every empty (image, language) cell with translations of the
/// sentences of the first language (in corpus order) that has any.
Corpus augment_to_full_coverage(const Corpus& corpus, const Translator& translator,
                                double noise_rate, std::uint64_t seed);

/// Throws Error describing the first invariant violation found.
void validate_corpus(const Corpus& corpus, bool require_full_coverage);

void write_corpus(const Corpus& corpus, const std::string& path);
Corpus read_corpus(const std::string& path);

void write_vectors(const WordVectors& vectors, const Corpus& corpus, const std::string& path);
WordVectors read_vectors(const std::string& path, const Corpus& corpus);

/// One positive pair: two captions of the same image, possibly in
/// different languages. Indices are into Corpus::sentences.
struct BatchItem {
  int image_id = 0;
  std::size_t first = 0;
  std::size_t second = 0;
};
using Batch = std::vector<BatchItem>;

/// Seeded infinite stream of minibatches over one split. Every epoch visits
/// each image once (drop-last); each item draws an unordered language pair
/// uniformly and one caption per language.
class MinibatchIterator {
 public:
  MinibatchIterator(const Corpus& corpus, Split split, std::size_t batch_size,
                    std::uint64_t seed, std::vector<std::size_t> languages = {});

  Batch next();
  std::size_t batches_per_epoch() const { return images_.size() / batch_size_; }
  std::size_t epoch() const { return epoch_; }

 private:
  void start_epoch();

  const Corpus& corpus_;
  SentenceCells cells_;
  std::vector<int> images_;
  std::vector<std::size_t> languages_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

std::string file_hash(const std::string& path);

}  // namespace smalr

#endif  // SMALR_CORPUS_HPP_
