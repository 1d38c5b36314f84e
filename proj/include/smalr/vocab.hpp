#ifndef SMALR_VOCAB_HPP_
#define SMALR_VOCAB_HPP_

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "smalr/corpus.hpp"

namespace smalr {

/// Training-split token counts. freq[lang][word] covers the full vocabulary;
/// words with count zero are not part of the observed vocabulary.
struct VocabStats {
  std::vector<std::vector<std::size_t>> freq;
  std::vector<std::size_t> total_tokens;

  std::size_t num_languages() const { return freq.size(); }
  /// Number of word types seen at least once.
  std::size_t types(std::size_t lang) const;
  /// Observed words and their counts.
  std::map<int, std::size_t> observed(std::size_t lang) const;
};

VocabStats count_frequencies(const Corpus& corpus, Split split = Split::train);

/// Top-K most frequent words per language keep language-specific
/// embeddings; the rest go through the shared latent vocabulary.
struct VocabSplit {
  std::size_t k = 0;
  std::vector<std::vector<int>> specific;  // by descending frequency
  std::vector<std::vector<int>> agnostic;  // ascending id
  std::vector<std::vector<char>> is_specific;

  bool specific_word(std::size_t lang, int word) const {
    return is_specific.at(lang).at(static_cast<std::size_t>(word)) != 0;
  }
};

/// Ties at the boundary go to the lower word id.
VocabSplit split_top_k(const VocabStats& stats, std::size_t k);

/// Where a word is embedded after a vocabulary reduction: a row of the
/// reduced table of language `lang` (possibly another language's table).
struct ReducedTarget {
  std::size_t lang = 0;
  std::size_t row = 0;
  friend bool operator==(const ReducedTarget&, const ReducedTarget&) = default;
};

/// Reduced per-language vocabularies. Every language has a trailing UNK
/// row; unseen words and dropped words map to it.
struct VocabReduction {
  std::string method;
  std::vector<std::vector<ReducedTarget>> target;  // [lang][word]
  std::vector<std::vector<int>> row_word;          // [lang][row], -1 = UNK

  std::size_t unk_row(std::size_t lang) const { return row_word.at(lang).size() - 1; }
  /// Total number of embedding rows across languages.
  std::size_t vocab_size() const;
};

/// Keeps observed words with count >= t, per language.
VocabReduction frequency_threshold(const VocabStats& stats, std::size_t t);

/// Bilingual lexicon into a pivot language: entries[lang][src_word] = pivot word.
struct Dictionary {
  std::size_t pivot = 0;
  std::vector<std::map<int, int>> entries;
};

/// Non-pivot words with count < t are embedded as their pivot translation
/// when the dictionary has one and the pivot word is observed; otherwise UNK.
/// The pivot language is left untouched.
VocabReduction dictionary_map(const VocabStats& stats, std::size_t t, const Dictionary& dictionary);

/// Exact dictionary from the generator's shared concept ids: each word maps
/// to the most frequent pivot word of the same concept (ties: lower id).
Dictionary dictionary_from_lexicon(const Corpus& corpus, const VocabStats& stats, std::size_t pivot);

void write_dictionary(const Dictionary& dict, const Corpus& corpus, const std::string& path);
Dictionary read_dictionary(const std::string& path, const Corpus& corpus, std::size_t pivot);

struct ReductionRow {
  std::string method;
  std::string setting;
  std::size_t vocab_size = 0;
  std::size_t trainable_params = 0;
};

void write_reduction_report(const std::vector<ReductionRow>& rows, const std::string& path);

}  // namespace smalr

#endif  // SMALR_VOCAB_HPP_
