#ifndef SMALR_HEM_HPP_
#define SMALR_HEM_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smalr/corpus.hpp"
#include "smalr/graph.hpp"
#include "smalr/rng.hpp"
#include "smalr/vocab.hpp"

namespace smalr {

struct ExplorationConfig {
  double p = 0.2;
  std::size_t m = 20;

  void validate() const;
};

/// Latent row indices by descending cosine similarity to `query`; equal
/// similarities rank the lower index first. Throws for a zero query.
std::vector<std::size_t> score_latent_tokens(std::span<const double> query, const Tensor& latent);

/// Argmax (ranking[0]) unless exploring; with probability p the token is
/// drawn uniformly from the top M instead.
std::size_t assign_token(std::span<const std::size_t> ranking, const ExplorationConfig* explore, Rng& rng);

/// (language, word) -> latent row for every language-agnostic word; -1 for
/// language-specific words.
struct AssignmentMap {
  std::vector<std::vector<int>> token;
  bool frozen = false;

  int at(std::size_t lang, int word) const;
  void set(std::size_t lang, int word, int row);
  /// Number of words assigned to each row.
  std::vector<std::size_t> usage(std::size_t rows) const;
  /// Every agnostic word has a row and every specific word has none.
  bool total_over(const VocabSplit& split) const;
  friend bool operator==(const AssignmentMap&, const AssignmentMap&) = default;
};

struct PrunedLatent {
  Tensor table;
  AssignmentMap map;
};

/// Drops rows no word is assigned to and rewrites the map; surviving rows
/// keep their relative order. Requires a frozen map.
PrunedLatent prune_unused(const Tensor& latent, const AssignmentMap& map);

void write_latent(const Tensor& latent, const std::string& path);
Tensor read_latent(const std::string& path);
void write_assignments(const AssignmentMap& map, std::span<const std::string> languages,
                       const std::string& path);
/// The result is frozen; words absent from the file are specific (-1).
AssignmentMap read_assignments(const std::string& path, std::span<const std::string> languages,
                               std::span<const std::size_t> vocab_sizes);

struct PretrainConfig {
  std::size_t latent_size = 200;
  std::size_t universal_dim = 64;
  double margin = 0.05;
  std::size_t top_n = 10;
  bool explore = true;
  ExplorationConfig exploration;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Glorot-uniform weights; every language's projection starts from the same
/// draw so synonyms with similar pretrained vectors project alike.
Tensor init_projection(std::size_t in, std::size_t out, Rng& rng);

struct PretrainResult {
  Tensor latent;
  AssignmentMap map;
  std::vector<Tensor> fc_weight;
  std::vector<Tensor> fc_bias;
  std::vector<double> epoch_loss;
};

/// Learns the latent vocabulary, the per-language projections and the
/// hard assignment of agnostic words with in-batch triplet ranking between
/// paired sentences (any two languages are positives when they describe the
/// same image). Assignments are recomputed once per epoch with exploration
/// and frozen at the end with argmax.
class LatentPretrainer {
 public:
  LatentPretrainer(const Corpus& corpus, const WordVectors& reduced, const VocabSplit& split,
                   PretrainConfig config, std::vector<std::size_t> languages = {});

  /// Mean over tokens of projected pretrained vectors; agnostic tokens use
  /// their currently assigned latent row.
  Var sentence_rep(Graph& g, std::size_t lang, std::span<const int> tokens);
  /// FC projection of one word's pretrained vector, outside any graph.
  std::vector<double> projected(std::size_t lang, int word) const;
  void reassign(bool explore);
  /// One pass over the training split; returns the mean batch loss.
  double train_epoch();
  PretrainResult finish();

  const AssignmentMap& assignments() const { return map_; }
  ParameterStore& store() { return store_; }

 private:
  const Corpus& corpus_;
  const WordVectors& reduced_;
  const VocabSplit& split_;
  PretrainConfig config_;
  ParameterStore store_;
  std::vector<Parameter*> fc_w_;
  std::vector<Parameter*> fc_b_;
  Parameter* latent_ = nullptr;
  AssignmentMap map_;
  Rng rng_;
  Adam adam_;
  MinibatchIterator batches_;
  std::vector<double> losses_;
};

PretrainResult pretrain_latent(const Corpus& corpus, const WordVectors& reduced,
                               const VocabSplit& split, const PretrainConfig& config,
                               std::vector<std::size_t> languages = {});

/// How often cross-language pairs of agnostic words share a latent row:
/// same-concept pairs against all pairs. Concepts come from the corpus
/// lexicon.
struct SharingRates {
  double synonym = 0.0;
  double random = 0.0;
  std::size_t synonym_pairs = 0;
  double ratio() const { return random > 0.0 ? synonym / random : 0.0; }
};
SharingRates latent_sharing(const AssignmentMap& map, const VocabSplit& split, const Corpus& corpus);

/// How one (language, word) is embedded.
struct TokenRoute {
  enum Kind : std::uint8_t { projected, latent };
  Kind kind = projected;
  std::uint32_t table_lang = 0;  // projected: table and projection of this language
  std::uint32_t row = 0;
};

/// Maps tokens to universal-dimension vectors. Specific words pass a word
/// vector through their language's projection; agnostic words read their
/// latent row. Reduced-vocabulary baselines use the projected path with
/// trainable word tables.
class HybridEmbedder {
 public:
  /// HEM from pretraining output. With `trainable_word_vectors` the specific
  /// words get free per-word tables (initialised from the pretrained vectors)
  /// instead of frozen ones.
  static HybridEmbedder hem(ParameterStore& store, std::span<const std::string> languages,
                            const WordVectors& reduced, const VocabSplit& split,
                            const PrunedLatent& latent, std::span<const Tensor> fc_weight,
                            std::span<const Tensor> fc_bias, bool trainable_word_vectors = false);

  /// Baseline over a reduced vocabulary: every kept row (and each language's
  /// UNK) is a trainable word vector fed through the language projection.
  static HybridEmbedder reduced_vocab(ParameterStore& store, std::span<const std::string> languages,
                                      const WordVectors& reduced, const VocabReduction& reduction,
                                      std::size_t universal_dim, Rng& rng);

  /// Rebinds to embedder parameters already present in `store` (named as
  /// the factories name them) using saved routes.
  static HybridEmbedder restore(ParameterStore& store, std::span<const std::string> languages,
                                std::vector<std::vector<TokenRoute>> routes, AssignmentMap map,
                                std::size_t universal_dim);

  Var embed_token(Graph& g, std::size_t lang, int word) const;
  std::vector<Var> embed_tokens(Graph& g, std::size_t lang, std::span<const int> tokens) const;
  std::vector<double> token_vector(std::size_t lang, int word) const;

  struct TokenSequence {
    std::size_t lang = 0;
    std::span<const int> tokens;
  };
  /// Every token of every sequence, stacked in order into one matrix.
  Var embed_stacked(Graph& g, std::span<const TokenSequence> sequences) const;

  const TokenRoute& route(std::size_t lang, int word) const;
  std::size_t universal_dim() const { return universal_dim_; }
  std::size_t num_languages() const { return routes_.size(); }
  std::size_t latent_rows() const { return latent_ == nullptr ? 0 : latent_->value.rows(); }
  /// Trainable floats owned by the embedder.
  std::size_t parameter_count() const;
  const AssignmentMap& assignments() const { return map_; }
  const std::vector<std::vector<TokenRoute>>& routes() const { return routes_; }

 private:
  void count_parameters();

  std::size_t universal_dim_ = 0;
  std::vector<std::vector<TokenRoute>> routes_;
  std::vector<Parameter*> table_;  // per language, may be null
  std::vector<Parameter*> fc_w_;
  std::vector<Parameter*> fc_b_;
  Parameter* latent_ = nullptr;
  AssignmentMap map_;
  std::size_t count_ = 0;
};

void write_routes(const HybridEmbedder& embedder, std::span<const std::string> languages,
                  const std::string& path);
std::vector<std::vector<TokenRoute>> read_routes(const std::string& path,
                                                 std::span<const std::string> languages,
                                                 std::span<const std::size_t> vocab_sizes);

/// Floats in one free D_u table per word of every language.
std::size_t per_word_parameter_count(std::span<const std::size_t> vocab_sizes, std::size_t universal_dim);

}  // namespace smalr

#endif  // SMALR_HEM_HPP_
