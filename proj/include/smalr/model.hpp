#ifndef SMALR_MODEL_HPP_
#define SMALR_MODEL_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "smalr/corpus.hpp"
#include "smalr/graph.hpp"
#include "smalr/hem.hpp"
#include "smalr/losses.hpp"
#include "smalr/metrics.hpp"

namespace smalr {

struct NetDims {
  std::size_t image_dim = 128;
  std::size_t universal_dim = 64;
  std::size_t joint_dim = 96;
  std::size_t adversary_hidden = 64;
};

struct ImageBranch {
  AffineWeights fc1;  // image_dim x 2*joint_dim, relu
  AffineWeights fc2;  // 2*joint_dim x joint_dim
};

struct LanguageBranch {
  GruWeights gru;  // universal_dim -> joint_dim hidden
  AffineWeights fc;
};

/// Two-branch embedding network over a hybrid embedder, plus the auxiliary
/// heads used only by the training losses.
class SmalrModel {
 public:
  /// Takes ownership of `store`, which already holds the embedder's
  /// parameters. Missing network parameters are created from `seed`;
  /// existing ones (a restored store) are reused.
  SmalrModel(ParameterStore store, HybridEmbedder embedder, std::vector<std::string> languages,
             NetDims dims, std::uint64_t seed);

  SmalrModel(SmalrModel&&) = default;

  using TokenSequence = HybridEmbedder::TokenSequence;
  /// Positions of every sequence inside a stacked token matrix.
  struct Layout {
    std::vector<std::size_t> offset;
    std::vector<std::size_t> length;
  };
  static Layout layout(std::span<const TokenSequence> sequences);

  /// Unit-norm joint vectors of image features, one row each.
  Var embed_images(Graph& g, const Tensor& features) const;
  Var embed_image(Graph& g, std::span<const double> feature) const;
  /// Mean universal token embedding of every sequence; positions listed in
  /// `masked[s]` are left out.
  Var universal_reps(Graph& g, Var tokens, const Layout& layout,
                     const std::vector<std::vector<std::size_t>>* masked = nullptr) const;
  /// Final recurrent state of every sequence through the output layer;
  /// positions listed in `masked[s]` read the learned mask token instead.
  Var final_reps(Graph& g, Var tokens, const Layout& layout,
                 const std::vector<std::vector<std::size_t>>* masked = nullptr) const;
  /// Unit-norm joint vectors of tokenised sentences, one row each.
  Var embed_queries(Graph& g, std::span<const TokenSequence> sequences) const;
  Var embed_query(Graph& g, std::size_t lang, std::span<const int> tokens) const;

  std::vector<double> image_vector(std::span<const double> feature) const;
  std::vector<double> query_vector(std::size_t lang, std::span<const int> tokens) const;

  /// Every loss term of one batch of paired captions.
  LossTerms batch_terms(Graph& g, const Corpus& corpus, const Batch& batch, const LossWeights& w,
                        Rng& rng) const;

  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const HybridEmbedder& embedder() const { return embedder_; }
  const std::vector<std::string>& languages() const { return languages_; }
  const NetDims& dims() const { return dims_; }
  std::vector<Parameter*> trainable_parameters();

 private:
  ParameterStore store_;
  HybridEmbedder embedder_;
  std::vector<std::string> languages_;
  NetDims dims_;
  ImageBranch image_;
  LanguageBranch text_;
  Parameter* mask_token_ = nullptr;
  AffineWeights mclm_average_;
  AffineWeights mclm_sequence_;
  LanguageClassifier adversary_;
};

/// Similarity in the joint space: the dot product of unit vectors.
double score(std::span<const double> image, std::span<const double> query);

/// One caption to score against a split's images.
struct Query {
  std::size_t lang = 0;
  std::vector<int> tokens;
  std::size_t image_row = 0;
};

/// Images of `split` in id order.
std::vector<int> split_images(const Corpus& corpus, Split split);
/// Unit joint vectors of the split's images, one row each.
Tensor image_matrix(const SmalrModel& model, const Corpus& corpus, std::span<const int> image_ids);
/// Captions of `lang` on the split's images (rows index `image_ids`).
std::vector<Query> language_queries(const Corpus& corpus, std::span<const int> image_ids, std::size_t lang);
ScoreMatrix score_queries(const SmalrModel& model, const Tensor& images, std::span<const Query> queries);

/// Captions of the training split in `languages` (all when empty) divided
/// by the two captions each batch item contributes, rounded up.
std::size_t caption_steps_per_epoch(const Corpus& corpus, std::span<const std::size_t> languages,
                                    std::size_t batch_size);

struct TrainConfig {
  LossWeights weights;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  /// 0 means one pass over the training captions per epoch.
  std::size_t steps_per_epoch = 0;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  /// Training languages; empty means all.
  std::vector<std::size_t> languages;
  /// Keep the parameters with the best mean validation mR.
  bool select_best = true;

  void validate() const;
};

struct TrainResult {
  std::vector<LossBreakdown> steps;
  std::vector<double> val_mr;  // per epoch
  std::size_t best_epoch = 0;
};

/// Adam on the total loss. `train_log` / `val_log` paths may be empty.
TrainResult train_model(SmalrModel& model, const Corpus& corpus, const TrainConfig& config,
                        const std::string& train_log = "", const std::string& val_log = "");

/// Mean over languages of direct-mode mR on `split`.
double mean_split_mr(const SmalrModel& model, const Corpus& corpus, Split split,
                     std::span<const std::size_t> languages = {});

/// model.ckpt, routes.tsv, assign.tsv and model.json inside `dir`.
void save_model(const SmalrModel& model, const std::string& dir);
SmalrModel load_model(const std::string& dir);

}  // namespace smalr

#endif  // SMALR_MODEL_HPP_
