#ifndef SMALR_CLC_HPP_
#define SMALR_CLC_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smalr/corpus.hpp"
#include "smalr/graph.hpp"
#include "smalr/losses.hpp"
#include "smalr/metrics.hpp"
#include "smalr/model.hpp"

namespace smalr {

/// Per-language scores of every (image, query) pair. per_language[l] holds
/// the scores of the queries translated into language l; a query's own
/// language slot uses the untranslated query.
struct LanguageScores {
  std::vector<Tensor> per_language;
  std::vector<std::size_t> sentence_image;

  std::size_t languages() const { return per_language.size(); }
  std::size_t images() const;
  std::size_t sentences() const { return sentence_image.size(); }
  std::vector<double> vector_at(std::size_t image, std::size_t sentence) const;
  /// Plain score matrix of one language slot.
  ScoreMatrix slot(std::size_t lang) const;
};

struct TranslationConfig {
  double noise_rate = 0.1;
  std::uint64_t seed = 1;
};

/// Translation of query `q` (position `index` in its list) into `target`;
/// the query itself when the target is its own language.
std::vector<int> translate_query(const Translator& translator, const Query& q, std::size_t index,
                                 std::size_t target, const TranslationConfig& config);

LanguageScores build_score_vectors(const SmalrModel& model, const Tensor& images, std::span<const Query> queries,
                                   const Translator& translator, const TranslationConfig& config);

double clc_average(std::span<const double> scores);
ScoreMatrix fuse_average(const LanguageScores& scores);

/// layer1: |L| -> 32 affine with relu, followed by an unweighted sum of the
/// hidden units, or by a learnable 32 -> 1 layer when `trainable_output`.
class ClcClassifier {
 public:
  static constexpr std::size_t kHidden = 32;

  ClcClassifier(std::size_t languages, std::uint64_t seed, bool trainable_output = false);

  std::size_t languages() const { return languages_; }
  bool trainable_output() const { return trainable_output_; }
  std::size_t parameter_count() const { return store_.trainable_count(); }

  double fuse(std::span<const double> scores) const;
  /// Fused score of every row of `vectors` (n x |L|), as an n x 1 node.
  Var fuse(Graph& g, Var vectors);
  ScoreMatrix fuse_all(const LanguageScores& scores) const;

  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

 private:
  std::size_t languages_;
  bool trainable_output_;
  ParameterStore store_;
};

struct ClcTrainConfig {
  std::size_t iterations = 30;
  double learning_rate = 1e-2;
  double lambda1 = 1.5;
  double margin = 0.05;
  std::size_t top_n = 10;
};

/// Bidirectional mined triplet hinge on a score matrix, where a larger
/// score means closer. `scores` is the images x sentences matrix flattened
/// row-major into an (images * sentences) x 1 node.
Var score_triplet_loss(Graph& g, Var scores, std::size_t images, std::span<const std::size_t> sentence_image,
                       double lambda1, double margin, std::size_t n);

/// Loss of the classifier over every set of validation scores.
double clc_loss(ClcClassifier& classifier, std::span<const LanguageScores> validation, const ClcTrainConfig& config);

/// Full-batch Adam over all validation pairs at once; returns the loss
/// before each update followed by the final loss.
std::vector<double> train_clc(ClcClassifier& classifier, std::span<const LanguageScores> validation,
                              const ClcTrainConfig& config);

void write_clc(const ClcClassifier& classifier, const std::string& path);
ClcClassifier read_clc(const std::string& path);

}  // namespace smalr

#endif  // SMALR_CLC_HPP_
