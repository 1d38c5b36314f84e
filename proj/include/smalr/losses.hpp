#ifndef SMALR_LOSSES_HPP_
#define SMALR_LOSSES_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "smalr/graph.hpp"
#include "smalr/rng.hpp"

namespace smalr {

struct LossWeights {
  double lambda1 = 1.5;   // sentence-anchored multimodal direction
  double lambda2 = 1e-4;  // masked cross-language modelling
  double lambda3 = 1e-6;  // adversarial language classifier
  double lambda4 = 5e-2;  // neighbourhood constraints
  double margin = 0.05;
  std::size_t top_n = 10;
  double mask_ratio = 0.2;

  void validate() const;
};

/// max(0, m + d_pos - d_neg).
double triplet_value(double d_pos, double d_neg, double margin);
/// Same hinge on cosine distances, as a graph node.
Var triplet_loss(Graph& g, Var anchor, Var positive, Var negative, double margin);

enum class PairLabel : std::uint8_t { ignore, positive, negative };

/// Anchor x candidate relation matrix.
struct PairLabels {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<PairLabel> data;

  PairLabels() = default;
  PairLabels(std::size_t r, std::size_t c, PairLabel fill = PairLabel::ignore)
      : rows(r), cols(c), data(r * c, fill) {}
  PairLabel& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  PairLabel at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  double violation = 0.0;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Enumerates every (anchor, positive, negative) triplet in (anchor,
/// positive, negative) order and keeps the n largest strictly positive
/// violations; equal violations keep enumeration order. Throws when no
/// triplet can be formed at all.
std::vector<Triplet> mine_hard_negatives(const Tensor& distances, const PairLabels& labels,
                                         double margin, std::size_t n);

/// Sum of the mined triplet hinges over cosine distances between rows of
/// `anchors` and rows of `candidates`.
Var mined_triplet_loss(Graph& g, Var anchors, Var candidates, const PairLabels& labels, double margin,
                       std::size_t n, std::vector<Triplet>* selected = nullptr);
Var mined_triplet_loss(Graph& g, std::span<const Var> anchors, std::span<const Var> candidates,
                       const PairLabels& labels, double margin, std::size_t n,
                       std::vector<Triplet>* selected = nullptr);

/// Bidirectional image/sentence triplet loss: image-anchored plus lambda1
/// times sentence-anchored. sentence_image[s] indexes into `images`.
Var multimodal_loss(Graph& g, Var images, Var sentences, std::span<const std::size_t> sentence_image,
                    double lambda1, double margin, std::size_t n);
Var multimodal_loss(Graph& g, std::span<const Var> images, std::span<const Var> sentences,
                    std::span<const std::size_t> sentence_image, double lambda1, double margin,
                    std::size_t n);

/// Sentence-sentence triplets; sentences sharing a group id are positives.
Var neighborhood_loss(Graph& g, Var sentences, std::span<const std::size_t> group, double margin,
                      std::size_t n);
Var neighborhood_loss(Graph& g, std::span<const Var> sentences, std::span<const std::size_t> group,
                      double margin, std::size_t n);

// --- masking ---------------------------------------------------------------

enum class MaskVariant { average, sequence };

/// round(ratio * len) clamped to [1, len - 1]. Throws for len < 2.
std::size_t masked_count(std::size_t length, double ratio);
/// Sorted distinct masked positions.
std::vector<std::size_t> choose_mask(std::size_t length, double ratio, Rng& rng);
/// Mean of the unmasked token rows.
Var masked_average(Graph& g, std::span<const Var> tokens, std::span<const std::size_t> masked);
/// Token sequence with masked positions replaced by `mask_token`.
std::vector<Var> substitute_mask(std::span<const Var> tokens, std::span<const std::size_t> masked,
                                 Var mask_token);

struct AffineWeights {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
};

Var affine(Graph& g, const AffineWeights& w, Var x);

/// ||l2(masked_i + pred_i) - l2(full_i)|| + ||l2(masked_j + pred_j) - l2(full_j)||,
/// summed over rows when the arguments hold one pair per row.
Var mclm_reconstruction_loss(Graph& g, Var full_i, Var masked_i, Var pred_i, Var full_j,
                             Var masked_j, Var pred_j);

/// Predicts (pred_i, pred_j) from concat(masked_i, masked_j) with one shared
/// affine layer and scores the reconstruction.
Var mclm_loss(Graph& g, Var full_i, Var masked_i, Var full_j, Var masked_j,
              const AffineWeights& predictor);

/// Two-layer relu classifier from sentence representations to language logits.
struct LanguageClassifier {
  AffineWeights hidden;
  AffineWeights output;

  Var logits(Graph& g, Var reps) const;
};

/// Cross-entropy of the classifier on `reps` (one row per sentence). The
/// reps pass through a gradient-reversal node first, so the classifier
/// minimises the loss while upstream parameters maximise it.
Var adversarial_loss(Graph& g, Var reps, std::span<const std::size_t> labels,
                     const LanguageClassifier& classifier);

struct LossTerms {
  Var multimodal;
  Var mask;
  Var adversarial;
  Var neighborhood;
};

struct LossBreakdown {
  double multimodal = 0.0;
  double mask = 0.0;
  double adversarial = 0.0;
  double neighborhood = 0.0;
  double total = 0.0;
};

/// L_mm + lambda2 L_mask + lambda3 L_adv + lambda4 L_nc.
Var total_loss(Graph& g, const LossTerms& terms, const LossWeights& w, LossBreakdown* breakdown = nullptr);

}  // namespace smalr

#endif  // SMALR_LOSSES_HPP_
