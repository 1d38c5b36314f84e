#include "smalr/losses.hpp"

#include <algorithm>
#include <cmath>

namespace smalr {

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0 || margin < 0) {
    throw Error("loss weights and margin must be non-negative");
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw Error("mask_ratio must lie in (0, 1)");
}

double triplet_value(double d_pos, double d_neg, double margin) {
  return std::max(0.0, margin + d_pos - d_neg);
}

Var triplet_loss(Graph& g, Var anchor, Var positive, Var negative, double margin) {
  Var dp = g.cosine_distance(anchor, positive);
  Var dn = g.cosine_distance(anchor, negative);
  return g.relu(g.add_scalar(g.sub(dp, dn), margin));
}

std::vector<Triplet> mine_hard_negatives(const Tensor& distances, const PairLabels& labels,
                                         double margin, std::size_t n) {
  if (distances.rows() != labels.rows || distances.cols() != labels.cols) {
    throw ShapeError("mining: distance and label shapes differ");
  }
  std::vector<Triplet> all;
  bool formable = false;
  for (std::size_t a = 0; a < labels.rows; ++a) {
    for (std::size_t p = 0; p < labels.cols; ++p) {
      if (labels.at(a, p) != PairLabel::positive) continue;
      for (std::size_t q = 0; q < labels.cols; ++q) {
        if (labels.at(a, q) != PairLabel::negative) continue;
        formable = true;
        const double v = margin + distances(a, p) - distances(a, q);
        if (v > 0.0) all.push_back({a, p, q, v});
      }
    }
  }
  if (!formable) throw Error("hard-negative mining: no valid negative in batch");
  std::stable_sort(all.begin(), all.end(),
                   [](const Triplet& x, const Triplet& y) { return x.violation > y.violation; });
  if (all.size() > n) all.resize(n);
  return all;
}

Var mined_triplet_loss(Graph& g, Var anchors, Var candidates, const PairLabels& labels, double margin,
                       std::size_t n, std::vector<Triplet>* selected) {
  const Tensor& av = g.value(anchors);
  const Tensor& cv = g.value(candidates);
  if (av.rows() != labels.rows || cv.rows() != labels.cols) throw ShapeError("mining: label matrix does not match batch");
  Tensor dist(av.rows(), cv.rows());
  for (std::size_t a = 0; a < av.rows(); ++a)
    for (std::size_t c = 0; c < cv.rows(); ++c)
      if (labels.at(a, c) != PairLabel::ignore) dist(a, c) = cosine_distance(av.row_span(a), cv.row_span(c));
  std::vector<Triplet> mined = mine_hard_negatives(dist, labels, margin, n);
  Var total;
  if (mined.empty()) {
    total = g.constant(Tensor::scalar(0.0), "zero");
  } else {
    std::vector<std::size_t> ai, pi, ni;
    for (const Triplet& t : mined) {
      ai.push_back(t.anchor);
      pi.push_back(t.positive);
      ni.push_back(t.negative);
    }
    Var x = g.gather_rows(anchors, ai);
    Var dp = g.row_cosine_distance(x, g.gather_rows(candidates, pi));
    Var dn = g.row_cosine_distance(x, g.gather_rows(candidates, ni));
    total = g.sum(g.relu(g.add_scalar(g.sub(dp, dn), margin)));
  }
  if (selected != nullptr) *selected = std::move(mined);
  return total;
}

Var mined_triplet_loss(Graph& g, std::span<const Var> anchors, std::span<const Var> candidates,
                       const PairLabels& labels, double margin, std::size_t n,
                       std::vector<Triplet>* selected) {
  if (anchors.empty() || candidates.empty()) throw Error("mining: empty batch");
  return mined_triplet_loss(g, g.concat_rows(anchors), g.concat_rows(candidates), labels, margin, n, selected);
}

Var multimodal_loss(Graph& g, Var images, Var sentences, std::span<const std::size_t> sentence_image,
                    double lambda1, double margin, std::size_t n) {
  const std::size_t ni = g.value(images).rows(), ns = g.value(sentences).rows();
  if (sentence_image.size() != ns) throw ShapeError("multimodal: one image index per sentence");
  PairLabels img(ni, ns);
  PairLabels sen(ns, ni);
  for (std::size_t s = 0; s < ns; ++s) {
    if (sentence_image[s] >= ni) throw Error("multimodal: image index out of range");
    for (std::size_t i = 0; i < ni; ++i) {
      const PairLabel lab = sentence_image[s] == i ? PairLabel::positive : PairLabel::negative;
      img.at(i, s) = lab;
      sen.at(s, i) = lab;
    }
  }
  Var a = mined_triplet_loss(g, images, sentences, img, margin, n);
  if (lambda1 == 0.0) return a;
  Var b = mined_triplet_loss(g, sentences, images, sen, margin, n);
  return g.add(a, g.scale(b, lambda1));
}

Var multimodal_loss(Graph& g, std::span<const Var> images, std::span<const Var> sentences,
                    std::span<const std::size_t> sentence_image, double lambda1, double margin,
                    std::size_t n) {
  return multimodal_loss(g, g.concat_rows(images), g.concat_rows(sentences), sentence_image, lambda1, margin, n);
}

Var neighborhood_loss(Graph& g, Var sentences, std::span<const std::size_t> group, double margin, std::size_t n) {
  const std::size_t ns = g.value(sentences).rows();
  if (group.size() != ns) throw ShapeError("neighborhood: one group id per sentence");
  PairLabels labels(ns, ns);
  for (std::size_t a = 0; a < ns; ++a)
    for (std::size_t c = 0; c < ns; ++c) {
      if (a == c) continue;
      labels.at(a, c) = group[a] == group[c] ? PairLabel::positive : PairLabel::negative;
    }
  return mined_triplet_loss(g, sentences, sentences, labels, margin, n);
}

Var neighborhood_loss(Graph& g, std::span<const Var> sentences, std::span<const std::size_t> group,
                      double margin, std::size_t n) {
  return neighborhood_loss(g, g.concat_rows(sentences), group, margin, n);
}

std::size_t masked_count(std::size_t length, double ratio) {
  if (length < 2) throw Error("cannot mask a sentence shorter than 2 tokens");
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(length)));
  return std::clamp<std::size_t>(k, 1, length - 1);
}

std::vector<std::size_t> choose_mask(std::size_t length, double ratio, Rng& rng) {
  const std::size_t k = masked_count(length, ratio);
  std::vector<std::size_t> pos(length);
  for (std::size_t i = 0; i < length; ++i) pos[i] = i;
  rng.shuffle(pos);
  pos.resize(k);
  std::sort(pos.begin(), pos.end());
  return pos;
}

Var masked_average(Graph& g, std::span<const Var> tokens, std::span<const std::size_t> masked) {
  std::vector<Var> keep;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (std::find(masked.begin(), masked.end(), i) == masked.end()) keep.push_back(tokens[i]);
  if (keep.empty()) throw Error("mask removes every token");
  return g.mean(g.concat_rows(keep), 0);
}

std::vector<Var> substitute_mask(std::span<const Var> tokens, std::span<const std::size_t> masked,
                                 Var mask_token) {
  std::vector<Var> out(tokens.begin(), tokens.end());
  for (std::size_t i : masked) out.at(i) = mask_token;
  return out;
}

Var affine(Graph& g, const AffineWeights& w, Var x) {
  return g.add(g.matmul(x, g.param(*w.weight)), g.param(*w.bias));
}

Var mclm_reconstruction_loss(Graph& g, Var full_i, Var masked_i, Var pred_i, Var full_j,
                             Var masked_j, Var pred_j) {
  auto side = [&](Var full, Var masked, Var pred) {
    if (!g.value(full).same_shape(g.value(masked)) || !g.value(full).same_shape(g.value(pred))) {
      throw ShapeError("mclm: representation dimensions differ");
    }
    return g.sum(g.row_norms(g.sub(g.l2_normalize(g.add(masked, pred)), g.l2_normalize(full))));
  };
  return g.add(side(full_i, masked_i, pred_i), side(full_j, masked_j, pred_j));
}

Var mclm_loss(Graph& g, Var full_i, Var masked_i, Var full_j, Var masked_j,
              const AffineWeights& predictor) {
  const std::size_t d = g.value(masked_i).cols();
  if (g.value(masked_j).cols() != d) throw ShapeError("mclm: paired representations differ in size");
  const Var parts[] = {masked_i, masked_j};
  Var pred = affine(g, predictor, g.concat_cols(parts));
  return mclm_reconstruction_loss(g, full_i, masked_i, g.slice_cols(pred, 0, d), full_j, masked_j,
                                  g.slice_cols(pred, d, d));
}

Var LanguageClassifier::logits(Graph& g, Var reps) const {
  return affine(g, output, g.relu(affine(g, hidden, reps)));
}

Var adversarial_loss(Graph& g, Var reps, std::span<const std::size_t> labels,
                     const LanguageClassifier& classifier) {
  return g.softmax_cross_entropy(classifier.logits(g, g.grad_reverse(reps)), labels);
}

Var total_loss(Graph& g, const LossTerms& terms, const LossWeights& w, LossBreakdown* breakdown) {
  Var total = g.add(terms.multimodal, g.scale(terms.mask, w.lambda2));
  total = g.add(total, g.scale(terms.adversarial, w.lambda3));
  total = g.add(total, g.scale(terms.neighborhood, w.lambda4));
  if (breakdown != nullptr) {
    breakdown->multimodal = g.scalar(terms.multimodal);
    breakdown->mask = g.scalar(terms.mask);
    breakdown->adversarial = g.scalar(terms.adversarial);
    breakdown->neighborhood = g.scalar(terms.neighborhood);
    breakdown->total = g.scalar(total);
  }
  return total;
}

}  // namespace smalr
