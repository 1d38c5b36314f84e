#ifndef SMALR_METRICS_HPP_
#define SMALR_METRICS_HPP_

#include <array>
#include <span>
#include <string>
#include <vector>

#include "smalr/tensor.hpp"

namespace smalr {

/// Image x sentence similarities for one language; sentence_image[c] is the
/// row of column c's ground-truth image.
struct ScoreMatrix {
  Tensor scores;
  std::vector<std::size_t> sentence_image;

  void validate() const;
};

enum class Direction { image_to_sentence, sentence_to_image };

/// Percentage of queries with a ground-truth item in the top k. Candidates
/// rank by descending score, equal scores by ascending index.
double recall_at_k(const ScoreMatrix& m, std::size_t k, Direction dir);

/// Rank (0-based) of the best-ranked ground truth for every query.
std::vector<std::size_t> ground_truth_ranks(const ScoreMatrix& m, Direction dir);

/// Half-up rounding to one decimal.
double round1(double x);

/// Mean of the six recalls, rounded to one decimal.
double mean_recall(std::span<const double> recalls);

struct LanguageMetrics {
  std::string lang;
  std::array<double, 6> recall{};  // i2s r1 r5 r10, s2i r1 r5 r10
  double mr = 0.0;                 // unrounded
};

LanguageMetrics language_metrics(const ScoreMatrix& m, const std::string& lang);

struct Aggregate {
  double ha = 0.0;
  double a = 0.0;
};

/// Means of the (already rounded) per-language mRs over the human
/// languages and over all languages, rounded to one decimal.
Aggregate aggregate(std::span<const double> mrs, std::span<const std::string> languages,
                    std::span<const std::string> human_languages);

struct MetricsReport {
  std::vector<LanguageMetrics> rows;
  std::vector<std::string> human_languages;

  Aggregate totals() const;
  double average_mr() const;
};

void write_metrics_csv(const MetricsReport& report, const std::string& path);

/// Expected mR of a uniformly random ranking: image queries succeed when one
/// of their sentences falls in the top k, sentence queries when their image does.
double chance_mean_recall(const ScoreMatrix& m);

}  // namespace smalr

#endif  // SMALR_METRICS_HPP_
