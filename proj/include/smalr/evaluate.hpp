#ifndef SMALR_EVALUATE_HPP_
#define SMALR_EVALUATE_HPP_

#include <string>
#include <vector>

#include "smalr/clc.hpp"
#include "smalr/corpus.hpp"
#include "smalr/metrics.hpp"
#include "smalr/model.hpp"

namespace smalr {

enum class EvalMode { direct, trans_pivot, clc_average, clc_classifier };

EvalMode parse_eval_mode(const std::string& name);
std::string eval_mode_name(EvalMode mode);

struct EvalOptions {
  EvalMode mode = EvalMode::direct;
  /// Needed by every mode except direct.
  const Translator* translator = nullptr;
  /// Needed by the classifier mode.
  const ClcClassifier* classifier = nullptr;
  TranslationConfig translation;
  /// Language every query is translated into in trans_pivot mode.
  std::size_t pivot = 0;
};

/// Direct and trans_pivot modes report every corpus language; the fused
/// modes report the human-annotated languages (all, if there are none).
MetricsReport evaluate_model(const SmalrModel& model, const Corpus& corpus, Split split, const EvalOptions& options);

/// Score vectors of every reported language's queries on `split`, in the
/// order evaluate_model reports them.
std::vector<LanguageScores> split_score_vectors(const SmalrModel& model, const Corpus& corpus, Split split,
                                                const Translator& translator, const TranslationConfig& config);

/// Languages the fused modes report on.
std::vector<std::size_t> fused_languages(const Corpus& corpus);

}  // namespace smalr

#endif  // SMALR_EVALUATE_HPP_
