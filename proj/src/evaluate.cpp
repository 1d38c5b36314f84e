#include "smalr/evaluate.hpp"

namespace smalr {

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "direct") return EvalMode::direct;
  if (name == "trans-pivot") return EvalMode::trans_pivot;
  if (name == "clc-a" || name == "average") return EvalMode::clc_average;
  if (name == "clc-c" || name == "classifier") return EvalMode::clc_classifier;
  throw Error("unknown evaluation mode: " + name);
}

std::string eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::direct: return "direct";
    case EvalMode::trans_pivot: return "trans-pivot";
    case EvalMode::clc_average: return "clc-a";
    case EvalMode::clc_classifier: return "clc-c";
  }
  return "?";
}

std::vector<std::size_t> fused_languages(const Corpus& corpus) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < corpus.languages.size(); ++l)
    if (corpus.is_human(l)) out.push_back(l);
  if (out.empty())
    for (std::size_t l = 0; l < corpus.languages.size(); ++l) out.push_back(l);
  return out;
}

namespace {

void check_languages(const SmalrModel& model, const Corpus& corpus) {
  if (model.languages() != corpus.languages) throw Error("model and corpus languages differ");
}

}  // namespace

std::vector<LanguageScores> split_score_vectors(const SmalrModel& model, const Corpus& corpus, Split split,
                                                const Translator& translator, const TranslationConfig& config) {
  check_languages(model, corpus);
  const auto ids = split_images(corpus, split);
  const Tensor images = image_matrix(model, corpus, ids);
  std::vector<LanguageScores> out;
  for (std::size_t l : fused_languages(corpus)) {
    const auto queries = language_queries(corpus, ids, l);
    TranslationConfig c = config;
    c.seed = derive_seed(config.seed, l);
    out.push_back(build_score_vectors(model, images, queries, translator, c));
  }
  return out;
}

MetricsReport evaluate_model(const SmalrModel& model, const Corpus& corpus, Split split, const EvalOptions& options) {
  MetricsReport report;
  report.human_languages = corpus.human_languages;
  if (options.mode != EvalMode::direct && options.translator == nullptr) {
    throw Error("evaluation mode " + eval_mode_name(options.mode) + " needs a translator");
  }
  if (options.mode == EvalMode::clc_classifier && options.classifier == nullptr) {
    throw Error("evaluation mode clc-c needs a trained classifier");
  }
  const auto ids = split_images(corpus, split);
  if (ids.empty()) throw Error("split has no images");

  if (options.mode == EvalMode::clc_average || options.mode == EvalMode::clc_classifier) {
    const auto scores = split_score_vectors(model, corpus, split, *options.translator, options.translation);
    const auto langs = fused_languages(corpus);
    for (std::size_t k = 0; k < langs.size(); ++k) {
      const ScoreMatrix m = options.mode == EvalMode::clc_average ? fuse_average(scores[k])
                                                                  : options.classifier->fuse_all(scores[k]);
      report.rows.push_back(language_metrics(m, corpus.languages[langs[k]]));
    }
    return report;
  }

  const Tensor images = image_matrix(model, corpus, ids);
  if (options.mode == EvalMode::trans_pivot && options.pivot >= model.languages().size()) {
    throw Error("pivot language is not known to the model");
  }
  if (options.mode == EvalMode::direct) check_languages(model, corpus);
  for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
    auto queries = language_queries(corpus, ids, l);
    if (options.mode == EvalMode::trans_pivot) {
      TranslationConfig c = options.translation;
      c.seed = derive_seed(options.translation.seed, l);
      for (std::size_t i = 0; i < queries.size(); ++i) {
        queries[i].tokens = translate_query(*options.translator, queries[i], i, options.pivot, c);
        queries[i].lang = options.pivot;
      }
    }
    report.rows.push_back(language_metrics(score_queries(model, images, queries), corpus.languages[l]));
  }
  return report;
}

}  // namespace smalr
