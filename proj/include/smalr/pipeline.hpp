#ifndef SMALR_PIPELINE_HPP_
#define SMALR_PIPELINE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "smalr/clc.hpp"
#include "smalr/corpus.hpp"
#include "smalr/evaluate.hpp"
#include "smalr/hem.hpp"
#include "smalr/model.hpp"
#include "smalr/vocab.hpp"

namespace smalr {

/// Every knob of a run. Serialises to JSON with sorted keys, so the hash
/// does not depend on field order in a config file.
struct RunConfig {
  std::uint64_t seed = 7;
  SyntheticConfig data;
  double translation_noise = 0.1;
  std::size_t reduced_dim = 10;
  std::size_t k = 30;
  PretrainConfig pretrain;
  NetDims dims;
  TrainConfig train;
  ClcTrainConfig clc;
  bool clc_trainable_output = false;
  bool trainable_word_vectors = false;
  std::size_t pivot = 0;

  /// Full-scale sizes: 512-D universal space, 50-D PCA, 40000 latent
  /// tokens, K = 5000, 2048-D image features.
  void apply_paper_dims();
  /// Propagates the run seed into every stage config.
  void seed_stages();
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

struct Dataset {
  Corpus corpus;
  WordVectors vectors;
};

/// Synthetic corpus with every (image, language) cell filled.
Dataset generate_dataset(const RunConfig& config);
void write_dataset(const Dataset& data, const std::string& dir);
Dataset read_dataset(const std::string& dir);

WordVectors reduced_vectors(const RunConfig& config, const Dataset& data);
VocabSplit vocab_split(const RunConfig& config, const Corpus& corpus);
PretrainResult run_pretrain(const RunConfig& config, const Dataset& data, const WordVectors& reduced);
void write_pretrain(const PretrainResult& result, const Corpus& corpus, const std::string& dir);
PretrainResult read_pretrain(const std::string& dir, const Corpus& corpus);

SmalrModel build_hem_model(const RunConfig& config, const Dataset& data, const WordVectors& reduced,
                           const PretrainResult& pretrain);
SmalrModel build_reduced_model(const RunConfig& config, const Dataset& data, const WordVectors& reduced,
                               const VocabReduction& reduction);

/// Trains in place; logs go to `dir` when it is not empty.
TrainResult run_train(const RunConfig& config, SmalrModel& model, const Corpus& corpus, const std::string& dir,
                      std::vector<std::size_t> languages = {});

/// Classifier trained on the validation split's score vectors.
ClcClassifier run_clc_train(const RunConfig& config, const SmalrModel& model, const Corpus& corpus,
                            std::vector<double>* losses = nullptr);

}  // namespace smalr

#endif  // SMALR_PIPELINE_HPP_
