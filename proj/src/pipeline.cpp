#include "smalr/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <set>

#include "smalr/pca.hpp"

namespace smalr {

using nlohmann::json;

void RunConfig::apply_paper_dims() {
  dims.universal_dim = 512;
  reduced_dim = 50;
  pretrain.latent_size = 40000;
  k = 5000;
  data.feature_dim = 2048;
  seed_stages();
}

void RunConfig::seed_stages() {
  data.seed = seed;
  pretrain.seed = derive_seed(seed, 1);
  train.seed = derive_seed(seed, 2);
  pretrain.universal_dim = dims.universal_dim;
  dims.image_dim = data.feature_dim;
  clc.lambda1 = train.weights.lambda1;
  clc.margin = train.weights.margin;
  clc.top_n = train.weights.top_n;
}

void RunConfig::validate() const {
  if (reduced_dim == 0 || reduced_dim > data.pretrained_dim) {
    throw Error("reduced_dim must lie in [1, pretrained_dim]");
  }
  if (translation_noise < 0.0 || translation_noise > 1.0) throw Error("translation_noise must lie in [0, 1]");
  if (pivot >= data.num_languages) throw Error("pivot language out of range");
  if (dims.joint_dim == 0 || dims.universal_dim == 0 || dims.adversary_hidden == 0) {
    throw Error("network dimensions must be positive");
  }
  pretrain.validate();
  train.validate();
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["translation_noise"] = translation_noise;
  j["reduced_dim"] = reduced_dim;
  j["k"] = k;
  j["pivot"] = pivot;
  j["trainable_word_vectors"] = trainable_word_vectors;
  j["clc_trainable_output"] = clc_trainable_output;
  j["data"] = {{"num_images", data.num_images},
               {"num_languages", data.num_languages},
               {"human_languages", data.human_languages},
               {"concepts", data.concepts},
               {"vocab_per_lang", data.vocab_per_lang},
               {"synonym_rate", data.synonym_rate},
               {"min_len", data.min_len},
               {"max_len", data.max_len},
               {"sentences_per_image", data.sentences_per_image},
               {"concepts_per_image", data.concepts_per_image},
               {"feature_dim", data.feature_dim},
               {"concept_dim", data.concept_dim},
               {"pretrained_dim", data.pretrained_dim},
               {"zipf_exponent", data.zipf_exponent},
               {"language_offset", data.language_offset},
               {"word_noise", data.word_noise},
               {"feature_noise", data.feature_noise},
               {"train_fraction", data.train_fraction},
               {"val_fraction", data.val_fraction}};
  j["pretrain"] = {{"latent_size", pretrain.latent_size},
                   {"margin", pretrain.margin},
                   {"top_n", pretrain.top_n},
                   {"explore", pretrain.explore},
                   {"explore_p", pretrain.exploration.p},
                   {"explore_m", pretrain.exploration.m},
                   {"epochs", pretrain.epochs},
                   {"batch_size", pretrain.batch_size},
                   {"learning_rate", pretrain.learning_rate}};
  j["net"] = {{"universal_dim", dims.universal_dim},
              {"joint_dim", dims.joint_dim},
              {"adversary_hidden", dims.adversary_hidden}};
  j["loss"] = {{"lambda1", train.weights.lambda1},
               {"lambda2", train.weights.lambda2},
               {"lambda3", train.weights.lambda3},
               {"lambda4", train.weights.lambda4},
               {"margin", train.weights.margin},
               {"top_n", train.weights.top_n},
               {"mask_ratio", train.weights.mask_ratio}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"steps_per_epoch", train.steps_per_epoch},
                {"learning_rate", train.learning_rate},
                {"select_best", train.select_best}};
  j["clc"] = {{"iterations", clc.iterations}, {"learning_rate", clc.learning_rate}};
  return j;
}

namespace {

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw Error("config: " + where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      field = it->template get<T>();
    } catch (const json::exception&) {
      throw Error("config: " + where_ + key + " has the wrong type");
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Reader(it == j_.end() ? empty : *it, where_ + key + ".");
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error("config: unknown key " + where_ + it.key());
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.get("seed", c.seed);
  r.get("translation_noise", c.translation_noise);
  r.get("reduced_dim", c.reduced_dim);
  r.get("k", c.k);
  r.get("pivot", c.pivot);
  r.get("trainable_word_vectors", c.trainable_word_vectors);
  r.get("clc_trainable_output", c.clc_trainable_output);
  {
    Reader d = r.child("data");
    d.get("num_images", c.data.num_images);
    d.get("num_languages", c.data.num_languages);
    d.get("human_languages", c.data.human_languages);
    d.get("concepts", c.data.concepts);
    d.get("vocab_per_lang", c.data.vocab_per_lang);
    d.get("synonym_rate", c.data.synonym_rate);
    d.get("min_len", c.data.min_len);
    d.get("max_len", c.data.max_len);
    d.get("sentences_per_image", c.data.sentences_per_image);
    d.get("concepts_per_image", c.data.concepts_per_image);
    d.get("feature_dim", c.data.feature_dim);
    d.get("concept_dim", c.data.concept_dim);
    d.get("pretrained_dim", c.data.pretrained_dim);
    d.get("zipf_exponent", c.data.zipf_exponent);
    d.get("language_offset", c.data.language_offset);
    d.get("word_noise", c.data.word_noise);
    d.get("feature_noise", c.data.feature_noise);
    d.get("train_fraction", c.data.train_fraction);
    d.get("val_fraction", c.data.val_fraction);
    d.finish();
  }
  {
    Reader p = r.child("pretrain");
    p.get("latent_size", c.pretrain.latent_size);
    p.get("margin", c.pretrain.margin);
    p.get("top_n", c.pretrain.top_n);
    p.get("explore", c.pretrain.explore);
    p.get("explore_p", c.pretrain.exploration.p);
    p.get("explore_m", c.pretrain.exploration.m);
    p.get("epochs", c.pretrain.epochs);
    p.get("batch_size", c.pretrain.batch_size);
    p.get("learning_rate", c.pretrain.learning_rate);
    p.finish();
  }
  {
    Reader n = r.child("net");
    n.get("universal_dim", c.dims.universal_dim);
    n.get("joint_dim", c.dims.joint_dim);
    n.get("adversary_hidden", c.dims.adversary_hidden);
    n.finish();
  }
  {
    Reader l = r.child("loss");
    l.get("lambda1", c.train.weights.lambda1);
    l.get("lambda2", c.train.weights.lambda2);
    l.get("lambda3", c.train.weights.lambda3);
    l.get("lambda4", c.train.weights.lambda4);
    l.get("margin", c.train.weights.margin);
    l.get("top_n", c.train.weights.top_n);
    l.get("mask_ratio", c.train.weights.mask_ratio);
    l.finish();
  }
  {
    Reader t = r.child("train");
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    t.get("steps_per_epoch", c.train.steps_per_epoch);
    t.get("learning_rate", c.train.learning_rate);
    t.get("select_best", c.train.select_best);
    t.finish();
  }
  {
    Reader k = r.child("clc");
    k.get("iterations", c.clc.iterations);
    k.get("learning_rate", c.clc.learning_rate);
    k.finish();
  }
  r.finish();
  c.seed_stages();
  return c;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

Dataset generate_dataset(const RunConfig& config) {
  SyntheticConfig sc = config.data;
  sc.seed = config.seed;
  SyntheticData raw = generate_synthetic(sc);
  Translator translator(raw.corpus);
  Dataset d;
  d.corpus = augment_to_full_coverage(raw.corpus, translator, config.translation_noise, config.seed);
  d.vectors = std::move(raw.vectors);
  validate_corpus(d.corpus, true);
  return d;
}

void write_dataset(const Dataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_corpus(data.corpus, dir + "/corpus.jsonl");
  write_vectors(data.vectors, data.corpus, dir + "/vectors.tsv");
}

Dataset read_dataset(const std::string& dir) {
  Dataset d;
  d.corpus = read_corpus(dir + "/corpus.jsonl");
  d.vectors = read_vectors(dir + "/vectors.tsv", d.corpus);
  return d;
}

WordVectors reduced_vectors(const RunConfig& config, const Dataset& data) {
  return reduce_word_vectors(data.vectors, config.reduced_dim);
}

VocabSplit vocab_split(const RunConfig& config, const Corpus& corpus) {
  return split_top_k(count_frequencies(corpus), config.k);
}

PretrainResult run_pretrain(const RunConfig& config, const Dataset& data, const WordVectors& reduced) {
  PretrainConfig pc = config.pretrain;
  pc.universal_dim = config.dims.universal_dim;
  return pretrain_latent(data.corpus, reduced, vocab_split(config, data.corpus), pc);
}

void write_pretrain(const PretrainResult& result, const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_latent(result.latent, dir + "/latent.tsv");
  write_assignments(result.map, corpus.languages, dir + "/assign.tsv");
  ParameterStore fc;
  for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
    fc.add("pre/fc_w/" + corpus.languages[l], result.fc_weight.at(l));
    fc.add("pre/fc_b/" + corpus.languages[l], result.fc_bias.at(l));
  }
  save_checkpoint(fc, dir + "/projection.ckpt");
}

PretrainResult read_pretrain(const std::string& dir, const Corpus& corpus) {
  PretrainResult r;
  r.latent = read_latent(dir + "/latent.tsv");
  r.map = read_assignments(dir + "/assign.tsv", corpus.languages, corpus.vocab_sizes);
  const auto fc = read_checkpoint(dir + "/projection.ckpt");
  for (const std::string& lang : corpus.languages) {
    auto w = fc.find("pre/fc_w/" + lang);
    auto b = fc.find("pre/fc_b/" + lang);
    if (w == fc.end() || b == fc.end()) throw Error("pretraining output lacks the projection of " + lang);
    r.fc_weight.push_back(w->second);
    r.fc_bias.push_back(b->second);
  }
  return r;
}

namespace {

NetDims model_dims(const RunConfig& config, const Corpus& corpus) {
  NetDims d = config.dims;
  d.image_dim = corpus.feature_dim;
  return d;
}

}  // namespace

SmalrModel build_hem_model(const RunConfig& config, const Dataset& data, const WordVectors& reduced,
                           const PretrainResult& pretrain) {
  ParameterStore store;
  const PrunedLatent pruned = prune_unused(pretrain.latent, pretrain.map);
  HybridEmbedder emb = HybridEmbedder::hem(store, data.corpus.languages, reduced, vocab_split(config, data.corpus),
                                           pruned, pretrain.fc_weight, pretrain.fc_bias,
                                           config.trainable_word_vectors);
  return SmalrModel(std::move(store), std::move(emb), data.corpus.languages, model_dims(config, data.corpus),
                    derive_seed(config.seed, 3));
}

SmalrModel build_reduced_model(const RunConfig& config, const Dataset& data, const WordVectors& reduced,
                               const VocabReduction& reduction) {
  ParameterStore store;
  Rng rng(derive_seed(config.seed, 4));
  HybridEmbedder emb = HybridEmbedder::reduced_vocab(store, data.corpus.languages, reduced, reduction,
                                                     config.dims.universal_dim, rng);
  return SmalrModel(std::move(store), std::move(emb), data.corpus.languages, model_dims(config, data.corpus),
                    derive_seed(config.seed, 3));
}

TrainResult run_train(const RunConfig& config, SmalrModel& model, const Corpus& corpus, const std::string& dir,
                      std::vector<std::size_t> languages) {
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, 2);
  tc.languages = std::move(languages);
  if (dir.empty()) return train_model(model, corpus, tc);
  std::filesystem::create_directories(dir);
  return train_model(model, corpus, tc, dir + "/train_log.csv", dir + "/val_log.csv");
}

ClcClassifier run_clc_train(const RunConfig& config, const SmalrModel& model, const Corpus& corpus,
                            std::vector<double>* losses) {
  const Translator translator(corpus);
  const TranslationConfig tc{config.translation_noise, derive_seed(config.seed, 5)};
  const auto scores = split_score_vectors(model, corpus, Split::val, translator, tc);
  ClcClassifier classifier(corpus.languages.size(), derive_seed(config.seed, 6), config.clc_trainable_output);
  ClcTrainConfig cc = config.clc;
  cc.lambda1 = config.train.weights.lambda1;
  cc.margin = config.train.weights.margin;
  cc.top_n = config.train.weights.top_n;
  auto l = train_clc(classifier, scores, cc);
  if (losses != nullptr) *losses = std::move(l);
  return classifier;
}

}  // namespace smalr
