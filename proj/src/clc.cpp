#include "smalr/clc.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace smalr {

std::size_t LanguageScores::images() const { return per_language.empty() ? 0 : per_language.front().rows(); }

std::vector<double> LanguageScores::vector_at(std::size_t image, std::size_t sentence) const {
  std::vector<double> v;
  v.reserve(per_language.size());
  for (const Tensor& t : per_language) v.push_back(t(image, sentence));
  return v;
}

ScoreMatrix LanguageScores::slot(std::size_t lang) const {
  return ScoreMatrix{per_language.at(lang), sentence_image};
}

std::vector<int> translate_query(const Translator& translator, const Query& q, std::size_t index,
                                 std::size_t target, const TranslationConfig& config) {
  if (target == q.lang) return q.tokens;
  if (target >= translator.num_languages()) {
    throw Error("translator does not cover language " + std::to_string(target));
  }
  Sentence s;
  s.lang = q.lang;
  s.tokens = q.tokens;
  Sentence t = translator.translate(s, target, config.noise_rate, derive_seed(config.seed, index, target));
  if (t.tokens.empty()) throw Error("translation of query " + std::to_string(index) + " is empty");
  return t.tokens;
}

LanguageScores build_score_vectors(const SmalrModel& model, const Tensor& images, std::span<const Query> queries,
                                   const Translator& translator, const TranslationConfig& config) {
  LanguageScores out;
  for (const Query& q : queries) out.sentence_image.push_back(q.image_row);
  for (std::size_t l = 0; l < model.languages().size(); ++l) {
    std::vector<Query> translated;
    translated.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      translated.push_back({l, translate_query(translator, queries[i], i, l, config), queries[i].image_row});
    }
    out.per_language.push_back(score_queries(model, images, translated).scores);
  }
  return out;
}

double clc_average(std::span<const double> scores) {
  if (scores.empty()) throw Error("cannot average an empty score vector");
  double s = 0.0;
  for (double x : scores) s += x;
  return s / static_cast<double>(scores.size());
}

ScoreMatrix fuse_average(const LanguageScores& scores) {
  if (scores.per_language.empty()) throw Error("no language scores to fuse");
  ScoreMatrix m{Tensor(scores.images(), scores.sentences()), scores.sentence_image};
  for (std::size_t i = 0; i < m.scores.rows(); ++i)
    for (std::size_t s = 0; s < m.scores.cols(); ++s) m.scores(i, s) = clc_average(scores.vector_at(i, s));
  return m;
}

ClcClassifier::ClcClassifier(std::size_t languages, std::uint64_t seed, bool trainable_output)
    : languages_(languages), trainable_output_(trainable_output) {
  if (languages == 0) throw Error("classifier needs at least one language");
  Rng rng(seed);
  Tensor w(languages, kHidden);
  for (double& x : w.data()) x = rng.uniform(0.0, 2.0 / static_cast<double>(languages));
  store_.add("clc/fc_w", std::move(w));
  store_.add("clc/fc_b", Tensor(1, kHidden));
  if (trainable_output) {
    store_.add("clc/out_w", Tensor(kHidden, 1, 1.0));
    store_.add("clc/out_b", Tensor(1, 1));
  }
}

double ClcClassifier::fuse(std::span<const double> scores) const {
  if (scores.size() != languages_) {
    throw ShapeError("classifier expects " + std::to_string(languages_) + " scores, got " +
                     std::to_string(scores.size()));
  }
  const Tensor& w = store_.at("clc/fc_w").value;
  const Tensor& b = store_.at("clc/fc_b").value;
  const Tensor* ow = trainable_output_ ? &store_.at("clc/out_w").value : nullptr;
  double out = trainable_output_ ? store_.at("clc/out_b").value[0] : 0.0;
  for (std::size_t h = 0; h < kHidden; ++h) {
    double a = b(0, h);
    for (std::size_t l = 0; l < languages_; ++l) a += scores[l] * w(l, h);
    a = std::max(0.0, a);
    out += ow != nullptr ? a * (*ow)(h, 0) : a;
  }
  return out;
}

Var ClcClassifier::fuse(Graph& g, Var vectors) {
  if (g.value(vectors).cols() != languages_) throw ShapeError("classifier input width differs from |L|");
  Var h = g.relu(affine(g, {&store_.at("clc/fc_w"), &store_.at("clc/fc_b")}, vectors));
  if (trainable_output_) return affine(g, {&store_.at("clc/out_w"), &store_.at("clc/out_b")}, h);
  return g.matmul(h, g.constant(Tensor(kHidden, 1, 1.0), "sum"));
}

ScoreMatrix ClcClassifier::fuse_all(const LanguageScores& scores) const {
  ScoreMatrix m{Tensor(scores.images(), scores.sentences()), scores.sentence_image};
  for (std::size_t i = 0; i < m.scores.rows(); ++i)
    for (std::size_t s = 0; s < m.scores.cols(); ++s) m.scores(i, s) = fuse(scores.vector_at(i, s));
  return m;
}

Var score_triplet_loss(Graph& g, Var scores, std::size_t images, std::span<const std::size_t> sentence_image,
                       double lambda1, double margin, std::size_t n) {
  const std::size_t ns = sentence_image.size();
  const Tensor& v = g.value(scores);
  if (v.rows() != images * ns || v.cols() != 1) throw ShapeError("score loss: scores must be images*sentences x 1");
  auto flat = [ns](std::size_t i, std::size_t s) { return i * ns + s; };

  auto hinge = [&](const std::vector<Triplet>& mined, bool image_anchor) {
    if (mined.empty()) return g.constant(Tensor::scalar(0.0), "zero");
    std::vector<std::size_t> pos, neg;
    for (const Triplet& t : mined) {
      pos.push_back(image_anchor ? flat(t.anchor, t.positive) : flat(t.positive, t.anchor));
      neg.push_back(image_anchor ? flat(t.anchor, t.negative) : flat(t.negative, t.anchor));
    }
    Var d = g.sub(g.gather_rows(scores, neg), g.gather_rows(scores, pos));
    return g.sum(g.relu(g.add_scalar(d, margin)));
  };

  PairLabels img(images, ns), sen(ns, images);
  Tensor di(images, ns), ds(ns, images);
  for (std::size_t s = 0; s < ns; ++s) {
    if (sentence_image[s] >= images) throw Error("score loss: image index out of range");
    for (std::size_t i = 0; i < images; ++i) {
      const PairLabel lab = sentence_image[s] == i ? PairLabel::positive : PairLabel::negative;
      img.at(i, s) = lab;
      sen.at(s, i) = lab;
      di(i, s) = -v[flat(i, s)];
      ds(s, i) = -v[flat(i, s)];
    }
  }
  Var a = hinge(mine_hard_negatives(di, img, margin, n), true);
  if (lambda1 == 0.0) return a;
  return g.add(a, g.scale(hinge(mine_hard_negatives(ds, sen, margin, n), false), lambda1));
}

namespace {

Var validation_loss(Graph& g, ClcClassifier& classifier, std::span<const LanguageScores> validation,
                    const ClcTrainConfig& config) {
  if (validation.empty()) throw Error("CLC training needs a validation set");
  Var total;
  for (const LanguageScores& ls : validation) {
    if (ls.sentences() == 0 || ls.images() == 0) throw Error("CLC training needs a validation set");
    if (ls.languages() != classifier.languages()) throw ShapeError("score vectors do not match the classifier");
    Tensor x(ls.images() * ls.sentences(), ls.languages());
    for (std::size_t i = 0; i < ls.images(); ++i)
      for (std::size_t s = 0; s < ls.sentences(); ++s)
        for (std::size_t l = 0; l < ls.languages(); ++l) x(i * ls.sentences() + s, l) = ls.per_language[l](i, s);
    Var fused = classifier.fuse(g, g.constant(std::move(x), "score_vectors"));
    Var loss = score_triplet_loss(g, fused, ls.images(), ls.sentence_image, config.lambda1, config.margin,
                                  config.top_n);
    total = total.valid() ? g.add(total, loss) : loss;
  }
  return total;
}

}  // namespace

double clc_loss(ClcClassifier& classifier, std::span<const LanguageScores> validation, const ClcTrainConfig& config) {
  Graph g;
  return g.scalar(validation_loss(g, classifier, validation, config));
}

std::vector<double> train_clc(ClcClassifier& classifier, std::span<const LanguageScores> validation,
                              const ClcTrainConfig& config) {
  Adam adam(AdamConfig{.learning_rate = config.learning_rate});
  std::vector<double> losses;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    Graph g;
    Var loss = validation_loss(g, classifier, validation, config);
    losses.push_back(g.scalar(loss));
    classifier.store().zero_grad();
    g.backward(loss);
    adam.step(classifier.store());
  }
  losses.push_back(clc_loss(classifier, validation, config));
  return losses;
}

void write_clc(const ClcClassifier& classifier, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write classifier: " + path);
  os << "clc\t" << classifier.languages() << '\t' << (classifier.trainable_output() ? 1 : 0) << '\n';
  char buf[40];
  const ParameterStore& st = classifier.store();
  for (std::size_t p = 0; p < st.size(); ++p) {
    const Parameter& prm = st[p];
    os << prm.name << '\t' << prm.value.rows() << '\t' << prm.value.cols();
    for (double x : prm.value.data()) {
      std::snprintf(buf, sizeof buf, "\t%.17g", x);
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw Error("failed writing classifier: " + path);
}

ClcClassifier read_clc(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read classifier: " + path);
  std::string tag;
  std::size_t languages = 0;
  int trainable = 0;
  if (!(is >> tag >> languages >> trainable) || tag != "clc") throw Error("not a classifier file: " + path);
  ClcClassifier c(languages, 0, trainable != 0);
  std::string name;
  std::size_t read = 0;
  while (is >> name) {
    std::size_t rows = 0, cols = 0;
    if (!(is >> rows >> cols)) throw Error("truncated classifier file: " + path);
    Parameter* p = c.store().find(name);
    if (p == nullptr) throw Error("unexpected classifier tensor " + name);
    if (p->value.rows() != rows || p->value.cols() != cols) throw ShapeError("classifier tensor " + name + " has wrong shape");
    for (double& x : p->value.data())
      if (!(is >> x)) throw Error("truncated classifier file: " + path);
    ++read;
  }
  if (read != c.store().size()) throw Error("classifier file is missing tensors: " + path);
  return c;
}

}  // namespace smalr
