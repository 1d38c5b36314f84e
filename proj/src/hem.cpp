#include "smalr/hem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "smalr/losses.hpp"

namespace smalr {

void ExplorationConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("exploration p must lie in [0, 1]");
  if (m < 1) throw Error("exploration M must be at least 1");
}

std::vector<std::size_t> score_latent_tokens(std::span<const double> query, const Tensor& latent) {
  if (latent.rows() == 0) throw Error("latent table is empty");
  if (query.size() != latent.cols()) throw ShapeError("query and latent rows differ in dimension");
  const double qn = norm2(query);
  if (qn == 0.0) throw NumericError("cannot score a zero word vector against the latent table");
  std::vector<double> sim(latent.rows());
  for (std::size_t r = 0; r < latent.rows(); ++r) {
    const auto row = latent.row_span(r);
    const double rn = norm2(row);
    sim[r] = rn == 0.0 ? -2.0 : dot(query, row) / (qn * rn);
  }
  std::vector<std::size_t> order(latent.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  return order;
}

std::size_t assign_token(std::span<const std::size_t> ranking, const ExplorationConfig* explore, Rng& rng) {
  if (ranking.empty()) throw Error("cannot assign from an empty ranking");
  if (explore == nullptr || explore->p <= 0.0) return ranking[0];
  if (!rng.bernoulli(explore->p)) return ranking[0];
  const std::size_t m = std::min(explore->m, ranking.size());
  return ranking[rng.index(m)];
}

int AssignmentMap::at(std::size_t lang, int word) const {
  if (lang >= token.size() || word < 0 || static_cast<std::size_t>(word) >= token[lang].size()) {
    throw Error("unknown token " + std::to_string(word) + " in language " + std::to_string(lang));
  }
  return token[lang][static_cast<std::size_t>(word)];
}

void AssignmentMap::set(std::size_t lang, int word, int row) {
  if (frozen) throw Error("assignment map is frozen");
  token.at(lang).at(static_cast<std::size_t>(word)) = row;
}

std::vector<std::size_t> AssignmentMap::usage(std::size_t rows) const {
  std::vector<std::size_t> n(rows, 0);
  for (const auto& lang : token)
    for (int r : lang)
      if (r >= 0) ++n.at(static_cast<std::size_t>(r));
  return n;
}

bool AssignmentMap::total_over(const VocabSplit& split) const {
  if (token.size() != split.is_specific.size()) return false;
  for (std::size_t l = 0; l < token.size(); ++l) {
    if (token[l].size() != split.is_specific[l].size()) return false;
    for (std::size_t w = 0; w < token[l].size(); ++w)
      if ((token[l][w] >= 0) == (split.is_specific[l][w] != 0)) return false;
  }
  return true;
}

PrunedLatent prune_unused(const Tensor& latent, const AssignmentMap& map) {
  if (!map.frozen) throw Error("prune_unused needs a frozen assignment map");
  const auto used = map.usage(latent.rows());
  std::vector<int> remap(latent.rows(), -1);
  std::vector<double> data;
  int next = 0;
  for (std::size_t r = 0; r < latent.rows(); ++r) {
    if (used[r] == 0) continue;
    remap[r] = next++;
    const auto row = latent.row_span(r);
    data.insert(data.end(), row.begin(), row.end());
  }
  PrunedLatent out;
  out.table = Tensor(static_cast<std::size_t>(next), latent.cols(), std::move(data));
  out.map = map;
  for (auto& lang : out.map.token)
    for (int& r : lang)
      if (r >= 0) r = remap[static_cast<std::size_t>(r)];
  return out;
}

void write_latent(const Tensor& latent, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write latent table: " + path);
  char buf[32];
  for (std::size_t r = 0; r < latent.rows(); ++r) {
    for (std::size_t c = 0; c < latent.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", latent(r, c));
      os << (c ? "\t" : "") << buf;
    }
    os << '\n';
  }
}

Tensor read_latent(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read latent table: " + path);
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t n = 0;
    std::string field;
    while (std::getline(ss, field, '\t')) {
      data.push_back(std::stod(field));
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw Error("latent table row " + std::to_string(rows + 1) + " has " + std::to_string(n) + " columns");
    ++rows;
  }
  return Tensor(rows, cols, std::move(data));
}

void write_assignments(const AssignmentMap& map, std::span<const std::string> languages,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write assignments: " + path);
  for (std::size_t l = 0; l < map.token.size(); ++l)
    for (std::size_t w = 0; w < map.token[l].size(); ++w)
      if (map.token[l][w] >= 0) os << languages[l] << '\t' << w << '\t' << map.token[l][w] << '\n';
}

AssignmentMap read_assignments(const std::string& path, std::span<const std::string> languages,
                               std::span<const std::size_t> vocab_sizes) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read assignments: " + path);
  AssignmentMap map;
  for (std::size_t v : vocab_sizes) map.token.emplace_back(v, -1);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string lang;
    long word = -1, row = -1;
    if (!std::getline(ss, lang, '\t') || !(ss >> word >> row)) {
      throw Error("assignments line " + std::to_string(n) + ": expected lang, word, latent_idx");
    }
    auto it = std::find(languages.begin(), languages.end(), lang);
    if (it == languages.end()) throw Error("assignments line " + std::to_string(n) + ": unknown language " + lang);
    const auto l = static_cast<std::size_t>(it - languages.begin());
    if (word < 0 || static_cast<std::size_t>(word) >= vocab_sizes[l] || row < 0) {
      throw Error("assignments line " + std::to_string(n) + ": index out of range");
    }
    map.token[l][static_cast<std::size_t>(word)] = static_cast<int>(row);
  }
  map.frozen = true;
  return map;
}

void PretrainConfig::validate() const {
  if (latent_size == 0) throw Error("latent vocabulary size must be positive");
  if (universal_dim == 0) throw Error("universal dimension must be positive");
  if (batch_size < 2) throw Error("batch size must be at least 2");
  if (margin < 0.0) throw Error("margin must be non-negative");
  exploration.validate();
}

Tensor init_projection(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(in, out);
  for (double& x : w.data()) x = rng.uniform(-a, a);
  return w;
}

namespace {

void check_vectors(const Corpus& corpus, const WordVectors& reduced) {
  if (reduced.tables.size() != corpus.languages.size()) {
    throw Error("need one word-vector table per language");
  }
  for (std::size_t l = 0; l < corpus.languages.size(); ++l)
    if (reduced.tables[l].rows() != corpus.vocab_sizes[l]) {
      throw Error("word-vector table for " + corpus.languages[l] + " does not cover the vocabulary");
    }
}

std::vector<double> project(const Tensor& table, int word, const Tensor& w, const Tensor& b) {
  std::vector<double> out(b.data().begin(), b.data().end());
  const auto v = table.row_span(static_cast<std::size_t>(word));
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[i] * w(i, j);
  return out;
}

}  // namespace

LatentPretrainer::LatentPretrainer(const Corpus& corpus, const WordVectors& reduced, const VocabSplit& split,
                                   PretrainConfig config, std::vector<std::size_t> languages)
    : corpus_(corpus),
      reduced_(reduced),
      split_(split),
      config_(config),
      rng_(derive_seed(config.seed, 0x1a7e)),
      adam_(AdamConfig{.learning_rate = config.learning_rate}),
      batches_(corpus, Split::train, config.batch_size, derive_seed(config.seed, 0xba7c), std::move(languages)) {
  config_.validate();
  check_vectors(corpus, reduced);
  const std::size_t d = reduced.dim();
  const std::size_t du = config_.universal_dim;
  Rng init(derive_seed(config_.seed, 0x1417));
  const Tensor w0 = init_projection(d, du, init);
  for (const std::string& name : corpus.languages) {
    fc_w_.push_back(&store_.add("pre/fc_w/" + name, w0));
    fc_b_.push_back(&store_.add("pre/fc_b/" + name, Tensor(1, du)));
  }

  double norm_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t l = 0; l < corpus.languages.size(); ++l)
    for (int w : split.agnostic[l]) {
      norm_sum += norm2(projected(l, w));
      ++n;
    }
  const double sigma = n == 0 ? 1.0 : norm_sum / static_cast<double>(n) / std::sqrt(static_cast<double>(du));
  Tensor latent(config_.latent_size, du);
  for (double& x : latent.data()) x = sigma * init.normal();
  latent_ = &store_.add("pre/latent", std::move(latent));

  for (std::size_t l = 0; l < corpus.languages.size(); ++l) map_.token.emplace_back(corpus.vocab_sizes[l], -1);
  reassign(false);
}

std::vector<double> LatentPretrainer::projected(std::size_t lang, int word) const {
  if (word < 0 || static_cast<std::size_t>(word) >= reduced_.tables.at(lang).rows()) {
    throw Error("unknown token " + std::to_string(word));
  }
  return project(reduced_.tables[lang], word, fc_w_[lang]->value, fc_b_[lang]->value);
}

void LatentPretrainer::reassign(bool explore) {
  const ExplorationConfig* e = explore ? &config_.exploration : nullptr;
  for (std::size_t l = 0; l < split_.agnostic.size(); ++l)
    for (int w : split_.agnostic[l]) {
      const auto ranking = score_latent_tokens(projected(l, w), latent_->value);
      map_.set(l, w, static_cast<int>(assign_token(ranking, e, rng_)));
    }
}

Var LatentPretrainer::sentence_rep(Graph& g, std::size_t lang, std::span<const int> tokens) {
  if (tokens.empty()) throw Error("cannot embed an empty sentence");
  std::vector<Var> rows;
  for (int w : tokens) {
    const int row = map_.at(lang, w);
    if (row >= 0) {
      const std::size_t r = static_cast<std::size_t>(row);
      rows.push_back(g.gather_rows(g.param(*latent_), std::span<const std::size_t>(&r, 1)));
    } else {
      const auto v = reduced_.tables[lang].row_vector(static_cast<std::size_t>(w));
      rows.push_back(affine(g, {fc_w_[lang], fc_b_[lang]}, g.constant(Tensor::row(v), "word")));
    }
  }
  return g.mean(g.concat_rows(rows), 0);
}

double LatentPretrainer::train_epoch() {
  reassign(config_.explore);
  const std::size_t steps = batches_.batches_per_epoch();
  double total = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const Batch batch = batches_.next();
    Graph g;
    std::vector<Var> reps;
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t idx : {batch[i].first, batch[i].second}) {
        const Sentence& sent = corpus_.sentences[idx];
        reps.push_back(sentence_rep(g, sent.lang, sent.tokens));
        group.push_back(i);
      }
    }
    Var loss = neighborhood_loss(g, reps, group, config_.margin, config_.top_n);
    total += g.scalar(loss);
    store_.zero_grad();
    g.backward(loss);
    adam_.step(store_);
  }
  const double mean = steps == 0 ? 0.0 : total / static_cast<double>(steps);
  losses_.push_back(mean);
  return mean;
}

PretrainResult LatentPretrainer::finish() {
  reassign(false);
  map_.frozen = true;
  PretrainResult out;
  out.latent = latent_->value;
  out.map = map_;
  for (std::size_t l = 0; l < fc_w_.size(); ++l) {
    out.fc_weight.push_back(fc_w_[l]->value);
    out.fc_bias.push_back(fc_b_[l]->value);
  }
  out.epoch_loss = losses_;
  return out;
}

PretrainResult pretrain_latent(const Corpus& corpus, const WordVectors& reduced, const VocabSplit& split,
                               const PretrainConfig& config, std::vector<std::size_t> languages) {
  LatentPretrainer pre(corpus, reduced, split, config, std::move(languages));
  for (std::size_t e = 0; e < config.epochs; ++e) pre.train_epoch();
  return pre.finish();
}

HybridEmbedder HybridEmbedder::hem(ParameterStore& store, std::span<const std::string> languages,
                                   const WordVectors& reduced, const VocabSplit& split,
                                   const PrunedLatent& latent, std::span<const Tensor> fc_weight,
                                   std::span<const Tensor> fc_bias, bool trainable_word_vectors) {
  const std::size_t nl = languages.size();
  if (reduced.tables.size() != nl || split.specific.size() != nl || latent.map.token.size() != nl ||
      fc_weight.size() != nl || fc_bias.size() != nl) {
    throw Error("hybrid embedder: language count mismatch");
  }
  if (!latent.map.frozen) throw Error("hybrid embedder needs frozen assignments");
  if (!latent.map.total_over(split)) throw Error("assignment map does not cover the agnostic words");

  HybridEmbedder e;
  e.universal_dim_ = fc_weight.empty() ? latent.table.cols() : fc_weight[0].cols();
  e.map_ = latent.map;
  e.table_.assign(nl, nullptr);
  e.fc_w_.assign(nl, nullptr);
  e.fc_b_.assign(nl, nullptr);
  if (latent.table.rows() > 0) {
    if (latent.table.cols() != e.universal_dim_) throw ShapeError("latent rows and projections differ in dimension");
    e.latent_ = &store.add("emb/latent", latent.table);
  }
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& spec = split.specific[l];
    std::vector<TokenRoute> routes(reduced.tables[l].rows());
    std::vector<std::uint32_t> local(routes.size(), 0);
    if (!spec.empty()) {
      e.fc_w_[l] = &store.add("emb/fc_w/" + languages[l], fc_weight[l]);
      e.fc_b_[l] = &store.add("emb/fc_b/" + languages[l], fc_bias[l]);
      if (trainable_word_vectors) {
        Tensor t(spec.size(), reduced.dim());
        for (std::size_t i = 0; i < spec.size(); ++i) {
          const auto src = reduced.tables[l].row_span(static_cast<std::size_t>(spec[i]));
          std::copy(src.begin(), src.end(), t.row_span(i).begin());
          local[static_cast<std::size_t>(spec[i])] = static_cast<std::uint32_t>(i);
        }
        e.table_[l] = &store.add("emb/table/" + languages[l], std::move(t));
      } else {
        e.table_[l] = &store.add("emb/pretrained/" + languages[l], reduced.tables[l], false);
        for (int w : spec) local[static_cast<std::size_t>(w)] = static_cast<std::uint32_t>(w);
      }
    }
    for (std::size_t w = 0; w < routes.size(); ++w) {
      const int row = latent.map.token[l][w];
      if (row >= 0) {
        routes[w] = {TokenRoute::latent, 0, static_cast<std::uint32_t>(row)};
      } else {
        routes[w] = {TokenRoute::projected, static_cast<std::uint32_t>(l), local[w]};
      }
    }
    e.routes_.push_back(std::move(routes));
  }
  e.count_parameters();
  return e;
}

HybridEmbedder HybridEmbedder::reduced_vocab(ParameterStore& store, std::span<const std::string> languages,
                                             const WordVectors& reduced, const VocabReduction& reduction,
                                             std::size_t universal_dim, Rng& rng) {
  const std::size_t nl = languages.size();
  if (reduced.tables.size() != nl || reduction.target.size() != nl) {
    throw Error("reduced-vocabulary embedder: language count mismatch");
  }
  HybridEmbedder e;
  e.universal_dim_ = universal_dim;
  e.table_.assign(nl, nullptr);
  e.fc_w_.assign(nl, nullptr);
  e.fc_b_.assign(nl, nullptr);
  const Tensor w0 = init_projection(reduced.dim(), universal_dim, rng);
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& rows = reduction.row_word[l];
    Tensor t(rows.size(), reduced.dim());
    std::size_t kept = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0) continue;
      const auto src = reduced.tables[l].row_span(static_cast<std::size_t>(rows[r]));
      std::copy(src.begin(), src.end(), t.row_span(r).begin());
      for (std::size_t c = 0; c < src.size(); ++c) t(reduction.unk_row(l), c) += src[c];
      ++kept;
    }
    for (double& x : t.row_span(reduction.unk_row(l))) x /= static_cast<double>(std::max<std::size_t>(kept, 1));
    e.table_[l] = &store.add("emb/table/" + languages[l], std::move(t));
    e.fc_w_[l] = &store.add("emb/fc_w/" + languages[l], w0);
    e.fc_b_[l] = &store.add("emb/fc_b/" + languages[l], Tensor(1, universal_dim));
    std::vector<TokenRoute> routes;
    for (const ReducedTarget& tg : reduction.target[l]) {
      routes.push_back({TokenRoute::projected, static_cast<std::uint32_t>(tg.lang), static_cast<std::uint32_t>(tg.row)});
    }
    e.routes_.push_back(std::move(routes));
  }
  e.count_parameters();
  return e;
}

HybridEmbedder HybridEmbedder::restore(ParameterStore& store, std::span<const std::string> languages,
                                       std::vector<std::vector<TokenRoute>> routes, AssignmentMap map,
                                       std::size_t universal_dim) {
  const std::size_t nl = languages.size();
  if (routes.size() != nl || map.token.size() != nl) throw Error("embedder restore: language count mismatch");
  HybridEmbedder e;
  e.universal_dim_ = universal_dim;
  e.map_ = std::move(map);
  e.map_.frozen = true;
  e.latent_ = store.find("emb/latent");
  for (const std::string& name : languages) {
    Parameter* t = store.find("emb/table/" + name);
    e.table_.push_back(t != nullptr ? t : store.find("emb/pretrained/" + name));
    e.fc_w_.push_back(store.find("emb/fc_w/" + name));
    e.fc_b_.push_back(store.find("emb/fc_b/" + name));
  }
  for (std::size_t l = 0; l < nl; ++l)
    for (const TokenRoute& r : routes[l]) {
      if (r.kind == TokenRoute::latent) {
        if (e.latent_ == nullptr || r.row >= e.latent_->value.rows()) throw Error("route points past the latent table");
      } else {
        const std::size_t tl = r.table_lang;
        if (tl >= nl || e.table_[tl] == nullptr || e.fc_w_[tl] == nullptr || e.fc_b_[tl] == nullptr ||
            r.row >= e.table_[tl]->value.rows()) {
          throw Error("route points at a missing word table or projection");
        }
      }
    }
  e.routes_ = std::move(routes);
  e.count_parameters();
  return e;
}

void HybridEmbedder::count_parameters() {
  count_ = 0;
  for (Parameter* p : table_)
    if (p != nullptr && p->trainable) count_ += p->value.size();
  for (std::size_t l = 0; l < fc_w_.size(); ++l)
    if (fc_w_[l] != nullptr) count_ += fc_w_[l]->value.size() + fc_b_[l]->value.size();
  if (latent_ != nullptr) count_ += latent_->value.size();
}

void write_routes(const HybridEmbedder& embedder, std::span<const std::string> languages,
                  const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write routes: " + path);
  const auto& routes = embedder.routes();
  for (std::size_t l = 0; l < routes.size(); ++l)
    for (std::size_t w = 0; w < routes[l].size(); ++w) {
      const TokenRoute& r = routes[l][w];
      os << languages[l] << '\t' << w << '\t' << (r.kind == TokenRoute::latent ? "latent" : "projected") << '\t'
         << languages[r.table_lang] << '\t' << r.row << '\n';
    }
}

std::vector<std::vector<TokenRoute>> read_routes(const std::string& path,
                                                 std::span<const std::string> languages,
                                                 std::span<const std::size_t> vocab_sizes) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read routes: " + path);
  auto lang_of = [&](const std::string& name, std::size_t line) {
    auto it = std::find(languages.begin(), languages.end(), name);
    if (it == languages.end()) throw Error("routes line " + std::to_string(line) + ": unknown language " + name);
    return static_cast<std::size_t>(it - languages.begin());
  };
  std::vector<std::vector<TokenRoute>> routes;
  std::vector<std::vector<char>> seen;
  for (std::size_t v : vocab_sizes) {
    routes.emplace_back(v);
    seen.emplace_back(v, 0);
  }
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string lang, kind, table;
    std::size_t word = 0, row = 0;
    if (!std::getline(ss, lang, '\t') || !(ss >> word) || !(ss >> kind) || !(ss >> table) || !(ss >> row)) {
      throw Error("routes line " + std::to_string(n) + ": expected lang, word, kind, table_lang, row");
    }
    const std::size_t l = lang_of(lang, n);
    if (word >= vocab_sizes[l]) throw Error("routes line " + std::to_string(n) + ": word out of range");
    if (kind != "latent" && kind != "projected") throw Error("routes line " + std::to_string(n) + ": bad kind " + kind);
    routes[l][word] = {kind == "latent" ? TokenRoute::latent : TokenRoute::projected,
                       static_cast<std::uint32_t>(lang_of(table, n)), static_cast<std::uint32_t>(row)};
    seen[l][word] = 1;
  }
  for (std::size_t l = 0; l < seen.size(); ++l)
    for (std::size_t w = 0; w < seen[l].size(); ++w)
      if (!seen[l][w]) throw Error("routes file lacks " + languages[l] + " word " + std::to_string(w));
  return routes;
}

const TokenRoute& HybridEmbedder::route(std::size_t lang, int word) const {
  if (lang >= routes_.size() || word < 0 || static_cast<std::size_t>(word) >= routes_[lang].size()) {
    throw Error("unknown token " + std::to_string(word) + " in language " + std::to_string(lang));
  }
  return routes_[lang][static_cast<std::size_t>(word)];
}

Var HybridEmbedder::embed_token(Graph& g, std::size_t lang, int word) const {
  const TokenRoute& r = route(lang, word);
  const std::size_t row = r.row;
  const std::span<const std::size_t> idx(&row, 1);
  if (r.kind == TokenRoute::latent) return g.gather_rows(g.param(*latent_), idx);
  const std::size_t tl = r.table_lang;
  return affine(g, {fc_w_[tl], fc_b_[tl]}, g.gather_rows(g.param(*table_[tl]), idx));
}

std::vector<Var> HybridEmbedder::embed_tokens(Graph& g, std::size_t lang, std::span<const int> tokens) const {
  if (tokens.empty()) throw Error("cannot embed an empty sentence");
  std::vector<Var> out;
  out.reserve(tokens.size());
  for (int w : tokens) out.push_back(embed_token(g, lang, w));
  return out;
}

Var HybridEmbedder::embed_stacked(Graph& g, std::span<const TokenSequence> sequences) const {
  // Rows are produced grouped by source table, then permuted back into order.
  std::vector<std::vector<std::size_t>> table_rows(table_.size()), table_pos(table_.size());
  std::vector<std::size_t> latent_rows, latent_pos;
  std::size_t n = 0;
  for (const TokenSequence& seq : sequences) {
    if (seq.tokens.empty()) throw Error("cannot embed an empty sentence");
    for (int w : seq.tokens) {
      const TokenRoute& r = route(seq.lang, w);
      if (r.kind == TokenRoute::latent) {
        latent_rows.push_back(r.row);
        latent_pos.push_back(n);
      } else {
        table_rows[r.table_lang].push_back(r.row);
        table_pos[r.table_lang].push_back(n);
      }
      ++n;
    }
  }
  std::vector<Var> parts;
  std::vector<std::size_t> where(n);
  std::size_t offset = 0;
  auto place = [&](Var part, const std::vector<std::size_t>& pos) {
    for (std::size_t k = 0; k < pos.size(); ++k) where[pos[k]] = offset + k;
    offset += pos.size();
    parts.push_back(part);
  };
  for (std::size_t l = 0; l < table_.size(); ++l) {
    if (table_rows[l].empty()) continue;
    Var rows = g.gather_rows(g.param(*table_[l]), table_rows[l]);
    place(affine(g, {fc_w_[l], fc_b_[l]}, rows), table_pos[l]);
  }
  if (!latent_rows.empty()) place(g.gather_rows(g.param(*latent_), latent_rows), latent_pos);
  if (parts.empty()) throw Error("nothing to embed");
  Var stacked = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
  bool identity = true;
  for (std::size_t i = 0; i < n; ++i) identity = identity && where[i] == i;
  return identity ? stacked : g.gather_rows(stacked, where);
}

std::vector<double> HybridEmbedder::token_vector(std::size_t lang, int word) const {
  const TokenRoute& r = route(lang, word);
  if (r.kind == TokenRoute::latent) return latent_->value.row_vector(r.row);
  const std::size_t tl = r.table_lang;
  return project(table_[tl]->value, static_cast<int>(r.row), fc_w_[tl]->value, fc_b_[tl]->value);
}

std::size_t HybridEmbedder::parameter_count() const { return count_; }

std::size_t per_word_parameter_count(std::span<const std::size_t> vocab_sizes, std::size_t universal_dim) {
  std::size_t n = 0;
  for (std::size_t v : vocab_sizes) n += v * universal_dim;
  return n;
}

SharingRates latent_sharing(const AssignmentMap& map, const VocabSplit& split, const Corpus& corpus) {
  std::size_t syn = 0, syn_share = 0, all = 0, all_share = 0;
  const std::size_t n = split.agnostic.size();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      for (int wa : split.agnostic[a])
        for (int wb : split.agnostic[b]) {
          const bool share = map.at(a, wa) == map.at(b, wb);
          if (corpus.lexicon.at(a).at(static_cast<std::size_t>(wa)) ==
              corpus.lexicon.at(b).at(static_cast<std::size_t>(wb))) {
            ++syn;
            syn_share += share;
          }
          ++all;
          all_share += share;
        }
  SharingRates r;
  r.synonym_pairs = syn;
  if (syn > 0) r.synonym = static_cast<double>(syn_share) / static_cast<double>(syn);
  if (all > 0) r.random = static_cast<double>(all_share) / static_cast<double>(all);
  return r;
}

}  // namespace smalr
