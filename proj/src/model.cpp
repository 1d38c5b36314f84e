#include "smalr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace smalr {

namespace {

Parameter& get_or_add(ParameterStore& store, const std::string& name, const std::function<Tensor()>& init) {
  if (Parameter* p = store.find(name)) return *p;
  return store.add(name, init());
}

}  // namespace

SmalrModel::SmalrModel(ParameterStore store, HybridEmbedder embedder, std::vector<std::string> languages,
                       NetDims dims, std::uint64_t seed)
    : store_(std::move(store)), embedder_(std::move(embedder)), languages_(std::move(languages)), dims_(dims) {
  if (embedder_.universal_dim() != dims_.universal_dim) {
    throw ShapeError("embedder dimension differs from the configured universal dimension");
  }
  if (embedder_.num_languages() != languages_.size()) throw Error("embedder and model disagree on languages");
  Rng rng(derive_seed(seed, 0x4e7));
  const std::size_t du = dims_.universal_dim, dj = dims_.joint_dim, hid = 2 * dj;
  auto glorot = [&](std::size_t in, std::size_t out) { return [&rng, in, out] { return init_projection(in, out, rng); }; };
  auto zeros = [](std::size_t n) { return [n] { return Tensor(1, n); }; };

  image_.fc1 = {&get_or_add(store_, "img/fc1_w", glorot(dims_.image_dim, hid)), &get_or_add(store_, "img/fc1_b", zeros(hid))};
  image_.fc2 = {&get_or_add(store_, "img/fc2_w", glorot(hid, dj)), &get_or_add(store_, "img/fc2_b", zeros(dj))};
  text_.gru.input = &get_or_add(store_, "txt/gru_input", glorot(du, 3 * dj));
  text_.gru.gates = &get_or_add(store_, "txt/gru_gates", glorot(dj, 2 * dj));
  text_.gru.candidate = &get_or_add(store_, "txt/gru_candidate", glorot(dj, dj));
  text_.gru.bias = &get_or_add(store_, "txt/gru_bias", zeros(3 * dj));
  text_.fc = {&get_or_add(store_, "txt/fc_w", glorot(dj, dj)), &get_or_add(store_, "txt/fc_b", zeros(dj))};
  mask_token_ = &get_or_add(store_, "mclm/mask_token", [&] {
    Tensor t(1, du);
    for (double& x : t.data()) x = 0.1 * rng.normal();
    return t;
  });
  mclm_average_ = {&get_or_add(store_, "mclm/avg_w", glorot(2 * du, 2 * du)), &get_or_add(store_, "mclm/avg_b", zeros(2 * du))};
  mclm_sequence_ = {&get_or_add(store_, "mclm/seq_w", glorot(2 * dj, 2 * dj)), &get_or_add(store_, "mclm/seq_b", zeros(2 * dj))};
  const std::size_t ah = dims_.adversary_hidden, nl = languages_.size();
  adversary_.hidden = {&get_or_add(store_, "adv/fc1_w", glorot(du, ah)), &get_or_add(store_, "adv/fc1_b", zeros(ah))};
  adversary_.output = {&get_or_add(store_, "adv/fc2_w", glorot(ah, nl)), &get_or_add(store_, "adv/fc2_b", zeros(nl))};
  if (image_.fc1.weight->value.rows() != dims_.image_dim) throw ShapeError("stored image branch does not match image_dim");
}

std::vector<Parameter*> SmalrModel::trainable_parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < store_.size(); ++i)
    if (store_[i].trainable) out.push_back(&store_[i]);
  return out;
}

SmalrModel::Layout SmalrModel::layout(std::span<const TokenSequence> sequences) {
  Layout out;
  std::size_t n = 0;
  for (const TokenSequence& s : sequences) {
    out.offset.push_back(n);
    out.length.push_back(s.tokens.size());
    n += s.tokens.size();
  }
  return out;
}

Var SmalrModel::embed_images(Graph& g, const Tensor& features) const {
  if (features.cols() != dims_.image_dim) {
    throw ShapeError("image feature has " + std::to_string(features.cols()) + " dims, expected " +
                     std::to_string(dims_.image_dim));
  }
  Var x = g.constant(features, "image");
  Var h = g.relu(affine(g, image_.fc1, x));
  return g.l2_normalize(affine(g, image_.fc2, h));
}

Var SmalrModel::embed_image(Graph& g, std::span<const double> feature) const {
  return embed_images(g, Tensor::row(std::vector<double>(feature.begin(), feature.end())));
}

Var SmalrModel::universal_reps(Graph& g, Var tokens, const Layout& layout,
                               const std::vector<std::vector<std::size_t>>* masked) const {
  const std::size_t total = g.value(tokens).rows();
  Tensor avg(layout.offset.size(), total);
  for (std::size_t s = 0; s < layout.offset.size(); ++s) {
    const std::size_t len = layout.length[s];
    if (len == 0) throw Error("cannot represent an empty sentence");
    std::vector<char> drop(len, 0);
    if (masked != nullptr)
      for (std::size_t p : (*masked)[s]) drop.at(p) = 1;
    const auto kept = static_cast<double>(std::count(drop.begin(), drop.end(), 0));
    if (kept == 0) throw Error("mask removes every token");
    for (std::size_t t = 0; t < len; ++t)
      if (!drop[t]) avg(s, layout.offset[s] + t) = 1.0 / kept;
  }
  return g.matmul(g.constant(std::move(avg), "average"), tokens);
}

Var SmalrModel::final_reps(Graph& g, Var tokens, const Layout& layout,
                           const std::vector<std::vector<std::size_t>>* masked) const {
  const std::size_t n = layout.offset.size();
  const std::size_t total = g.value(tokens).rows();
  Var source = tokens;
  if (masked != nullptr) {
    const Var parts[] = {tokens, g.param(*mask_token_)};
    source = g.concat_rows(parts);
  }
  std::size_t longest = 0;
  for (std::size_t len : layout.length) {
    if (len == 0) throw Error("cannot represent an empty sentence");
    longest = std::max(longest, len);
  }
  Var h = g.constant(Tensor(n, dims_.joint_dim), "h0");
  for (std::size_t t = 0; t < longest; ++t) {
    std::vector<std::size_t> rows(n, 0);
    Tensor active(n, dims_.joint_dim);
    bool all_active = true;
    for (std::size_t s = 0; s < n; ++s) {
      if (t >= layout.length[s]) {
        all_active = false;
        continue;
      }
      rows[s] = layout.offset[s] + t;
      if (masked != nullptr) {
        const auto& m = (*masked)[s];
        if (std::find(m.begin(), m.end(), t) != m.end()) rows[s] = total;
      }
      for (double& x : active.row_span(s)) x = 1.0;
    }
    Var next = gru_step(g, text_.gru, g.gather_rows(source, rows), h);
    h = all_active ? next : g.add(h, g.mul(g.constant(std::move(active), "active"), g.sub(next, h)));
  }
  return affine(g, text_.fc, h);
}

Var SmalrModel::embed_queries(Graph& g, std::span<const TokenSequence> sequences) const {
  const Layout lay = layout(sequences);
  return g.l2_normalize(final_reps(g, embedder_.embed_stacked(g, sequences), lay));
}

Var SmalrModel::embed_query(Graph& g, std::size_t lang, std::span<const int> tokens) const {
  const TokenSequence seq{lang, tokens};
  return embed_queries(g, std::span<const TokenSequence>(&seq, 1));
}

std::vector<double> SmalrModel::image_vector(std::span<const double> feature) const {
  Graph g;
  return g.value(embed_image(g, feature)).row_vector(0);
}

std::vector<double> SmalrModel::query_vector(std::size_t lang, std::span<const int> tokens) const {
  Graph g;
  return g.value(embed_query(g, lang, tokens)).row_vector(0);
}

LossTerms SmalrModel::batch_terms(Graph& g, const Corpus& corpus, const Batch& batch, const LossWeights& w,
                                  Rng& rng) const {
  std::vector<TokenSequence> seqs;
  std::vector<std::size_t> sentence_image, group, labels;
  Tensor features(batch.size(), dims_.image_dim);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = corpus.images.at(corpus.image_position(batch[i].image_id)).feature;
    if (f.size() != dims_.image_dim) throw ShapeError("image feature dimension differs from the model");
    std::copy(f.begin(), f.end(), features.row_span(i).begin());
    for (std::size_t idx : {batch[i].first, batch[i].second}) {
      const Sentence& s = corpus.sentences.at(idx);
      seqs.push_back({s.lang, s.tokens});
      sentence_image.push_back(i);
      group.push_back(i);
      labels.push_back(s.lang);
    }
  }
  std::vector<std::vector<std::size_t>> masks(seqs.size());
  for (std::size_t s = 0; s < seqs.size(); ++s)
    if (seqs[s].tokens.size() >= 2) masks[s] = choose_mask(seqs[s].tokens.size(), w.mask_ratio, rng);

  const Layout lay = layout(seqs);
  const Var tokens = embedder_.embed_stacked(g, seqs);
  const Var u = universal_reps(g, tokens, lay);
  const Var um = universal_reps(g, tokens, lay, &masks);
  const Var f = final_reps(g, tokens, lay);
  const Var fm = final_reps(g, tokens, lay, &masks);
  const Var images = embed_images(g, features);

  LossTerms t;
  t.multimodal = g.add(multimodal_loss(g, images, g.l2_normalize(f), sentence_image, w.lambda1, w.margin, w.top_n),
                       multimodal_loss(g, images, g.l2_normalize(fm), sentence_image, w.lambda1, w.margin, w.top_n));

  std::vector<std::size_t> ia, ib;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t a = 2 * i, b = 2 * i + 1;
    if (seqs[a].lang == seqs[b].lang || masks[a].empty() || masks[b].empty()) continue;
    ia.push_back(a);
    ib.push_back(b);
  }
  if (ia.empty()) {
    t.mask = g.constant(Tensor::scalar(0.0), "zero");
  } else {
    auto rows = [&](Var m, const std::vector<std::size_t>& idx) { return g.gather_rows(m, idx); };
    Var avg = mclm_loss(g, rows(u, ia), rows(um, ia), rows(u, ib), rows(um, ib), mclm_average_);
    Var seq = mclm_loss(g, rows(f, ia), rows(fm, ia), rows(f, ib), rows(fm, ib), mclm_sequence_);
    t.mask = g.scale(g.add(avg, seq), 1.0 / static_cast<double>(ia.size()));
  }
  t.adversarial = adversarial_loss(g, u, labels, adversary_);
  t.neighborhood = g.add(neighborhood_loss(g, u, group, w.margin, w.top_n),
                         neighborhood_loss(g, f, group, w.margin, w.top_n));
  return t;
}

double score(std::span<const double> image, std::span<const double> query) { return dot(image, query); }

std::vector<int> split_images(const Corpus& corpus, Split split) {
  std::vector<int> ids = corpus.splits.get(split);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Tensor image_matrix(const SmalrModel& model, const Corpus& corpus, std::span<const int> image_ids) {
  Tensor features(image_ids.size(), model.dims().image_dim);
  for (std::size_t r = 0; r < image_ids.size(); ++r) {
    const auto& f = corpus.images.at(corpus.image_position(image_ids[r])).feature;
    if (f.size() != features.cols()) throw ShapeError("image feature dimension differs from the model");
    std::copy(f.begin(), f.end(), features.row_span(r).begin());
  }
  if (features.rows() == 0) return Tensor(0, model.dims().joint_dim);
  Graph g;
  return g.value(model.embed_images(g, features));
}

std::vector<Query> language_queries(const Corpus& corpus, std::span<const int> image_ids, std::size_t lang) {
  std::vector<Query> out;
  for (const Sentence& s : corpus.sentences) {
    if (s.lang != lang) continue;
    auto it = std::lower_bound(image_ids.begin(), image_ids.end(), s.image_id);
    if (it == image_ids.end() || *it != s.image_id) continue;
    out.push_back({s.lang, s.tokens, static_cast<std::size_t>(it - image_ids.begin())});
  }
  return out;
}

ScoreMatrix score_queries(const SmalrModel& model, const Tensor& images, std::span<const Query> queries) {
  constexpr std::size_t kChunk = 256;
  ScoreMatrix m;
  m.scores = Tensor(images.rows(), queries.size());
  for (std::size_t start = 0; start < queries.size(); start += kChunk) {
    const std::size_t end = std::min(queries.size(), start + kChunk);
    std::vector<SmalrModel::TokenSequence> seqs;
    for (std::size_t c = start; c < end; ++c) seqs.push_back({queries[c].lang, queries[c].tokens});
    Graph g;
    const Tensor& q = g.value(model.embed_queries(g, seqs));
    for (std::size_t c = start; c < end; ++c)
      for (std::size_t r = 0; r < images.rows(); ++r) m.scores(r, c) = score(images.row_span(r), q.row_span(c - start));
  }
  for (const Query& q : queries) m.sentence_image.push_back(q.image_row);
  return m;
}

double mean_split_mr(const SmalrModel& model, const Corpus& corpus, Split split,
                     std::span<const std::size_t> languages) {
  const auto ids = split_images(corpus, split);
  if (ids.empty()) throw Error(std::string("split '") + to_string(split) + "' is empty");
  const Tensor images = image_matrix(model, corpus, ids);
  std::vector<std::size_t> langs(languages.begin(), languages.end());
  if (langs.empty())
    for (std::size_t l = 0; l < corpus.languages.size(); ++l) langs.push_back(l);
  double total = 0.0;
  for (std::size_t l : langs) {
    const auto queries = language_queries(corpus, ids, l);
    total += language_metrics(score_queries(model, images, queries), corpus.languages[l]).mr;
  }
  return total / static_cast<double>(langs.size());
}

std::size_t caption_steps_per_epoch(const Corpus& corpus, std::span<const std::size_t> languages,
                                    std::size_t batch_size) {
  const auto ids = split_images(corpus, Split::train);
  std::size_t captions = 0;
  for (const Sentence& s : corpus.sentences) {
    if (!languages.empty() && std::find(languages.begin(), languages.end(), s.lang) == languages.end()) continue;
    if (std::binary_search(ids.begin(), ids.end(), s.image_id)) ++captions;
  }
  const std::size_t per_step = 2 * batch_size;
  return std::max<std::size_t>(1, (captions + per_step - 1) / per_step);
}

void TrainConfig::validate() const {
  weights.validate();
  if (batch_size < 2) throw Error("batch size must be at least 2");
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
}

namespace {

double grad_norm_since(const std::vector<Parameter*>& params, std::vector<Tensor>& previous) {
  double s = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto now = params[i]->grad.data();
    auto before = previous[i].data();
    for (std::size_t k = 0; k < now.size(); ++k) {
      const double d = now[k] - before[k];
      s += d * d;
      before[k] = now[k];
    }
  }
  return std::sqrt(s);
}

}  // namespace

TrainResult train_model(SmalrModel& model, const Corpus& corpus, const TrainConfig& config,
                        const std::string& train_log, const std::string& val_log) {
  config.validate();
  Adam adam(AdamConfig{.learning_rate = config.learning_rate});
  MinibatchIterator batches(corpus, Split::train, config.batch_size, derive_seed(config.seed, 0xb47c), config.languages);
  Rng rng(derive_seed(config.seed, 0x3a5c));
  const std::size_t steps = config.steps_per_epoch > 0
                                ? config.steps_per_epoch
                                : caption_steps_per_epoch(corpus, config.languages, config.batch_size);
  const bool validate = config.select_best && !corpus.splits.val.empty();
  auto params = model.trainable_parameters();

  std::ofstream tlog, vlog;
  if (!train_log.empty()) {
    tlog.open(train_log);
    if (!tlog) throw Error("cannot write train log: " + train_log);
    tlog << "step,epoch,L_mm,L_mask,L_adv,L_nc,total,gn_mm,gn_mask,gn_adv,gn_nc\n";
  }
  if (!val_log.empty()) {
    vlog.open(val_log);
    if (!vlog) throw Error("cannot write validation log: " + val_log);
    vlog << "epoch,val_mR\n";
  }

  TrainResult result;
  double best = -1.0;
  std::vector<Tensor> best_values = model.store().snapshot();
  char buf[512];
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps; ++s, ++step) {
      const Batch batch = batches.next();
      Graph g;
      const LossTerms terms = model.batch_terms(g, corpus, batch, config.weights, rng);
      LossBreakdown bd;
      const Var total = total_loss(g, terms, config.weights, &bd);
      if (!std::isfinite(bd.total)) {
        throw NumericError("non-finite training loss at step " + std::to_string(step) + " (L_mm=" +
                           std::to_string(bd.multimodal) + ", L_mask=" + std::to_string(bd.mask) + ", L_adv=" +
                           std::to_string(bd.adversarial) + ", L_nc=" + std::to_string(bd.neighborhood) + ")");
      }
      const Var parts[4] = {terms.multimodal, g.scale(terms.mask, config.weights.lambda2),
                            g.scale(terms.adversarial, config.weights.lambda3),
                            g.scale(terms.neighborhood, config.weights.lambda4)};
      model.store().zero_grad();
      std::vector<Tensor> previous;
      for (Parameter* p : params) previous.emplace_back(p->grad.rows(), p->grad.cols());
      double gn[4];
      for (int k = 0; k < 4; ++k) {
        g.backward(parts[k]);
        gn[k] = grad_norm_since(params, previous);
      }
      (void)total;
      adam.step(params);
      result.steps.push_back(bd);
      if (tlog) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.6g,%.6g,%.6g,%.6g\n", step, epoch,
                      bd.multimodal, bd.mask, bd.adversarial, bd.neighborhood, bd.total, gn[0], gn[1], gn[2], gn[3]);
        tlog << buf;
      }
    }
    if (validate) {
      const double mr = mean_split_mr(model, corpus, Split::val, config.languages);
      result.val_mr.push_back(mr);
      if (vlog) {
        std::snprintf(buf, sizeof buf, "%zu,%.10g\n", epoch, mr);
        vlog << buf;
      }
      if (mr > best) {
        best = mr;
        result.best_epoch = epoch;
        best_values = model.store().snapshot();
      }
    }
  }
  if (validate) {
    model.store().restore(best_values);
  } else {
    result.best_epoch = config.epochs;
  }
  return result;
}

void save_model(const SmalrModel& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_checkpoint(model.store(), dir + "/model.ckpt");
  write_routes(model.embedder(), model.languages(), dir + "/routes.tsv");
  write_assignments(model.embedder().assignments(), model.languages(), dir + "/assign.tsv");
  nlohmann::ordered_json j;
  j["languages"] = model.languages();
  std::vector<std::size_t> vocab;
  for (const auto& r : model.embedder().routes()) vocab.push_back(r.size());
  j["vocab_sizes"] = vocab;
  j["image_dim"] = model.dims().image_dim;
  j["universal_dim"] = model.dims().universal_dim;
  j["joint_dim"] = model.dims().joint_dim;
  j["adversary_hidden"] = model.dims().adversary_hidden;
  std::ofstream os(dir + "/model.json");
  if (!os) throw Error("cannot write model description in " + dir);
  os << j.dump(2) << '\n';
}

SmalrModel load_model(const std::string& dir) {
  std::ifstream is(dir + "/model.json");
  if (!is) throw Error("no model found in " + dir + " (missing model.json)");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error("model.json in " + dir + " is not valid JSON: " + e.what());
  }
  const auto languages = j.at("languages").get<std::vector<std::string>>();
  const auto vocab = j.at("vocab_sizes").get<std::vector<std::size_t>>();
  NetDims dims;
  dims.image_dim = j.at("image_dim").get<std::size_t>();
  dims.universal_dim = j.at("universal_dim").get<std::size_t>();
  dims.joint_dim = j.at("joint_dim").get<std::size_t>();
  dims.adversary_hidden = j.at("adversary_hidden").get<std::size_t>();
  ParameterStore store = load_store(dir + "/model.ckpt");
  auto routes = read_routes(dir + "/routes.tsv", languages, vocab);
  auto map = read_assignments(dir + "/assign.tsv", languages, vocab);
  HybridEmbedder emb = HybridEmbedder::restore(store, languages, std::move(routes), std::move(map), dims.universal_dim);
  const std::size_t before = store.size();
  SmalrModel model(std::move(store), std::move(emb), languages, dims, 0);
  if (model.store().size() != before) throw Error("checkpoint in " + dir + " lacks network parameters");
  return model;
}

}  // namespace smalr
