#if __has_include(<malloc.h>)
#include <malloc.h>
#endif
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "plot.hpp"
#include "smalr/clc.hpp"
#include "smalr/evaluate.hpp"
#include "smalr/pca.hpp"
#include "smalr/pipeline.hpp"

#ifndef SMALR_GIT_DESCRIBE
#define SMALR_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace smalr;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool paper_dims = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::size_t> epochs;
  std::optional<double> lambda2;
  bool clc_trainable_output = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--set", c.sets, "override a config value, e.g. --set train.epochs=5");
  app->add_flag("--paper-dims", c.paper_dims, "full-scale dimensions (512/50/40000/5000/2048)");
  app->add_option("--seed", c.seed, "run seed");
  app->add_option("--k", c.k, "language-specific words per language");
  app->add_option("--epochs", c.epochs, "training epochs");
  app->add_option("--lambda2", c.lambda2, "weight of the masked cross-language loss");
  app->add_flag("--clc-trainable-output", c.clc_trainable_output, "learnable output layer in the CLC classifier");
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

void set_path(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("--set expects key=value, got " + assignment);
  std::string key = assignment.substr(0, eq);
  json* node = &j;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &(*node)[key.substr(start, dot - start)];
  }
  (*node)[key.substr(start)] = parse_value(assignment.substr(eq + 1));
}

RunConfig resolve(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream is(c.config);
    if (!is) throw Error("cannot read config " + c.config);
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw Error("config " + c.config + " is not valid JSON: " + e.what());
    }
  }
  RunConfig rc = RunConfig::from_json(j);
  if (c.paper_dims) {
    rc.apply_paper_dims();
    j = rc.to_json();
  }
  for (const auto& s : c.sets) set_path(j, s);
  if (c.seed) j["seed"] = *c.seed;
  if (c.k) j["k"] = *c.k;
  if (c.epochs) j["train"]["epochs"] = *c.epochs;
  if (c.lambda2) j["loss"]["lambda2"] = *c.lambda2;
  if (c.clc_trainable_output) j["clc_trainable_output"] = true;
  rc = RunConfig::from_json(j);
  rc.validate();
  return rc;
}

class RunRecord {
 public:
  RunRecord(std::string command, const std::vector<std::string>& argv, const RunConfig* config) {
    j_["command"] = std::move(command);
    j_["argv"] = argv;
    j_["git_describe"] = SMALR_GIT_DESCRIBE;
    if (config != nullptr) {
      j_["config"] = config->to_json();
      j_["config_hash"] = config->hash();
      j_["seed"] = config->seed;
    }
    j_["inputs"] = json::object();
    j_["artifacts"] = json::object();
  }

  void input(const std::string& path) {
    if (fs::is_directory(path)) {
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(path))
        if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) j_["inputs"][f] = file_hash(f);
    } else {
      j_["inputs"][path] = file_hash(path);
    }
  }

  void artifacts(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) j_["artifacts"][fs::relative(f, dir).string()] = file_hash(f);
  }

  void write(const std::string& dir) {
    artifacts(dir);
    std::ofstream os(dir + "/run.json");
    if (!os) throw Error("cannot write run record in " + dir);
    os << j_.dump(2) << '\n';
  }

 private:
  json j_;
};

TranslationConfig translation(const RunConfig& c) { return {c.translation_noise, derive_seed(c.seed, 5)}; }

MetricsReport write_metrics(const MetricsReport& report, const std::string& dir) {
  write_metrics_csv(report, dir + "/metrics.csv");
  const Aggregate t = report.totals();
  for (const auto& r : report.rows) std::printf("%s mR %.1f\n", r.lang.c_str(), round1(r.mr));
  std::printf("HA %.1f A %.1f\n", t.ha, t.a);
  return report;
}

std::size_t specific_rows(const VocabSplit& split) {
  std::size_t n = 0;
  for (const auto& s : split.specific) n += s.size();
  return n;
}

void train_hem(const RunConfig& cfg, const Dataset& data, const std::string& latent_dir, const std::string& out,
               const std::string& method) {
  const WordVectors reduced = reduced_vectors(cfg, data);
  PretrainResult pre;
  if (latent_dir.empty()) {
    pre = run_pretrain(cfg, data, reduced);
    write_pretrain(pre, data.corpus, out + "/latent");
  } else {
    pre = read_pretrain(latent_dir, data.corpus);
  }
  SmalrModel model = build_hem_model(cfg, data, reduced, pre);
  run_train(cfg, model, data.corpus, out);
  save_model(model, out);
  write_metrics(evaluate_model(model, data.corpus, Split::test, {}), out);
  const std::size_t rows = specific_rows(vocab_split(cfg, data.corpus)) + model.embedder().latent_rows();
  write_reduction_report({{method, "K=" + std::to_string(cfg.k), rows, model.embedder().parameter_count()}},
                         out + "/reduction_report.csv");
}

void train_reduced(const RunConfig& cfg, const Dataset& data, const WordVectors& reduced,
                   const VocabReduction& reduction, const std::string& setting, const std::string& out) {
  SmalrModel model = build_reduced_model(cfg, data, reduced, reduction);
  run_train(cfg, model, data.corpus, out);
  save_model(model, out);
  write_metrics(evaluate_model(model, data.corpus, Split::test, {}), out);
  write_reduction_report({{reduction.method, setting, reduction.vocab_size(), model.embedder().parameter_count()}},
                         out + "/reduction_report.csv");
}

int run(std::vector<std::string> args);

int replay(const std::string& record_path, const std::string& out) {
  std::ifstream is(record_path);
  if (!is) throw Error("cannot read run record " + record_path);
  const json rec = json::parse(is);
  std::vector<std::string> argv = rec.at("argv").get<std::vector<std::string>>();
  std::vector<std::string> args;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--config" || argv[i] == "--out") {
      ++i;
      continue;
    }
    if (argv[i].rfind("--config=", 0) == 0 || argv[i].rfind("--out=", 0) == 0) continue;
    args.push_back(argv[i]);
  }
  fs::create_directories(out);
  if (rec.contains("config")) {
    const std::string cfg = out + "/replay_config.json";
    std::ofstream(cfg) << rec["config"].dump(2) << '\n';
    args.push_back("--config");
    args.push_back(cfg);
  }
  args.push_back("--out");
  args.push_back(out);
  if (rec.contains("inputs")) {
    for (const auto& [path, hash] : rec["inputs"].items()) {
      if (!fs::exists(path)) throw Error("replay input missing: " + path);
      if (file_hash(path) != hash.get<std::string>()) throw Error("replay input changed since the run: " + path);
    }
  }
  const int rc = run(args);
  if (rc != 0) return rc;
  std::ifstream ns(out + "/run.json");
  const json now = json::parse(ns);
  int mismatches = 0;
  for (const auto& [name, hash] : rec.at("artifacts").items()) {
    if (name == "replay_config.json") continue;
    const bool same = now["artifacts"].contains(name) && now["artifacts"][name] == hash;
    std::printf("%s %s\n", same ? "match" : "DIFF ", name.c_str());
    if (!same) ++mismatches;
  }
  if (mismatches > 0) {
    std::fprintf(stderr, "replay: %d artifact(s) differ\n", mismatches);
    return 3;
  }
  return 0;
}

int run(std::vector<std::string> args) {
  CLI::App app{"Multilingual image-sentence retrieval with a hybrid embedding vocabulary"};
  app.require_subcommand(1);
  const std::vector<std::string> argv = args;
  Common common;
  std::string data_dir, out, latent_dir, model_dir, clc_path, split_name = "test", mode = "direct";
  std::size_t threshold = 2, pca_dim = 4;
  std::string grid = "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1";
  std::string csv, x_col, y_col, label_col, title;
  std::vector<std::string> runs;
  bool log_x = false, line = false;
  int status = 0;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus and word vectors");
  add_common(gen, common);
  gen->add_option("--out", out)->required();

  auto* pre = app.add_subcommand("pretrain-latent", "pretrain the shared latent vocabulary");
  add_common(pre, common);
  pre->add_option("--data", data_dir)->required();
  pre->add_option("--out", out)->required();

  auto* train = app.add_subcommand("train", "train the embedding network with the hybrid vocabulary");
  add_common(train, common);
  train->add_option("--data", data_dir)->required();
  train->add_option("--latent", latent_dir, "pretrain-latent output; pretrains inline when omitted");
  train->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("eval", "evaluate a trained model");
  add_common(eval, common);
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--model", model_dir)->required();
  eval->add_option("--split", split_name);
  eval->add_option("--mode", mode)->check(CLI::IsMember({"direct", "trans-pivot", "clc-a", "clc-c"}));
  eval->add_option("--clc", clc_path, "classifier weights for clc-c");
  eval->add_option("--out", out)->required();

  auto* clc = app.add_subcommand("clc", "cross-lingual consistency fusion");
  clc->require_subcommand(1);
  auto* clc_train = clc->add_subcommand("train", "train the fusion classifier on the validation split");
  add_common(clc_train, common);
  clc_train->add_option("--data", data_dir)->required();
  clc_train->add_option("--model", model_dir)->required();
  clc_train->add_option("--out", out)->required();
  auto* clc_eval = clc->add_subcommand("eval", "evaluate fused retrieval");
  add_common(clc_eval, common);
  clc_eval->add_option("--data", data_dir)->required();
  clc_eval->add_option("--model", model_dir)->required();
  clc_eval->add_option("--mode", mode)->check(CLI::IsMember({"average", "classifier"}))->required();
  clc_eval->add_option("--clc", clc_path);
  clc_eval->add_option("--split", split_name);
  clc_eval->add_option("--out", out)->required();

  auto* base = app.add_subcommand("baseline", "vocabulary-reduction and translation baselines");
  base->require_subcommand(1);
  std::vector<CLI::App*> baselines;
  for (const char* name : {"freq", "pca", "dict", "la", "trans-pivot"}) {
    auto* b = base->add_subcommand(name);
    add_common(b, common);
    b->add_option("--data", data_dir)->required();
    b->add_option("--out", out)->required();
    baselines.push_back(b);
  }
  baselines[0]->add_option("--t", threshold, "minimum training count");
  baselines[1]->add_option("--dim", pca_dim, "PCA dimension of the word vectors");
  baselines[2]->add_option("--t", threshold, "minimum training count before mapping to the pivot");

  auto* sweep = app.add_subcommand("sweep", "hyperparameter sweeps");
  sweep->require_subcommand(1);
  auto* sweep_l2 = sweep->add_subcommand("lambda2", "sweep the masked cross-language loss weight");
  add_common(sweep_l2, common);
  sweep_l2->add_option("--data", data_dir)->required();
  sweep_l2->add_option("--grid", grid);
  sweep_l2->add_option("--out", out)->required();

  auto* plt = app.add_subcommand("plot", "SVG chart from CSV output or from run directories");
  plt->add_option("--csv", csv);
  plt->add_option("--x", x_col);
  plt->add_option("--y", y_col);
  plt->add_option("--label", label_col);
  plt->add_option("--runs", runs, "run directories with reduction_report.csv and metrics.csv");
  plt->add_option("--title", title);
  plt->add_flag("--log-x", log_x);
  plt->add_flag("--line", line);
  plt->add_option("--out", out)->required();

  std::string record;
  auto* rep = app.add_subcommand("replay", "re-run a recorded run and compare artifact hashes");
  rep->add_option("--run", record, "run.json of the original run")->required();
  rep->add_option("--out", out)->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto start = [&](const std::string& command, bool configured) {
    fs::create_directories(out);
    std::optional<RunConfig> cfg;
    if (configured) cfg = resolve(common);
    return std::make_pair(cfg, RunRecord(command, argv, cfg ? &*cfg : nullptr));
  };

  if (gen->parsed()) {
    auto [cfg, rec] = start("gen-data", true);
    const Dataset d = generate_dataset(*cfg);
    write_dataset(d, out);
    std::printf("corpus %s\n", file_hash(out + "/corpus.jsonl").c_str());
    rec.write(out);
  } else if (pre->parsed()) {
    auto [cfg, rec] = start("pretrain-latent", true);
    rec.input(data_dir);
    const Dataset d = read_dataset(data_dir);
    const PretrainResult r = run_pretrain(*cfg, d, reduced_vectors(*cfg, d));
    write_pretrain(r, d.corpus, out);
    std::printf("latent rows used %zu of %zu\n", prune_unused(r.latent, r.map).table.rows(), r.latent.rows());
    const SharingRates share = latent_sharing(r.map, vocab_split(*cfg, d.corpus), d.corpus);
    std::printf("synonym sharing %.4f random %.4f ratio %.2f\n", share.synonym, share.random, share.ratio());
    rec.write(out);
  } else if (train->parsed()) {
    auto [cfg, rec] = start("train", true);
    rec.input(data_dir);
    if (!latent_dir.empty()) rec.input(latent_dir);
    train_hem(*cfg, read_dataset(data_dir), latent_dir, out, "hem");
    rec.write(out);
  } else if (eval->parsed() || clc_eval->parsed()) {
    auto [cfg, rec] = start(eval->parsed() ? "eval" : "clc eval", true);
    rec.input(data_dir);
    rec.input(model_dir);
    const Dataset d = read_dataset(data_dir);
    const SmalrModel model = load_model(model_dir);
    const Translator translator(d.corpus);
    EvalOptions opts;
    opts.mode = clc_eval->parsed() ? (mode == "average" ? EvalMode::clc_average : EvalMode::clc_classifier)
                                   : parse_eval_mode(mode);
    opts.translator = &translator;
    opts.translation = translation(*cfg);
    opts.pivot = cfg->pivot;
    std::optional<ClcClassifier> classifier;
    if (opts.mode == EvalMode::clc_classifier) {
      if (clc_path.empty()) throw Error("classifier mode needs --clc");
      rec.input(clc_path);
      classifier.emplace(read_clc(clc_path));
      opts.classifier = &*classifier;
    }
    write_metrics(evaluate_model(model, d.corpus, parse_split(split_name), opts), out);
    rec.write(out);
  } else if (clc_train->parsed()) {
    auto [cfg, rec] = start("clc train", true);
    rec.input(data_dir);
    rec.input(model_dir);
    const Dataset d = read_dataset(data_dir);
    const SmalrModel model = load_model(model_dir);
    std::vector<double> losses;
    const ClcClassifier c = run_clc_train(*cfg, model, d.corpus, &losses);
    write_clc(c, out + "/clc.tsv");
    std::ofstream log(out + "/clc_log.csv");
    log << "iteration,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < losses.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
      log << buf;
    }
    log.close();
    std::printf("classifier parameters %zu, loss %.4f -> %.4f\n", c.parameter_count(), losses.front(), losses.back());
    rec.write(out);
  } else if (base->parsed()) {
    CLI::App* which = *std::find_if(baselines.begin(), baselines.end(), [](CLI::App* b) { return b->parsed(); });
    const std::string name = which->get_name();
    auto [cfg, rec] = start("baseline " + name, true);
    rec.input(data_dir);
    const Dataset d = read_dataset(data_dir);
    const VocabStats stats = count_frequencies(d.corpus);
    if (name == "la") {
      RunConfig la = *cfg;
      la.k = 0;
      train_hem(la, d, "", out, "la");
    } else if (name == "freq") {
      train_reduced(*cfg, d, reduced_vectors(*cfg, d), frequency_threshold(stats, threshold),
                    "t=" + std::to_string(threshold), out);
    } else if (name == "pca") {
      RunConfig pc = *cfg;
      pc.reduced_dim = pca_dim;
      pc.validate();
      VocabReduction identity = frequency_threshold(stats, 1);
      identity.method = "pca";
      train_reduced(pc, d, reduced_vectors(pc, d), identity, "d=" + std::to_string(pca_dim), out);
    } else if (name == "dict") {
      const Dictionary dict = dictionary_from_lexicon(d.corpus, stats, cfg->pivot);
      write_dictionary(dict, d.corpus, out + "/dict.tsv");
      train_reduced(*cfg, d, reduced_vectors(*cfg, d), dictionary_map(stats, threshold, dict),
                    "t=" + std::to_string(threshold), out);
    } else {
      const WordVectors reduced = reduced_vectors(*cfg, d);
      SmalrModel model = build_hem_model(*cfg, d, reduced, run_pretrain(*cfg, d, reduced));
      run_train(*cfg, model, d.corpus, out, {cfg->pivot});
      save_model(model, out);
      const Translator translator(d.corpus);
      EvalOptions opts;
      opts.mode = EvalMode::trans_pivot;
      opts.translator = &translator;
      opts.translation = translation(*cfg);
      opts.pivot = cfg->pivot;
      write_metrics(evaluate_model(model, d.corpus, Split::test, opts), out);
    }
    rec.write(out);
  } else if (sweep_l2->parsed()) {
    auto [cfg, rec] = start("sweep lambda2", true);
    rec.input(data_dir);
    std::vector<double> values;
    std::stringstream ss(grid);
    for (std::string item; std::getline(ss, item, ',');) values.push_back(std::stod(item));
    if (values.empty()) throw Error("empty lambda2 grid");
    const Dataset d = read_dataset(data_dir);
    const WordVectors reduced = reduced_vectors(*cfg, d);
    const PretrainResult pr = run_pretrain(*cfg, d, reduced);
    std::ofstream os(out + "/sweep.csv");
    os << "lambda2,A\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
      RunConfig c = *cfg;
      c.train.weights.lambda2 = values[i];
      c.validate();
      SmalrModel model = build_hem_model(c, d, reduced, pr);
      run_train(c, model, d.corpus, "");
      const Aggregate t = evaluate_model(model, d.corpus, Split::test, {}).totals();
      char buf[64];
      std::snprintf(buf, sizeof buf, "%g,%.1f\n", values[i], t.a);
      os << buf;
      os.flush();
      std::printf("lambda2 %g A %.1f\n", values[i], t.a);
    }
    os.close();
    rec.write(out);
  } else if (plt->parsed()) {
    auto [cfg, rec] = start("plot", false);
    plot::Chart chart;
    chart.title = title;
    chart.log_x = log_x;
    chart.line = line;
    if (!runs.empty()) {
      chart.x_label = "embedding parameters";
      chart.y_label = "A (average mR)";
      chart.log_x = true;
      for (const auto& r : runs) {
        rec.input(r + "/reduction_report.csv");
        rec.input(r + "/metrics.csv");
        const auto red = plot::read_csv(r + "/reduction_report.csv");
        const auto met = plot::read_csv(r + "/metrics.csv");
        if (red.size() < 2) throw Error("no reduction row in " + r);
        double a = -1;
        for (const auto& row : met)
          if (!row.empty() && row[0] == "A") a = std::stod(row.back());
        if (a < 0) throw Error("no A row in " + r + "/metrics.csv");
        chart.points.push_back({std::stod(red[1].at(3)), a, red[1].at(0) + " " + red[1].at(1)});
      }
    } else {
      if (csv.empty() || x_col.empty() || y_col.empty()) throw Error("plot needs --runs or --csv with --x and --y");
      rec.input(csv);
      const auto rows = plot::read_csv(csv);
      auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(rows[0].begin(), rows[0].end(), name);
        if (it == rows[0].end()) throw Error("column " + name + " not in " + csv);
        return static_cast<std::size_t>(it - rows[0].begin());
      };
      const std::size_t xi = column(x_col), yi = column(y_col);
      const std::size_t li = label_col.empty() ? rows[0].size() : column(label_col);
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() <= std::max(xi, yi) || rows[r][xi].empty() || rows[r][yi].empty()) continue;
        chart.points.push_back({std::stod(rows[r][xi]), std::stod(rows[r][yi]),
                                li < rows[r].size() ? rows[r][li] : std::string()});
      }
      chart.x_label = x_col;
      chart.y_label = y_col;
    }
    std::ofstream(out + "/plot.svg") << plot::render_svg(chart);
    rec.write(out);
  } else if (rep->parsed()) {
    status = replay(record, out);
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const NumericError& e) {
    std::cerr << json{{"error", "numeric"}, {"message", e.what()}}.dump() << '\n';
  } catch (const ShapeError& e) {
    std::cerr << json{{"error", "shape"}, {"message", e.what()}}.dump() << '\n';
  } catch (const Error& e) {
    std::cerr << json{{"error", "invalid"}, {"message", e.what()}}.dump() << '\n';
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
  }
  return 1;
}
