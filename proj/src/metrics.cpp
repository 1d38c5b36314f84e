#include "smalr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace smalr {

void ScoreMatrix::validate() const {
  if (scores.rows() == 0 || scores.cols() == 0) throw Error("score matrix is empty");
  if (sentence_image.size() != scores.cols()) throw ShapeError("score matrix: one image per sentence required");
  for (std::size_t i : sentence_image)
    if (i >= scores.rows()) throw Error("score matrix: ground-truth image out of range");
  if (!scores.all_finite()) throw NumericError("score matrix has non-finite entries");
}

std::vector<std::size_t> ground_truth_ranks(const ScoreMatrix& m, Direction dir) {
  m.validate();
  const std::size_t ni = m.scores.rows(), ns = m.scores.cols();
  std::vector<std::size_t> ranks;
  if (dir == Direction::sentence_to_image) {
    for (std::size_t s = 0; s < ns; ++s) {
      const std::size_t gt = m.sentence_image[s];
      const double v = m.scores(gt, s);
      std::size_t rank = 0;
      for (std::size_t i = 0; i < ni; ++i) {
        const double x = m.scores(i, s);
        if (x > v || (x == v && i < gt)) ++rank;
      }
      ranks.push_back(rank);
    }
  } else {
    std::vector<std::vector<std::size_t>> gts(ni);
    for (std::size_t s = 0; s < ns; ++s) gts[m.sentence_image[s]].push_back(s);
    for (std::size_t i = 0; i < ni; ++i) {
      if (gts[i].empty()) continue;
      std::size_t best = ns;
      for (std::size_t gt : gts[i]) {
        const double v = m.scores(i, gt);
        std::size_t rank = 0;
        for (std::size_t s = 0; s < ns; ++s) {
          const double x = m.scores(i, s);
          if (x > v || (x == v && s < gt)) ++rank;
        }
        best = std::min(best, rank);
      }
      ranks.push_back(best);
    }
  }
  return ranks;
}

double recall_at_k(const ScoreMatrix& m, std::size_t k, Direction dir) {
  if (k < 1) throw Error("recall@k needs k >= 1");
  const auto ranks = ground_truth_ranks(m, dir);
  if (ranks.empty()) throw Error("no queries with ground truth");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double round1(double x) { return std::floor(x * 10.0 + 0.5 + 1e-9) / 10.0; }

double mean_recall(std::span<const double> recalls) {
  if (recalls.size() != 6) throw Error("mean recall needs six recalls");
  double s = 0.0;
  for (double r : recalls) s += r;
  return round1(s / 6.0);
}

LanguageMetrics language_metrics(const ScoreMatrix& m, const std::string& lang) {
  LanguageMetrics out;
  out.lang = lang;
  const std::size_t ks[3] = {1, 5, 10};
  const auto i2s = ground_truth_ranks(m, Direction::image_to_sentence);
  const auto s2i = ground_truth_ranks(m, Direction::sentence_to_image);
  auto pct = [](const std::vector<std::size_t>& ranks, std::size_t k) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; });
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
  };
  double sum = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    out.recall[j] = pct(i2s, ks[j]);
    out.recall[3 + j] = pct(s2i, ks[j]);
    sum += out.recall[j] + out.recall[3 + j];
  }
  out.mr = sum / 6.0;
  return out;
}

Aggregate aggregate(std::span<const double> mrs, std::span<const std::string> languages,
                    std::span<const std::string> human_languages) {
  if (mrs.empty() || mrs.size() != languages.size()) throw Error("aggregate: one mR per language required");
  double all = 0.0, human = 0.0;
  std::size_t nh = 0;
  for (const std::string& h : human_languages) {
    auto it = std::find(languages.begin(), languages.end(), h);
    if (it == languages.end()) throw Error("human language " + h + " is not among the evaluated languages");
    human += mrs[static_cast<std::size_t>(it - languages.begin())];
    ++nh;
  }
  for (double m : mrs) all += m;
  Aggregate out;
  out.a = round1(all / static_cast<double>(mrs.size()));
  out.ha = nh == 0 ? out.a : round1(human / static_cast<double>(nh));
  return out;
}

Aggregate MetricsReport::totals() const {
  std::vector<double> mrs;
  std::vector<std::string> langs;
  std::vector<std::string> human;
  for (const auto& r : rows) {
    mrs.push_back(round1(r.mr));
    langs.push_back(r.lang);
  }
  for (const std::string& h : human_languages)
    if (std::find(langs.begin(), langs.end(), h) != langs.end()) human.push_back(h);
  return aggregate(mrs, langs, human);
}

double MetricsReport::average_mr() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.mr;
  return s / static_cast<double>(rows.size());
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write metrics: " + path);
  char buf[64];
  os << "lang,i2s_r1,i2s_r5,i2s_r10,s2i_r1,s2i_r5,s2i_r10,mR\n";
  for (const auto& r : report.rows) {
    os << r.lang;
    for (double x : r.recall) {
      std::snprintf(buf, sizeof buf, ",%.1f", round1(x));
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.1f\n", round1(r.mr));
    os << buf;
  }
  const Aggregate t = report.totals();
  std::snprintf(buf, sizeof buf, "HA,,,,,,,%.1f\nA,,,,,,,%.1f\n", t.ha, t.a);
  os << buf;
}

namespace {

/// P(at least one of m marked items in the top k of a random order of n).
double hit_probability(std::size_t n, std::size_t m, std::size_t k) {
  if (k >= n) return 1.0;
  if (m == 0) return 0.0;
  double miss = 1.0;  // C(n-m, k) / C(n, k)
  for (std::size_t j = 0; j < k; ++j) {
    if (n - m < j + 1) return 1.0;
    miss *= static_cast<double>(n - m - j) / static_cast<double>(n - j);
  }
  return 1.0 - miss;
}

}  // namespace

double chance_mean_recall(const ScoreMatrix& m) {
  m.validate();
  const std::size_t ni = m.scores.rows(), ns = m.scores.cols();
  std::vector<std::size_t> count(ni, 0);
  for (std::size_t i : m.sentence_image) ++count[i];
  double total = 0.0;
  for (std::size_t k : {1u, 5u, 10u}) {
    double i2s = 0.0;
    std::size_t queries = 0;
    for (std::size_t i = 0; i < ni; ++i) {
      if (count[i] == 0) continue;
      i2s += hit_probability(ns, count[i], k);
      ++queries;
    }
    total += 100.0 * i2s / static_cast<double>(queries);
    total += 100.0 * hit_probability(ni, 1, k);
  }
  return total / 6.0;
}

}  // namespace smalr
