#include "smalr/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace smalr {

std::size_t VocabStats::types(std::size_t lang) const {
  return static_cast<std::size_t>(
      std::count_if(freq.at(lang).begin(), freq.at(lang).end(), [](std::size_t f) { return f > 0; }));
}

std::map<int, std::size_t> VocabStats::observed(std::size_t lang) const {
  std::map<int, std::size_t> out;
  const auto& f = freq.at(lang);
  for (std::size_t w = 0; w < f.size(); ++w)
    if (f[w] > 0) out.emplace(static_cast<int>(w), f[w]);
  return out;
}

VocabStats count_frequencies(const Corpus& corpus, Split split) {
  const auto& ids = corpus.splits.get(split);
  if (ids.empty()) throw Error(std::string("cannot count frequencies: split '") + to_string(split) + "' is empty");
  std::vector<char> in_split(corpus.images.size(), 0);
  for (int id : ids) in_split[corpus.image_position(id)] = 1;

  VocabStats stats;
  for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
    stats.freq.emplace_back(corpus.vocab_sizes.at(l), 0);
  }
  stats.total_tokens.assign(corpus.languages.size(), 0);
  for (const Sentence& s : corpus.sentences) {
    if (!in_split[corpus.image_position(s.image_id)]) continue;
    for (int t : s.tokens) ++stats.freq[s.lang].at(static_cast<std::size_t>(t));
    stats.total_tokens[s.lang] += s.tokens.size();
  }
  return stats;
}

VocabSplit split_top_k(const VocabStats& stats, std::size_t k) {
  VocabSplit split;
  split.k = k;
  for (std::size_t l = 0; l < stats.num_languages(); ++l) {
    const auto& f = stats.freq[l];
    std::vector<int> order(f.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return f[static_cast<std::size_t>(a)] > f[static_cast<std::size_t>(b)];
    });
    const auto seen = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [](std::size_t c) { return c > 0; }));
    const std::size_t n = std::min(k, seen);
    std::vector<int> specific(order.begin(), order.begin() + static_cast<long>(n));
    std::vector<char> flag(f.size(), 0);
    for (int w : specific) flag[static_cast<std::size_t>(w)] = 1;
    std::vector<int> agnostic;
    for (std::size_t w = 0; w < f.size(); ++w)
      if (!flag[w]) agnostic.push_back(static_cast<int>(w));
    split.specific.push_back(std::move(specific));
    split.agnostic.push_back(std::move(agnostic));
    split.is_specific.push_back(std::move(flag));
  }
  return split;
}

std::size_t VocabReduction::vocab_size() const {
  std::size_t n = 0;
  for (const auto& rows : row_word) n += rows.size();
  return n;
}

namespace {

/// Rows for the observed words of one language kept by `keep`, then UNK.
void build_language(const VocabStats& stats, std::size_t lang, const auto& keep,
                    VocabReduction& out) {
  const auto& f = stats.freq[lang];
  std::vector<int> rows;
  std::vector<ReducedTarget> target(f.size());
  std::vector<std::size_t> row_of(f.size(), static_cast<std::size_t>(-1));
  for (std::size_t w = 0; w < f.size(); ++w) {
    if (f[w] > 0 && keep(w)) {
      row_of[w] = rows.size();
      rows.push_back(static_cast<int>(w));
    }
  }
  const std::size_t unk = rows.size();
  rows.push_back(-1);
  for (std::size_t w = 0; w < f.size(); ++w) {
    target[w] = {lang, row_of[w] == static_cast<std::size_t>(-1) ? unk : row_of[w]};
  }
  out.row_word[lang] = std::move(rows);
  out.target[lang] = std::move(target);
}

}  // namespace

VocabReduction frequency_threshold(const VocabStats& stats, std::size_t t) {
  if (t < 1) throw Error("frequency threshold must be at least 1");
  VocabReduction out;
  out.method = "freq";
  out.target.resize(stats.num_languages());
  out.row_word.resize(stats.num_languages());
  for (std::size_t l = 0; l < stats.num_languages(); ++l) {
    build_language(stats, l, [&](std::size_t w) { return stats.freq[l][w] >= t; }, out);
  }
  return out;
}

VocabReduction dictionary_map(const VocabStats& stats, std::size_t t, const Dictionary& dict) {
  if (t < 1) throw Error("dictionary threshold must be at least 1");
  const std::size_t pivot = dict.pivot;
  if (pivot >= stats.num_languages()) throw Error("dictionary pivot language out of range");
  if (dict.entries.size() != stats.num_languages()) throw Error("dictionary language count mismatch");
  for (std::size_t l = 0; l < dict.entries.size(); ++l)
    for (const auto& [src, dst] : dict.entries[l]) {
      if (src < 0 || static_cast<std::size_t>(src) >= stats.freq[l].size() || dst < 0 ||
          static_cast<std::size_t>(dst) >= stats.freq[pivot].size()) {
        throw Error("dictionary references unknown word " + std::to_string(src) + " -> " +
                    std::to_string(dst));
      }
    }

  VocabReduction out;
  out.method = "dict";
  out.target.resize(stats.num_languages());
  out.row_word.resize(stats.num_languages());
  build_language(stats, pivot, [](std::size_t) { return true; }, out);
  const auto& pivot_targets = out.target[pivot];
  const std::size_t pivot_unk = out.unk_row(pivot);
  for (std::size_t l = 0; l < stats.num_languages(); ++l) {
    if (l == pivot) continue;
    build_language(stats, l, [&](std::size_t w) { return stats.freq[l][w] >= t; }, out);
    for (std::size_t w = 0; w < stats.freq[l].size(); ++w) {
      if (stats.freq[l][w] >= t) continue;
      auto it = dict.entries[l].find(static_cast<int>(w));
      if (it == dict.entries[l].end()) continue;
      const ReducedTarget pt = pivot_targets[static_cast<std::size_t>(it->second)];
      if (pt.row != pivot_unk) out.target[l][w] = pt;
    }
  }
  return out;
}

Dictionary dictionary_from_lexicon(const Corpus& corpus, const VocabStats& stats, std::size_t pivot) {
  if (corpus.lexicon.size() != corpus.languages.size()) {
    throw Error("corpus has no lexicon to derive a dictionary from");
  }
  Dictionary dict;
  dict.pivot = pivot;
  dict.entries.resize(corpus.languages.size());
  std::map<int, int> best;  // concept -> pivot word
  const auto& plex = corpus.lexicon.at(pivot);
  for (std::size_t w = 0; w < plex.size(); ++w) {
    auto [it, inserted] = best.emplace(plex[w], static_cast<int>(w));
    if (!inserted && stats.freq[pivot][w] > stats.freq[pivot][static_cast<std::size_t>(it->second)]) {
      it->second = static_cast<int>(w);
    }
  }
  for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
    if (l == pivot) continue;
    const auto& lex = corpus.lexicon[l];
    for (std::size_t w = 0; w < lex.size(); ++w) {
      auto it = best.find(lex[w]);
      if (it != best.end()) dict.entries[l].emplace(static_cast<int>(w), it->second);
    }
  }
  return dict;
}

void write_dictionary(const Dictionary& dict, const Corpus& corpus, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write dictionary: " + path);
  for (std::size_t l = 0; l < dict.entries.size(); ++l)
    for (const auto& [src, dst] : dict.entries[l]) os << corpus.languages.at(l) << '\t' << src << '\t' << dst << '\n';
}

Dictionary read_dictionary(const std::string& path, const Corpus& corpus, std::size_t pivot) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read dictionary: " + path);
  Dictionary dict;
  dict.pivot = pivot;
  dict.entries.resize(corpus.languages.size());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string lang;
    int src = -1, dst = -1;
    if (!std::getline(ss, lang, '\t') || !(ss >> src >> dst)) {
      throw Error("dictionary line " + std::to_string(n) + ": expected lang, src_word, pivot_word");
    }
    const std::size_t l = corpus.language_index(lang);
    if (src < 0 || static_cast<std::size_t>(src) >= corpus.vocab_sizes[l] || dst < 0 ||
        static_cast<std::size_t>(dst) >= corpus.vocab_sizes[pivot]) {
      throw Error("dictionary line " + std::to_string(n) + ": unknown word");
    }
    dict.entries[l][src] = dst;
  }
  return dict;
}

void write_reduction_report(const std::vector<ReductionRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write reduction report: " + path);
  os << "# thresholds count occurrences per language in the training split\n";
  os << "method,setting,vocab_size,trainable_params\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.setting << ',' << r.vocab_size << ',' << r.trainable_params << '\n';
  }
}

}  // namespace smalr
