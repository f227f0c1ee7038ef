#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqda/ctc.hpp"
#include "seqda/data.hpp"
#include "seqda/tensor.hpp"

namespace seqda::lm {

inline constexpr char kStart = '^';
inline constexpr char kEnd = '$';

/// Character n-gram counts with add-one smoothing over alphabet + end token.
struct NGramModel {
  int order = 1;
  std::string alphabet;  ///< sorted observed characters
  std::map<std::string, std::map<char, std::size_t>> counts;

  std::size_t vocabulary() const { return alphabet.size() + 1; }

  std::size_t count(const std::string& context, char next) const {
    auto it = counts.find(context);
    if (it == counts.end()) return 0;
    auto jt = it->second.find(next);
    return jt == it->second.end() ? 0 : jt->second;
  }

  std::size_t total(const std::string& context) const {
    auto it = counts.find(context);
    if (it == counts.end()) return 0;
    std::size_t t = 0;
    for (const auto& [c, n] : it->second) t += n;
    return t;
  }

  double prob(const std::string& context, char next) const {
    return (static_cast<double>(count(context, next)) + 1.0) /
           (static_cast<double>(total(context)) + static_cast<double>(vocabulary()));
  }

  friend bool operator==(const NGramModel&, const NGramModel&) = default;
};

/// Lowercased letter-only words of `text`.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::string w;
    for (unsigned char ch : tok)
      if (std::isalpha(ch)) w += static_cast<char>(std::tolower(ch));
    if (!w.empty()) words.push_back(std::move(w));
  }
  return words;
}

inline std::string padded(const std::string& word, int order) {
  return std::string(static_cast<std::size_t>(order - 1), kStart) + word + kEnd;
}

inline NGramModel build_ngram(const std::string& corpus, int n) {
  if (n < 1) throw std::invalid_argument("build_ngram: order must be >= 1");
  const auto words = tokenize(corpus);
  if (words.empty()) throw std::invalid_argument("build_ngram: corpus is empty after filtering");
  NGramModel m;
  m.order = n;
  std::set<char> alpha;
  const std::size_t ctx = static_cast<std::size_t>(n - 1);
  for (const auto& w : words) {
    alpha.insert(w.begin(), w.end());
    const std::string s = padded(w, n);
    for (std::size_t i = ctx; i < s.size(); ++i) ++m.counts[s.substr(i - ctx, ctx)][s[i]];
  }
  m.alphabet.assign(alpha.begin(), alpha.end());
  return m;
}

inline double ngram_logprob(const NGramModel& m, const std::string& word) {
  const std::string s = padded(word, m.order);
  const std::size_t ctx = static_cast<std::size_t>(m.order - 1);
  double lp = 0.0;
  for (std::size_t i = ctx; i < s.size(); ++i) lp += std::log(m.prob(s.substr(i - ctx, ctx), s[i]));
  return lp;
}

// Text form: header lines, then "context TAB char TAB count" sorted by context and char.
inline std::string to_text(const NGramModel& m) {
  std::ostringstream out;
  out << "seqda-ngram 1\norder " << m.order << "\nalphabet " << m.alphabet << "\n";
  for (const auto& [context, next] : m.counts)
    for (const auto& [c, n] : next) out << context << '\t' << c << '\t' << n << '\n';
  return out.str();
}

inline NGramModel from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto fail = [](const std::string& why) { return std::runtime_error("ngram model: " + why); };
  if (!std::getline(in, line) || line != "seqda-ngram 1") throw fail("bad header");
  NGramModel m;
  if (!std::getline(in, line) || line.rfind("order ", 0) != 0) throw fail("missing order");
  m.order = std::stoi(line.substr(6));
  if (m.order < 1) throw fail("order must be >= 1");
  if (!std::getline(in, line) || line.rfind("alphabet ", 0) != 0) throw fail("missing alphabet");
  m.alphabet = line.substr(9);
  int lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos || t2 != t1 + 2)
      throw fail("malformed entry at line " + std::to_string(lineno));
    m.counts[line.substr(0, t1)][line[t1 + 1]] = std::stoull(line.substr(t2 + 1));
  }
  return m;
}

inline void save(const std::string& path, const NGramModel& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ngram model '" + path + "'");
  out << to_text(m);
}

inline NGramModel load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ngram model '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

// ---- path enumeration and rescoring ----------------------------------------

struct CandidatePath {
  std::vector<int> frames;  ///< best frame path reaching this word
  ctc::LabelSeq labels;     ///< collapsed label ids
  double net_logprob = 0.0;
};

struct EnumOptions {
  double threshold = 0.001;
  std::size_t path_thresh = 512;
  std::size_t max_paths = 50;

  static EnumOptions uncapped() { return {0.0, std::numeric_limits<std::size_t>::max(), 0}; }
};

struct FramePath {
  std::vector<int> frames;
  double logprob = 0.0;
};

/// Breadth-first expansion over frames. Symbols below the threshold are dropped and,
/// whenever the frontier exceeds path_thresh, only the max_paths best survive.
inline std::vector<FramePath> expand_frame_paths(const Tensor& probs, const EnumOptions& opt = {}) {
  std::vector<FramePath> frontier{FramePath{}};
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    std::vector<FramePath> next;
    for (const auto& fp : frontier)
      for (std::size_t k = 0; k < probs.cols(); ++k) {
        const double p = probs(t, k);
        if (p < opt.threshold || p <= 0.0) continue;
        FramePath q = fp;
        q.frames.push_back(static_cast<int>(k));
        q.logprob += std::log(p);
        next.push_back(std::move(q));
      }
    if (next.size() > opt.path_thresh) {
      std::stable_sort(next.begin(), next.end(),
                       [](const FramePath& a, const FramePath& b) { return a.logprob > b.logprob; });
      next.resize(std::min(next.size(), opt.max_paths));
    }
    frontier = std::move(next);
  }
  return frontier;
}

/// Collapses frame paths and merges equal words by log-sum-exp; best first.
inline std::vector<CandidatePath> enumerate_paths(const Tensor& probs, const EnumOptions& opt = {}) {
  const int blank = static_cast<int>(probs.cols()) - 1;
  std::map<ctc::LabelSeq, CandidatePath> merged;
  std::map<ctc::LabelSeq, double> best_frame;
  for (auto& fp : expand_frame_paths(probs, opt)) {
    auto labels = ctc::collapse(fp.frames, blank);
    auto it = merged.find(labels);
    if (it == merged.end()) {
      best_frame[labels] = fp.logprob;
      merged.emplace(labels, CandidatePath{std::move(fp.frames), labels, fp.logprob});
      continue;
    }
    it->second.net_logprob = ctc::detail::log_add(it->second.net_logprob, fp.logprob);
    if (fp.logprob > best_frame[labels]) {
      best_frame[labels] = fp.logprob;
      it->second.frames = std::move(fp.frames);
    }
  }
  std::vector<CandidatePath> out;
  for (auto& [k, c] : merged) out.push_back(std::move(c));
  std::stable_sort(out.begin(), out.end(),
                   [](const CandidatePath& a, const CandidatePath& b) { return a.net_logprob > b.net_logprob; });
  return out;
}

struct Rescored {
  std::size_t index = 0;
  std::string word;
  double score = 0.0;
};

/// argmax of net + gamma * LM; ties go to the higher net score, then the smaller word.
inline Rescored rescore(const std::vector<CandidatePath>& candidates, const NGramModel& model, double gamma,
                        const data::Alphabet& alphabet) {
  if (candidates.empty()) throw std::invalid_argument("rescore: no candidates");
  Rescored best;
  bool first = true;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::string word = alphabet.decode(candidates[i].labels);
    const double score = candidates[i].net_logprob + (gamma == 0.0 ? 0.0 : gamma * ngram_logprob(model, word));
    const double net = candidates[i].net_logprob;
    const double best_net = first ? 0.0 : candidates[best.index].net_logprob;
    const bool better = first || score > best.score ||
                        (score == best.score && (net > best_net || (net == best_net && word < best.word)));
    if (better) best = Rescored{i, word, score};
    first = false;
  }
  return best;
}

}  // namespace seqda::lm
