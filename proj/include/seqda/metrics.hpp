#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace seqda::metrics {

enum class EdMode { full, substitution_only };

/// Levenshtein distance with unit costs, or Hamming distance in
/// substitution-only mode (equal lengths required).
inline std::size_t edit_distance(std::string_view a, std::string_view b, EdMode mode = EdMode::full) {
  if (mode == EdMode::substitution_only) {
    if (a.size() != b.size())
      throw std::invalid_argument("edit_distance: length mismatch (" + std::to_string(a.size()) + " vs " +
                                  std::to_string(b.size()) + ") in substitution-only mode");
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
    return d;
  }
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace detail {
inline void check_lists(const std::vector<std::string>& preds, const std::vector<std::string>& refs) {
  if (preds.empty() || refs.empty()) throw std::invalid_argument("error rate: empty prediction/reference lists");
  if (preds.size() != refs.size())
    throw std::invalid_argument("error rate: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(refs.size()) + " references");
  for (const auto& r : refs)
    if (r.empty()) throw std::invalid_argument("error rate: empty reference word");
}
}  // namespace detail

/// Corpus-level character error rate: total edits over total reference length.
inline double cer(const std::vector<std::string>& preds, const std::vector<std::string>& refs) {
  detail::check_lists(preds, refs);
  std::size_t edits = 0, chars = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    edits += edit_distance(preds[i], refs[i]);
    chars += refs[i].size();
  }
  return static_cast<double>(edits) / static_cast<double>(chars);
}

/// Word error rate for single-word samples: fraction of mismatching words.
inline double wer(const std::vector<std::string>& preds, const std::vector<std::string>& refs) {
  detail::check_lists(preds, refs);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) wrong += preds[i] != refs[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(preds.size());
}

}  // namespace seqda::metrics
