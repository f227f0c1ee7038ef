#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqda/autodiff.hpp"
#include "seqda/data.hpp"
#include "seqda/dml.hpp"
#include "seqda/metrics.hpp"

namespace seqda::pairing {

inline constexpr int kMaxEd = 10;

/// Tablet/paper index pairs keyed by substitution-only edit distance of their labels.
struct TripletDictionary {
  std::array<std::vector<std::pair<std::size_t, std::size_t>>, kMaxEd + 1> by_ed;
  /// per_anchor[tablet index][ed] -> paper indices
  std::vector<std::array<std::vector<std::size_t>, kMaxEd + 1>> per_anchor;

  std::size_t count(int ed) const { return by_ed.at(static_cast<std::size_t>(ed)).size(); }
  std::size_t negatives() const {
    std::size_t n = 0;
    for (int d = 1; d <= kMaxEd; ++d) n += count(d);
    return n;
  }
  std::array<std::size_t, kMaxEd + 1> histogram() const {
    std::array<std::size_t, kMaxEd + 1> h{};
    for (int d = 0; d <= kMaxEd; ++d) h[static_cast<std::size_t>(d)] = count(d);
    return h;
  }
};

/// Builds the dictionary from raw labels; index i refers to tablet[i] / paper[i].
inline TripletDictionary build_pair_dictionary(const std::vector<std::string>& tablet,
                                               const std::vector<std::string>& paper) {
  // Distances are computed once per distinct label pair.
  std::map<std::string, std::vector<std::size_t>> paper_by_label;
  for (std::size_t j = 0; j < paper.size(); ++j) paper_by_label[paper[j]].push_back(j);

  TripletDictionary dict;
  dict.per_anchor.resize(tablet.size());
  std::map<std::string, std::array<std::vector<std::size_t>, kMaxEd + 1>> cache;
  for (std::size_t i = 0; i < tablet.size(); ++i) {
    auto it = cache.find(tablet[i]);
    if (it == cache.end()) {
      std::array<std::vector<std::size_t>, kMaxEd + 1> buckets;
      for (const auto& [label, idx] : paper_by_label) {
        if (label.size() != tablet[i].size()) continue;
        const std::size_t d = metrics::edit_distance(tablet[i], label, metrics::EdMode::substitution_only);
        if (d > static_cast<std::size_t>(kMaxEd)) continue;
        buckets[d].insert(buckets[d].end(), idx.begin(), idx.end());
      }
      for (auto& b : buckets) std::sort(b.begin(), b.end());
      it = cache.emplace(tablet[i], std::move(buckets)).first;
    }
    dict.per_anchor[i] = it->second;
    for (int d = 0; d <= kMaxEd; ++d)
      for (std::size_t j : it->second[static_cast<std::size_t>(d)])
        dict.by_ed[static_cast<std::size_t>(d)].emplace_back(i, j);
  }
  if (dict.count(0) == 0) throw std::runtime_error("no positives available");
  return dict;
}

inline TripletDictionary build_pair_dictionary(const data::Dataset& tablet, const data::Dataset& paper) {
  if (!(tablet.alphabet == paper.alphabet))
    throw std::invalid_argument("pairing: tablet and paper datasets must share one alphabet");
  return build_pair_dictionary(tablet.labels(), paper.labels());
}

/// Curriculum lower bound on the negative's edit distance at epoch e of max_e.
inline int ed_lower_bound(std::int64_t e, std::int64_t max_e = 200) {
  if (e < 0 || e >= max_e)
    throw std::out_of_range("ed_lower_bound: epoch " + std::to_string(e) + " outside [0, " + std::to_string(max_e) + ")");
  return static_cast<int>(1 + (max_e - e - 1) / 20);
}

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  int negative_ed = 0;
  bool fallback = false;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct Selection {
  std::vector<Triplet> triplets;
  std::size_t skipped = 0;    ///< anchors without a positive or any negative
  std::size_t fallbacks = 0;  ///< negatives taken below the bound
  int bound = 0;
};

inline Selection select_triplets(const std::vector<std::size_t>& anchors, const TripletDictionary& dict,
                                 std::int64_t e, std::int64_t max_e, std::uint64_t seed) {
  if (dict.negatives() == 0) throw std::runtime_error("pairing: dictionary holds no negative pairs");
  Selection sel;
  sel.bound = ed_lower_bound(e, max_e);
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::size_t>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  for (std::size_t a : anchors) {
    const auto& buckets = dict.per_anchor.at(a);
    if (buckets[0].empty()) {
      ++sel.skipped;
      continue;
    }
    int ed = -1;
    bool fallback = false;
    for (int d = sel.bound; d <= kMaxEd; ++d)
      if (!buckets[static_cast<std::size_t>(d)].empty()) {
        ed = d;
        break;
      }
    if (ed < 0) {
      for (int d = sel.bound - 1; d >= 1; --d)
        if (!buckets[static_cast<std::size_t>(d)].empty()) {
          ed = d;
          fallback = true;
          break;
        }
    }
    if (ed < 0) {
      ++sel.skipped;
      continue;
    }
    Triplet t;
    t.anchor = a;
    t.positive = pick(buckets[0]);
    t.negative = pick(buckets[static_cast<std::size_t>(ed)]);
    t.negative_ed = ed;
    t.fallback = fallback;
    sel.fallbacks += fallback ? 1 : 0;
    sel.triplets.push_back(t);
  }
  return sel;
}

struct MarginPolicy {
  double beta = 1.0;
  double lo = 1.0;
  double hi = 11.0;
};

inline double mean_negative_ed(const std::vector<Triplet>& batch) {
  if (batch.empty()) throw std::invalid_argument("dynamic_margin: empty batch");
  double sum = 0.0;
  for (const auto& t : batch) sum += t.negative_ed;
  return sum / static_cast<double>(batch.size());
}

inline double dynamic_margin(double mean_ed, const MarginPolicy& policy) {
  if (!(policy.beta > 0.0)) throw std::invalid_argument("dynamic_margin: beta must be > 0");
  return policy.beta * std::clamp(mean_ed, policy.lo, policy.hi);
}

inline double dynamic_margin(const std::vector<Triplet>& batch, const MarginPolicy& policy) {
  return dynamic_margin(mean_negative_ed(batch), policy);
}

namespace detail {
inline void check_bag_shapes(const std::vector<ad::Var>& a, const std::vector<ad::Var>& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": bag counts differ");
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": needs at least one pair");
  const std::size_t cols = a[0].value().cols();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].value().cols() != cols || b[i].value().cols() != cols)
      throw std::invalid_argument(std::string(what) + ": embedding width mismatch at pair " + std::to_string(i));
}
}  // namespace detail

/// Sum over triplets of max(d(a,p) - d(a,n) + alpha, 0).
inline ad::Var triplet_loss(const std::vector<ad::Var>& anchors, const std::vector<ad::Var>& positives,
                            const std::vector<ad::Var>& negatives, const dml::DmlLossSpec& spec, double alpha) {
  detail::check_bag_shapes(anchors, positives, "triplet_loss");
  detail::check_bag_shapes(anchors, negatives, "triplet_loss");
  ad::Var total;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    ad::Var dp = dml::distance(spec, anchors[i], positives[i]);
    ad::Var dn = dml::distance(spec, anchors[i], negatives[i]);
    ad::Var h = ad::relu(ad::add_scalar(ad::sub(dp, dn), alpha));
    total = i == 0 ? h : ad::add(total, h);
  }
  return total;
}

/// Sum of d over same pairs plus max(alpha - d, 0) over different pairs.
inline ad::Var contrastive_loss(const std::vector<ad::Var>& a, const std::vector<ad::Var>& b,
                                const std::vector<bool>& same, const dml::DmlLossSpec& spec, double alpha) {
  detail::check_bag_shapes(a, b, "contrastive_loss");
  if (same.size() != a.size()) throw std::invalid_argument("contrastive_loss: flag count differs");
  ad::Var total;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ad::Var d = dml::distance(spec, a[i], b[i]);
    ad::Var term = same[i] ? d : ad::relu(ad::add_scalar(ad::neg(d), alpha));
    total = i == 0 ? term : ad::add(total, term);
  }
  return total;
}

inline double triplet_loss(const std::vector<Tensor>& a, const std::vector<Tensor>& p, const std::vector<Tensor>& n,
                           const dml::DmlLossSpec& spec, double alpha) {
  ad::Graph g;
  std::vector<ad::Var> va, vp, vn;
  for (const auto& t : a) va.push_back(g.constant(t));
  for (const auto& t : p) vp.push_back(g.constant(t));
  for (const auto& t : n) vn.push_back(g.constant(t));
  return triplet_loss(va, vp, vn, spec, alpha).value().item();
}

inline double contrastive_loss(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                               const std::vector<bool>& same, const dml::DmlLossSpec& spec, double alpha) {
  ad::Graph g;
  std::vector<ad::Var> va, vb;
  for (const auto& t : a) va.push_back(g.constant(t));
  for (const auto& t : b) vb.push_back(g.constant(t));
  return contrastive_loss(va, vb, same, spec, alpha).value().item();
}

/// CSV rows "ed,tablet_id,paper_id" in ED then index order.
inline void write_pairs_csv(std::ostream& out, const TripletDictionary& dict, const data::Dataset& tablet,
                            const data::Dataset& paper) {
  out << "ed,tablet_id,paper_id\n";
  for (int d = 0; d <= kMaxEd; ++d)
    for (const auto& [i, j] : dict.by_ed[static_cast<std::size_t>(d)])
      out << d << ',' << tablet.samples.at(i).id << ',' << paper.samples.at(j).id << '\n';
}

inline void write_histogram_csv(std::ostream& out, const TripletDictionary& dict) {
  out << "ed,pairs\n";
  const auto h = dict.histogram();
  for (int d = 0; d <= kMaxEd; ++d) out << d << ',' << h[static_cast<std::size_t>(d)] << '\n';
}

}  // namespace seqda::pairing
