#pragma once

// Distances between two embedding bags (rows = feature vectors): moment
// matching (linear/higher order, grouped, sampled, kernelized) and the
// covariance-alignment family. Every distance is a graph expression so it can
// be differentiated with respect to both bags.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "seqda/autodiff.hpp"
#include "seqda/tensor.hpp"

namespace seqda::dml {

enum class DmlKind { kMMD_p1, HoMM_p1, HoMM_p2, HoMM_p3, kHoMM_p2, kHoMM_p3, CORAL, JeffCORAL, SteinCORAL };

/// Kinds that carry a margin weight per fusion point.
inline constexpr std::array<DmlKind, 8> kTabulatedKinds = {
    DmlKind::kMMD_p1,  DmlKind::HoMM_p2, DmlKind::HoMM_p3,   DmlKind::kHoMM_p2,
    DmlKind::kHoMM_p3, DmlKind::CORAL,   DmlKind::JeffCORAL, DmlKind::SteinCORAL};

inline std::string_view kind_name(DmlKind k) {
  switch (k) {
    case DmlKind::kMMD_p1: return "kMMD_p1";
    case DmlKind::HoMM_p1: return "HoMM_p1";
    case DmlKind::HoMM_p2: return "HoMM_p2";
    case DmlKind::HoMM_p3: return "HoMM_p3";
    case DmlKind::kHoMM_p2: return "kHoMM_p2";
    case DmlKind::kHoMM_p3: return "kHoMM_p3";
    case DmlKind::CORAL: return "CORAL";
    case DmlKind::JeffCORAL: return "JeffCORAL";
    case DmlKind::SteinCORAL: return "SteinCORAL";
  }
  return "?";
}

inline DmlKind parse_kind(std::string_view s) {
  for (DmlKind k : {DmlKind::kMMD_p1, DmlKind::HoMM_p1, DmlKind::HoMM_p2, DmlKind::HoMM_p3, DmlKind::kHoMM_p2,
                    DmlKind::kHoMM_p3, DmlKind::CORAL, DmlKind::JeffCORAL, DmlKind::SteinCORAL})
    if (kind_name(k) == s) return k;
  throw std::invalid_argument("unknown DML kind '" + std::string(s) + "'");
}

inline int kind_order(DmlKind k) {
  switch (k) {
    case DmlKind::kMMD_p1:
    case DmlKind::HoMM_p1: return 1;
    case DmlKind::HoMM_p2:
    case DmlKind::kHoMM_p2: return 2;
    case DmlKind::HoMM_p3:
    case DmlKind::kHoMM_p3: return 3;
    default: return 2;
  }
}

enum class Variant { full, group, sampled };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::group: return "group";
    case Variant::sampled: return "sampled";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::full, Variant::group, Variant::sampled})
    if (variant_name(v) == s) return v;
  throw std::invalid_argument("unknown DML variant '" + std::string(s) + "'");
}

struct DmlLossSpec {
  DmlKind kind = DmlKind::kHoMM_p3;
  Variant variant = Variant::sampled;
  std::size_t groups = 1;      ///< n_g for Variant::group
  std::size_t samples = 1000;  ///< T for Variant::sampled
  std::uint64_t seed = 0;      ///< tuple sampling seed
  double bandwidth = 0.0;      ///< RBF sigma; 0 selects the median heuristic

  void validate() const {
    if (variant == Variant::sampled && samples < 1) throw std::invalid_argument("dml: sampled variant needs T >= 1");
    if (variant == Variant::group && groups < 1) throw std::invalid_argument("dml: group variant needs n_g >= 1");
    if (bandwidth < 0.0) throw std::invalid_argument("dml: bandwidth must be >= 0");
  }
};

/// Index tuples (i_1..i_p) selecting entries of the p-level tensor power.
using Tuples = std::vector<std::vector<std::size_t>>;

inline constexpr double kMaxTensorEntries = 1e7;

inline void check_tensor_size(std::size_t h, int p) {
  if (std::pow(static_cast<double>(h), p) > kMaxTensorEntries)
    throw std::invalid_argument("dml: H^p = " + std::to_string(h) + "^" + std::to_string(p) +
                                " exceeds 1e7 entries; use the sampled variant");
}

/// T tuples drawn uniformly from [H]^p.
inline Tuples sample_tuples(std::size_t h, int p, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, h - 1);
  Tuples out(count, std::vector<std::size_t>(static_cast<std::size_t>(p)));
  for (auto& t : out)
    for (auto& i : t) i = pick(rng);
  return out;
}

/// Every tuple of [H]^p in lexicographic order.
inline Tuples all_tuples(std::size_t h, int p) {
  check_tensor_size(h, p);
  const auto n = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(h), p)));
  Tuples out(n, std::vector<std::size_t>(static_cast<std::size_t>(p)));
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t rem = k;
    for (int j = p; j-- > 0;) {
      out[k][static_cast<std::size_t>(j)] = rem % h;
      rem /= h;
    }
  }
  return out;
}

namespace detail {

inline void check_bags(ad::Var s, ad::Var t, std::size_t min_rows, const char* what) {
  const Tensor& a = s.value();
  const Tensor& b = t.value();
  if (!a.is_matrix() || !b.is_matrix()) throw std::invalid_argument(std::string(what) + ": bags must be rank 2");
  if (a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": feature dimension mismatch (H=" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.cols()) + ")");
  if (a.rows() < min_rows || b.rows() < min_rows)
    throw std::invalid_argument(std::string(what) + ": bags need at least " + std::to_string(min_rows) + " rows");
}

/// mean((X Y^T)^p) over all row pairs.
inline ad::Var mean_gram_power(ad::Var x, ad::Var y, int p) {
  return ad::mean(ad::pow(ad::matmul(x, ad::transpose(y)), static_cast<double>(p)));
}

inline ad::Var covariance(ad::Var x) {
  const auto n = static_cast<double>(x.value().rows());
  ad::Var xc = ad::center(x, 0);
  return ad::scale(ad::matmul(ad::transpose(xc), xc), 1.0 / n);
}

inline ad::Var regularized(ad::Var c) {
  const auto h = static_cast<double>(c.value().rows());
  ad::Var eps = ad::add_scalar(ad::scale(ad::trace(c), 1e-6 / h), 1e-12);
  return ad::add_identity(c, eps);
}

}  // namespace detail

/// Higher-order moment matching:
/// (1/H^p) * || mean_i s_i^{(x)p} - mean_j t_j^{(x)p} ||_F^2.
/// Evaluated through inner products, <x^{(x)p}, y^{(x)p}> = <x, y>^p.
inline ad::Var homm(ad::Var s, ad::Var t, int p) {
  detail::check_bags(s, t, 1, "homm");
  if (p < 1) throw std::invalid_argument("homm: order p must be >= 1");
  const std::size_t h = s.value().cols();
  check_tensor_size(h, p);
  ad::Var ss = detail::mean_gram_power(s, s, p);
  ad::Var tt = detail::mean_gram_power(t, t, p);
  ad::Var st = detail::mean_gram_power(s, t, p);
  ad::Var d = ad::sub(ad::add(ss, tt), ad::scale(st, 2.0));
  return ad::scale(d, 1.0 / std::pow(static_cast<double>(h), p));
}

/// Mean of homm over n_g contiguous neuron groups of floor(H/n_g) columns;
/// trailing remainder columns are dropped.
inline ad::Var homm_grouped(ad::Var s, ad::Var t, int p, std::size_t groups) {
  detail::check_bags(s, t, 1, "homm_grouped");
  const std::size_t h = s.value().cols();
  if (groups < 1 || groups > h)
    throw std::invalid_argument("homm_grouped: n_g = " + std::to_string(groups) + " must be in [1, H=" +
                                std::to_string(h) + "]");
  const std::size_t width = h / groups;
  std::vector<ad::Var> parts;
  for (std::size_t g = 0; g < groups; ++g) {
    if (groups == 1 && width == h) {
      parts.push_back(homm(s, t, p));
      break;
    }
    parts.push_back(homm(ad::slice_cols(s, g * width, (g + 1) * width), ad::slice_cols(t, g * width, (g + 1) * width), p));
  }
  ad::Var total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  return ad::scale(total, 1.0 / static_cast<double>(groups));
}

/// Rows mapped to the monomials named by `tuples`: F[i][k] = prod_j x_i[tuples[k][j]].
inline ad::Var monomial_features(ad::Var x, const Tuples& tuples) {
  if (tuples.empty()) throw std::invalid_argument("monomial_features: no tuples");
  const std::size_t p = tuples.front().size();
  ad::Var out{};
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<std::size_t> idx(tuples.size());
    for (std::size_t k = 0; k < tuples.size(); ++k) {
      if (tuples[k].size() != p) throw std::invalid_argument("monomial_features: ragged tuples");
      idx[k] = tuples[k][j];
    }
    ad::Var col = ad::gather_cols(x, std::move(idx));
    out = j == 0 ? col : ad::mul(out, col);
  }
  return out;
}

/// Random-sampling moment matching over explicit tuples:
/// (1/T) * sum_t (mean_i prod s_i[tuple_t] - mean_j prod t_j[tuple_t])^2.
inline ad::Var homm_sampled(ad::Var s, ad::Var t, const Tuples& tuples) {
  detail::check_bags(s, t, 1, "homm_sampled");
  for (const auto& tp : tuples)
    for (std::size_t i : tp)
      if (i >= s.value().cols()) throw std::invalid_argument("homm_sampled: tuple index out of range");
  ad::Var diff = ad::sub(ad::mean_rows(monomial_features(s, tuples)), ad::mean_rows(monomial_features(t, tuples)));
  return ad::mean(ad::square(diff));
}

inline ad::Var homm_sampled(ad::Var s, ad::Var t, int p, std::size_t count, std::uint64_t seed) {
  detail::check_bags(s, t, 1, "homm_sampled");
  if (count < 1) throw std::invalid_argument("homm_sampled: T must be >= 1");
  return homm_sampled(s, t, sample_tuples(s.value().cols(), p, count, seed));
}

/// Biased squared MMD with a Gaussian RBF kernel exp(-||x-y||^2 / sigma^2).
/// sigma = `bandwidth` when positive, otherwise the median pairwise distance
/// over the pooled bags (self-pairs excluded), floored at 1e-8.
inline ad::Var kmmd(ad::Var s, ad::Var t, double bandwidth = 0.0) {
  detail::check_bags(s, t, 1, "kmmd");
  ad::Graph& g = *s.graph;
  const std::size_t ns = s.value().rows(), nt = t.value().rows();
  ad::Var dss = ad::pairwise_sqdist(s, s);
  ad::Var dtt = ad::pairwise_sqdist(t, t);
  ad::Var dst = ad::pairwise_sqdist(s, t);

  ad::Var inv_sigma2{};
  if (bandwidth > 0.0) {
    inv_sigma2 = g.constant(Tensor::scalar(1.0 / (bandwidth * bandwidth)));
  } else {
    std::vector<ad::Var> pooled;
    auto upper = [](std::size_t n) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) idx.push_back(i * n + j);
      return idx;
    };
    if (ns > 1) pooled.push_back(ad::gather(dss, upper(ns)));
    if (nt > 1) pooled.push_back(ad::gather(dtt, upper(nt)));
    pooled.push_back(dst);
    std::vector<ad::Var> flat;
    for (ad::Var v : pooled) flat.push_back(v.value().rows() == 1 ? v : ad::gather(v, [&] {
      std::vector<std::size_t> all(v.value().size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      return all;
    }()));
    ad::Var d2 = flat.size() == 1 ? flat.front() : ad::concat_cols(flat);
    const auto& vals = d2.value().values;
    std::vector<std::size_t> order(vals.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t m = order.size();
    std::vector<std::size_t> mid = m % 2 ? std::vector<std::size_t>{order[m / 2]}
                                         : std::vector<std::size_t>{order[m / 2 - 1], order[m / 2]};
    ad::Var sigma = ad::clamp_min(ad::mean(ad::sqrt(ad::gather(d2, mid))), 1e-8);
    inv_sigma2 = ad::pow(sigma, -2.0);
  }
  auto kernel_mean = [&](ad::Var d) { return ad::mean(ad::exp(ad::neg(ad::scale_by(d, inv_sigma2)))); };
  ad::Var kss = kernel_mean(dss), ktt = kernel_mean(dtt), kst = kernel_mean(dst);
  return ad::sub(ad::add(kss, ktt), ad::scale(kst, 2.0));
}

/// Kernelized moment matching: kmmd between the sampled monomial feature bags.
inline ad::Var khomm(ad::Var s, ad::Var t, const Tuples& tuples, double bandwidth = 0.0) {
  detail::check_bags(s, t, 1, "khomm");
  return kmmd(monomial_features(s, tuples), monomial_features(t, tuples), bandwidth);
}

inline ad::Var khomm(ad::Var s, ad::Var t, int p, std::size_t count, std::uint64_t seed, double bandwidth = 0.0) {
  detail::check_bags(s, t, 1, "khomm");
  return khomm(s, t, sample_tuples(s.value().cols(), p, count, seed), bandwidth);
}

/// (1 / 4H^2) * ||C_s - C_t||_F^2 with C = (1/n) Xc^T Xc.
inline ad::Var coral(ad::Var s, ad::Var t) {
  detail::check_bags(s, t, 2, "coral");
  const auto h = static_cast<double>(s.value().cols());
  ad::Var diff = ad::sub(detail::covariance(s), detail::covariance(t));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / (4.0 * h * h));
}

/// Jeffreys-style divergence tr(A B^-1) + tr(B A^-1) - 2H on the regularized
/// covariances A = C_s + eps I, B = C_t + eps I, evaluated as
/// tr((A - B)(B^-1 - A^-1)) so that ill-conditioned inputs do not cancel badly.
inline ad::Var jeff_coral(ad::Var s, ad::Var t) {
  detail::check_bags(s, t, 2, "jeff_coral");
  ad::Var a = detail::regularized(detail::covariance(s));
  ad::Var b = detail::regularized(detail::covariance(t));
  ad::Var j = ad::trace(ad::matmul(ad::sub(a, b), ad::sub(ad::inverse(b), ad::inverse(a))));
  if (!std::isfinite(j.value().item())) throw std::domain_error("jeff_coral: non-finite value after regularization");
  return j;
}

/// Stein (log-det) divergence
/// log det((C_s + C_t)/2 + eps I) - 1/2 log det(C_s + eps I) - 1/2 log det(C_t + eps I).
inline ad::Var stein_coral(ad::Var s, ad::Var t) {
  detail::check_bags(s, t, 2, "stein_coral");
  ad::Var cs = detail::covariance(s);
  ad::Var ct = detail::covariance(t);
  ad::Var mid = ad::logdet(detail::regularized(ad::scale(ad::add(cs, ct), 0.5)));
  ad::Var ls = ad::scale(ad::logdet(detail::regularized(cs)), 0.5);
  ad::Var lt = ad::scale(ad::logdet(detail::regularized(ct)), 0.5);
  return ad::sub(ad::sub(mid, ls), lt);
}

/// Distance selected by `spec`.
inline ad::Var distance(const DmlLossSpec& spec, ad::Var a, ad::Var b) {
  spec.validate();
  const int p = kind_order(spec.kind);
  switch (spec.kind) {
    case DmlKind::kMMD_p1:
      return kmmd(a, b, spec.bandwidth);
    case DmlKind::HoMM_p1:
    case DmlKind::HoMM_p2:
    case DmlKind::HoMM_p3:
      switch (spec.variant) {
        case Variant::full: return homm(a, b, p);
        case Variant::group: return homm_grouped(a, b, p, spec.groups);
        case Variant::sampled: return homm_sampled(a, b, p, spec.samples, spec.seed);
      }
      break;
    case DmlKind::kHoMM_p2:
    case DmlKind::kHoMM_p3:
      if (spec.variant == Variant::sampled) return khomm(a, b, p, spec.samples, spec.seed, spec.bandwidth);
      return khomm(a, b, all_tuples(a.value().cols(), p), spec.bandwidth);
    case DmlKind::CORAL: return coral(a, b);
    case DmlKind::JeffCORAL: return jeff_coral(a, b);
    case DmlKind::SteinCORAL: return stein_coral(a, b);
  }
  throw std::logic_error("dml: unhandled kind");
}

/// Evaluates a bag distance on plain tensors.
template <class F>
double evaluate(F&& fn, const Tensor& a, const Tensor& b) {
  ad::Graph g;
  return fn(g.constant(a), g.constant(b)).value().item();
}

inline double distance(const DmlLossSpec& spec, const Tensor& a, const Tensor& b) {
  return evaluate([&](ad::Var x, ad::Var y) { return distance(spec, x, y); }, a, b);
}

// ---- margin weights per kind and fusion point ------------------------------

class BetaTable {
 public:
  static constexpr int kVersion = 1;

  /// The published per-kind, per-fusion-point values.
  static BetaTable published() {
    BetaTable t;
    t.set(DmlKind::kMMD_p1, {10, 100, 100, 10, 10});
    t.set(DmlKind::HoMM_p2, {0.01, 1e5, 1e4, 100, 0.1});
    t.set(DmlKind::HoMM_p3, {1e-6, 1e6, 1e5, 100, 1e-3});
    t.set(DmlKind::kHoMM_p2, {1e3, 1e6, 1e6, 1e4, 10});
    t.set(DmlKind::kHoMM_p3, {100, 1e6, 1e6, 1e4, 10});
    t.set(DmlKind::CORAL, {0.01, 1e4, 1e4, 10, 0.01});
    t.set(DmlKind::JeffCORAL, {0.1, 100, 100, 1, 0.1});
    t.set(DmlKind::SteinCORAL, {1, 100, 100, 10, 1});
    return t;
  }

  void set(DmlKind k, std::array<double, 5> row) {
    for (double v : row)
      if (!(v > 0.0)) throw std::invalid_argument("beta table: values must be > 0");
    rows_[static_cast<std::size_t>(k)] = row;
    present_[static_cast<std::size_t>(k)] = true;
  }

  double lookup(DmlKind k, int c) const {
    if (c < 1 || c > 5 || !present_[static_cast<std::size_t>(k)])
      throw std::invalid_argument("beta table: no entry for (" + std::string(kind_name(k)) + ", c=" +
                                  std::to_string(c) + ")");
    return rows_[static_cast<std::size_t>(k)][static_cast<std::size_t>(c - 1)];
  }

  /// Text form: "version = 1" then one "<kind> = b1 b2 b3 b4 b5" line per kind.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "# margin weight beta per DML kind for fusion points c=1..5\n";
    os << "version = " << kVersion << "\n";
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (!present_[i]) continue;
      os << kind_name(static_cast<DmlKind>(i)) << " =";
      for (double v : rows_[i]) os << ' ' << v;
      os << '\n';
    }
    return os.str();
  }

  static BetaTable parse(const std::string& text) {
    BetaTable t;
    std::istringstream in(text);
    std::string line;
    bool versioned = false;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos) throw std::invalid_argument("beta table line " + std::to_string(lineno) + ": missing '='");
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      std::istringstream vals(line.substr(eq + 1));
      if (key == "version") {
        int v = 0;
        vals >> v;
        if (v != kVersion) throw std::invalid_argument("beta table: unsupported version " + std::to_string(v));
        versioned = true;
        continue;
      }
      std::array<double, 5> row{};
      for (double& v : row)
        if (!(vals >> v)) throw std::invalid_argument("beta table line " + std::to_string(lineno) + ": need 5 values");
      t.set(parse_kind(key), row);
    }
    if (!versioned) throw std::invalid_argument("beta table: missing version");
    return t;
  }

  static BetaTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open beta table '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

 private:
  std::array<std::array<double, 5>, 9> rows_{};
  std::array<bool, 9> present_{};
};

inline double beta_lookup(DmlKind k, int c) { return BetaTable::published().lookup(k, c); }

}  // namespace seqda::dml
