#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "oracles.hpp"
#include "seqda/pairing.hpp"

using namespace seqda;
using namespace seqda::pairing;

namespace {

std::vector<std::string> random_words(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string w(3 + rng() % 3, ' ');
    for (char& c : w) c = "abcd"[rng() % 4];
    out.push_back(w);
  }
  return out;
}

dml::DmlLossSpec homm1() {
  dml::DmlLossSpec s;
  s.kind = dml::DmlKind::HoMM_p1;
  s.variant = dml::Variant::full;
  return s;
}

}  // namespace

TEST(PairDictionary, HandExample) {
  const auto d = build_pair_dictionary({"cat"}, {"cat", "cut", "dog"});
  EXPECT_EQ(d.by_ed[0], (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}}));
  EXPECT_EQ(d.by_ed[1], (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}}));
  EXPECT_EQ(d.by_ed[3], (std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}}));
  EXPECT_EQ(d.count(2), 0u);
  EXPECT_EQ(d.negatives(), 2u);
}

TEST(PairDictionary, LengthMismatchGivesNoPositives) {
  try {
    build_pair_dictionary(std::vector<std::string>{"ab"}, std::vector<std::string>{"abc"});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("no positives available"), std::string::npos);
  }
}

TEST(PairDictionary, CountsMatchDoubleLoop) {
  std::mt19937_64 rng(1);
  const auto tablet = random_words(50, rng), paper = random_words(50, rng);
  std::array<std::size_t, kMaxEd + 1> expect{};
  for (const auto& a : tablet)
    for (const auto& b : paper) {
      if (a.size() != b.size()) continue;
      std::size_t d = 0;
      for (std::size_t k = 0; k < a.size(); ++k) d += a[k] != b[k];
      ++expect[d];
    }
  const auto dict = build_pair_dictionary(tablet, paper);
  EXPECT_EQ(dict.histogram(), expect);
  for (int d = 0; d <= kMaxEd; ++d)
    for (const auto& [i, j] : dict.by_ed[static_cast<std::size_t>(d)])
      ASSERT_EQ(metrics::edit_distance(tablet[i], paper[j], metrics::EdMode::substitution_only),
                static_cast<std::size_t>(d));
}

TEST(PairDictionary, RequiresSharedAlphabet) {
  data::Dataset t{{{"t0", "w", data::Domain::tablet, "ab", Tensor::matrix(1, 13)}}, data::Alphabet("ab")};
  data::Dataset p{{{"p0", "w", data::Domain::paper, "ab", Tensor::matrix(1, 13)}}, data::Alphabet("abc")};
  EXPECT_THROW(build_pair_dictionary(t, p), std::invalid_argument);
  p.alphabet = t.alphabet;
  EXPECT_EQ(build_pair_dictionary(t, p).count(0), 1u);
}

TEST(EdSchedule, Values) {
  EXPECT_EQ(ed_lower_bound(0, 200), 10);
  EXPECT_EQ(ed_lower_bound(100, 200), 5);
  EXPECT_EQ(ed_lower_bound(199, 200), 1);
  EXPECT_THROW(ed_lower_bound(200, 200), std::out_of_range);
  EXPECT_THROW(ed_lower_bound(-1, 200), std::out_of_range);
  int prev = ed_lower_bound(0, 200);
  for (int e = 1; e < 200; ++e) {
    const int b = ed_lower_bound(e, 200);
    EXPECT_LE(b, prev);
    EXPECT_GE(b, 1);
    EXPECT_EQ(b, 1 + (200 - e - 1) / 20);
    prev = b;
  }
}

TEST(SelectTriplets, FallbackBelowBound) {
  const auto dict = build_pair_dictionary({"aaa"}, {"aaa", "abb", "aab"});
  // At epoch 0 of 200 the bound is 10; only ED <= 2 exists.
  const auto sel = select_triplets({0}, dict, 0, 200, 1);
  ASSERT_EQ(sel.triplets.size(), 1u);
  EXPECT_EQ(sel.bound, 10);
  EXPECT_EQ(sel.triplets[0].negative, 1u);
  EXPECT_EQ(sel.triplets[0].negative_ed, 2);
  EXPECT_TRUE(sel.triplets[0].fallback);
  EXPECT_EQ(sel.fallbacks, 1u);
}

TEST(SelectTriplets, SmallestPopulatedAtOrAboveBound) {
  const auto dict = build_pair_dictionary({"aaaa"}, {"aaaa", "aaab", "abbb", "bbbb"});
  auto sel = select_triplets({0}, dict, 199, 200, 2);
  EXPECT_EQ(sel.triplets[0].negative_ed, 1);
  EXPECT_FALSE(sel.triplets[0].fallback);
  sel = select_triplets({0}, dict, 155, 200, 2);  // bound 3
  EXPECT_EQ(sel.bound, 3);
  EXPECT_EQ(sel.triplets[0].negative, 2u);
  sel = select_triplets({0}, dict, 170, 200, 2);  // bound 2, ED 2 empty -> ED 3
  EXPECT_EQ(sel.triplets[0].negative_ed, 3);
}

TEST(SelectTriplets, SkipsAnchorsWithoutPositives) {
  const auto dict = build_pair_dictionary({"aa", "bc"}, {"aa", "ab"});
  const auto sel = select_triplets({0, 1}, dict, 199, 200, 3);
  EXPECT_EQ(sel.triplets.size(), 1u);
  EXPECT_EQ(sel.skipped, 1u);
  const auto no_neg = build_pair_dictionary({"aa"}, {"aa"});
  EXPECT_THROW(select_triplets({0}, no_neg, 0, 200, 1), std::runtime_error);
}

TEST(SelectTriplets, Deterministic) {
  std::mt19937_64 rng(4);
  const auto tablet = random_words(40, rng);
  auto paper = random_words(200, rng);
  paper.insert(paper.end(), tablet.begin(), tablet.end());
  const auto dict = build_pair_dictionary(tablet, paper);
  std::vector<std::size_t> anchors(40);
  std::iota(anchors.begin(), anchors.end(), std::size_t{0});
  EXPECT_EQ(select_triplets(anchors, dict, 50, 200, 9).triplets, select_triplets(anchors, dict, 50, 200, 9).triplets);
}

TEST(SelectTriplets, NegativesAreUniform) {
  const auto dict = build_pair_dictionary({"aaa"}, {"aaa", "aab", "aba", "baa", "abb"});
  std::map<std::size_t, int> freq;
  const int n = 10000;
  for (int s = 0; s < n; ++s) ++freq[select_triplets({0}, dict, 199, 200, static_cast<std::uint64_t>(s)).triplets[0].negative];
  ASSERT_EQ(freq.size(), 3u);
  const double p = 1.0 / 3.0, sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [idx, count] : freq) {
    EXPECT_GE(idx, 1u);
    EXPECT_LE(idx, 3u);
    EXPECT_LT(std::abs(count - n * p), 3 * sigma);
  }
}

TEST(Margin, Formula) {
  std::vector<Triplet> two(3);
  for (auto& t : two) t.negative_ed = 2;
  EXPECT_EQ(dynamic_margin(two, {10.0}), 20.0);
  EXPECT_EQ(dynamic_margin(0.5, {1.0}), 1.0);
  EXPECT_EQ(dynamic_margin(12.0, {1.0}), 11.0);
  EXPECT_THROW(dynamic_margin(std::vector<Triplet>{}, {1.0}), std::invalid_argument);
}

TEST(TripletLoss, HingeSemantics) {
  // HoMM p=1 on 1-wide bags: d = (mean a - mean b)^2.
  const Tensor a = Tensor::matrix(1, 1, 0.0), p = Tensor::matrix(1, 1, 0.0);
  const double alpha = 2.0;
  const Tensor n_far = Tensor::matrix(1, 1, std::sqrt(alpha + 1.0));
  EXPECT_EQ(triplet_loss({a}, {p}, {n_far}, homm1(), alpha), 0.0);
  EXPECT_DOUBLE_EQ(triplet_loss({a}, {p}, {p}, homm1(), alpha), alpha);
  const Tensor n_close = Tensor::matrix(1, 1, 1.0);
  EXPECT_GT(triplet_loss({a, a}, {p, p}, {n_far, n_close}, homm1(), alpha), 0.0);
}

TEST(TripletLoss, MatchesHandSum) {
  std::mt19937_64 rng(5);
  for (auto kind : {dml::DmlKind::CORAL, dml::DmlKind::kMMD_p1, dml::DmlKind::HoMM_p2}) {
    dml::DmlLossSpec spec;
    spec.kind = kind;
    spec.variant = dml::Variant::full;
    std::vector<Tensor> a, p, n;
    for (int i = 0; i < 4; ++i) {
      a.push_back(oracle::random_matrix(5, 3, rng));
      p.push_back(oracle::random_matrix(5, 3, rng));
      n.push_back(oracle::random_matrix(5, 3, rng, -2, 2));
    }
    const double alpha = 0.05;
    double expect = 0;
    for (int i = 0; i < 4; ++i)
      expect += std::max(dml::distance(spec, a[i], p[i]) - dml::distance(spec, a[i], n[i]) + alpha, 0.0);
    EXPECT_NEAR(triplet_loss(a, p, n, spec, alpha), expect, 1e-14);
  }
}

TEST(TripletLoss, ShapeMismatchRejected) {
  const Tensor a = Tensor::matrix(3, 2), b = Tensor::matrix(3, 3);
  try {
    triplet_loss({a}, {a}, {b}, homm1(), 1.0);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("embedding width mismatch"), std::string::npos);
  }
}

TEST(ContrastiveLoss, Semantics) {
  std::mt19937_64 rng(6);
  const Tensor x = oracle::random_matrix(4, 2, rng), y = oracle::random_matrix(4, 2, rng);
  EXPECT_EQ(contrastive_loss({x, y}, {x, y}, {true, true}, homm1(), 3.0), 0.0);
  EXPECT_EQ(contrastive_loss({x}, {x}, {false}, homm1(), 3.0), 3.0);
  const double dxy = dml::distance(homm1(), x, y);
  const double alpha = dxy + 0.5;
  EXPECT_NEAR(contrastive_loss({x, x, y}, {y, y, x}, {true, false, false}, homm1(), alpha),
              dxy + 2 * std::max(alpha - dxy, 0.0), 1e-15);
  EXPECT_THROW(contrastive_loss({x}, {y}, {true, false}, homm1(), 1.0), std::invalid_argument);
}

TEST(PairReports, CsvLayout) {
  data::Dataset t{{{"t0", "w", data::Domain::tablet, "cat", Tensor::matrix(1, 13)}}, data::Alphabet("acdgotu")};
  data::Dataset p{{{"p0", "w", data::Domain::paper, "cat", Tensor::matrix(1, 13)},
                   {"p1", "w", data::Domain::paper, "cut", Tensor::matrix(1, 13)}},
                  data::Alphabet("acdgotu")};
  const auto dict = build_pair_dictionary(t, p);
  std::ostringstream pairs, hist;
  write_pairs_csv(pairs, dict, t, p);
  write_histogram_csv(hist, dict);
  EXPECT_EQ(pairs.str(), "ed,tablet_id,paper_id\n0,t0,p0\n1,t0,p1\n");
  EXPECT_EQ(hist.str().substr(0, 22), "ed,pairs\n0,1\n1,1\n2,0\n3");
}
