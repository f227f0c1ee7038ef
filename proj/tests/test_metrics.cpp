#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "seqda/metrics.hpp"

using namespace seqda::metrics;

namespace {

std::string random_word(std::mt19937_64& rng, std::size_t lo, std::size_t hi, const std::string& alphabet = "abcd") {
  std::string w(lo + rng() % (hi - lo + 1), ' ');
  for (char& c : w) c = alphabet[rng() % alphabet.size()];
  return w;
}

}  // namespace

TEST(EditDistance, Examples) {
  EXPECT_EQ(edit_distance("abc", "abc"), 0u);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(oracle::edit_distance_recursive("kitten", "sitting"), 3u);
  EXPECT_EQ(edit_distance("abc", "axc", EdMode::substitution_only), 1u);
  EXPECT_EQ(edit_distance("", "abc"), 3u);
}

TEST(EditDistance, RandomPairsMatchRecursion) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_word(rng, 0, 9), b = random_word(rng, 0, 9);
    ASSERT_EQ(edit_distance(a, b), oracle::edit_distance_recursive(a, b)) << a << " / " << b;
  }
}

TEST(EditDistance, SubstitutionOnlyIsHamming) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_word(rng, 5, 5);
    const auto b = random_word(rng, 5, 5);
    std::size_t h = 0;
    for (std::size_t k = 0; k < 5; ++k) h += a[k] != b[k];
    ASSERT_EQ(edit_distance(a, b, EdMode::substitution_only), h);
    ASSERT_LE(edit_distance(a, b), h);
  }
}

TEST(EditDistance, SubstitutionOnlyRejectsUnequalLengths) {
  try {
    edit_distance("abc", "ab", EdMode::substitution_only);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("length mismatch"), std::string::npos);
  }
}

TEST(EditDistance, MetricProperties) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_word(rng, 0, 7), b = random_word(rng, 0, 7), c = random_word(rng, 0, 7);
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
    EXPECT_LE(edit_distance(a, b), std::max(a.size(), b.size()));
  }
}

TEST(ErrorRates, Examples) {
  EXPECT_EQ(cer({"abc", "de"}, {"abc", "de"}), 0.0);
  EXPECT_DOUBLE_EQ(cer({"ab"}, {"ac"}), 0.5);
  EXPECT_EQ(wer({"a", "b", "c", "d"}, {"a", "b", "c", "d"}), 0.0);
  EXPECT_DOUBLE_EQ(wer({"a", "b", "c", "x"}, {"a", "b", "c", "d"}), 0.25);
  EXPECT_DOUBLE_EQ(wer({"abcdx"}, {"abcde"}), 1.0);
}

TEST(ErrorRates, RejectEmptyAndMismatchedLists) {
  EXPECT_THROW(cer({}, {}), std::invalid_argument);
  EXPECT_THROW(wer({}, {}), std::invalid_argument);
  EXPECT_THROW(cer({"a"}, {"a", "b"}), std::invalid_argument);
}

TEST(ErrorRates, CerMatchesSummationOracle) {
  std::mt19937_64 rng(4);
  std::vector<std::string> preds, refs;
  std::size_t edits = 0, chars = 0;
  for (int i = 0; i < 100; ++i) {
    preds.push_back(random_word(rng, 0, 8));
    refs.push_back(random_word(rng, 1, 8));
    edits += oracle::edit_distance_recursive(preds.back(), refs.back());
    chars += refs.back().size();
  }
  EXPECT_DOUBLE_EQ(cer(preds, refs), static_cast<double>(edits) / static_cast<double>(chars));

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::string> p2, r2;
  for (auto i : order) p2.push_back(preds[i]), r2.push_back(refs[i]);
  EXPECT_DOUBLE_EQ(cer(p2, r2), cer(preds, refs));
}
