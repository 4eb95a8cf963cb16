#include "doctest.h"
#include "support.hpp"

#include "cnet/error.hpp"
#include "cnet/eval.hpp"

#include <numeric>

using namespace cnet;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (l[a] != 1) continue;
    for (std::size_t n = 0; n < s.size(); ++n) {
      if (l[n] != 0) continue;
      pairs += 1.0;
      num += s[a] > s[n] ? 1.0 : (s[a] == s[n] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

// Enumerates all 2^n sign flips of |d| with mid-ranks.
double enumerated_p(const std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(d[i]);
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += mags[j] < mags[i] ? 1 : 0;
      equal += mags[j] == mags[i] ? 1 : 0;
    }
    ranks[i] = less + (equal + 1) / 2.0;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i) observed += d[i] > 0 ? ranks[i] : 0;
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) w += (mask >> i) & 1 ? ranks[i] : 0;
    hits += w >= observed - 1e-9 ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(std::size_t{1} << n);
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("accuracies") {
  CHECK(overall_accuracy(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}) == 1.0);
  CHECK(overall_accuracy(std::vector<int>{0, 1, 1}, std::vector<int>{0, 1, 0}) == doctest::Approx(2.0 / 3.0));
  std::vector<int> preds(11, 0), labels(11, 0);
  labels[10] = 1;
  CHECK(average_accuracy(preds, labels) == doctest::Approx(0.5));
  CHECK(average_accuracy(std::vector<int>{0, 1, 1, 0}, std::vector<int>{0, 0, 1, 1}) ==
        overall_accuracy(std::vector<int>{0, 1, 1, 0}, std::vector<int>{0, 0, 1, 1}));
  CHECK_THROWS_AS(overall_accuracy(std::vector<int>{1}, std::vector<int>{}), ShapeError);

  Rng rng(1);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> p(40), l(40);
    for (int i = 0; i < 40; ++i) {
      p[static_cast<std::size_t>(i)] = cls(rng);
      l[static_cast<std::size_t>(i)] = cls(rng);
    }
    std::vector<double> hit(4, 0), tot(4, 0);
    double correct = 0;
    for (int i = 0; i < 40; ++i) {
      tot[static_cast<std::size_t>(l[static_cast<std::size_t>(i)])] += 1;
      if (p[static_cast<std::size_t>(i)] == l[static_cast<std::size_t>(i)]) {
        hit[static_cast<std::size_t>(l[static_cast<std::size_t>(i)])] += 1;
        correct += 1;
      }
    }
    double aa = 0, present = 0;
    for (int c = 0; c < 4; ++c) {
      if (tot[static_cast<std::size_t>(c)] > 0) {
        aa += hit[static_cast<std::size_t>(c)] / tot[static_cast<std::size_t>(c)];
        present += 1;
      }
    }
    CHECK(overall_accuracy(p, l) == doctest::Approx(correct / 40.0).epsilon(1e-15));
    CHECK(average_accuracy(p, l) == doctest::Approx(aa / present).epsilon(1e-12));
  }
}

TEST_CASE("AUC examples") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.1, 0.9, 0.4}, std::vector<int>{1, 1, 0, 0}) == 0.25);
  CHECK(roc_auc(std::vector<double>{3, 3, 3, 3}, std::vector<int>{1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_WITH_AS(roc_auc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), doctest::Contains("AUC undefined"), UndefinedMetricError);
}

TEST_CASE("AUC equals pairwise concordance and is rank-based") {
  Rng rng(5);
  std::uniform_int_distribution<int> size(2, 50), coarse(0, 6);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = trial % 2 ? normal(rng) : coarse(rng);  // even trials have ties
      l[static_cast<std::size_t>(i)] = i % 2;
    }
    const double auc = roc_auc(s, l);
    CHECK(auc == pairwise_auc(s, l));
    std::vector<double> mapped(s.size()), negated(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      mapped[i] = 3.0 * s[i] + 7.0;
      negated[i] = -s[i];
    }
    CHECK(roc_auc(mapped, l) == auc);
    if (trial % 2) CHECK(roc_auc(negated, l) + auc == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("average rank") {
  std::vector<MethodResults> two{{"A", {0.9, 0.8}}, {"B", {0.5, 0.4}}};
  CHECK(average_rank(two) == std::vector<double>{1.0, 2.0});
  two[1].values = {0.5, 0.95};
  CHECK(average_rank(two) == std::vector<double>{1.5, 1.5});
  two[1].values = {0.9, 0.4};
  CHECK(average_rank(two) == std::vector<double>{1.25, 1.75});
  CHECK_THROWS_AS(average_rank(std::vector<MethodResults>{{"A", {1.0}}}), ShapeError);

  Rng rng(7);
  std::uniform_int_distribution<int> m_dist(2, 6), values(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = m_dist(rng);
    std::vector<MethodResults> table(static_cast<std::size_t>(m));
    for (auto& r : table) for (int c = 0; c < 7; ++c) r.values.push_back(values(rng));
    for (int c = 0; c < 7; ++c) {
      std::vector<double> column;
      for (const auto& r : table) column.push_back(r.values[static_cast<std::size_t>(c)]);
      const auto ranks = descending_mid_ranks(column);
      CHECK(std::accumulate(ranks.begin(), ranks.end(), 0.0) == m * (m + 1) / 2.0);
    }
    const auto avg = average_rank(table);
    CHECK(std::accumulate(avg.begin(), avg.end(), 0.0) == doctest::Approx(m * (m + 1) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("Wilcoxon signed-rank test") {
  const std::vector<double> a{0.9, 0.8, 0.7, 0.95, 0.85}, b{0.8, 0.6, 0.4, 0.55, 0.35};
  CHECK(wilcoxon_one_sided(a, b) == 0.03125);
  CHECK_THROWS_WITH_AS(wilcoxon_one_sided(a, a), doctest::Contains("no information"), UndefinedMetricError);

  Rng rng(9);
  std::normal_distribution<double> normal(0.2, 1.0);
  std::uniform_int_distribution<int> tie(-3, 3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> d;
    for (int i = 0; i < 12; ++i) {
      const double v = trial % 2 ? normal(rng) : tie(rng);
      if (v != 0.0) d.push_back(v);
    }
    if (d.empty()) continue;
    const double p = wilcoxon_exact_p(d);
    CHECK(p == doctest::Approx(enumerated_p(d)).epsilon(1e-12));
    // Mirrored statistic: P(W+ >= w) for -d is the complementary tail of d.
    std::vector<double> neg(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) neg[i] = -d[i];
    CHECK(wilcoxon_exact_p(neg) == doctest::Approx(enumerated_p(neg)).epsilon(1e-12));
  }

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> d;
    for (int i = 0; i < 20; ++i) d.push_back(normal(rng));
    CHECK(std::abs(wilcoxon_exact_p(d) - wilcoxon_normal_p(d)) < 0.02);
  }
}

TEST_CASE("results table layout") {
  ResultsTable t;
  t.classes = {"chair", "table", "sofa", "bed", "desk"};
  t.methods = {{"Ours", {0.9, 0.8, 0.85, 0.7, 0.75}}, {"IFOR", {0.6, 0.5, 0.55, 0.4, 0.45}}};
  const std::string text = format_results_table(t);
  CHECK(text.find("Avg. Rank") != std::string::npos);
  CHECK(text.find("Wilcoxon-p") != std::string::npos);
  CHECK(text.find("0.031") != std::string::npos);
  const std::string csv = results_table_csv(t);
  CHECK(csv.rfind("class,Ours,IFOR\n", 0) == 0);
  CHECK(csv.find("Avg. Rank,1,2") != std::string::npos);
}

}  // TEST_SUITE
