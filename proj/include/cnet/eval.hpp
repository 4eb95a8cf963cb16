#pragma once

#include <span>
#include <string>
#include <vector>

namespace cnet {

double overall_accuracy(std::span<const int> preds, std::span<const int> labels);

// Unweighted mean of per-class recalls over the classes present in labels.
double average_accuracy(std::span<const int> preds, std::span<const int> labels);

// Mann-Whitney AUC: probability that an anomalous score (label 1) exceeds a
// normal one (label 0), ties counted 1/2. Throws UndefinedMetricError when a
// class is missing.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Mid-ranks (1-based) of values sorted descending: the largest value gets rank 1.
std::vector<double> descending_mid_ranks(std::span<const double> values);

struct MethodResults {
  std::string name;
  std::vector<double> values;  // one per class, higher is better
};

// Mean over classes of each method's rank (1 = best, ties share the mid-rank).
std::vector<double> average_rank(std::span<const MethodResults> results);

// One-sided Wilcoxon signed-rank test of H1: a > b. Zero differences are
// dropped; exact null distribution for n <= 20, normal approximation with
// continuity correction above.
double wilcoxon_one_sided(std::span<const double> a, std::span<const double> b);

// Both branches on explicit non-zero differences, exposed for cross-checks.
double wilcoxon_exact_p(std::span<const double> differences);
double wilcoxon_normal_p(std::span<const double> differences);

struct ResultsTable {
  std::vector<std::string> classes;
  std::vector<MethodResults> methods;
};

// Per-class rows, then "Avg. Rank" and "Wilcoxon-p" rows; the p-values compare
// the best-ranked method against each other method.
std::string format_results_table(const ResultsTable& table);
std::string results_table_csv(const ResultsTable& table);

}  // namespace cnet
