#include "cnet/eval.hpp"

#include "cnet/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace cnet {

namespace {

void check_pairs(std::size_t a, std::size_t b) {
  if (a != b) throw ShapeError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw ShapeError("empty input");
}

// Ascending mid-ranks (1-based).
std::vector<double> ascending_mid_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

std::vector<double> nonzero_differences(std::span<const double> a, std::span<const double> b) {
  check_pairs(a.size(), b.size());
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  if (d.empty()) throw UndefinedMetricError("no information: all differences are zero");
  return d;
}

// Positive-rank sum W+ with ranks of |d| (mid-ranks on ties).
double positive_rank_sum(std::span<const double> d, std::vector<double>& ranks) {
  std::vector<double> mags(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mags[i] = std::abs(d[i]);
  ranks = ascending_mid_ranks(mags);
  double w = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0.0) w += ranks[i];
  }
  return w;
}

}  // namespace

double overall_accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pairs(preds.size(), labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double average_accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pairs(preds.size(), labels.size());
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // label -> (correct, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [correct, total] = per_class[labels[i]];
    ++total;
    if (preds[i] == labels[i]) ++correct;
  }
  double sum = 0.0;
  for (const auto& [label, counts] : per_class) {
    sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return sum / static_cast<double>(per_class.size());
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores.size(), labels.size());
  double positives = 0.0, negatives = 0.0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ShapeError("AUC labels must be 0 (normal) or 1 (anomalous)");
    (l == 1 ? positives : negatives) += 1.0;
  }
  if (positives == 0.0 || negatives == 0.0) {
    throw UndefinedMetricError("AUC undefined: scores contain a single class");
  }
  const std::vector<double> ranks = ascending_mid_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) rank_sum += ranks[i];
  }
  const double u = rank_sum - positives * (positives + 1.0) / 2.0;
  return u / (positives * negatives);
}

std::vector<double> descending_mid_ranks(std::span<const double> values) {
  std::vector<double> negated(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) negated[i] = -values[i];
  return ascending_mid_ranks(negated);
}

std::vector<double> average_rank(std::span<const MethodResults> results) {
  if (results.size() < 2) throw ShapeError("average rank needs at least 2 methods");
  const std::size_t classes = results[0].values.size();
  if (classes == 0) throw ShapeError("no classes to rank");
  for (const auto& m : results) {
    if (m.values.size() != classes) throw ShapeError("methods cover different class lists");
  }
  std::vector<double> mean(results.size(), 0.0);
  std::vector<double> column(results.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t m = 0; m < results.size(); ++m) column[m] = results[m].values[c];
    const auto ranks = descending_mid_ranks(column);
    for (std::size_t m = 0; m < results.size(); ++m) mean[m] += ranks[m];
  }
  for (double& r : mean) r /= static_cast<double>(classes);
  return mean;
}

double wilcoxon_exact_p(std::span<const double> differences) {
  const std::size_t n = differences.size();
  if (n == 0) throw UndefinedMetricError("no information: all differences are zero");
  std::vector<double> ranks;
  const double observed = positive_rank_sum(differences, ranks);
  // Mid-ranks are multiples of 1/2: count sign assignments over doubled ranks.
  std::vector<std::size_t> doubled(n);
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    doubled[i] = static_cast<std::size_t>(std::lround(2.0 * ranks[i]));
    total += doubled[i];
  }
  std::vector<double> ways(total + 1, 0.0);
  ways[0] = 1.0;
  for (std::size_t r : doubled) {
    for (std::size_t s = total; s >= r; --s) {
      ways[s] += ways[s - r];
      if (s == r) break;
    }
  }
  const auto threshold = static_cast<std::size_t>(std::lround(2.0 * observed));
  double tail = 0.0;
  for (std::size_t s = threshold; s <= total; ++s) tail += ways[s];
  return tail / std::ldexp(1.0, static_cast<int>(n));
}

double wilcoxon_normal_p(std::span<const double> differences) {
  const std::size_t n = differences.size();
  if (n == 0) throw UndefinedMetricError("no information: all differences are zero");
  std::vector<double> ranks;
  const double w = positive_rank_sum(differences, ranks);
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  // Tie correction: subtract sum(t^3 - t) / 48 over groups of tied |d|.
  std::map<double, std::size_t> groups;
  for (double r : ranks) ++groups[r];
  double ties = 0.0;
  for (const auto& [r, t] : groups) {
    const double tt = static_cast<double>(t);
    ties += tt * tt * tt - tt;
  }
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - ties / 48.0;
  if (!(var > 0.0)) return w > mean ? 0.0 : 1.0;
  const double z = (w - mean - 0.5) / std::sqrt(var);
  return normal_upper_tail(z);
}

double wilcoxon_one_sided(std::span<const double> a, std::span<const double> b) {
  const std::vector<double> d = nonzero_differences(a, b);
  return d.size() <= 20 ? wilcoxon_exact_p(d) : wilcoxon_normal_p(d);
}

namespace {

struct Footer {
  std::vector<double> ranks;
  std::size_t best = 0;
  std::vector<std::string> p_values;
};

Footer compute_footer(const ResultsTable& table) {
  Footer f;
  f.ranks = average_rank(table.methods);
  f.best = static_cast<std::size_t>(std::min_element(f.ranks.begin(), f.ranks.end()) - f.ranks.begin());
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    if (m == f.best) {
      f.p_values.emplace_back("-");
      continue;
    }
    std::ostringstream s;
    try {
      s << std::fixed << std::setprecision(3)
        << wilcoxon_one_sided(table.methods[f.best].values, table.methods[m].values);
    } catch (const UndefinedMetricError&) {
      s << "n/a";
    }
    f.p_values.push_back(s.str());
  }
  return f;
}

}  // namespace

std::string format_results_table(const ResultsTable& table) {
  const Footer footer = compute_footer(table);
  std::size_t label_width = std::string("Wilcoxon-p").size();
  for (const auto& c : table.classes) label_width = std::max(label_width, c.size());
  std::size_t col_width = 8;
  for (const auto& m : table.methods) col_width = std::max(col_width, m.name.size() + 2);

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(label_width)) << "Class";
  for (const auto& m : table.methods) out << std::right << std::setw(static_cast<int>(col_width)) << m.name;
  out << '\n';
  out << std::fixed << std::setprecision(3);
  for (std::size_t c = 0; c < table.classes.size(); ++c) {
    out << std::left << std::setw(static_cast<int>(label_width)) << table.classes[c];
    for (const auto& m : table.methods) out << std::right << std::setw(static_cast<int>(col_width)) << m.values[c];
    out << '\n';
  }
  out << std::left << std::setw(static_cast<int>(label_width)) << "Avg. Rank";
  out << std::setprecision(2);
  for (double r : footer.ranks) out << std::right << std::setw(static_cast<int>(col_width)) << r;
  out << '\n';
  out << std::left << std::setw(static_cast<int>(label_width)) << "Wilcoxon-p";
  for (const auto& p : footer.p_values) out << std::right << std::setw(static_cast<int>(col_width)) << p;
  out << '\n';
  return out.str();
}

std::string results_table_csv(const ResultsTable& table) {
  const Footer footer = compute_footer(table);
  std::ostringstream out;
  out << "class";
  for (const auto& m : table.methods) out << ',' << m.name;
  out << '\n' << std::setprecision(6);
  for (std::size_t c = 0; c < table.classes.size(); ++c) {
    out << table.classes[c];
    for (const auto& m : table.methods) out << ',' << m.values[c];
    out << '\n';
  }
  out << "Avg. Rank";
  for (double r : footer.ranks) out << ',' << r;
  out << "\nWilcoxon-p";
  for (const auto& p : footer.p_values) out << ',' << p;
  out << '\n';
  return out.str();
}

}  // namespace cnet
