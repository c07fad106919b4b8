// Class-level retrieval metrics. A candidate is relevant when it shares the
// query's class, so the query's own pair is one of possibly many relevant
// items.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "onoalign/retrieval.hpp"

namespace onoalign {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::vector<bool> relevance_flags(const RankedList& list) {
  std::vector<bool> flags;
  flags.reserve(list.candidates.size());
  for (const auto& c : list.candidates) flags.push_back(c.class_id == list.query_class);
  return flags;
}

// (1/R) * sum over relevant ranks k of precision@k.
inline double average_precision(const std::vector<bool>& relevant) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    if (!relevant[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) throw MetricError("average_precision: no relevant item");
  return sum / static_cast<double>(hits);
}

inline double recall_at_k(const std::vector<bool>& relevant, std::size_t k) {
  if (k < 1) throw MetricError("recall_at_k: k must be >= 1");
  const auto end = std::min(k, relevant.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (relevant[i]) return 1.0;
  }
  return 0.0;
}

inline double reciprocal_rank(const std::vector<bool>& relevant) {
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (relevant[i]) return 1.0 / static_cast<double>(i + 1);
  }
  throw MetricError("reciprocal_rank: no relevant item");
}

// mAP and R@k in percent, MRR as a fraction.
struct MetricSet {
  double map = 0.0;
  double r1 = 0.0;
  double r5 = 0.0;
  double mrr = 0.0;

  bool operator==(const MetricSet&) const = default;
};

inline MetricSet evaluate(std::span<const RankedList> lists) {
  if (lists.empty()) throw MetricError("evaluate: no ranked lists");
  MetricSet sum;
  for (const auto& list : lists) {
    const auto flags = relevance_flags(list);
    if (std::find(flags.begin(), flags.end(), true) == flags.end()) {
      throw MetricError("evaluate: query '" + list.query_id + "' has no relevant candidate");
    }
    sum.map += average_precision(flags);
    sum.r1 += recall_at_k(flags, 1);
    sum.r5 += recall_at_k(flags, 5);
    sum.mrr += reciprocal_rank(flags);
  }
  const double n = static_cast<double>(lists.size());
  return MetricSet{100.0 * sum.map / n, 100.0 * sum.r1 / n, 100.0 * sum.r5 / n, sum.mrr / n};
}

// ---------------------------------------------------------------------------
// Seed aggregation

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // unbiased (n - 1 denominator); 0 when n == 1
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw MetricError("mean_std: empty input");
  MeanStd r;
  r.n = values.size();
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

struct MetricSummary {
  MeanStd map;
  MeanStd r1;
  MeanStd r5;
  MeanStd mrr;
  std::vector<MetricSet> per_seed;
  std::optional<std::string> warning;
};

inline MetricSummary aggregate_seeds(std::span<const MetricSet> per_seed) {
  if (per_seed.empty()) throw MetricError("aggregate_seeds: empty input");
  auto column = [&](double MetricSet::*field) {
    std::vector<double> v;
    for (const auto& m : per_seed) v.push_back(m.*field);
    return mean_std(v);
  };
  MetricSummary s{column(&MetricSet::map), column(&MetricSet::r1), column(&MetricSet::r5),
                  column(&MetricSet::mrr), {per_seed.begin(), per_seed.end()}, std::nullopt};
  if (per_seed.size() == 1) s.warning = "single seed: standard deviation reported as 0";
  return s;
}

// ---------------------------------------------------------------------------
// Per-class analysis

struct ClassReportEntry {
  int class_id = 0;
  std::string class_name;
  MeanStd ap;                               // percent, over seeds
  std::optional<int> most_confused;         // nullopt: never outranked
  std::optional<std::string> most_confused_name;
  std::size_t query_count = 0;              // per run
};

inline std::string class_label(const std::map<int, std::string>& names, int id) {
  auto it = names.find(id);
  return it != names.end() ? it->second : std::to_string(id);
}

// Class AP is the mean AP over that class's queries, computed per run and
// then aggregated over runs. The most-confused class is the class that most
// often owns the highest-ranked irrelevant candidate across the class's
// queries in all runs; ties go to the lexicographically smaller class name.
inline std::vector<ClassReportEntry> per_class_report(std::span<const std::vector<RankedList>> runs,
                                                      const std::map<int, std::string>& names) {
  if (runs.empty()) throw MetricError("per_class_report: no runs");
  std::map<int, std::vector<double>> ap_per_run;
  std::map<int, std::map<int, std::size_t>> confusion;
  std::map<int, std::size_t> query_count;
  for (const auto& lists : runs) {
    std::map<int, std::pair<double, std::size_t>> sums;
    for (const auto& list : lists) {
      const auto flags = relevance_flags(list);
      auto& s = sums[list.query_class];
      s.first += average_precision(flags);
      s.second += 1;
      for (const auto& c : list.candidates) {
        if (c.class_id != list.query_class) {
          ++confusion[list.query_class][c.class_id];
          break;
        }
      }
    }
    for (const auto& [cls, s] : sums) {
      ap_per_run[cls].push_back(100.0 * s.first / static_cast<double>(s.second));
      query_count[cls] = s.second;
    }
  }
  std::vector<ClassReportEntry> out;
  for (const auto& [cls, aps] : ap_per_run) {
    ClassReportEntry e;
    e.class_id = cls;
    e.class_name = class_label(names, cls);
    e.ap = mean_std(aps);
    e.query_count = query_count[cls];
    if (auto it = confusion.find(cls); it != confusion.end()) {
      std::optional<int> best;
      std::size_t best_count = 0;
      for (const auto& [other, count] : it->second) {
        if (!best || count > best_count ||
            (count == best_count && class_label(names, other) < class_label(names, *best))) {
          best = other;
          best_count = count;
        }
      }
      e.most_confused = best;
      e.most_confused_name = class_label(names, *best);
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ClassReportEntry> per_class_report(const std::vector<RankedList>& lists,
                                                      const std::map<int, std::string>& names) {
  return per_class_report(std::span<const std::vector<RankedList>>(&lists, 1), names);
}

// Ascending by mean AP (ties by class id); the first five reproduce a
// bottom-5 table.
inline std::vector<ClassReportEntry> sorted_by_ap(std::vector<ClassReportEntry> entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.ap.mean < b.ap.mean || (a.ap.mean == b.ap.mean && a.class_id < b.class_id);
  });
  return entries;
}

// ---------------------------------------------------------------------------
// Centroid dispersion

// Mean cosine distance of the rows of `group` from their arithmetic mean.
inline double group_dispersion(const Matrix& group) {
  if (group.rows() == 0) throw MetricError("group_dispersion: empty group");
  std::vector<double> centroid(group.cols(), 0.0);
  for (std::size_t r = 0; r < group.rows(); ++r) {
    const auto row = group.row(r);
    for (std::size_t k = 0; k < row.size(); ++k) centroid[k] += row[k];
  }
  for (double& v : centroid) v /= static_cast<double>(group.rows());
  if (l2_norm(centroid) == 0.0) throw MetricError("group_dispersion: zero-norm centroid");
  double sum = 0.0;
  for (std::size_t r = 0; r < group.rows(); ++r) sum += 1.0 - cosine_similarity(group.row(r), centroid);
  return sum / static_cast<double>(group.rows());
}

inline std::map<int, double> class_dispersion(const ItemSet& items) {
  std::map<int, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < items.size(); ++i) rows_of[items.classes[i]].push_back(i);
  std::map<int, double> out;
  for (const auto& [cls, rows] : rows_of) out[cls] = group_dispersion(gather_rows(items.vectors, rows));
  return out;
}

struct DispersionEntry {
  int class_id = 0;
  std::string class_name;
  std::optional<double> audio;
  std::optional<double> image;
};

// Per-class dispersion for each modality. The item sets hold whatever space
// the caller chose (raw encoder or projected joint embeddings).
inline std::vector<DispersionEntry> centroid_dispersion(const ItemSet& images, const ItemSet& audio,
                                                        const std::map<int, std::string>& names) {
  const auto img = class_dispersion(images);
  const auto aud = class_dispersion(audio);
  std::map<int, DispersionEntry> merged;
  for (const auto& [cls, d] : img) merged[cls].image = d;
  for (const auto& [cls, d] : aud) merged[cls].audio = d;
  std::vector<DispersionEntry> out;
  for (auto& [cls, e] : merged) {
    e.class_id = cls;
    e.class_name = class_label(names, cls);
    out.push_back(e);
  }
  return out;
}

}  // namespace onoalign
