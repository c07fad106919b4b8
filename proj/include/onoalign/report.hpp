// Experiment reports: multi-seed evaluation of trained models or the
// zero-shot baseline, serialized to JSON and rendered as plain-text tables
// (overall metrics, bottom-5 classes by AP, centroid dispersion).
#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "onoalign/metrics.hpp"
#include "onoalign/retrieval.hpp"

namespace onoalign {

enum class DispersionSpace { projected, raw };

inline std::string to_string(DispersionSpace s) { return s == DispersionSpace::projected ? "projected" : "raw"; }

struct DirectionReport {
  Direction direction = Direction::i2a;
  MetricSummary summary;
  std::vector<ClassReportEntry> classes;  // ascending AP
};

struct DispersionSummary {
  int class_id = 0;
  std::string class_name;
  std::optional<MeanStd> audio;
  std::optional<MeanStd> image;
};

struct ExperimentReport {
  std::string method;  // "proposed" or "baseline"
  std::string split;
  std::vector<DirectionReport> directions;
  DispersionSpace dispersion_space = DispersionSpace::projected;
  std::vector<DispersionSummary> dispersion;
};

inline std::vector<DispersionSummary> aggregate_dispersion(
    std::span<const std::vector<DispersionEntry>> runs) {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> values;
  std::map<int, std::string> names;
  for (const auto& run : runs) {
    for (const auto& e : run) {
      names[e.class_id] = e.class_name;
      if (e.audio) values[e.class_id].first.push_back(*e.audio);
      if (e.image) values[e.class_id].second.push_back(*e.image);
    }
  }
  std::vector<DispersionSummary> out;
  for (const auto& [cls, v] : values) {
    DispersionSummary s{cls, names[cls], std::nullopt, std::nullopt};
    if (!v.first.empty()) s.audio = mean_std(v.first);
    if (!v.second.empty()) s.image = mean_std(v.second);
    out.push_back(std::move(s));
  }
  return out;
}

// Evaluates each model (one per seed) on `split`. Dispersion is measured on
// the same split, in the joint space or on raw encoder embeddings.
inline ExperimentReport evaluate_models(std::span<const AlignmentModel> models, const EmbeddingPack& images,
                                        const EmbeddingPack& audio, Split split,
                                        std::span<const Direction> directions,
                                        DispersionSpace space = DispersionSpace::projected) {
  if (models.empty()) throw std::invalid_argument("evaluate_models: no models");
  ExperimentReport report{"proposed", to_string(split), {}, space, {}};
  const ItemSet img = items_from_pack(images, Modality::image, split);
  const ItemSet aud = items_from_pack(audio, Modality::audio, split);
  auto names = images.class_names();
  for (const auto& [id, name] : audio.class_names()) names.emplace(id, name);

  for (Direction d : directions) {
    std::vector<std::vector<RankedList>> runs;
    std::vector<MetricSet> per_seed;
    for (const auto& m : models) {
      runs.push_back(d == Direction::i2a ? retrieve(m, img, aud, d) : retrieve(m, aud, img, d));
      per_seed.push_back(evaluate(runs.back()));
    }
    report.directions.push_back({d, aggregate_seeds(per_seed), sorted_by_ap(per_class_report(runs, names))});
  }
  std::vector<std::vector<DispersionEntry>> dispersion_runs;
  if (space == DispersionSpace::raw) {
    dispersion_runs.push_back(centroid_dispersion(img, aud, names));
  } else {
    for (const auto& m : models) {
      ItemSet pi = img;
      ItemSet pa = aud;
      pi.vectors = project_image(m, img.vectors);
      pa.vectors = project_audio(m, aud.vectors);
      dispersion_runs.push_back(centroid_dispersion(pi, pa, names));
    }
  }
  report.dispersion = aggregate_dispersion(dispersion_runs);
  return report;
}

// Zero-shot baseline: one deterministic run, so every std is 0.
inline ExperimentReport evaluate_baseline(const EmbeddingPack& images, const EmbeddingPack& audio, Split split,
                                          std::span<const Direction> directions) {
  ExperimentReport report{"baseline", to_string(split), {}, DispersionSpace::raw, {}};
  const ItemSet img = items_from_pack(images, Modality::image, split);
  const ItemSet aud = items_from_pack(audio, Modality::audio, split);
  auto names = images.class_names();
  for (const auto& [id, name] : audio.class_names()) names.emplace(id, name);
  for (Direction d : directions) {
    auto lists = d == Direction::i2a ? zero_shot_retrieve(img, aud, d) : zero_shot_retrieve(aud, img, d);
    const MetricSet m = evaluate(lists);
    auto summary = aggregate_seeds(std::span<const MetricSet>(&m, 1));
    summary.warning.reset();
    report.directions.push_back({d, std::move(summary), sorted_by_ap(per_class_report(lists, names))});
  }
  const std::vector<std::vector<DispersionEntry>> runs{centroid_dispersion(img, aud, names)};
  report.dispersion = aggregate_dispersion(runs);
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const MeanStd& m) {
  return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.std}, {"n", m.n}};
}

inline nlohmann::ordered_json to_json(const MetricSet& m) {
  return nlohmann::ordered_json{{"map", m.map}, {"r1", m.r1}, {"r5", m.r5}, {"mrr", m.mrr}};
}

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["split"] = r.split;
  auto dirs = nlohmann::ordered_json::array();
  for (const auto& d : r.directions) {
    nlohmann::ordered_json x;
    x["direction"] = to_string(d.direction);
    auto seeds = nlohmann::ordered_json::array();
    for (const auto& m : d.summary.per_seed) seeds.push_back(to_json(m));
    x["per_seed"] = std::move(seeds);
    x["aggregate"] = {{"map", to_json(d.summary.map)},
                      {"r1", to_json(d.summary.r1)},
                      {"r5", to_json(d.summary.r5)},
                      {"mrr", to_json(d.summary.mrr)}};
    if (d.summary.warning) x["warning"] = *d.summary.warning;
    auto classes = nlohmann::ordered_json::array();
    for (const auto& c : d.classes) {
      nlohmann::ordered_json e;
      e["class_id"] = c.class_id;
      e["class_name"] = c.class_name;
      e["ap"] = to_json(c.ap);
      e["most_confused"] = c.most_confused_name ? nlohmann::ordered_json(*c.most_confused_name)
                                                : nlohmann::ordered_json(nullptr);
      e["queries"] = c.query_count;
      classes.push_back(std::move(e));
    }
    x["per_class"] = std::move(classes);
    dirs.push_back(std::move(x));
  }
  j["directions"] = std::move(dirs);
  j["dispersion_space"] = to_string(r.dispersion_space);
  auto disp = nlohmann::ordered_json::array();
  for (const auto& d : r.dispersion) {
    nlohmann::ordered_json e;
    e["class_id"] = d.class_id;
    e["class_name"] = d.class_name;
    e["audio"] = d.audio ? to_json(*d.audio) : nlohmann::ordered_json(nullptr);
    e["image"] = d.image ? to_json(*d.image) : nlohmann::ordered_json(nullptr);
    disp.push_back(std::move(e));
  }
  j["dispersion"] = std::move(disp);
  return j;
}

// ---------------------------------------------------------------------------
// Text tables

namespace detail {

inline std::string fmt(const char* pattern, double a, double b) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace detail

inline std::string render_metrics_table(std::span<const ExperimentReport> reports) {
  std::ostringstream out;
  out << detail::pad("Method", 10) << detail::pad("Dir", 5) << detail::pad("mAP (%)", 17)
      << detail::pad("R@1 (%)", 17) << detail::pad("R@5 (%)", 17) << "MRR\n";
  for (const auto& r : reports) {
    for (const auto& d : r.directions) {
      const auto& s = d.summary;
      out << detail::pad(r.method, 10) << detail::pad(to_string(d.direction), 5)
          << detail::pad(detail::fmt("%6.2f +- %5.2f", s.map.mean, s.map.std), 17)
          << detail::pad(detail::fmt("%6.2f +- %5.2f", s.r1.mean, s.r1.std), 17)
          << detail::pad(detail::fmt("%6.2f +- %5.2f", s.r5.mean, s.r5.std), 17)
          << detail::fmt("%.3f +- %.2f", s.mrr.mean, s.mrr.std) << '\n';
    }
  }
  return out.str();
}

inline std::string render_bottom_classes(const DirectionReport& d, std::size_t count = 5) {
  std::ostringstream out;
  out << "Lowest-performing classes (" << to_string(d.direction) << ", class-wise AP)\n";
  out << detail::pad("Rank", 6) << detail::pad("Sound event", 24) << detail::pad("AP [%]", 18)
      << "Most confused class\n";
  for (std::size_t i = 0; i < std::min(count, d.classes.size()); ++i) {
    const auto& c = d.classes[i];
    out << detail::pad(std::to_string(i + 1), 6) << detail::pad(c.class_name, 24)
        << detail::pad(detail::fmt("%6.2f +- %5.2f", c.ap.mean, c.ap.std), 18)
        << c.most_confused_name.value_or("none") << '\n';
  }
  return out.str();
}

// Dispersion rows for the given classes (all classes when empty).
inline std::string render_dispersion(const ExperimentReport& r, std::span<const int> classes = {}) {
  std::ostringstream out;
  out << "Average cosine distance from class centroid (" << to_string(r.dispersion_space) << " space)\n";
  out << detail::pad("Sound event", 24) << detail::pad("Audio dispersion", 22) << "Image dispersion\n";
  auto cell = [](const std::optional<MeanStd>& m) {
    return m ? detail::fmt("%.4f +- %.4f", m->mean, m->std) : std::string("-");
  };
  auto emit = [&](const DispersionSummary& d) {
    out << detail::pad(d.class_name, 24) << detail::pad(cell(d.audio), 22) << cell(d.image) << '\n';
  };
  if (classes.empty()) {
    for (const auto& d : r.dispersion) emit(d);
  } else {
    for (int c : classes) {
      for (const auto& d : r.dispersion) {
        if (d.class_id == c) emit(d);
      }
    }
  }
  return out.str();
}

inline std::string render_report(const ExperimentReport& r) {
  std::ostringstream out;
  out << render_metrics_table(std::span<const ExperimentReport>(&r, 1)) << '\n';
  for (const auto& d : r.directions) out << render_bottom_classes(d) << '\n';
  std::vector<int> bottom;
  if (!r.directions.empty()) {
    const auto& c = r.directions.front().classes;
    for (std::size_t i = 0; i < std::min<std::size_t>(5, c.size()); ++i) bottom.push_back(c[i].class_id);
  }
  out << render_dispersion(r, bottom);
  return out.str();
}

}  // namespace onoalign
