// onoalign: command-line driver for packs, training, evaluation and reports.
//
//   onoalign synth    --out DIR [--classes N --dim D ...]
//   onoalign ingest   --images STEM --audio STEM --manifest FILE --out DIR
//   onoalign train    --images STEM --audio STEM --seeds 0,1,2 --out DIR
//   onoalign eval     --images STEM --audio STEM --models DIR --out DIR
//   onoalign baseline --images STEM --audio STEM --out DIR
//   onoalign retrieve --images STEM --audio STEM --checkpoint STEM --query ID
//   onoalign analyze  --images STEM --audio STEM [--models DIR]
//
// Every subcommand accepts --config FILE, a flat JSON object whose keys are
// the long flag names with '-' replaced by '_'. Flags given on the command
// line win over the file.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "onoalign/onoalign.hpp"

namespace fs = std::filesystem;
using namespace onoalign;
using Json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binds flags to variables and lets a JSON config fill the ones not given.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "flat JSON config; flags override its values");
  }

  template <typename T>
  CLI::Option* add(const std::string& flag, T& target, const std::string& help) {
    CLI::Option* opt = app_->add_option("--" + flag, target, help);
    if constexpr (!std::is_same_v<T, std::vector<std::uint64_t>> && !std::is_same_v<T, std::vector<std::string>>) {
      opt->capture_default_str();
    }
    bind(flag, opt, [&target](const nlohmann::json& v) { target = v.get<T>(); });
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& target, const std::string& help) {
    CLI::Option* opt = app_->add_flag("--" + name, target, help);
    bind(name, opt, [&target](const nlohmann::json& v) { target = v.get<bool>(); });
    return opt;
  }

  // Applies config values for options absent from the command line and
  // checks required ones.
  void resolve(const std::vector<std::string>& required = {}) {
    if (!config_path_.empty()) {
      std::ifstream f(config_path_);
      if (!f) throw UsageError("cannot open config '" + config_path_ + "'");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(f);
      } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("config '" + config_path_ + "': " + e.what());
      }
      if (!j.is_object()) throw UsageError("config '" + config_path_ + "' must be a JSON object");
      for (const auto& [key, value] : j.items()) {
        auto it = std::find_if(bindings_.begin(), bindings_.end(), [&](const auto& b) { return b.key == key; });
        if (it == bindings_.end()) {
          throw UsageError("config key '" + key + "' is not an option of '" + app_->get_name() + "'");
        }
        if (it->option->count() > 0) continue;
        try {
          it->assign(value);
        } catch (const nlohmann::json::exception& e) {
          throw UsageError("config key '" + key + "': " + e.what());
        }
        given_.insert(key);
      }
    }
    for (const auto& name : required) {
      if (!given(name)) throw UsageError("--" + name + " is required");
    }
  }

  bool given(const std::string& flag) const {
    auto it = std::find_if(bindings_.begin(), bindings_.end(), [&](const auto& b) { return b.flag == flag; });
    return it != bindings_.end() && (it->option->count() > 0 || given_.contains(it->key));
  }

 private:
  struct Binding {
    std::string flag;
    std::string key;
    CLI::Option* option;
    std::function<void(const nlohmann::json&)> assign;
  };

  void bind(const std::string& flag, CLI::Option* opt, std::function<void(const nlohmann::json&)> assign) {
    std::string key = flag;
    std::replace(key.begin(), key.end(), '-', '_');
    bindings_.push_back({flag, key, opt, std::move(assign)});
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Binding> bindings_;
  std::set<std::string> given_;
};

std::vector<Direction> directions_of(const std::string& text) {
  if (text == "both") return {Direction::i2a, Direction::a2i};
  try {
    return {parse_direction(text)};
  } catch (const std::invalid_argument&) {
    throw UsageError("--direction must be i2a, a2i or both, got '" + text + "'");
  }
}

DispersionSpace dispersion_space_of(const std::string& text) {
  if (text == "projected") return DispersionSpace::projected;
  if (text == "raw") return DispersionSpace::raw;
  throw UsageError("--dispersion-space must be projected or raw, got '" + text + "'");
}

void write_json(const fs::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::string seed_stem(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// Checkpoint stems named on the command line plus every seed_*.manifest.json
// in --models, in ascending seed order.
std::vector<fs::path> checkpoint_stems(const std::vector<std::string>& explicit_stems, const std::string& models_dir) {
  std::vector<fs::path> stems(explicit_stems.begin(), explicit_stems.end());
  if (!models_dir.empty()) {
    if (!fs::is_directory(models_dir)) throw UsageError("--models '" + models_dir + "' is not a directory");
    std::vector<std::pair<std::uint64_t, fs::path>> found;
    const std::string suffix = ".manifest.json";
    for (const auto& entry : fs::directory_iterator(models_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("seed_", 0) != 0 || name.size() <= suffix.size() ||
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
        continue;
      }
      const std::string number = name.substr(5, name.size() - 5 - suffix.size());
      if (number.empty() || !std::all_of(number.begin(), number.end(), ::isdigit)) continue;
      found.emplace_back(std::stoull(number), entry.path().parent_path() / ("seed_" + number));
    }
    std::sort(found.begin(), found.end());
    for (auto& [seed, stem] : found) stems.push_back(stem);
  }
  if (stems.empty()) throw UsageError("no checkpoints given (use --checkpoint or --models)");
  return stems;
}

std::vector<AlignmentModel> load_models(const std::vector<fs::path>& stems) {
  std::vector<AlignmentModel> models;
  for (const auto& s : stems) models.push_back(load_checkpoint(s));
  return models;
}

std::pair<EmbeddingPack, EmbeddingPack> load_pair(const std::string& images, const std::string& audio) {
  auto img = load_pack(images);
  auto aud = load_pack(audio);
  validate_pair_packs(img, aud);
  return {std::move(img), std::move(aud)};
}

void print_counts(const EmbeddingPack& images, const EmbeddingPack& audio) {
  std::set<std::string> illustrators;
  std::set<int> classes;
  for (const auto* p : {&images, &audio}) {
    for (const auto& r : p->records) {
      classes.insert(r.class_id);
      if (r.illustrator_id) illustrators.insert(*r.illustrator_id);
    }
  }
  std::cout << images.records.size() << " image records, " << audio.records.size() << " audio records, "
            << classes.size() << " classes, " << illustrators.size() << " illustrators\n";
  std::cout << images.indices(Modality::image, Split::train).size() << " train / "
            << images.indices(Modality::image, Split::val).size() << " val / "
            << images.indices(Modality::image, Split::test).size() << " test\n";
}

// ---------------------------------------------------------------------------

struct PackArgs {
  std::string images;
  std::string audio;

  void add(Options& o) {
    o.add("images", images, "image pack stem");
    o.add("audio", audio, "audio pack stem");
  }
};

int cmd_synth(const SyntheticSpec& spec, double train_frac, double val_frac, std::uint64_t seed,
              const std::string& out) {
  const auto [img, aud] = generate_synthetic(spec);
  const auto [si, sa] = assign_random_split(img, aud, train_frac, val_frac, seed);
  fs::create_directories(out);
  save_pack(si, fs::path(out) / "images");
  save_pack(sa, fs::path(out) / "audio");
  print_counts(si, sa);
  return 0;
}

int cmd_ingest(const PackArgs& packs, const std::string& manifest, const std::string& out) {
  const auto m = load_split_manifest(manifest);
  auto [img, aud] = load_pair(packs.images, packs.audio);
  const auto [si, sa] = split_by_illustrator(img, aud, m);
  fs::create_directories(out);
  save_pack(si, fs::path(out) / "images");
  save_pack(sa, fs::path(out) / "audio");
  print_counts(si, sa);
  return 0;
}

int cmd_train(const PackArgs& packs, TrainConfig base, std::vector<std::uint64_t> seeds,
              std::uint64_t seed, std::size_t jobs, const std::string& out) {
  if (seeds.empty()) seeds.push_back(seed);
  if (jobs == 0) throw UsageError("--jobs must be >= 1");
  base.validate();
  const auto [img, aud] = load_pair(packs.images, packs.audio);
  const PairSet train_pairs = make_pair_set(img, aud, Split::train);
  const PairSet val_pairs = make_pair_set(img, aud, Split::val);
  if (train_pairs.empty()) throw UsageError("no training pairs in '" + packs.images + "'");

  std::vector<std::optional<TrainResult>> results(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      TrainConfig cfg = base;
      cfg.seed = seeds[i];
      try {
        results[i] = train(train_pairs, val_pairs, cfg);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < std::min(jobs, seeds.size()); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!errors[i].empty()) throw std::runtime_error("seed " + std::to_string(seeds[i]) + ": " + errors[i]);
  }

  fs::create_directories(out);
  Json summary;
  summary["config"] = to_json(base);
  summary["config"].erase("seed");
  summary["images"] = packs.images;
  summary["audio"] = packs.audio;
  summary["train_pairs"] = train_pairs.size();
  summary["val_pairs"] = val_pairs.size();
  auto runs = Json::array();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto& r = *results[i];
    const fs::path stem = fs::path(out) / seed_stem(seeds[i]);
    save_checkpoint(r.model, stem);
    write_json(stem.string() + ".train.json", to_json(r.report));
    Json run;
    run["seed"] = seeds[i];
    run["checkpoint"] = seed_stem(seeds[i]);
    run["epochs"] = r.report.epochs.size();
    run["best_epoch"] = r.report.best_epoch ? Json(*r.report.best_epoch) : Json(nullptr);
    run["best_val_map"] = r.report.best_epoch ? Json(r.report.epochs[*r.report.best_epoch].val_map) : Json(nullptr);
    run["model_checksum"] = to_hex64(r.report.model_checksum);
    runs.push_back(std::move(run));
    std::cout << "seed " << seeds[i] << ": " << r.report.epochs.size() << " epochs, best "
              << (r.report.best_epoch ? std::to_string(*r.report.best_epoch) : "-") << ", checksum "
              << to_hex64(r.report.model_checksum) << "\n";
  }
  summary["runs"] = std::move(runs);
  write_json(fs::path(out) / "train_report.json", summary);
  return 0;
}

void emit_report(const ExperimentReport& report, const std::string& out, const std::string& name) {
  const std::string text = render_report(report);
  std::cout << text;
  if (out.empty()) return;
  fs::create_directories(out);
  write_json(fs::path(out) / (name + ".json"), to_json(report));
  write_text_file(fs::path(out) / (name + ".txt"), text);
}

int cmd_eval(const PackArgs& packs, const std::vector<std::string>& checkpoints,
             const std::string& models, const std::string& split, const std::string& direction,
             const std::string& space, const std::string& out) {
  const auto stems = checkpoint_stems(checkpoints, models);
  const auto [img, aud] = load_pair(packs.images, packs.audio);
  const auto report = evaluate_models(load_models(stems), img, aud, parse_split(split), directions_of(direction),
                                      dispersion_space_of(space));
  emit_report(report, out, "eval_report");
  return 0;
}

int cmd_baseline(const PackArgs& packs, const std::string& split, const std::string& direction,
                 const std::string& out) {
  const auto [img, aud] = load_pair(packs.images, packs.audio);
  emit_report(evaluate_baseline(img, aud, parse_split(split), directions_of(direction)), out, "baseline_report");
  return 0;
}

int cmd_retrieve(const PackArgs& packs, const std::string& checkpoint, const std::string& query,
                 const std::string& split, const std::string& direction, std::size_t top_n, bool json) {
  const auto dirs = directions_of(direction);
  if (dirs.size() != 1) throw UsageError("retrieve needs a single --direction (i2a or a2i)");
  const Direction d = dirs.front();
  const auto [img, aud] = load_pair(packs.images, packs.audio);
  auto [queries, candidates] = split_items(img, aud, parse_split(split), d);
  auto it = std::find(queries.ids.begin(), queries.ids.end(), query);
  if (it == queries.ids.end()) {
    throw UsageError("query '" + query + "' is not a " + to_string(query_modality(d)) + " record of split '" +
                     split + "'");
  }
  const std::size_t q = static_cast<std::size_t>(it - queries.ids.begin());
  ItemSet one{queries.modality, {queries.ids[q]}, {queries.classes[q]}, gather_rows(queries.vectors, std::vector{q})};
  std::vector<RankedList> lists;
  if (checkpoint.empty()) {
    lists = zero_shot_retrieve(one, candidates, d);
  } else {
    lists = retrieve(load_checkpoint(checkpoint), one, candidates, d);
  }
  RankedList list = std::move(lists.front());
  if (top_n > 0 && list.candidates.size() > top_n) list.candidates.resize(top_n);
  if (json) {
    std::cout << to_json(list).dump() << "\n";
    return 0;
  }
  std::cout << to_string(d) << " query " << list.query_id << " (class " << list.query_class << ")\n";
  for (std::size_t i = 0; i < list.candidates.size(); ++i) {
    const auto& c = list.candidates[i];
    char score[32];
    std::snprintf(score, sizeof score, "%.6f", c.score);
    std::cout << (i + 1) << "\t" << c.id << "\t" << c.class_id << "\t" << score << "\n";
  }
  return 0;
}

int cmd_analyze(const PackArgs& packs, const std::vector<std::string>& checkpoints,
                const std::string& models, const std::string& split, const std::string& direction,
                const std::string& space, std::size_t top_n, const std::string& out) {
  const auto [img, aud] = load_pair(packs.images, packs.audio);
  const auto dirs = directions_of(direction);
  const bool trained = !checkpoints.empty() || !models.empty();
  const auto report = trained ? evaluate_models(load_models(checkpoint_stems(checkpoints, models)), img, aud,
                                                parse_split(split), dirs, dispersion_space_of(space))
                              : evaluate_baseline(img, aud, parse_split(split), dirs);
  std::ostringstream text;
  for (const auto& d : report.directions) {
    text << render_bottom_classes(d, top_n == 0 ? d.classes.size() : top_n) << "\n";
  }
  text << render_dispersion(report);
  std::cout << text.str();
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(fs::path(out) / "analysis.json", to_json(report));
    write_text_file(fs::path(out) / "analysis.txt", text.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-onomatopoeia to audio alignment: packs, training, retrieval and evaluation"};
  app.require_subcommand(1);

  PackArgs packs;
  std::string out;
  std::string split = "test";
  std::string direction = "both";
  std::string retrieve_direction = "i2a";
  std::string space = "projected";
  std::string manifest;
  std::string models;
  std::string checkpoint;
  std::string query;
  std::vector<std::string> checkpoints;
  std::vector<std::uint64_t> seeds;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t top_n = 10;
  bool json = false;
  TrainConfig cfg;
  SyntheticSpec spec;
  double train_frac = 0.8;
  double val_frac = 0.1;

  auto* synth = app.add_subcommand("synth", "generate a synthetic image/audio pack pair");
  Options synth_o(synth);
  synth_o.add("out", out, "output directory (writes images.* and audio.*)");
  synth_o.add("classes", spec.class_count, "number of classes");
  synth_o.add("dim", spec.dim, "embedding width");
  synth_o.add("pairs-per-class", spec.pairs_per_class, "pairs per class");
  synth_o.add("audio-spread", spec.intra_class_audio_spread, "per-coordinate audio noise std");
  synth_o.add("image-spread", spec.intra_class_image_spread, "per-coordinate image noise std");
  synth_o.add("rotation-seed", spec.cross_modal_rotation_seed, "seed of the image-side rotation");
  synth_o.add("noise-seed", spec.noise_seed, "seed of centroids and noise");
  synth_o.flag("identity-rotation", spec.identity_rotation, "skip the rotation");
  synth_o.add("illustrators", spec.illustrator_count, "assign images to this many illustrators");
  synth_o.add("train-frac", train_frac, "fraction of pairs in train");
  synth_o.add("val-frac", val_frac, "fraction of pairs in val");
  synth_o.add("seed", seed, "seed of the random split");

  auto* ingest = app.add_subcommand("ingest", "validate packs and apply an illustrator split manifest");
  Options ingest_o(ingest);
  packs.add(ingest_o);
  ingest_o.add("manifest", manifest, "split manifest JSON {train, val, test: [illustrator ids]}");
  ingest_o.add("out", out, "output directory (writes images.* and audio.*)");

  auto* train_cmd = app.add_subcommand("train", "train one model per seed");
  Options train_o(train_cmd);
  packs.add(train_o);
  train_o.add("out", out, "output directory for checkpoints and reports");
  train_o.add("seed", seed, "seed when --seeds is not given");
  train_o.add("seeds", seeds, "seed list")->delimiter(',');
  train_o.add("jobs", jobs, "seeds trained in parallel");
  train_o.add("lr", cfg.lr, "learning rate");
  train_o.add("weight-decay", cfg.weight_decay, "AdamW weight decay");
  train_o.add("dropout-rate", cfg.dropout_rate, "dropout after the hidden activation");
  train_o.add("batch-size", cfg.batch_size, "mini-batch size");
  train_o.add("max-epochs", cfg.max_epochs, "epoch budget");
  train_o.add("patience", cfg.patience, "epochs without validation improvement before stopping");
  train_o.add("lambda-align", cfg.lambda_align, "alignment loss weight");
  train_o.add("lambda-cls", cfg.lambda_cls, "classification loss weight");
  train_o.add("hidden-dim", cfg.hidden_dim, "projector hidden width");
  train_o.add("joint-dim", cfg.joint_dim, "joint space width");

  auto* eval = app.add_subcommand("eval", "evaluate trained checkpoints");
  Options eval_o(eval);
  packs.add(eval_o);
  eval_o.add("checkpoint", checkpoints, "checkpoint stem (repeatable)");
  eval_o.add("models", models, "directory of seed_<s> checkpoints");
  eval_o.add("split", split, "split to evaluate");
  eval_o.add("direction", direction, "i2a, a2i or both");
  eval_o.add("dispersion-space", space, "projected or raw");
  eval_o.add("out", out, "write eval_report.json and eval_report.txt here");

  auto* baseline = app.add_subcommand("baseline", "zero-shot cosine retrieval on raw embeddings");
  Options baseline_o(baseline);
  packs.add(baseline_o);
  baseline_o.add("split", split, "split to evaluate");
  baseline_o.add("direction", direction, "i2a, a2i or both");
  baseline_o.add("out", out, "write baseline_report.json and baseline_report.txt here");

  auto* retrieve_cmd = app.add_subcommand("retrieve", "rank candidates for one query");
  Options retrieve_o(retrieve_cmd);
  packs.add(retrieve_o);
  retrieve_o.add("checkpoint", checkpoint, "checkpoint stem (zero-shot when omitted)");
  retrieve_o.add("query", query, "query record id");
  retrieve_o.add("split", split, "split holding query and candidates");
  retrieve_o.add("direction", retrieve_direction, "i2a or a2i");
  retrieve_o.add("top-n", top_n, "number of results (0: all)");
  retrieve_o.flag("json", json, "print one JSON line instead of a table");

  auto* analyze = app.add_subcommand("analyze", "per-class AP, confusions and centroid dispersion");
  Options analyze_o(analyze);
  packs.add(analyze_o);
  analyze_o.add("checkpoint", checkpoints, "checkpoint stem (repeatable; baseline when none)");
  analyze_o.add("models", models, "directory of seed_<s> checkpoints");
  analyze_o.add("split", split, "split to analyze");
  analyze_o.add("direction", direction, "i2a, a2i or both");
  analyze_o.add("dispersion-space", space, "projected or raw");
  analyze_o.add("top-n", top_n, "classes listed per direction (0: all)");
  analyze_o.add("out", out, "write analysis.json and analysis.txt here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      synth_o.resolve({"out"});
      return cmd_synth(spec, train_frac, val_frac, seed, out);
    }
    if (ingest->parsed()) {
      ingest_o.resolve({"images", "audio", "manifest", "out"});
      return cmd_ingest(packs, manifest, out);
    }
    if (train_cmd->parsed()) {
      train_o.resolve({"images", "audio", "out"});
      return cmd_train(packs, cfg, seeds, seed, jobs, out);
    }
    if (eval->parsed()) {
      eval_o.resolve({"images", "audio"});
      return cmd_eval(packs, checkpoints, models, split, direction, space, out);
    }
    if (baseline->parsed()) {
      baseline_o.resolve({"images", "audio"});
      return cmd_baseline(packs, split, direction, out);
    }
    if (retrieve_cmd->parsed()) {
      retrieve_o.resolve({"images", "audio", "query"});
      return cmd_retrieve(packs, checkpoint, query, split, retrieve_direction, top_n, json);
    }
    if (analyze->parsed()) {
      analyze_o.resolve({"images", "audio"});
      return cmd_analyze(packs, checkpoints, models, split, direction, space, top_n, out);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
