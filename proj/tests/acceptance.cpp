// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "onoalign/onoalign.hpp"
#include "oracles.hpp"

using namespace onoalign;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Proc {
  int status = -1;
  std::string output;
};

Proc run_command(const std::string& cmd) {
  Proc p;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return p;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) p.output.append(buf.data(), n);
  const int raw = pclose(pipe);
  p.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string num(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Outcome gradient_exactness() {
  const ModelDims dims{6, 5, 4, 3};
  const AlignmentModel model = init_model(dims, 1);
  RngStream rng(2);
  PairBatch batch{Matrix(4, 6), Matrix(4, 6), {}};
  for (double& v : batch.image.values()) v = rng.normal();
  for (double& v : batch.audio.values()) v = rng.normal();
  for (int i = 0; i < 4; ++i) batch.labels.push_back(rng.below(3));
  TrainConfig cfg;
  cfg.dropout_rate = 0.0;
  auto fn = [&](std::span<const double> flat) {
    AlignmentModel m = model;
    assign_parameters(m, flat);
    RngStream unused;
    const BatchLoss bl = batch_loss(m, batch, cfg, false, unused);
    return LossWithGradient{bl.loss.total, flatten_parameters(bl.grads)};
  };
  const auto r = grad_check_detailed(fn, flatten_parameters(model), 1e-6);
  return {r.max_relative_error < 1e-5, "max relative error " + num(r.max_relative_error) + " over " +
                                           std::to_string(r.checked) + " of " +
                                           std::to_string(parameter_count(model)) + " parameters"};
}

Outcome metric_oracle() {
  RngStream rng(2024);
  double worst = 0;
  for (int instance = 0; instance < 1000; ++instance) {
    const std::size_t queries = 1 + rng.below(20);
    const std::size_t candidates = 1 + rng.below(30);
    const int classes = 1 + static_cast<int>(rng.below(8));
    std::vector<int> cand_class(candidates);
    for (auto& c : cand_class) c = static_cast<int>(rng.below(classes));
    std::vector<RankedList> lists;
    std::vector<oracle::Pattern> patterns;
    for (std::size_t q = 0; q < queries; ++q) {
      // Query classes are drawn from the candidate pool so each query has a
      // relevant item; the ranking itself is a random permutation.
      const int qc = cand_class[rng.below(candidates)];
      std::vector<std::size_t> order(candidates);
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle(order, rng);
      RankedList l{"q" + std::to_string(q), qc, Direction::i2a, {}};
      oracle::Pattern p;
      for (std::size_t rank = 0; rank < candidates; ++rank) {
        const auto j = order[rank];
        l.candidates.push_back({"c" + std::to_string(j), cand_class[j], 1.0 - static_cast<double>(rank)});
        p.push_back(cand_class[j] == qc);
      }
      lists.push_back(std::move(l));
      patterns.push_back(std::move(p));
    }
    const auto got = evaluate(lists);
    const auto want = oracle::brute_evaluate(patterns);
    for (auto [a, b] : {std::pair{got.map, want.map}, {got.r1, want.r1}, {got.r5, want.r5}, {got.mrr, want.mrr}}) {
      worst = std::max(worst, std::abs(a - b));
    }
  }
  return {worst <= 1e-12, "1000 instances, max abs difference " + num(worst)};
}

Outcome synthetic_recovery() {
  const auto start = std::chrono::steady_clock::now();
  SyntheticSpec spec;  // 50 classes, 8 pairs, dim 512, spreads 0.01 / 0.05, random rotation
  const auto [img_all, aud_all] = generate_synthetic(spec);
  const auto [img, aud] = assign_random_split(img_all, aud_all, 0.8, 0.1, 0);

  std::string detail;
  bool pass = true;
  for (Direction d : {Direction::i2a, Direction::a2i}) {
    const auto [q, c] = split_items(img, aud, Split::test, d);
    const double map = evaluate(zero_shot_retrieve(q, c, d)).map;
    const double chance = oracle::chance_map(q.classes, c.classes);
    const bool ok = std::abs(map - chance) <= 3.0;
    pass = pass && ok;
    detail += to_string(d) + " zero-shot " + num(map, 4) + " vs chance " + num(chance, 4) + "; ";
  }

  TrainConfig cfg;  // lr 1e-3, wd 1e-4, dropout 0.1, batch 64
  cfg.seed = 0;
  const auto result = train(make_pair_set(img, aud, Split::train), make_pair_set(img, aud, Split::val), cfg);
  for (Direction d : {Direction::i2a, Direction::a2i}) {
    const auto [q, c] = split_items(img, aud, Split::test, d);
    const double map = evaluate(retrieve(result.model, q, c, d)).map;
    pass = pass && map > 90.0;
    detail += to_string(d) + " trained " + num(map, 4) + "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  detail += std::to_string(result.report.epochs.size()) + " epochs, " + num(secs) + " s";
  return {pass, detail};
}

Outcome train_determinism(const fs::path& work) {
  const std::string cli = ONOALIGN_CLI_PATH;
  const fs::path data = work / "data";
  const auto synth = run_command(cli + " synth --out " + data.string() + " --classes 10 --dim 64 --seed 5");
  if (synth.status != 0) return {false, "synth failed: " + synth.output};
  std::ofstream(work / "config.json") << R"({"images": ")" << (data / "images").string() << R"(", "audio": ")"
                                      << (data / "audio").string()
                                      << R"(", "seeds": [3, 4], "max_epochs": 8, "hidden_dim": 64, "joint_dim": 32})";
  for (const char* out : {"run_a", "run_b"}) {
    const auto r = run_command(cli + " train --config " + (work / "config.json").string() + " --out " +
                               (work / out).string());
    if (r.status != 0) return {false, "train failed: " + r.output};
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(work / "run_a")) {
    ++files;
    const fs::path other = work / "run_b" / e.path().filename();
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
      return {false, e.path().filename().string() + " differs between runs"};
    }
  }
  const bool complete = files == 2 * 3 + 1;
  return {complete, std::to_string(files) + " files byte-identical across two runs"};
}

Outcome invariant_suite() {
  const std::string binaries = ONOALIGN_PROPERTY_BINARIES;
  std::size_t tests = 0;
  std::string detail;
  bool pass = true;
  std::size_t pos = 0;
  while (pos <= binaries.size()) {
    const auto next = binaries.find(':', pos);
    const std::string bin = binaries.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    pos = next == std::string::npos ? binaries.size() + 1 : next + 1;
    if (bin.empty()) continue;
    const auto r = run_command("'" + bin + "' --gtest_filter='*Properties.*'");
    const auto tag = r.output.find("[  PASSED  ] ");
    std::size_t passed = 0;
    if (tag != std::string::npos) passed = std::stoul(r.output.substr(tag + 13));
    if (r.status != 0 || passed == 0) {
      pass = false;
      detail += fs::path(bin).filename().string() + " failed; ";
    }
    tests += passed;
  }
  return {pass, detail + std::to_string(tests) + " property tests passed, each over >= 100 random cases"};
}

Outcome dispersion_asymmetry() {
  SyntheticSpec spec;
  spec.intra_class_audio_spread = 0.001;
  spec.intra_class_image_spread = 0.3;
  const auto [img, aud] = generate_synthetic(spec);
  const auto table = centroid_dispersion(items_from_pack(img, Modality::image), items_from_pack(aud, Modality::audio),
                                         img.class_names());
  double max_audio = 0;
  double min_image = std::numeric_limits<double>::infinity();
  bool pass = table.size() == spec.class_count;
  for (const auto& row : table) {
    if (!row.audio || !row.image) {
      pass = false;
      continue;
    }
    max_audio = std::max(max_audio, *row.audio);
    min_image = std::min(min_image, *row.image);
  }
  pass = pass && max_audio < 0.01 && min_image > 0.1;
  return {pass, std::to_string(table.size()) + " classes, max audio " + num(max_audio) + ", min image " +
                    num(min_image)};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "onoalign_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient exactness", gradient_exactness},
      {"metric oracle equivalence", metric_oracle},
      {"synthetic recovery", synthetic_recovery},
      {"train determinism", [&] { return train_determinism(work); }},
      {"invariant suite", invariant_suite},
      {"dispersion asymmetry", dispersion_asymmetry},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail << std::endl;
  }
  fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
