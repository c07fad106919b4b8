#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "onoalign/onoalign.hpp"

using namespace onoalign;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int status = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(ONOALIGN_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("onoalign_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small synthetic pack pair written by the CLI itself.
  std::string synth(const std::string& name) {
    const auto r = run("synth --out " + path(name) + " --classes 5 --dim 12 --pairs-per-class 8 --seed 3");
    EXPECT_EQ(r.status, 0) << r.output;
    return "--images " + path(name + "/images") + " --audio " + path(name + "/audio");
  }

  fs::path dir_;
};

const std::string kSmallTrain = " --max-epochs 4 --hidden-dim 12 --joint-dim 6 --batch-size 8";

}  // namespace

TEST_F(CliTest, NoSubcommandIsAnError) { EXPECT_NE(run("").status, 0); }

TEST_F(CliTest, MissingManifestIsUsageError) {
  const auto packs = synth("d");
  const auto r = run("ingest " + packs + " --out " + path("o"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("--manifest"), std::string::npos) << r.output;
  const auto r2 = run("ingest " + packs + " --manifest " + path("absent.json") + " --out " + path("o"));
  EXPECT_NE(r2.status, 0);
}

TEST_F(CliTest, IngestEmptyPack) {
  save_pack(EmbeddingPack{4, 1, {}, ""}, path("img"));
  save_pack(EmbeddingPack{4, 1, {}, ""}, path("aud"));
  std::ofstream(path("m.json")) << R"({"train": [], "val": [], "test": []})";
  const auto r = run("ingest --images " + path("img") + " --audio " + path("aud") + " --manifest " +
                     path("m.json") + " --out " + path("o"));
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("0 train / 0 val / 0 test"), std::string::npos) << r.output;
  EXPECT_TRUE(load_pack(path("o/images")).records.empty());
}

TEST_F(CliTest, IngestIllustratorManifest) {
  SyntheticSpec spec;
  spec.class_count = 50;
  spec.pairs_per_class = 17;
  spec.dim = 8;
  spec.illustrator_count = 17;
  const auto [img, aud] = generate_synthetic(spec);
  save_pack(img, path("img"));
  save_pack(aud, path("aud"));
  nlohmann::json m;
  m["train"] = nlohmann::json::array();
  for (int i = 0; i < 13; ++i) m["train"].push_back("ill-" + std::to_string(i));
  m["val"] = {"ill-13", "ill-14"};
  m["test"] = {"ill-15", "ill-16"};
  std::ofstream(path("m.json")) << m.dump();
  const auto r = run("ingest --images " + path("img") + " --audio " + path("aud") + " --manifest " +
                     path("m.json") + " --out " + path("o"));
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("650 train / 100 val / 100 test"), std::string::npos) << r.output;
  const auto split_audio = load_pack(path("o/audio"));
  EXPECT_EQ(split_audio.indices(Modality::audio, Split::test).size(), 100u);
}

TEST_F(CliTest, TrainIsByteDeterministic) {
  const auto packs = synth("d");
  for (const char* out : {"a", "b"}) {
    const auto r = run("train " + packs + " --seeds 0,1,2 --jobs 3 --out " + path(out) + kSmallTrain);
    ASSERT_EQ(r.status, 0) << r.output;
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(path("a"))) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(path("b")) / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 3u * 3 + 1);
  // Parallel and sequential runs agree as well.
  ASSERT_EQ(run("train " + packs + " --seeds 0,1,2 --jobs 1 --out " + path("c") + kSmallTrain).status, 0);
  EXPECT_EQ(slurp(path("a/train_report.json")), slurp(path("c/train_report.json")));
}

TEST_F(CliTest, TenSeedsTenCheckpoints) {
  const auto packs = synth("d");
  ASSERT_EQ(run("train " + packs + " --seeds 0,1,2,3,4,5,6,7,8,9 --jobs 4 --out " + path("r") + kSmallTrain).status,
            0);
  for (int s = 0; s < 10; ++s) {
    EXPECT_NO_THROW(load_checkpoint(path("r/seed_" + std::to_string(s))));
  }
  const auto report = nlohmann::json::parse(slurp(path("r/train_report.json")));
  EXPECT_EQ(report["runs"].size(), 10u);
}

TEST_F(CliTest, ConfigFileAndFlagPrecedence) {
  const auto packs = synth("d");
  std::ofstream(path("cfg.json")) << R"({"seed": 7, "max_epochs": 2, "hidden_dim": 12, "joint_dim": 6, "lr": 0.01})";
  ASSERT_EQ(run("train " + packs + " --config " + path("cfg.json") + " --max-epochs 3 --out " + path("r")).status, 0);
  const auto report = nlohmann::json::parse(slurp(path("r/train_report.json")));
  EXPECT_EQ(report["config"]["lr"], 0.01);
  EXPECT_EQ(report["config"]["max_epochs"], 3);
  EXPECT_EQ(report["runs"][0]["seed"], 7);
  std::ofstream(path("bad.json")) << R"({"learning_rate": 1})";
  EXPECT_NE(run("train " + packs + " --config " + path("bad.json") + " --out " + path("r2")).status, 0);
}

TEST_F(CliTest, EvalEqualsLibrary) {
  const auto packs = synth("d");
  ASSERT_EQ(run("train " + packs + " --seeds 4,5 --out " + path("r") + kSmallTrain).status, 0);
  const auto r = run("eval " + packs + " --models " + path("r") + " --out " + path("e"));
  ASSERT_EQ(r.status, 0) << r.output;

  const auto img = load_pack(path("d/images"));
  const auto aud = load_pack(path("d/audio"));
  const std::vector<AlignmentModel> models{load_checkpoint(path("r/seed_4")), load_checkpoint(path("r/seed_5"))};
  const std::vector<Direction> dirs{Direction::i2a, Direction::a2i};
  const auto lib = evaluate_models(models, img, aud, Split::test, dirs);
  EXPECT_EQ(slurp(path("e/eval_report.json")), to_json(lib).dump(2) + "\n");
  EXPECT_EQ(slurp(path("e/eval_report.txt")), render_report(lib));
}

TEST_F(CliTest, BaselineRerunIdentical) {
  const auto packs = synth("d");
  ASSERT_EQ(run("baseline " + packs + " --out " + path("x")).status, 0);
  ASSERT_EQ(run("baseline " + packs + " --out " + path("y")).status, 0);
  EXPECT_EQ(slurp(path("x/baseline_report.json")), slurp(path("y/baseline_report.json")));
  const auto j = nlohmann::json::parse(slurp(path("x/baseline_report.json")));
  EXPECT_EQ(j["method"], "baseline");
}

TEST_F(CliTest, RetrieveMatchesLibrary) {
  const auto packs = synth("d");
  ASSERT_EQ(run("train " + packs + " --seed 1 --out " + path("r") + kSmallTrain).status, 0);
  const auto img = load_pack(path("d/images"));
  const auto aud = load_pack(path("d/audio"));
  auto [queries, candidates] = split_items(img, aud, Split::test, Direction::a2i);
  const std::string qid = queries.ids.at(0);
  const auto r = run("retrieve " + packs + " --checkpoint " + path("r/seed_1") + " --direction a2i --query " + qid +
                     " --top-n 3 --json");
  ASSERT_EQ(r.status, 0) << r.output;
  ItemSet one{queries.modality, {qid}, {queries.classes[0]}, gather_rows(queries.vectors, std::vector<std::size_t>{0})};
  auto lists = retrieve(load_checkpoint(path("r/seed_1")), one, candidates, Direction::a2i);
  lists[0].candidates.resize(3);
  EXPECT_EQ(r.output, to_json(lists[0]).dump() + "\n");

  const auto bad = run("retrieve " + packs + " --query no-such-id");
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.output.find("no-such-id"), std::string::npos);
}

TEST_F(CliTest, AnalyzeWritesTables) {
  const auto packs = synth("d");
  const auto r = run("analyze " + packs + " --top-n 0 --out " + path("a"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("Average cosine distance from class centroid"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("a/analysis.json")));
  EXPECT_NE(run("analyze " + packs + " --direction up").status, 0);
}

TEST_F(CliTest, CorruptPackFails) {
  const auto packs = synth("d");
  auto bytes = read_file(path("d/audio.vec"));
  bytes[40] ^= std::byte{1};
  write_file(path("d/audio.vec"), bytes);
  const auto r = run("baseline " + packs);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("checksum"), std::string::npos) << r.output;
}
