#include <gtest/gtest.h>

#include <filesystem>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "vibtx/archive.hpp"
#include "vibtx/lstm.hpp"
#include "vibtx/transmission_sim.hpp"

namespace fs = std::filesystem;
using namespace vibtx;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> store = {"vibtx"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : store) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "vibtx_test_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) { return io::read_text_file(p); }

// dataset -> split -> train -> eval at small sizes.
fs::path run_small_pipeline(const fs::path& root) {
  const auto data = (root / "data").string();
  const auto split = (root / "split").string();
  const auto model = (root / "model").string();
  const auto eval = (root / "eval").string();
  EXPECT_EQ(run_cli({"--seed", "11", "--out", data, "dataset", "--hand", "IL", "--n", "10"}).code, 0);
  EXPECT_EQ(run_cli({"--seed", "12", "--out", split, "split", "--dataset", data + "/dataset_IL.vtx"}).code, 0);
  EXPECT_EQ(run_cli({"--seed", "13", "--out", model, "train", "--train", split + "/train.vtx", "--val",
                     split + "/validation.vtx", "--epochs", "2", "--dense", "6", "--hidden", "6", "--batch", "10"})
                .code,
            0);
  const auto r = run_cli({"--out", eval, "eval", "--model", model + "/model.vtx", "--data", split + "/test.vtx",
                          "--val", split + "/validation.vtx"});
  EXPECT_EQ(r.code, 0) << r.err;
  return root;
}

}  // namespace

TEST(Cli, VersionAndHelp) {
  const auto v = run_cli({"--version"});
  EXPECT_EQ(v.code, cli::kExitOk);
  EXPECT_NE(v.out.find("0.1.0"), std::string::npos);
  const auto h = run_cli({"train", "--help"});
  EXPECT_EQ(h.code, cli::kExitOk);
  EXPECT_NE(h.out.find("0.0011/68/40/40/64"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  const auto dir = fresh_dir("usage").string();
  const auto bad_hand = run_cli({"--out", dir, "simulate", "--hand", "XX"});
  EXPECT_EQ(bad_hand.code, cli::kExitUsage);
  EXPECT_EQ(bad_hand.err.rfind("vibtx: error: usage:", 0), 0u) << bad_hand.err;
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitUsage);
}

TEST(Cli, MissingInputIsRuntimeError) {
  const auto dir = fresh_dir("missing").string();
  const auto r = run_cli({"--out", dir, "pipeline", "--sim", dir + "/nope.vtx"});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_EQ(r.err.rfind("vibtx: error: io:", 0), 0u) << r.err;
}

TEST(Cli, SimulateWritesArchiveAndManifest) {
  const auto dir = fresh_dir("simulate");
  const auto r = run_cli({"--seed", "5", "--out", dir.string(), "simulate", "--hand", "SH", "--n", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = sim::load_sim_archive(dir / "sim_SH.vtx");
  EXPECT_EQ(a.outputs.size(), 5u);
  EXPECT_EQ(a.hand, HandArchetype::SH);
  const auto manifest = slurp(dir / "run_manifest.txt");
  EXPECT_NE(manifest.find("subcommand=simulate"), std::string::npos);
  EXPECT_NE(manifest.find("seed=5"), std::string::npos);
  EXPECT_NE(manifest.find("[simulate]"), std::string::npos);

  const auto again = fresh_dir("simulate2");
  ASSERT_EQ(run_cli({"--seed", "5", "--out", again.string(), "simulate", "--hand", "SH", "--n", "1"}).code, 0);
  EXPECT_EQ(slurp(dir / "sim_SH.vtx"), slurp(again / "sim_SH.vtx"));
}

TEST(Cli, PipelineOutputs) {
  const auto dir = fresh_dir("pipeline");
  ASSERT_EQ(run_cli({"--out", dir.string(), "simulate", "--hand", "CH", "--n", "1"}).code, 0);
  const auto r = run_cli({"--out", dir.string(), "pipeline", "--sim", (dir / "sim_CH.vtx").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "energy_CH.csv"));
  EXPECT_EQ(slurp(dir / "energy_CH.svg").rfind("<svg", 0), 0u);
}

TEST(Cli, TransmissionReportNeedsFourHands) {
  const auto dir = fresh_dir("report_one");
  ASSERT_EQ(run_cli({"--out", dir.string(), "simulate", "--hand", "CH", "--n", "1"}).code, 0);
  const auto r = run_cli({"--out", dir.string(), "transmission-report", "--sim", (dir / "sim_CH.vtx").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("four"), std::string::npos) << r.err;
}

TEST(Cli, TransmissionReportConstantEnergies) {
  const auto dir = fresh_dir("report_const");
  ASSERT_EQ(run_cli({"--out", dir.string(), "simulate", "--hand", "CH", "--n", "1"}).code, 0);
  auto a = sim::load_sim_archive(dir / "sim_CH.vtx");
  std::vector<std::string> paths = {(dir / "sim_CH.vtx").string()};
  for (auto h : {HandArchetype::VP, HandArchetype::IL, HandArchetype::SH}) {
    a.hand = h;
    const auto p = dir / ("copy_" + std::string(to_string(h)) + ".vtx");
    sim::save_sim_archive(a, p);
    paths.push_back(p.string());
  }
  const auto r = run_cli({"--out", dir.string(), "transmission-report", "--sim", paths[0], "--sim", paths[1], "--sim",
                          paths[2], "--sim", paths[3]});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir / "spearman.txt").find("undefined"), std::string::npos);
}

TEST(Cli, TrainPresetAppliesTunedValues) {
  const auto root = fresh_dir("preset");
  const auto data = (root / "data").string(), split = (root / "split").string(), model = (root / "model").string();
  ASSERT_EQ(run_cli({"--out", data, "dataset", "--hand", "VP", "--n", "10"}).code, 0);
  ASSERT_EQ(run_cli({"--out", split, "split", "--dataset", data + "/dataset_VP.vtx"}).code, 0);
  const auto r = run_cli({"--out", model, "train", "--train", split + "/train.vtx", "--val", split + "/validation.vtx",
                          "--preset", "VP", "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("lr 0.0011, epochs 1, dense 40, hidden 40, batch 64"), std::string::npos) << r.out;
  const auto p = nn::load_model(fs::path(model) / "model.vtx");
  EXPECT_EQ(p.spec.dense_units, 40u);
  EXPECT_EQ(p.spec.lstm_hidden, 40u);
}

TEST(Cli, EvalRefusesTrainingSplit) {
  const auto root = run_small_pipeline(fresh_dir("refuse"));
  const auto r = run_cli({"--out", (root / "eval2").string(), "eval", "--model", (root / "model/model.vtx").string(),
                          "--data", (root / "split/train.vtx").string()});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_EQ(r.err.rfind("vibtx: error: provenance:", 0), 0u) << r.err;
  EXPECT_FALSE(fs::exists(root / "eval2" / "report.txt"));
}

TEST(Cli, EvalOfUntrainedModelReportsNearChance) {
  const auto root = run_small_pipeline(fresh_dir("untrained"));
  nn::NetworkSpec spec;
  spec.dense_units = 4;
  spec.lstm_hidden = 4;
  nn::save_model(nn::init_params(spec, 1), root / "random.vtx");
  const auto r = run_cli({"--out", (root / "eval_random").string(), "eval", "--model", (root / "random.vtx").string(),
                          "--data", (root / "split/test.vtx").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("test_accuracy"), std::string::npos);
}

TEST(Cli, PipelineIsByteReproducible) {
  const auto a = run_small_pipeline(fresh_dir("det_a"));
  const auto b = run_small_pipeline(fresh_dir("det_b"));
  for (const char* f : {"eval/report.txt", "eval/report.csv", "model/history.csv", "model/model.vtx",
                        "split/test.vtx", "data/dataset_IL.vtx"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_NE(slurp(a / "eval/report.txt").find("test_mean_precision"), std::string::npos);
}

TEST(Cli, ConfigFileSuppliesOptions) {
  const auto root = fresh_dir("config");
  io::write_text_file(root / "run.ini", "seed=9\n[simulate]\nhand=IL\nn=1\n");
  const auto r = run_cli({"--config", (root / "run.ini").string(), "--out", root.string(), "simulate"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(sim::load_sim_archive(root / "sim_IL.vtx").seed, 9u);
}
