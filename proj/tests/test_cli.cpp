#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "semreg/dataset.hpp"
#include "semreg/kitti_io.hpp"
#include "semreg/run_config.hpp"
#include "test_util.hpp"

using namespace semreg;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEMREG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path write_small_config(const std::filesystem::path& dir, int pairs,
                                         double noise = 0.0) {
  RunConfig cfg = RunConfig::defaults();
  cfg.synth_pairs = static_cast<size_t>(pairs);
  cfg.scene = test::small_scene_config(0);
  cfg.scene.noise_sigma = noise;
  cfg.pipeline.clusters = test::small_pipeline().clusters;
  const auto path = dir / "config.json";
  cfg.save(path);
  return path;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Cli, SynthIsDeterministicAcrossRuns) {
  const auto dir = test::temp_dir("cli_synth");
  const auto config = write_small_config(dir, 2);
  ASSERT_EQ(run_cli("synth --config " + config.string() + " --out " + (dir / "a").string() +
                    " --seed 7"),
            0);
  ASSERT_EQ(run_cli("synth --config " + config.string() + " --out " + (dir / "b").string() +
                    " --seed 7"),
            0);
  for (const char* rel : {"velodyne/000000.bin", "velodyne/000003.bin", "labels/000001.label",
                          "poses.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / rel), slurp(dir / "b" / rel)) << rel;
  }
}

TEST(Cli, GtWeightsBypassGivesPerfectRecallOnNoiselessData) {
  const auto dir = test::temp_dir("cli_gtw");
  const auto config = write_small_config(dir, 3, 0.0);
  ASSERT_EQ(run_cli("synth --config " + config.string() + " --out " + (dir / "ds").string() +
                    " --seed 5"),
            0);
  ASSERT_EQ(run_cli("infer --config " + config.string() + " --dataset " + (dir / "ds").string() +
                    " --out " + (dir / "run").string() + " --gt-weights"),
            0);
  ASSERT_EQ(run_cli("eval --config " + config.string() + " --dataset " + (dir / "ds").string() +
                    " --poses " + (dir / "run/poses/pred_poses.txt").string() + " --out " +
                    (dir / "run").string()),
            0);
  nlohmann::json metrics;
  std::ifstream(dir / "run/reports/metrics.json") >> metrics;
  EXPECT_DOUBLE_EQ(metrics.at("rr_percent").get<double>(), 100.0);
  EXPECT_LT(metrics.at("mean_rte_m").get<double>(), 1e-6);
}

TEST(Cli, EvalOnIdentityPredictionsMatchesIdentityGt) {
  const auto dir = test::temp_dir("cli_eval");
  // two identity scans at identity poses: gt relative pose is identity
  const auto config = write_small_config(dir, 1, 0.0);
  ASSERT_EQ(run_cli("synth --config " + config.string() + " --out " + (dir / "ds").string() +
                    " --seed 9"),
            0);
  // overwrite poses with identities and predict identities
  const Dataset ds = Dataset::open(dir / "ds");
  std::vector<PoseSE3> ids(ds.scan_count());
  write_poses(dir / "ds" / "poses.txt", ids);
  write_poses(dir / "preds.txt", std::vector<PoseSE3>(ds.pair_count()));
  ASSERT_EQ(run_cli("eval --config " + config.string() + " --dataset " + (dir / "ds").string() +
                    " --poses " + (dir / "preds.txt").string() + " --out " +
                    (dir / "run").string()),
            0);
  nlohmann::json metrics;
  std::ifstream(dir / "run/reports/metrics.json") >> metrics;
  EXPECT_DOUBLE_EQ(metrics.at("rr_percent").get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(metrics.at("mean_rte_m").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(metrics.at("mean_rre_deg").get<double>(), 0.0);
}

TEST(Cli, BuildGraphEmitsLoadableGraphsAndCounts) {
  const auto dir = test::temp_dir("cli_graphs");
  const auto config = write_small_config(dir, 2);
  ASSERT_EQ(run_cli("synth --config " + config.string() + " --out " + (dir / "ds").string() +
                    " --seed 3"),
            0);
  ASSERT_EQ(run_cli("build-graph --config " + config.string() + " --dataset " +
                    (dir / "ds").string() + " --out " + (dir / "run").string()),
            0);
  const CrossGraph cg = load_cross_graph(dir / "run/graphs/pair_000000.graph");
  EXPECT_GT(cg.k.nodes.size(), 1u);
  EXPECT_GT(cg.cross_edges.size(), 0u);
  std::ifstream counts(dir / "run/reports/edge_counts.tsv");
  std::string header;
  std::getline(counts, header);
  EXPECT_NE(header.find("fully_connected"), std::string::npos);
}

TEST(Cli, EffectiveConfigIsEchoed) {
  const auto dir = test::temp_dir("cli_echo");
  const auto config = write_small_config(dir, 1);
  ASSERT_EQ(run_cli("synth --config " + config.string() + " --out " + (dir / "out").string() +
                    " --seed 21"),
            0);
  nlohmann::json echoed;
  std::ifstream(dir / "out/configs/effective.json") >> echoed;
  EXPECT_EQ(echoed.at("seed").get<uint64_t>(), 21u);
  EXPECT_EQ(echoed.at("scene").at("rings").get<int>(), 6);
}

TEST(Cli, ConfigViaEnvironmentVariable) {
  const auto dir = test::temp_dir("cli_env");
  const auto config = write_small_config(dir, 1);
  const std::string cmd = "SEMGRAPH_REG_CONFIG=" + config.string() + " " + SEMREG_CLI_PATH +
                          " synth --out " + (dir / "out").string() + " --seed 2 > /dev/null 2>&1";
  ASSERT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 0);
  nlohmann::json echoed;
  std::ifstream(dir / "out/configs/effective.json") >> echoed;
  EXPECT_EQ(echoed.at("scene").at("azimuth_steps").get<int>(), 56);
}

TEST(Cli, DistinctExitCodes) {
  const auto dir = test::temp_dir("cli_codes");
  // missing dataset: usage error -> 2
  EXPECT_EQ(run_cli("train --out " + (dir / "x").string()), 2);
  // malformed config: config error -> 3
  std::ofstream(dir / "bad.json") << "{ \"train\": { \"lr\": \"fast\" } }";
  EXPECT_EQ(run_cli("synth --config " + (dir / "bad.json").string() + " --out " +
                    (dir / "y").string()),
            3);
  // unknown config key -> 3
  std::ofstream(dir / "unknown.json") << "{ \"trian\": {} }";
  EXPECT_EQ(run_cli("synth --config " + (dir / "unknown.json").string() + " --out " +
                    (dir / "z").string()),
            3);
  // nonexistent dataset directory -> 2
  EXPECT_EQ(run_cli("build-graph --dataset /nonexistent/nowhere --out " + (dir / "w").string()),
            2);
}

TEST(Cli, IngestRemapsAndConvertsPoses) {
  const auto dir = test::temp_dir("cli_ingest");
  // build a miniature KITTI-style input: one scan with a dynamic label and a
  // discarded road point
  std::filesystem::create_directories(dir / "in/velodyne");
  std::filesystem::create_directories(dir / "in/labels");
  LidarScan scan;
  scan.points = {{5, 0, 0}, {6, 0, 0}, {7, 0, 0}};
  scan.remission = {0, 0, 0};
  write_velodyne_bin(dir / "in/velodyne/000000.bin", scan);
  write_labels(dir / "in/labels/000000.label", {252, 40, 50}, {1, 0, 2});
  write_poses(dir / "in/poses.txt", {PoseSE3::identity()});

  const auto config = write_small_config(dir, 1);
  ASSERT_EQ(run_cli("ingest --config " + config.string() + " --dataset " + (dir / "in").string() +
                    " --out " + (dir / "out").string()),
            0);
  const LabelData labels = read_labels(dir / "out/labels/000000.label");
  EXPECT_EQ(labels.labels, (std::vector<uint16_t>{10, 50}));  // moving-car -> car; road dropped
  nlohmann::json summary;
  std::ifstream(dir / "out/reports/ingest_summary.json") >> summary;
  EXPECT_EQ(summary.at("points_in").get<int>(), 3);
  EXPECT_EQ(summary.at("points_kept").get<int>(), 2);
}

TEST(Config, ShippedFilesMatchBuiltInDefaults) {
  const std::filesystem::path src(SEMREG_SOURCE_DIR);
  const LabelMap shipped = LabelMap::load(src / "configs/label_map.json");
  const LabelMap builtin = LabelMap::semantic_kitti();
  EXPECT_EQ(shipped.to_json(), builtin.to_json());

  const RunConfig cfg = RunConfig::load(src / "configs/default.json");
  EXPECT_EQ(cfg.to_json(), RunConfig::defaults().to_json());
  cfg.validate();
}

TEST(Config, RoundTripsThroughJson) {
  RunConfig cfg = RunConfig::defaults();
  cfg.seed = 99;
  cfg.scene.rings = 9;
  cfg.train.lr = 5e-4;
  cfg.model.attn_gat1_heads = 2;
  cfg.model.attn_mlp = {256, 64, 32};
  cfg.pipeline.clusters.per_label[77] = {11, 0.33};
  RunConfig back = RunConfig::defaults();
  back.apply_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  RunConfig cfg = RunConfig::defaults();
  EXPECT_THROW(cfg.apply_json(nlohmann::json{{"unknown_key", 1}}), ConfigError);
  EXPECT_THROW(cfg.apply_json(nlohmann::json{{"train", {{"lr", "fast"}}}}), ConfigError);
  EXPECT_THROW(cfg.apply_json(nlohmann::json{{"scene", {{"ringz", 4}}}}), ConfigError);
}

TEST(Cli, TrainInferExplainRoundTrip) {
  const auto dir = test::temp_dir("cli_train");
  RunConfig cfg = RunConfig::defaults();
  cfg.synth_pairs = 5;
  cfg.scene = test::small_scene_config(0);
  cfg.pipeline.clusters = test::small_pipeline().clusters;
  cfg.train.epochs = 2;
  cfg.train.patience = 2;
  cfg.heatmaps = 1;
  const auto config = dir / "config.json";
  cfg.save(config);

  ASSERT_EQ(run_cli("synth --config " + config.string() + " --out " + (dir / "ds").string() +
                    " --seed 12"),
            0);
  ASSERT_EQ(run_cli("train --config " + config.string() + " --dataset " + (dir / "ds").string() +
                    " --out " + (dir / "run").string() + " --jobs 2"),
            0);
  const auto ckpt = dir / "run/checkpoints/best.ckpt";
  ASSERT_TRUE(std::filesystem::exists(ckpt));
  // metrics log has the documented schema
  std::ifstream log(dir / "run/reports/metrics.tsv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "epoch\ttrain_total\ttrain_La\ttrain_Lp\tval_total\tval_RR");

  ASSERT_EQ(run_cli("infer --config " + config.string() + " --dataset " + (dir / "ds").string() +
                    " --checkpoint " + ckpt.string() + " --out " + (dir / "run").string()),
            0);
  const PosesFile preds = read_poses(dir / "run/poses/pred_poses.txt");
  EXPECT_EQ(preds.poses.size(), 5u);

  ASSERT_EQ(run_cli("explain --config " + config.string() + " --dataset " + (dir / "ds").string() +
                    " --checkpoint " + ckpt.string() + " --out " + (dir / "run").string()),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir / "run/reports/attention_report.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "run/reports/heatmap_000000.ply"));

  // wrong-model checkpoint is a config error (exit 3)
  std::ofstream bad_cfg_file(dir / "bad_model.json");
  nlohmann::json j = cfg.to_json();
  j["model"]["enc_gcn1_out"] = 16;
  j["model"]["enc_mlp1"] = {16, 64, 128};
  bad_cfg_file << j.dump();
  bad_cfg_file.close();
  EXPECT_EQ(run_cli("infer --config " + (dir / "bad_model.json").string() + " --dataset " +
                    (dir / "ds").string() + " --checkpoint " + ckpt.string() + " --out " +
                    (dir / "run2").string()),
            3);
}
