// semreg command-line front end.
//
// Subcommands: synth, ingest, build-graph, train, infer, eval, explain.
// Every run echoes its effective configuration into <out>/configs/ so results
// are self-describing. Exit codes: 0 success, 2 usage, 3 config, 4 bad data,
// 5 degenerate/contract violation, 1 anything else.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "semreg/dataset.hpp"
#include "semreg/kitti_io.hpp"
#include "semreg/metrics.hpp"
#include "semreg/model.hpp"
#include "semreg/pipeline.hpp"
#include "semreg/procrustes.hpp"
#include "semreg/report.hpp"
#include "semreg/run_config.hpp"
#include "semreg/train.hpp"

namespace fs = std::filesystem;
using namespace semreg;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string label_map_path;
  std::string out_dir;
  std::string dataset_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  bool deterministic = false;
};

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg = RunConfig::defaults();
  std::string path = opts.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("SEMGRAPH_REG_CONFIG"); env != nullptr && *env != '\0') {
      path = env;
    }
  }
  if (!path.empty()) cfg = RunConfig::load(path);
  if (opts.seed_set) {
    cfg.seed = opts.seed;
    cfg.scene.seed = opts.seed;
    cfg.train.seed = opts.seed;
  } else {
    cfg.scene.seed = cfg.seed;
  }
  if (!opts.label_map_path.empty()) cfg.pipeline.remap = LabelMap::load(opts.label_map_path);
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  if (opts.deterministic) cfg.jobs = 1;
  cfg.train.jobs = cfg.jobs;
  cfg.validate();
  return cfg;
}

fs::path prepare_out_dir(const std::string& out, const RunConfig& cfg) {
  if (out.empty()) throw UsageError("--out is required");
  const fs::path root(out);
  for (const char* sub : {"configs", "graphs", "checkpoints", "poses", "reports"}) {
    fs::create_directories(root / sub);
  }
  cfg.save(root / "configs" / "effective.json");
  return root;
}

ad::ParamStore load_checkpoint_validated(const std::string& path, const NetConfig& net_cfg) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  ad::ParamStore loaded = ad::ParamStore::load_checkpoint(path);
  ad::ParamStore expected;
  init_params(expected, net_cfg, 0);
  if (loaded.order != expected.order) {
    throw ConfigError("checkpoint parameter manifest does not match the configured model");
  }
  for (const auto& name : expected.order) {
    const auto& a = expected.params.at(name);
    const auto& b = loaded.params.at(name);
    if (a->rows != b->rows || a->cols != b->cols) {
      throw ConfigError("checkpoint parameter " + name + " has shape " + b->shape_str() +
                        ", expected " + a->shape_str());
    }
  }
  return loaded;
}

int cmd_synth(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  const fs::path root = prepare_out_dir(opts.out_dir, cfg);
  write_synthetic_dataset(root, cfg.scene, cfg.synth_pairs);
  std::cout << "wrote " << cfg.synth_pairs << " synthetic pairs to " << root << "\n";
  return 0;
}

int cmd_ingest(const CommonOpts& opts, const std::string& calib_path) {
  RunConfig cfg = resolve_config(opts);
  if (opts.dataset_dir.empty()) throw UsageError("--dataset is required");
  const fs::path in_root(opts.dataset_dir);
  const fs::path out_root = prepare_out_dir(opts.out_dir, cfg);
  fs::create_directories(out_root / "velodyne");
  fs::create_directories(out_root / "labels");

  PosesFile poses = read_poses(in_root / "poses.txt");
  if (!calib_path.empty()) {
    poses.poses = apply_calibration(poses.poses, read_calibration(calib_path));
  }

  std::vector<fs::path> scans;
  for (const auto& entry : fs::directory_iterator(in_root / "velodyne")) {
    if (entry.path().extension() == ".bin") scans.push_back(entry.path());
  }
  std::sort(scans.begin(), scans.end());
  if (scans.size() != poses.poses.size()) {
    throw DataError("scan count " + std::to_string(scans.size()) + " does not match pose count " +
                    std::to_string(poses.poses.size()));
  }

  size_t total_points = 0, kept_points = 0;
  const LabelMap& map = cfg.pipeline.remap ? *cfg.pipeline.remap : LabelMap::semantic_kitti();
  for (size_t i = 0; i < scans.size(); ++i) {
    SemanticScan scan;
    scan.scan = read_velodyne_bin(scans[i]);
    LabelData labels = read_labels(in_root / "labels" / (scans[i].stem().string() + ".label"));
    if (labels.labels.size() != scan.scan.size()) {
      throw DataError(scans[i].string() + ": label/point count mismatch");
    }
    scan.labels = std::move(labels.labels);
    scan.raw_instance = std::move(labels.instances);
    total_points += scan.size();
    SemanticScan cleaned = remap_labels(scan, map);
    kept_points += cleaned.size();
    write_velodyne_bin(out_root / "velodyne" / (scan_basename(i) + ".bin"), cleaned.scan);
    write_labels(out_root / "labels" / (scan_basename(i) + ".label"), cleaned.labels,
                 cleaned.raw_instance);
  }
  write_poses(out_root / "poses.txt", poses.poses);
  {
    nlohmann::json manifest;
    manifest["stride"] = 1;
    manifest["remapped"] = true;
    std::ofstream mf(out_root / "dataset.json");
    mf << manifest.dump(2) << '\n';
  }

  nlohmann::json summary;
  summary["scans"] = scans.size();
  summary["points_in"] = total_points;
  summary["points_kept"] = kept_points;
  summary["poses_reorthonormalized"] = poses.reorthonormalized.size();
  summary["calibration_applied"] = !calib_path.empty();
  std::ofstream sf(out_root / "reports" / "ingest_summary.json");
  sf << summary.dump(2) << '\n';
  std::cout << "ingested " << scans.size() << " scans (" << kept_points << " of " << total_points
            << " points kept)\n";
  return 0;
}

int cmd_build_graph(const CommonOpts& opts, bool train_thresh) {
  RunConfig cfg = resolve_config(opts);
  if (opts.dataset_dir.empty()) throw UsageError("--dataset is required");
  const fs::path root = prepare_out_dir(opts.out_dir, cfg);
  const Dataset dataset = Dataset::open(opts.dataset_dir);
  const double thresh =
      train_thresh ? cfg.pipeline.cross_thresh_train : cfg.pipeline.cross_thresh_infer;

  const size_t n = dataset.pair_count();
  std::vector<EdgeCountReport> reports(n);
  parallel_for_indexed(n, cfg.jobs, [&](size_t i) {
    const PairRecord rec = dataset.load_pair(i);
    const CrossGraph cg = build_pair_graph(rec.scan_k, rec.scan_l, cfg.pipeline, thresh);
    save_cross_graph(root / "graphs" / ("pair_" + scan_basename(i) + ".graph"), cg);
    reports[i] = edge_count_report(cg);
  });

  std::ofstream ec(root / "reports" / "edge_counts.tsv");
  ec << "pair\tintra_k\tintra_l\tcross\ttotal\tfully_connected\n";
  for (size_t i = 0; i < n; ++i) {
    ec << i << '\t' << reports[i].intra_k << '\t' << reports[i].intra_l << '\t' << reports[i].cross
       << '\t' << reports[i].total << '\t' << reports[i].fully_connected << '\n';
  }
  std::cout << "built " << n << " cross-graphs\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& graphs_dir) {
  RunConfig cfg = resolve_config(opts);
  if (opts.dataset_dir.empty()) throw UsageError("--dataset is required");
  const fs::path root = prepare_out_dir(opts.out_dir, cfg);
  const Dataset dataset = Dataset::open(opts.dataset_dir);

  std::optional<fs::path> cache;
  if (!graphs_dir.empty()) cache = fs::path(graphs_dir);
  const TrainingSet set = build_training_set(dataset, cfg.pipeline, cfg.train, cache);
  std::cout << "training on " << set.train.size() << " pairs, validating on " << set.val.size()
            << "\n";
  TrainResult result = train(set, cfg.model, cfg.train, cfg.eval, &std::cout);

  result.params.save_checkpoint(root / "checkpoints" / "best.ckpt");
  {
    std::ofstream log(root / "reports" / "metrics.tsv");
    write_metrics_log(log, result.log);
  }
  std::cout << "best epoch " << result.best_epoch << " (val " << result.best_val << ") after "
            << result.epochs_run << " epochs; checkpoint at "
            << (root / "checkpoints" / "best.ckpt") << "\n";
  return 0;
}

int cmd_infer(const CommonOpts& opts, const std::string& checkpoint, bool gt_weights) {
  RunConfig cfg = resolve_config(opts);
  if (opts.dataset_dir.empty()) throw UsageError("--dataset is required");
  const fs::path root = prepare_out_dir(opts.out_dir, cfg);
  const Dataset dataset = Dataset::open(opts.dataset_dir);

  std::optional<ad::ParamStore> params;
  if (!gt_weights) params = load_checkpoint_validated(checkpoint, cfg.model);

  const size_t n = dataset.pair_count();
  std::vector<PoseSE3> poses(n);
  std::vector<int> degenerate;
  std::mutex degen_mutex;
  parallel_for_indexed(n, cfg.jobs, [&](size_t i) {
    const PairRecord rec = dataset.load_pair(i);
    TrainPair pair;
    pair.index = i;
    pair.graph = build_pair_graph(rec.scan_k, rec.scan_l, cfg.pipeline,
                                  cfg.pipeline.cross_thresh_infer);
    pair.inputs = assemble_inputs(pair.graph);
    pair.gt = rec.gt;
    try {
      if (gt_weights) {
        // ground-truth labels as weights: positive edges enter the solver
        // with weight 1, everything else is gated out
        const GtMatchLabels labels = extract_gt_matches(pair.graph, rec.gt, cfg.train.gt_radius);
        std::vector<WeightedMatch> matches;
        for (size_t e = 0; e < labels.labels.size(); ++e) {
          if (!labels.labels[e]) continue;
          const auto& edge = pair.graph.cross_edges[e];
          matches.push_back({pair.graph.k.nodes[static_cast<size_t>(edge[0])].pos,
                             pair.graph.l.nodes[static_cast<size_t>(edge[1])].pos, 1.0});
        }
        poses[i] = weighted_svd(matches);
      } else {
        ad::ParamMap clone = params->member_clone(false);
        const PairForward fwd = forward_pair(pair, clone, cfg.model, false, 0);
        if (!fwd.pose_ok) throw DegenerateError("pose path degenerate");
        poses[i] = fwd.pose_value;
      }
    } catch (const DegenerateError&) {
      poses[i] = PoseSE3::identity();
      std::lock_guard<std::mutex> lock(degen_mutex);
      degenerate.push_back(static_cast<int>(i));
    }
  });

  write_poses(root / "poses" / "pred_poses.txt", poses);
  std::sort(degenerate.begin(), degenerate.end());
  nlohmann::json summary;
  summary["pairs"] = n;
  summary["gt_weights"] = gt_weights;
  summary["degenerate_pairs"] = degenerate;
  std::ofstream sf(root / "reports" / "infer_summary.json");
  sf << summary.dump(2) << '\n';
  std::cout << "inferred " << n << " relative poses";
  if (!degenerate.empty()) std::cout << " (" << degenerate.size() << " degenerate, set identity)";
  std::cout << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& poses_path) {
  RunConfig cfg = resolve_config(opts);
  if (opts.dataset_dir.empty()) throw UsageError("--dataset is required");
  if (poses_path.empty()) throw UsageError("--poses is required");
  const fs::path root = prepare_out_dir(opts.out_dir, cfg);
  const Dataset dataset = Dataset::open(opts.dataset_dir);

  const std::vector<PoseSE3> preds = read_poses(poses_path).poses;
  if (preds.size() != dataset.pair_count()) {
    throw DataError("prediction count " + std::to_string(preds.size()) +
                    " does not match pair count " + std::to_string(dataset.pair_count()));
  }
  std::vector<PoseSE3> gts;
  std::vector<RegistrationMetrics> metrics;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto [ik, il] = dataset.pair_scan_indices(i);
    gts.push_back(relative_pose(dataset.poses()[ik], dataset.poses()[il]));
    metrics.push_back(evaluate_pair(preds[i], gts.back(), cfg.eval));
  }
  const RecallSummary recall = registration_recall(metrics);

  nlohmann::json j;
  j["rr_percent"] = recall.rr_percent;
  j["successes"] = recall.successes;
  j["total"] = recall.total;
  if (recall.mean_rte_m) j["mean_rte_m"] = *recall.mean_rte_m;
  if (recall.mean_rre_deg) j["mean_rre_deg"] = *recall.mean_rre_deg;
  j["thresholds"] = {{"rte_m", cfg.eval.rte_m}, {"rre_deg", cfg.eval.rre_deg}};
  nlohmann::json per_pair = nlohmann::json::array();
  for (size_t i = 0; i < metrics.size(); ++i) {
    per_pair.push_back({{"pair", i},
                        {"rre_deg", metrics[i].rre_deg},
                        {"rte_m", metrics[i].rte_m},
                        {"success", metrics[i].success}});
  }
  j["pairs"] = per_pair;
  std::ofstream jf(root / "reports" / "metrics.json");
  jf << j.dump(2) << '\n';

  export_series(preds, gts, root / "reports" / "series.tsv");
  std::cout << "RR " << recall.rr_percent << "% over " << recall.total << " pairs\n";
  return 0;
}

int cmd_explain(const CommonOpts& opts, const std::string& checkpoint) {
  RunConfig cfg = resolve_config(opts);
  if (opts.dataset_dir.empty()) throw UsageError("--dataset is required");
  const fs::path root = prepare_out_dir(opts.out_dir, cfg);
  const Dataset dataset = Dataset::open(opts.dataset_dir);
  ad::ParamStore params = load_checkpoint_validated(checkpoint, cfg.model);

  const size_t n = dataset.pair_count();
  std::vector<CrossGraph> graphs(n);
  std::vector<std::vector<double>> weights(n);
  parallel_for_indexed(n, cfg.jobs, [&](size_t i) {
    const PairRecord rec = dataset.load_pair(i);
    TrainPair pair;
    pair.index = i;
    pair.graph = build_pair_graph(rec.scan_k, rec.scan_l, cfg.pipeline,
                                  cfg.pipeline.cross_thresh_infer);
    pair.inputs = assemble_inputs(pair.graph);
    ad::ParamMap clone = params.member_clone(false);
    const PairForward fwd = forward_pair(pair, clone, cfg.model, false, 0);
    graphs[i] = std::move(pair.graph);
    weights[i] = fwd.weights.values();
  });

  std::vector<ScoredGraph> scored;
  for (size_t i = 0; i < n; ++i) scored.push_back({&graphs[i], weights[i]});
  const AttentionReport report = aggregate_attention(scored);
  const LabelMap& labels = cfg.pipeline.remap ? *cfg.pipeline.remap : LabelMap::semantic_kitti();
  write_attention_report(root / "reports" / "attention_report.tsv", report, labels);

  const size_t heatmaps = std::min<size_t>(static_cast<size_t>(std::max(0, cfg.heatmaps)), n);
  for (size_t i = 0; i < heatmaps; ++i) {
    export_heatmap(root / "reports" / ("heatmap_" + scan_basename(i) + ".ply"), graphs[i],
                   weights[i]);
  }
  std::cout << "attention report over " << report.total_edges << " edges; " << heatmaps
            << " heatmaps\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic graph-attention lidar registration"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string checkpoint, poses_path, calib_path;
  bool gt_weights = false;
  bool train_thresh = false;

  auto add_common = [&](CLI::App* sub, bool needs_dataset) {
    sub->add_option("--config", opts.config_path,
                    "run configuration JSON (default: $SEMGRAPH_REG_CONFIG)");
    sub->add_option("--label-map", opts.label_map_path,
                    "label taxonomy JSON overriding the configured one");
    sub->add_option("--out", opts.out_dir, "output directory")->required();
    if (needs_dataset) sub->add_option("--dataset", opts.dataset_dir, "dataset directory");
    sub->add_option("--seed", opts.seed, "override every seed in the config")
        ->each([&](const std::string&) { opts.seed_set = true; });
    sub->add_option("--jobs", opts.jobs, "worker threads (default from config)");
    sub->add_flag("--deterministic", opts.deterministic, "force single-worker execution");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  add_common(synth, false);

  CLI::App* ingest = app.add_subcommand("ingest", "validate and remap a KITTI-format dataset");
  add_common(ingest, true);
  ingest->add_option("--calib", calib_path, "calib.txt with the camera-to-lidar 'Tr' transform");

  CLI::App* build = app.add_subcommand("build-graph", "emit serialized cross-graphs");
  add_common(build, true);
  build->add_flag("--train-thresh", train_thresh, "use the training cross-edge threshold");

  CLI::App* train_cmd = app.add_subcommand("train", "train the registration network");
  add_common(train_cmd, true);
  std::string graphs_dir;
  train_cmd->add_option("--graphs", graphs_dir,
                        "cross-graph cache from 'build-graph --train-thresh'");

  CLI::App* infer = app.add_subcommand("infer", "estimate relative poses for every pair");
  add_common(infer, true);
  infer->add_option("--checkpoint", checkpoint, "trained checkpoint");
  infer->add_flag("--gt-weights", gt_weights,
                  "bypass the network and solve from ground-truth match labels");

  CLI::App* eval_cmd = app.add_subcommand("eval", "score predicted poses against ground truth");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--poses", poses_path, "predicted poses file")->required();

  CLI::App* explain = app.add_subcommand("explain", "attention report and heatmaps");
  add_common(explain, true);
  explain->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(opts);
    if (ingest->parsed()) return cmd_ingest(opts, calib_path);
    if (build->parsed()) return cmd_build_graph(opts, train_thresh);
    if (train_cmd->parsed()) return cmd_train(opts, graphs_dir);
    if (infer->parsed()) return cmd_infer(opts, checkpoint, gt_weights);
    if (eval_cmd->parsed()) return cmd_eval(opts, poses_path);
    if (explain->parsed()) return cmd_explain(opts, checkpoint);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const TaxonomyError& e) {
    std::cerr << "taxonomy error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 5;
  } catch (const DegenerateError& e) {
    std::cerr << "degenerate problem: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
