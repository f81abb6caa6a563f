// Epoch loop with batched Adam updates, validation-driven early termination
// and checkpointing. Batch members always run against private parameter
// clones whose gradients are reduced in member order, so the resulting bits
// do not depend on the worker count.
#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "semreg/ad/params.hpp"
#include "semreg/dataset.hpp"
#include "semreg/losses.hpp"
#include "semreg/metrics.hpp"
#include "semreg/model.hpp"
#include "semreg/pipeline.hpp"
#include "semreg/procrustes.hpp"

namespace semreg {

struct TrainRunConfig {
  double lr = 1e-3;
  int epochs = 80;
  int batch_size = 4;
  double alpha = 1e3;        // pose-loss rotation scaling
  double gt_radius = 2.0;    // ground-truth match radius, meters
  int patience = 10;         // early-termination patience, epochs
  uint64_t seed = 1;
  double val_fraction = 0.2;
  bool bce_on_selected = true;   // attention loss on the max-selected subset
  bool use_attention_loss = true;
  bool use_pose_loss = true;
  double clamp_eps = 1e-12;
  int jobs = 1;

  void validate() const {
    if (lr <= 0 || epochs < 1 || batch_size < 1 || alpha < 0 || gt_radius <= 0) {
      throw ConfigError("train: lr/epochs/batch/alpha/gt_radius out of range");
    }
    if (patience < 1 || patience > epochs) {
      throw ConfigError("train: patience must be in [1, epochs]");
    }
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
      throw ConfigError("train: val_fraction must be in (0, 1)");
    }
    if (!use_attention_loss && !use_pose_loss) {
      throw ConfigError("train: at least one loss component must be enabled");
    }
  }
};

/// One scan pair ready for the network, with precomputed inputs and labels.
struct TrainPair {
  size_t index = 0;
  CrossGraph graph;
  NetInputs inputs;
  GtMatchLabels labels;
  PoseSE3 gt;
};

struct PairForward {
  EdgeWeights weights;
  std::vector<int> selected;        // cross-edge indices, one per l-side node
  ad::Value selected_weights;       // [S x 1]
  PosePath pose;
  bool pose_ok = false;
  PoseSE3 pose_value;
};

inline PairForward forward_pair(const TrainPair& pair, const ad::ParamMap& params,
                                const NetConfig& cfg, bool training, uint64_t dropout_seed) {
  ForwardCtx ctx{training, dropout_seed, 0};
  PairForward out;
  ad::Value embeddings = encode_keypoints(pair.inputs, params, cfg, ctx);
  out.weights = cross_attention(embeddings, pair.inputs, params, cfg, ctx);
  out.selected = select_max_edges(out.weights.values(), pair.graph);
  out.selected_weights = ad::gather_rows(out.weights.node, out.selected);

  if (out.selected.size() >= 3) {
    std::vector<Eigen::Vector3d> pk, pl;
    pk.reserve(out.selected.size());
    pl.reserve(out.selected.size());
    for (int e : out.selected) {
      const auto& edge = pair.graph.cross_edges[static_cast<size_t>(e)];
      pk.push_back(pair.graph.k.nodes[static_cast<size_t>(edge[0])].pos);
      pl.push_back(pair.graph.l.nodes[static_cast<size_t>(edge[1])].pos);
    }
    out.pose = build_pose_path(pk, pl, out.selected_weights);
    out.pose_ok = !*out.pose.degenerate;
    if (out.pose_ok) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out.pose_value.rotation(r, c) = out.pose.rotation->at(r, c);
        out.pose_value.translation(r) = out.pose.translation->val[static_cast<size_t>(r)];
      }
      out.pose_ok = out.pose_value.is_valid(1e-6);
    }
  }
  return out;
}

struct PairLoss {
  ad::Value total;  // null when the pair contributed nothing
  double attention = 0.0;
  double pose = 0.0;
  bool has_attention = false;
  bool has_pose = false;
};

inline PairLoss pair_loss(const TrainPair& pair, const PairForward& fwd,
                          const TrainRunConfig& cfg) {
  PairLoss out;
  ad::Value total;

  if (cfg.use_attention_loss) {
    ad::Value att_w;
    GtMatchLabels labels;
    if (cfg.bce_on_selected) {
      att_w = fwd.selected_weights;
      for (int e : fwd.selected) {
        const uint8_t l = pair.labels.labels[static_cast<size_t>(e)];
        labels.labels.push_back(l);
        ++(l ? labels.positives : labels.negatives);
      }
    } else {
      att_w = fwd.weights.node;
      labels = pair.labels;
    }
    if (labels.positives > 0 && !labels.labels.empty()) {
      ad::Value la = attention_loss(att_w, labels.labels, imbalance_weight(labels), cfg.clamp_eps);
      out.attention = la->val[0];
      out.has_attention = true;
      total = la;
    }
  }

  if (cfg.use_pose_loss && fwd.pose_ok) {
    ad::Value lp = pose_loss(fwd.pose, pair.gt, cfg.alpha);
    out.pose = lp->val[0];
    out.has_pose = true;
    total = total ? ad::add(total, lp) : lp;
  }

  out.total = total;
  return out;
}

struct EpochMetrics {
  int epoch = 0;
  double train_total = 0.0;
  double train_attention = 0.0;
  double train_pose = 0.0;
  double val_total = 0.0;
  double val_rr = 0.0;
};

inline void write_metrics_log(std::ostream& os, const std::vector<EpochMetrics>& log) {
  os << "epoch\ttrain_total\ttrain_La\ttrain_Lp\tval_total\tval_RR\n";
  os << std::setprecision(17);
  for (const auto& m : log) {
    os << m.epoch << '\t' << m.train_total << '\t' << m.train_attention << '\t' << m.train_pose
       << '\t' << m.val_total << '\t' << m.val_rr << '\n';
  }
}

struct TrainResult {
  ad::ParamStore params;       // best-validation parameters
  std::vector<EpochMetrics> log;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
};

/// Builds network-ready pairs: the first (1 - val_fraction) share at the
/// training cross-edge threshold, the rest at the inference threshold.
struct TrainingSet {
  std::vector<TrainPair> train;
  std::vector<TrainPair> val;
};

inline TrainPair make_train_pair(const PairRecord& rec, const PipelineConfig& pipeline,
                                 double cross_thresh, double gt_radius) {
  TrainPair pair;
  pair.index = rec.index;
  pair.graph = build_pair_graph(rec.scan_k, rec.scan_l, pipeline, cross_thresh);
  pair.inputs = assemble_inputs(pair.graph);
  pair.labels = extract_gt_matches(pair.graph, rec.gt, gt_radius);
  pair.gt = rec.gt;
  return pair;
}

/// `graph_cache`, when given, must hold `build-graph --train-thresh` output
/// (`pair_NNNNNN.graph`); cached graphs replace the scan preprocessing for
/// the training split, the validation split is always rebuilt at the
/// inference threshold.
inline TrainingSet build_training_set(const Dataset& dataset, const PipelineConfig& pipeline,
                                      const TrainRunConfig& cfg,
                                      const std::optional<std::filesystem::path>& graph_cache =
                                          std::nullopt) {
  const size_t n = dataset.pair_count();
  if (n < 2) throw ConfigError("training needs at least 2 pairs, got " + std::to_string(n));
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::llround(cfg.val_fraction * n)));
  const size_t n_train = n - n_val;
  if (n_train == 0) throw ConfigError("training split is empty");

  TrainingSet set;
  set.train.resize(n_train);
  set.val.resize(n_val);
  parallel_for_indexed(n, cfg.jobs, [&](size_t i) {
    if (i < n_train) {
      if (graph_cache) {
        TrainPair pair;
        pair.index = i;
        pair.graph = load_cross_graph(*graph_cache / ("pair_" + scan_basename(i) + ".graph"));
        pair.inputs = assemble_inputs(pair.graph);
        const auto [ik, il] = dataset.pair_scan_indices(i);
        pair.gt = relative_pose(dataset.poses()[ik], dataset.poses()[il]);
        pair.labels = extract_gt_matches(pair.graph, pair.gt, cfg.gt_radius);
        set.train[i] = std::move(pair);
      } else {
        set.train[i] = make_train_pair(dataset.load_pair(i), pipeline,
                                       pipeline.cross_thresh_train, cfg.gt_radius);
      }
    } else {
      set.val[i - n_train] = make_train_pair(dataset.load_pair(i), pipeline,
                                             pipeline.cross_thresh_infer, cfg.gt_radius);
    }
  });
  return set;
}

inline uint64_t dropout_stream(uint64_t seed, int epoch, size_t pair_index) {
  return splitmix64(seed ^ splitmix64(0xD0 + static_cast<uint64_t>(epoch)) ^
                    splitmix64(0x9000 + pair_index));
}

/// The epoch loop. Per epoch: seeded shuffle, batches of cfg.batch_size,
/// losses summed over the batch, one Adam step per batch; then validation
/// loss and recall. Stops early when validation fails to improve for
/// `patience` epochs and returns the best checkpoint.
inline TrainResult train(const TrainingSet& set, const NetConfig& net_cfg,
                         const TrainRunConfig& cfg, const EvalThresholds& thresholds = {},
                         std::ostream* diag = nullptr) {
  cfg.validate();
  net_cfg.validate();
  if (set.train.empty() || set.val.empty()) throw ConfigError("empty train or validation split");

  ad::ParamStore store;
  init_params(store, net_cfg, cfg.seed);
  TrainResult result;
  result.params = store.deep_copy();

  std::vector<size_t> train_order(set.train.size());
  std::iota(train_order.begin(), train_order.end(), 0);
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0xE90c + static_cast<uint64_t>(epoch)));
    std::shuffle(train_order.begin(), train_order.end(), shuffle_rng);

    double sum_total = 0.0, sum_att = 0.0, sum_pose = 0.0;
    size_t contributing = 0;

    for (size_t start = 0; start < train_order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t members = std::min(static_cast<size_t>(cfg.batch_size),
                                      train_order.size() - start);
      std::vector<ad::ParamMap> clones(members);
      std::vector<PairLoss> losses(members);
      parallel_for_indexed(members, cfg.jobs, [&](size_t m) {
        const TrainPair& pair = set.train[train_order[start + m]];
        clones[m] = store.member_clone();
        PairForward fwd = forward_pair(pair, clones[m], net_cfg, true,
                                       dropout_stream(cfg.seed, epoch, pair.index));
        losses[m] = pair_loss(pair, fwd, cfg);
        if (losses[m].total) {
          if (!std::isfinite(losses[m].total->val[0])) {
            throw DataError("non-finite loss at pair " + std::to_string(pair.index));
          }
          ad::backward(losses[m].total);
        }
      });
      bool any = false;
      for (size_t m = 0; m < members; ++m) {
        const TrainPair& pair = set.train[train_order[start + m]];
        if (!losses[m].total) {
          if (diag) {
            *diag << "epoch " << epoch << ": pair " << pair.index
                  << " skipped (no usable loss)\n";
          }
          continue;
        }
        any = true;
        store.accumulate_grads(clones[m]);
        sum_total += losses[m].total->val[0];
        sum_att += losses[m].attention;
        sum_pose += losses[m].pose;
        ++contributing;
      }
      if (any) store.adam_step(cfg.lr);
      store.zero_grad();
    }

    // validation: dropout off, losses plus registration recall
    std::vector<double> val_totals(set.val.size(), std::numeric_limits<double>::quiet_NaN());
    std::vector<RegistrationMetrics> val_metrics(set.val.size());
    parallel_for_indexed(set.val.size(), cfg.jobs, [&](size_t i) {
      const TrainPair& pair = set.val[i];
      ad::ParamMap clone = store.member_clone(false);
      PairForward fwd = forward_pair(pair, clone, net_cfg, false, 0);
      PairLoss loss = pair_loss(pair, fwd, cfg);
      if (loss.total) val_totals[i] = loss.total->val[0];
      val_metrics[i] = fwd.pose_ok ? evaluate_pair(fwd.pose_value, pair.gt, thresholds)
                                   : RegistrationMetrics{180.0, std::numeric_limits<double>::infinity(), false};
    });
    double val_sum = 0.0;
    size_t val_n = 0;
    for (double v : val_totals) {
      if (std::isfinite(v)) {
        val_sum += v;
        ++val_n;
      }
    }
    const RecallSummary recall = registration_recall(val_metrics);

    EpochMetrics em;
    em.epoch = epoch;
    em.train_total = contributing ? sum_total / static_cast<double>(contributing) : 0.0;
    em.train_attention = contributing ? sum_att / static_cast<double>(contributing) : 0.0;
    em.train_pose = contributing ? sum_pose / static_cast<double>(contributing) : 0.0;
    em.val_total = val_n ? val_sum / static_cast<double>(val_n) : 0.0;
    em.val_rr = recall.rr_percent;
    result.log.push_back(em);
    result.epochs_run = epoch + 1;
    if (diag) {
      *diag << "epoch " << epoch << " train " << em.train_total << " val " << em.val_total
            << " RR " << em.val_rr << "%\n";
    }

    if (em.val_total < result.best_val) {
      result.best_val = em.val_total;
      result.best_epoch = epoch;
      result.params = store.deep_copy();
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) break;
    }
  }
  return result;
}

}  // namespace semreg
