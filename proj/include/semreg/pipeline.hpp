// Scan-pair preprocessing shared by training, inference and the CLI:
// label remap -> curvature -> instance clustering -> single graphs ->
// instance matching -> cross edges -> pruning.
#pragma once

#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "semreg/clustering.hpp"
#include "semreg/curvature.hpp"
#include "semreg/graph.hpp"
#include "semreg/label_map.hpp"
#include "semreg/point_cloud.hpp"

namespace semreg {

struct PipelineConfig {
  int curvature_window = 5;
  double curvature_threshold = 0.1;
  ClusterParams clusters;
  GraphParams graph;
  double centroid_thresh = 3.0;
  double cross_thresh_infer = 2.0;
  double cross_thresh_train = 3.0;
  std::optional<LabelMap> remap;  // applied when present

  void validate() const {
    if (curvature_window < 1) throw ConfigError("curvature window must be >= 1");
    if (curvature_threshold <= 0) throw ConfigError("curvature threshold must be positive");
    if (graph.nn_radius <= 0) throw ConfigError("nn_radius must be positive");
    if (centroid_thresh <= 0 || cross_thresh_infer <= 0 || cross_thresh_train <= 0) {
      throw ConfigError("graph distance thresholds must be positive");
    }
    clusters.validate();
  }
};

struct PreparedScan {
  SemanticScan scan;
  CurvatureResult features;
  std::vector<Instance> instances;
  SingleGraph graph;
};

inline PreparedScan prepare_scan(const SemanticScan& input, const PipelineConfig& cfg) {
  PreparedScan out;
  out.scan = cfg.remap ? remap_labels(input, *cfg.remap) : input;
  out.features = compute_features(out.scan.scan, cfg.curvature_window, cfg.curvature_threshold);
  out.instances = extract_instances(out.scan, cfg.clusters);
  out.graph = build_single_graph(out.scan, out.features, out.instances, cfg.graph);
  return out;
}

inline CrossGraph link_scans(const PreparedScan& k, const PreparedScan& l,
                             const PipelineConfig& cfg, double cross_thresh) {
  const auto correspondences = match_instances(k.graph, l.graph, cfg.centroid_thresh);
  CrossGraph cg = build_cross_edges(k.graph, l.graph, correspondences, cross_thresh);
  return prune_cross_graph(cg);
}

inline CrossGraph build_pair_graph(const SemanticScan& scan_k, const SemanticScan& scan_l,
                                   const PipelineConfig& cfg, double cross_thresh) {
  const PreparedScan k = prepare_scan(scan_k, cfg);
  const PreparedScan l = prepare_scan(scan_l, cfg);
  return link_scans(k, l, cfg, cross_thresh);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads, each result landing in
/// its own slot; output order is independent of scheduling.
template <typename Fn>
void parallel_for_indexed(size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const size_t workers = std::min<size_t>(static_cast<size_t>(jobs), n);
  std::vector<std::thread> threads;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w]() {
      for (size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace semreg
