// Explainability reporting: learned edge weights averaged per semantic and
// geometric class, heatmap export as coloured PLY, and per-component pose
// series for trajectory plots.
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "semreg/errors.hpp"
#include "semreg/geometry.hpp"
#include "semreg/graph.hpp"
#include "semreg/label_map.hpp"

namespace semreg {

struct AttentionCell {
  double sum = 0.0;
  size_t count = 0;
  double mean() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
};

/// Means are attributed to the destination (l-side) node of each scored edge;
/// cells that received no edge are absent rather than zero.
struct AttentionReport {
  std::map<uint16_t, AttentionCell> by_semantic;
  std::map<GeometricClass, AttentionCell> by_geometric;
  std::map<std::pair<uint16_t, GeometricClass>, AttentionCell> by_cell;
  size_t total_edges = 0;
};

struct ScoredGraph {
  const CrossGraph* graph = nullptr;
  std::vector<double> weights;  // aligned with graph->cross_edges
};

inline AttentionReport aggregate_attention(std::span<const ScoredGraph> runs) {
  AttentionReport report;
  for (const auto& run : runs) {
    if (run.weights.size() != run.graph->cross_edges.size()) {
      throw ShapeError("scored graph: weight count does not match edge count");
    }
    for (size_t e = 0; e < run.weights.size(); ++e) {
      const GraphNode& dst = run.graph->l.nodes[static_cast<size_t>(run.graph->cross_edges[e][1])];
      const GeometricClass gc =
          dst.feature == FeatureId::corner ? GeometricClass::corner : GeometricClass::surface;
      const double w = run.weights[e];
      auto bump = [w](AttentionCell& cell) {
        cell.sum += w;
        ++cell.count;
      };
      bump(report.by_semantic[dst.semantic]);
      bump(report.by_geometric[gc]);
      bump(report.by_cell[{dst.semantic, gc}]);
      ++report.total_edges;
    }
  }
  return report;
}

/// Rows are semantic classes sorted by descending total mean; columns are
/// total / corner / surface means with their sample counts. The geometric
/// summary row closes the table.
inline void write_attention_report(std::ostream& os, const AttentionReport& report,
                                   const LabelMap& labels) {
  os << "class\ttotal\tcorner\tsurface\ttotal_n\tcorner_n\tsurface_n\n";
  std::vector<std::pair<uint16_t, const AttentionCell*>> rows;
  for (const auto& [sem, cell] : report.by_semantic) rows.emplace_back(sem, &cell);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.second->mean() > b.second->mean();
  });
  os << std::setprecision(10);
  auto cell_str = [&](const AttentionCell* c, bool count) {
    if (c == nullptr || c->count == 0) return std::string("-");
    std::ostringstream tmp;
    tmp << std::setprecision(10) << (count ? static_cast<double>(c->count) : c->mean());
    return tmp.str();
  };
  for (const auto& [sem, total] : rows) {
    const AttentionCell* corner = nullptr;
    const AttentionCell* surface = nullptr;
    if (auto it = report.by_cell.find({sem, GeometricClass::corner}); it != report.by_cell.end()) {
      corner = &it->second;
    }
    if (auto it = report.by_cell.find({sem, GeometricClass::surface}); it != report.by_cell.end()) {
      surface = &it->second;
    }
    os << labels.name_of(sem) << '\t' << cell_str(total, false) << '\t' << cell_str(corner, false)
       << '\t' << cell_str(surface, false) << '\t' << cell_str(total, true) << '\t'
       << cell_str(corner, true) << '\t' << cell_str(surface, true) << '\n';
  }
  for (const auto gc : {GeometricClass::corner, GeometricClass::surface}) {
    auto it = report.by_geometric.find(gc);
    os << "all-" << to_string(gc) << 's' << '\t'
       << (it == report.by_geometric.end() ? "-" : cell_str(&it->second, false)) << "\t-\t-\t"
       << (it == report.by_geometric.end() ? "-" : cell_str(&it->second, true)) << "\t-\t-\n";
  }
}

inline void write_attention_report(const std::filesystem::path& path,
                                   const AttentionReport& report, const LabelMap& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_attention_report(out, report, labels);
}

// Blue (cold) to red (hot) ramp through green: 0 -> (0,0,255),
// 0.5 -> (0,255,0), 1 -> (255,0,0).
inline std::array<uint8_t, 3> heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double r = std::clamp(2.0 * t - 1.0, 0.0, 1.0);
  const double g = 1.0 - std::abs(2.0 * t - 1.0);
  const double b = std::clamp(1.0 - 2.0 * t, 0.0, 1.0);
  return {static_cast<uint8_t>(std::lround(255 * r)), static_cast<uint8_t>(std::lround(255 * g)),
          static_cast<uint8_t>(std::lround(255 * b))};
}

/// ASCII PLY with one vertex per cross-graph node (k nodes then l nodes) and
/// per-vertex RGB from the accumulated incident attention, normalised by the
/// maximum.
inline void export_heatmap(const std::filesystem::path& path, const CrossGraph& cg,
                           const std::vector<double>& weights) {
  if (weights.size() != cg.cross_edges.size()) {
    throw ShapeError("heatmap: weight count does not match edge count");
  }
  const size_t nk = cg.k.nodes.size();
  std::vector<double> accum(nk + cg.l.nodes.size(), 0.0);
  for (size_t e = 0; e < weights.size(); ++e) {
    accum[static_cast<size_t>(cg.cross_edges[e][0])] += weights[e];
    accum[nk + static_cast<size_t>(cg.cross_edges[e][1])] += weights[e];
  }
  double mx = 0.0;
  for (double a : accum) mx = std::max(mx, a);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << accum.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out << std::setprecision(9);
  size_t idx = 0;
  for (const auto* graph : {&cg.k, &cg.l}) {
    for (const auto& n : graph->nodes) {
      const auto rgb = heat_color(mx > 0.0 ? accum[idx] / mx : 0.0);
      out << n.pos.x() << ' ' << n.pos.y() << ' ' << n.pos.z() << ' ' << int(rgb[0]) << ' '
          << int(rgb[1]) << ' ' << int(rgb[2]) << '\n';
      ++idx;
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

/// (tx, ty, tz, roll, pitch, yaw) with Z-Y-X Euler angles in degrees.
inline std::array<double, 6> pose_components(const PoseSE3& pose) {
  const Eigen::Vector3d rpy = euler_zyx(pose.rotation);
  return {pose.translation.x(), pose.translation.y(), pose.translation.z(), rpy.x() * kRadToDeg,
          rpy.y() * kRadToDeg, rpy.z() * kRadToDeg};
}

inline PoseSE3 pose_from_components(const std::array<double, 6>& c) {
  PoseSE3 pose;
  pose.translation = {c[0], c[1], c[2]};
  pose.rotation = from_euler_zyx(c[3] * kDegToRad, c[4] * kDegToRad, c[5] * kDegToRad);
  return pose;
}

/// Tab-separated per-pair series of predicted and ground-truth components,
/// one row per pair: index, pred tx..yaw, gt tx..yaw.
inline void export_series(const std::vector<PoseSE3>& preds, const std::vector<PoseSE3>& gts,
                          const std::filesystem::path& path) {
  if (preds.size() != gts.size()) {
    throw UsageError("series export: prediction and ground-truth counts differ");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "index";
  for (const char* src : {"pred", "gt"}) {
    for (const char* c : {"tx", "ty", "tz", "roll", "pitch", "yaw"}) {
      out << '\t' << src << '_' << c;
    }
  }
  out << '\n';
  out << std::setprecision(17);
  for (size_t i = 0; i < preds.size(); ++i) {
    out << i;
    for (const auto& pose : {preds[i], gts[i]}) {
      for (double c : pose_components(pose)) out << '\t' << c;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace semreg
