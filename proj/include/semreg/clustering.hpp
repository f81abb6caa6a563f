// Class-conditioned Euclidean instance extraction: single-linkage clustering
// within each semantic label, realised with a grid-hashed neighbour search.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "semreg/errors.hpp"
#include "semreg/point_cloud.hpp"

namespace semreg {

struct ClusterEntry {
  int min_size = 30;        // clusters below this are discarded
  double tolerance = 1.0;   // max neighbour distance, meters
};

struct ClusterParams {
  std::map<uint16_t, ClusterEntry> per_label;
  ClusterEntry fallback{30, 1.0};

  const ClusterEntry& for_label(uint16_t label) const {
    auto it = per_label.find(label);
    return it == per_label.end() ? fallback : it->second;
  }

  void validate() const {
    auto check = [](const ClusterEntry& e) {
      if (e.min_size < 1) throw ConfigError("cluster min_size must be >= 1");
      if (e.tolerance <= 0.0) throw ConfigError("cluster tolerance must be positive");
    };
    check(fallback);
    for (const auto& [label, e] : per_label) check(e);
  }

  /// Per-class table for the SemanticKITTI taxonomy; the sign/vegetation
  /// minimum sizes and car/building/terrain tolerances are pinned, the rest
  /// interpolate by object scale.
  static ClusterParams semantic_kitti() {
    ClusterParams p;
    p.per_label = {
        {10, {50, 0.5}},   // car
        {11, {20, 0.5}},   // bicycle
        {13, {50, 0.5}},   // bus
        {15, {20, 0.5}},   // motorcycle
        {16, {50, 0.5}},   // on-rails
        {18, {50, 0.5}},   // truck
        {20, {50, 0.5}},   // other-vehicle
        {30, {20, 0.3}},   // person
        {31, {20, 0.5}},   // bicyclist
        {32, {20, 0.5}},   // motorcyclist
        {48, {100, 2.0}},  // sidewalk
        {49, {100, 2.0}},  // other-ground
        {50, {100, 2.0}},  // building
        {51, {50, 1.0}},   // fence
        {70, {200, 1.0}},  // vegetation
        {71, {20, 0.5}},   // trunk
        {72, {200, 2.0}},  // terrain
        {80, {10, 0.5}},   // pole
        {81, {50, 0.5}},   // traffic-sign
    };
    p.fallback = {30, 1.0};
    return p;
  }
};

/// A spatially clustered group of same-label points.
struct Instance {
  int32_t id = -1;
  uint16_t semantic = 0;
  std::vector<int> members;  // point indices, ascending
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
};

namespace cluster_detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
  }
};

struct CellKey {
  int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  size_t operator()(const CellKey& k) const {
    return static_cast<size_t>(k.x * 73856093LL ^ k.y * 19349669LL ^ k.z * 83492791LL);
  }
};

}  // namespace cluster_detail

/// Single-linkage partition of each semantic class at that class's tolerance;
/// clusters below the class minimum size are dropped. Instance ids are
/// assigned by ascending (label, smallest member index) and are unique within
/// the scan. Discarded points stay unassigned.
inline std::vector<Instance> extract_instances(const SemanticScan& scan,
                                               const ClusterParams& params) {
  params.validate();
  scan.require_valid();

  std::map<uint16_t, std::vector<int>> by_label;
  for (size_t i = 0; i < scan.size(); ++i) {
    by_label[scan.labels[i]].push_back(static_cast<int>(i));
  }

  std::vector<Instance> instances;
  int32_t next_id = 0;
  for (const auto& [label, indices] : by_label) {
    const ClusterEntry& entry = params.for_label(label);
    const double tol = entry.tolerance;
    const double tol2 = tol * tol;

    // grid hash with cell size = tolerance; linking only needs the 27
    // neighbouring cells
    std::unordered_map<cluster_detail::CellKey, std::vector<int>, cluster_detail::CellHash> grid;
    auto cell_of = [&](const Eigen::Vector3d& p) {
      return cluster_detail::CellKey{static_cast<int64_t>(std::floor(p.x() / tol)),
                                     static_cast<int64_t>(std::floor(p.y() / tol)),
                                     static_cast<int64_t>(std::floor(p.z() / tol))};
    };
    for (size_t local = 0; local < indices.size(); ++local) {
      grid[cell_of(scan.scan.points[static_cast<size_t>(indices[local])])].push_back(
          static_cast<int>(local));
    }

    cluster_detail::UnionFind uf(indices.size());
    for (size_t local = 0; local < indices.size(); ++local) {
      const Eigen::Vector3d& p = scan.scan.points[static_cast<size_t>(indices[local])];
      const cluster_detail::CellKey base = cell_of(p);
      for (int64_t dx = -1; dx <= 1; ++dx) {
        for (int64_t dy = -1; dy <= 1; ++dy) {
          for (int64_t dz = -1; dz <= 1; ++dz) {
            auto it = grid.find({base.x + dx, base.y + dy, base.z + dz});
            if (it == grid.end()) continue;
            for (int other : it->second) {
              if (other <= static_cast<int>(local)) continue;
              const Eigen::Vector3d& q = scan.scan.points[static_cast<size_t>(indices[static_cast<size_t>(other)])];
              if ((p - q).squaredNorm() <= tol2) uf.unite(static_cast<int>(local), other);
            }
          }
        }
      }
    }

    std::map<int, std::vector<int>> clusters;  // root -> global point indices
    for (size_t local = 0; local < indices.size(); ++local) {
      clusters[uf.find(static_cast<int>(local))].push_back(indices[local]);
    }
    for (auto& [root, members] : clusters) {
      if (static_cast<int>(members.size()) < entry.min_size) continue;
      Instance inst;
      inst.id = next_id++;
      inst.semantic = label;
      std::sort(members.begin(), members.end());
      inst.members = std::move(members);
      // summation over lexicographically sorted coordinates keeps the
      // centroid bit-identical under input point reordering
      std::vector<std::array<double, 3>> coords;
      coords.reserve(inst.members.size());
      for (int idx : inst.members) {
        const auto& p = scan.scan.points[static_cast<size_t>(idx)];
        coords.push_back({p.x(), p.y(), p.z()});
      }
      std::sort(coords.begin(), coords.end());
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      for (const auto& c : coords) sum += Eigen::Vector3d(c[0], c[1], c[2]);
      inst.centroid = sum / static_cast<double>(inst.members.size());
      instances.push_back(std::move(inst));
    }
  }
  return instances;
}

}  // namespace semreg
