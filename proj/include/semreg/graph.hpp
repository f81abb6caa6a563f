// Heterogeneous scan graphs. A single-scan graph holds one origin node, one
// centroid node per instance and one node per clustered point, wired by a
// fixed grammar:
//   corner/surface node -> its instance centroid   (directed)
//   centroid            -> origin                  (directed)
//   close same-instance, same-class points         (bidirectional)
// Two scan graphs are linked into a cross-graph whose edges connect
// registration candidates; semantically unrelated structure is pruned.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "semreg/clustering.hpp"
#include "semreg/curvature.hpp"
#include "semreg/errors.hpp"
#include "semreg/point_cloud.hpp"

namespace semreg {

enum class FeatureId : uint8_t { origin, centroid, corner, surface };

inline const char* to_string(FeatureId f) {
  switch (f) {
    case FeatureId::origin: return "origin";
    case FeatureId::centroid: return "centroid";
    case FeatureId::corner: return "corner";
    case FeatureId::surface: return "surface";
  }
  return "?";
}

inline FeatureId feature_from_string(const std::string& s) {
  if (s == "origin") return FeatureId::origin;
  if (s == "centroid") return FeatureId::centroid;
  if (s == "corner") return FeatureId::corner;
  if (s == "surface") return FeatureId::surface;
  throw FormatError("unknown feature id '" + s + "'");
}

inline bool is_point_feature(FeatureId f) {
  return f == FeatureId::corner || f == FeatureId::surface;
}

struct GraphNode {
  Eigen::Vector3d pos = Eigen::Vector3d::Zero();
  uint16_t semantic = 0;
  int32_t instance = -1;     // -1 for the origin node
  FeatureId feature = FeatureId::origin;
  int32_t point_index = -1;  // source scan point; -1 for origin/centroid
};

struct SingleGraph {
  int scan_index = 0;
  std::vector<GraphNode> nodes;
  std::vector<std::array<int, 2>> edges;  // directed src -> dst
};

struct GraphParams {
  double nn_radius = 0.8;  // proximity-edge radius, meters
  int nn_cap = 10;         // nearest neighbours kept per node; <= 0 disables the cap
};

/// Builds the single-scan graph. Only points assigned to an instance become
/// nodes; their corner/surface class comes from `curv`. Proximity edges link
/// same-instance, same-class points within nn_radius, capped at nn_cap
/// nearest per node (union over endpoints, then symmetrised).
inline SingleGraph build_single_graph(const SemanticScan& scan, const CurvatureResult& curv,
                                      const std::vector<Instance>& instances,
                                      const GraphParams& params) {
  if (params.nn_radius <= 0.0) throw ConfigError("nn_radius must be positive");
  if (curv.classes.size() != scan.size()) {
    throw ContractError("curvature result does not cover the scan");
  }
  SingleGraph g;
  g.scan_index = scan.scan.scan_index;
  g.nodes.push_back(GraphNode{});  // origin at index 0

  for (const auto& inst : instances) {
    GraphNode centroid;
    centroid.pos = inst.centroid;
    centroid.semantic = inst.semantic;
    centroid.instance = inst.id;
    centroid.feature = FeatureId::centroid;
    const int centroid_idx = static_cast<int>(g.nodes.size());
    g.nodes.push_back(centroid);

    const int first_member_node = static_cast<int>(g.nodes.size());
    for (int point_idx : inst.members) {
      GraphNode node;
      node.pos = scan.scan.points[static_cast<size_t>(point_idx)];
      node.semantic = inst.semantic;
      node.instance = inst.id;
      node.feature = curv.classes[static_cast<size_t>(point_idx)] == GeometricClass::corner
                         ? FeatureId::corner
                         : FeatureId::surface;
      node.point_index = point_idx;
      g.edges.push_back({static_cast<int>(g.nodes.size()), centroid_idx});
      g.nodes.push_back(node);
    }
    g.edges.push_back({centroid_idx, 0});

    // proximity edges within the instance; equidistant candidates at the cap
    // boundary order by position so the construction stays independent of
    // the input point order (regular grids produce exact distance ties)
    const int member_count = static_cast<int>(inst.members.size());
    const double radius2 = params.nn_radius * params.nn_radius;
    using Candidate = std::tuple<double, std::array<double, 3>, int>;
    std::set<std::pair<int, int>> pairs;  // (lower, higher) node indices
    for (int a = 0; a < member_count; ++a) {
      const int na = first_member_node + a;
      std::vector<Candidate> cands;
      for (int b = 0; b < member_count; ++b) {
        if (b == a) continue;
        const int nb = first_member_node + b;
        const GraphNode& node_b = g.nodes[static_cast<size_t>(nb)];
        if (g.nodes[static_cast<size_t>(na)].feature != node_b.feature) continue;
        const double d2 = (g.nodes[static_cast<size_t>(na)].pos - node_b.pos).squaredNorm();
        if (d2 <= radius2) {
          cands.emplace_back(d2, std::array<double, 3>{node_b.pos.x(), node_b.pos.y(),
                                                       node_b.pos.z()}, nb);
        }
      }
      std::sort(cands.begin(), cands.end());
      const size_t keep =
          params.nn_cap > 0 ? std::min(cands.size(), static_cast<size_t>(params.nn_cap))
                            : cands.size();
      for (size_t c = 0; c < keep; ++c) {
        const int nb = std::get<2>(cands[c]);
        pairs.emplace(std::min(na, nb), std::max(na, nb));
      }
    }
    for (const auto& [lo, hi] : pairs) {
      g.edges.push_back({lo, hi});
      g.edges.push_back({hi, lo});
    }
  }
  return g;
}

struct InstanceCorrespondence {
  int32_t k_instance = -1;
  int32_t l_instance = -1;
  double distance = 0.0;
};

/// For each instance in g_l, the nearest same-label centroid in g_k within
/// `centroid_thresh`; equidistant candidates resolve to the lower instance id.
/// Unmatched instances are simply absent from the result.
inline std::vector<InstanceCorrespondence> match_instances(const SingleGraph& g_k,
                                                           const SingleGraph& g_l,
                                                           double centroid_thresh) {
  if (centroid_thresh <= 0.0) throw ConfigError("centroid threshold must be positive");
  std::vector<InstanceCorrespondence> out;
  for (const auto& ln : g_l.nodes) {
    if (ln.feature != FeatureId::centroid) continue;
    int32_t best_id = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& kn : g_k.nodes) {
      if (kn.feature != FeatureId::centroid || kn.semantic != ln.semantic) continue;
      const double d = (kn.pos - ln.pos).norm();
      if (d < best_d || (d == best_d && kn.instance < best_id)) {
        best_d = d;
        best_id = kn.instance;
      }
    }
    if (best_id >= 0 && best_d <= centroid_thresh) {
      out.push_back({best_id, ln.instance, best_d});
    }
  }
  return out;
}

struct CrossGraph {
  SingleGraph k;
  SingleGraph l;
  std::vector<std::array<int, 2>> cross_edges;  // (node idx in k, node idx in l), directed k->l
  std::vector<InstanceCorrespondence> correspondences;
};

/// Connects equal-feature-class points of corresponded instances within
/// `point_thresh`. Edge order is deterministic: correspondence order, then k
/// node index, then l node index.
inline CrossGraph build_cross_edges(const SingleGraph& g_k, const SingleGraph& g_l,
                                    const std::vector<InstanceCorrespondence>& correspondences,
                                    double point_thresh) {
  if (point_thresh <= 0.0) throw ConfigError("point threshold must be positive");
  CrossGraph cg;
  cg.k = g_k;
  cg.l = g_l;
  cg.correspondences = correspondences;

  std::map<int32_t, std::vector<int>> k_members, l_members;
  for (size_t i = 0; i < g_k.nodes.size(); ++i) {
    if (is_point_feature(g_k.nodes[i].feature)) k_members[g_k.nodes[i].instance].push_back(static_cast<int>(i));
  }
  for (size_t i = 0; i < g_l.nodes.size(); ++i) {
    if (is_point_feature(g_l.nodes[i].feature)) l_members[g_l.nodes[i].instance].push_back(static_cast<int>(i));
  }

  const double thresh2 = point_thresh * point_thresh;
  for (const auto& corr : correspondences) {
    auto ki = k_members.find(corr.k_instance);
    auto li = l_members.find(corr.l_instance);
    if (ki == k_members.end() || li == l_members.end()) continue;
    for (int kn : ki->second) {
      for (int ln : li->second) {
        const GraphNode& a = g_k.nodes[static_cast<size_t>(kn)];
        const GraphNode& b = g_l.nodes[static_cast<size_t>(ln)];
        if (a.feature != b.feature) continue;
        if ((a.pos - b.pos).squaredNorm() > thresh2) continue;
        cg.cross_edges.push_back({kn, ln});
      }
    }
  }
  return cg;
}

namespace graph_detail {

inline SingleGraph compact(const SingleGraph& g, const std::vector<char>& keep,
                           std::vector<int>& remap) {
  SingleGraph out;
  out.scan_index = g.scan_index;
  remap.assign(g.nodes.size(), -1);
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    if (keep[i]) {
      remap[i] = static_cast<int>(out.nodes.size());
      out.nodes.push_back(g.nodes[i]);
    }
  }
  for (const auto& e : g.edges) {
    if (keep[static_cast<size_t>(e[0])] && keep[static_cast<size_t>(e[1])]) {
      out.edges.push_back({remap[static_cast<size_t>(e[0])], remap[static_cast<size_t>(e[1])]});
    }
  }
  return out;
}

}  // namespace graph_detail

/// Removes corner/surface nodes without any incident cross edge and centroids
/// of uncorresponded instances (with their members), then compacts node
/// indices. Origins are always retained. Idempotent.
inline CrossGraph prune_cross_graph(const CrossGraph& cg) {
  std::set<int32_t> matched_k, matched_l;
  for (const auto& c : cg.correspondences) {
    matched_k.insert(c.k_instance);
    matched_l.insert(c.l_instance);
  }
  std::vector<char> has_cross_k(cg.k.nodes.size(), 0), has_cross_l(cg.l.nodes.size(), 0);
  for (const auto& e : cg.cross_edges) {
    has_cross_k[static_cast<size_t>(e[0])] = 1;
    has_cross_l[static_cast<size_t>(e[1])] = 1;
  }

  auto keep_mask = [](const SingleGraph& g, const std::vector<char>& has_cross,
                      const std::set<int32_t>& matched) {
    std::vector<char> keep(g.nodes.size(), 0);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      const GraphNode& n = g.nodes[i];
      if (n.feature == FeatureId::origin) {
        keep[i] = 1;
      } else if (n.feature == FeatureId::centroid) {
        keep[i] = matched.count(n.instance) ? 1 : 0;
      } else {
        keep[i] = has_cross[i];
      }
    }
    return keep;
  };

  CrossGraph out;
  std::vector<int> remap_k, remap_l;
  out.k = graph_detail::compact(cg.k, keep_mask(cg.k, has_cross_k, matched_k), remap_k);
  out.l = graph_detail::compact(cg.l, keep_mask(cg.l, has_cross_l, matched_l), remap_l);
  out.correspondences = cg.correspondences;
  out.cross_edges.reserve(cg.cross_edges.size());
  for (const auto& e : cg.cross_edges) {
    out.cross_edges.push_back({remap_k[static_cast<size_t>(e[0])], remap_l[static_cast<size_t>(e[1])]});
  }
  return out;
}

struct EdgeCountReport {
  size_t intra_k = 0;
  size_t intra_l = 0;
  size_t cross = 0;
  size_t total = 0;
  size_t fully_connected = 0;  // |N_k| * |N_l| reference for the same node sets
};

inline EdgeCountReport edge_count_report(const CrossGraph& cg) {
  EdgeCountReport r;
  r.intra_k = cg.k.edges.size();
  r.intra_l = cg.l.edges.size();
  r.cross = cg.cross_edges.size();
  r.total = r.intra_k + r.intra_l + r.cross;
  r.fully_connected = cg.k.nodes.size() * cg.l.nodes.size();
  return r;
}

// --- serialization --------------------------------------------------------
//
// Line-oriented text format. Header:
//   semreg-crossgraph 1 <nk> <nl> <n_intra_k> <n_intra_l> <n_cross> <scan_k> <scan_l>
// then one line per node:  idx x y z semantic instance feature
// then one line per edge:  src dst kind        (kind: intra_k | intra_l | cross)
// Node indices are global: k nodes in [0, nk), l nodes in [nk, nk+nl).

inline void save_cross_graph(std::ostream& os, const CrossGraph& cg) {
  const size_t nk = cg.k.nodes.size();
  os.precision(17);
  os << "semreg-crossgraph 1 " << nk << ' ' << cg.l.nodes.size() << ' ' << cg.k.edges.size() << ' '
     << cg.l.edges.size() << ' ' << cg.cross_edges.size() << ' ' << cg.k.scan_index << ' '
     << cg.l.scan_index << '\n';
  size_t idx = 0;
  for (const auto* graph : {&cg.k, &cg.l}) {
    for (const auto& n : graph->nodes) {
      os << idx++ << ' ' << n.pos.x() << ' ' << n.pos.y() << ' ' << n.pos.z() << ' ' << n.semantic
         << ' ' << n.instance << ' ' << to_string(n.feature) << '\n';
    }
  }
  for (const auto& e : cg.k.edges) os << e[0] << ' ' << e[1] << " intra_k\n";
  for (const auto& e : cg.l.edges) os << e[0] + nk << ' ' << e[1] + nk << " intra_l\n";
  for (const auto& e : cg.cross_edges) os << e[0] << ' ' << e[1] + nk << " cross\n";
}

inline void save_cross_graph(const std::filesystem::path& path, const CrossGraph& cg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  save_cross_graph(out, cg);
  if (!out) throw IoError("failed writing " + path.string());
}

inline CrossGraph load_cross_graph(std::istream& is) {
  std::string magic;
  int version = 0;
  size_t nk = 0, nl = 0, ek = 0, el = 0, ec = 0;
  int scan_k = 0, scan_l = 0;
  if (!(is >> magic >> version >> nk >> nl >> ek >> el >> ec >> scan_k >> scan_l) ||
      magic != "semreg-crossgraph" || version != 1) {
    throw FormatError("bad cross-graph header");
  }
  CrossGraph cg;
  cg.k.scan_index = scan_k;
  cg.l.scan_index = scan_l;
  for (size_t i = 0; i < nk + nl; ++i) {
    size_t idx;
    GraphNode n;
    std::string feature;
    int64_t sem, inst;
    if (!(is >> idx >> n.pos.x() >> n.pos.y() >> n.pos.z() >> sem >> inst >> feature) || idx != i) {
      throw FormatError("bad node line " + std::to_string(i));
    }
    n.semantic = static_cast<uint16_t>(sem);
    n.instance = static_cast<int32_t>(inst);
    n.feature = feature_from_string(feature);
    (i < nk ? cg.k : cg.l).nodes.push_back(n);
  }
  for (size_t i = 0; i < ek + el + ec; ++i) {
    int64_t src, dst;
    std::string kind;
    if (!(is >> src >> dst >> kind)) throw FormatError("bad edge line " + std::to_string(i));
    if (kind == "intra_k") {
      cg.k.edges.push_back({static_cast<int>(src), static_cast<int>(dst)});
    } else if (kind == "intra_l") {
      cg.l.edges.push_back({static_cast<int>(src - nk), static_cast<int>(dst - nk)});
    } else if (kind == "cross") {
      cg.cross_edges.push_back({static_cast<int>(src), static_cast<int>(dst - nk)});
    } else {
      throw FormatError("unknown edge kind '" + kind + "'");
    }
  }
  // the correspondence table is not part of the on-disk format
  return cg;
}

inline CrossGraph load_cross_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return load_cross_graph(in);
}

}  // namespace semreg
