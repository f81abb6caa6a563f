// Dataset directories. Layout mirrors a SemanticKITTI sequence:
//   velodyne/NNNNNN.bin, labels/NNNNNN.label, poses.txt
// plus an optional dataset.json manifest. Synthetic datasets pair scans with
// stride 2 (each pair has its own scene); real sequences pair consecutive
// scans (stride 1).
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semreg/errors.hpp"
#include "semreg/geometry.hpp"
#include "semreg/kitti_io.hpp"
#include "semreg/point_cloud.hpp"
#include "semreg/synthetic.hpp"

namespace semreg {

inline std::string scan_basename(size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

struct DatasetManifest {
  int stride = 1;
  size_t scan_count = 0;
  nlohmann::json extra;
};

struct PairRecord {
  size_t index = 0;
  SemanticScan scan_k;
  SemanticScan scan_l;
  PoseSE3 gt;  // relative pose mapping scan_k points into scan_l's frame
};

class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root) {
    Dataset d;
    d.root_ = root;
    const auto velodyne = root / "velodyne";
    if (!std::filesystem::is_directory(velodyne)) {
      throw UsageError("dataset has no velodyne/ directory: " + root.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(velodyne)) {
      if (entry.path().extension() == ".bin") d.scan_paths_.push_back(entry.path());
    }
    std::sort(d.scan_paths_.begin(), d.scan_paths_.end());
    if (d.scan_paths_.empty()) throw UsageError("dataset has no scans: " + root.string());

    const auto manifest_path = root / "dataset.json";
    if (std::filesystem::exists(manifest_path)) {
      std::ifstream in(manifest_path);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
      }
      d.manifest_.stride = j.value("stride", 1);
      d.manifest_.extra = j;
    }
    d.manifest_.scan_count = d.scan_paths_.size();

    const auto poses_path = root / "poses.txt";
    if (!std::filesystem::exists(poses_path)) {
      throw UsageError("dataset has no poses.txt: " + root.string());
    }
    d.poses_ = read_poses(poses_path).poses;
    if (d.poses_.size() != d.scan_paths_.size()) {
      throw DataError("pose count " + std::to_string(d.poses_.size()) +
                      " does not match scan count " + std::to_string(d.scan_paths_.size()));
    }
    return d;
  }

  const DatasetManifest& manifest() const { return manifest_; }
  size_t scan_count() const { return scan_paths_.size(); }
  const std::vector<PoseSE3>& poses() const { return poses_; }

  size_t pair_count() const {
    if (manifest_.stride == 2) return scan_paths_.size() / 2;
    return scan_paths_.empty() ? 0 : scan_paths_.size() - 1;
  }

  std::pair<size_t, size_t> pair_scan_indices(size_t pair) const {
    if (manifest_.stride == 2) return {2 * pair, 2 * pair + 1};
    return {pair, pair + 1};
  }

  SemanticScan load_scan(size_t index) const {
    SemanticScan out;
    out.scan = read_velodyne_bin(scan_paths_[index]);
    out.scan.scan_index = static_cast<int>(index);
    const auto label_path =
        root_ / "labels" / (scan_paths_[index].stem().string() + ".label");
    if (!std::filesystem::exists(label_path)) {
      throw UsageError("missing label file " + label_path.string());
    }
    LabelData labels = read_labels(label_path);
    if (labels.labels.size() != out.scan.size()) {
      throw DataError(label_path.string() + ": label count " +
                      std::to_string(labels.labels.size()) + " does not match point count " +
                      std::to_string(out.scan.size()));
    }
    out.labels = std::move(labels.labels);
    out.raw_instance = std::move(labels.instances);
    return out;
  }

  PairRecord load_pair(size_t pair) const {
    if (pair >= pair_count()) throw UsageError("pair index out of range");
    const auto [ik, il] = pair_scan_indices(pair);
    PairRecord rec;
    rec.index = pair;
    rec.scan_k = load_scan(ik);
    rec.scan_l = load_scan(il);
    rec.gt = relative_pose(poses_[ik], poses_[il]);
    return rec;
  }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> scan_paths_;
  std::vector<PoseSE3> poses_;
  DatasetManifest manifest_;
};

/// Writes `pair_count` independent synthetic scenes as a stride-2 dataset.
/// Scan 2i sits at the world origin; scan 2i+1 carries the inverse of the
/// pair displacement so that relative_pose reproduces it exactly.
inline void write_synthetic_dataset(const std::filesystem::path& root, const SceneConfig& base,
                                    size_t pair_count) {
  if (pair_count == 0) throw ConfigError("synthetic dataset needs at least one pair");
  base.validate();
  std::filesystem::create_directories(root / "velodyne");
  std::filesystem::create_directories(root / "labels");

  std::vector<PoseSE3> poses;
  for (size_t i = 0; i < pair_count; ++i) {
    SceneConfig cfg = base;
    cfg.seed = mix_seed(base.seed, 0x0da7a000 + i);
    const SyntheticPair pair = generate_synthetic_pair(cfg);
    for (const auto* scan : {&pair.scan_k, &pair.scan_l}) {
      const size_t idx = poses.size() + (scan == &pair.scan_l ? 1 : 0);
      write_velodyne_bin(root / "velodyne" / (scan_basename(idx) + ".bin"), scan->scan);
      write_labels(root / "labels" / (scan_basename(idx) + ".label"), scan->labels,
                   scan->raw_instance);
    }
    poses.push_back(PoseSE3::identity());
    poses.push_back(pair.gt.inverse());  // world pose of the second sensor
  }
  write_poses(root / "poses.txt", poses);

  nlohmann::json manifest;
  manifest["stride"] = 2;
  manifest["pairs"] = pair_count;
  manifest["seed"] = base.seed;
  manifest["noise_sigma"] = base.noise_sigma;
  manifest["rotation_range_deg"] = base.rotation_range_deg;
  manifest["translation_range_m"] = base.translation_range_m;
  std::ofstream out(root / "dataset.json");
  if (!out) throw IoError("cannot write dataset manifest");
  out << manifest.dump(2) << '\n';
}

}  // namespace semreg
