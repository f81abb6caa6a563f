// SemanticKITTI-format file ingestion and export.
//
// .bin    little-endian float32 quadruples (x, y, z, remission)
// .label  little-endian uint32 per point; low 16 bits semantic id, high 16
//         bits instance id
// poses   one 3x4 row-major pose per line, whitespace-separated decimals
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "semreg/errors.hpp"
#include "semreg/point_cloud.hpp"

namespace semreg {

namespace detail {

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(static_cast<size_t>(size));
  if (size > 0 && !in.read(bytes.data(), size)) {
    throw IoError("failed reading " + path.string());
  }
  return bytes;
}

inline float load_f32le(const char* p) {
  static_assert(sizeof(float) == 4);
  float v;
  std::memcpy(&v, p, 4);
  return v;  // assumes little-endian host, same as the dataset tooling
}

inline uint32_t load_u32le(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace detail

inline LidarScan read_velodyne_bin(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file_bytes(path);
  if (bytes.size() % 16 != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of 16 bytes");
  }
  const size_t n = bytes.size() / 16;
  LidarScan scan;
  scan.points.reserve(n);
  scan.remission.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const char* rec = bytes.data() + i * 16;
    const Eigen::Vector3d p(detail::load_f32le(rec), detail::load_f32le(rec + 4),
                            detail::load_f32le(rec + 8));
    if (!p.allFinite()) {
      throw DataError(path.string() + ": non-finite coordinate at point " + std::to_string(i));
    }
    scan.points.push_back(p);
    scan.remission.push_back(detail::load_f32le(rec + 12));
  }
  return scan;
}

inline void write_velodyne_bin(const std::filesystem::path& path, const LidarScan& scan) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (size_t i = 0; i < scan.size(); ++i) {
    float rec[4] = {static_cast<float>(scan.points[i].x()), static_cast<float>(scan.points[i].y()),
                    static_cast<float>(scan.points[i].z()),
                    scan.remission.empty() ? 0.0f : scan.remission[i]};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

struct LabelData {
  std::vector<uint16_t> labels;
  std::vector<uint16_t> instances;
};

inline LabelData read_labels(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file_bytes(path);
  if (bytes.size() % 4 != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of 4 bytes");
  }
  const size_t n = bytes.size() / 4;
  LabelData out;
  out.labels.reserve(n);
  out.instances.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const uint32_t v = detail::load_u32le(bytes.data() + i * 4);
    out.labels.push_back(static_cast<uint16_t>(v & 0xFFFFu));
    out.instances.push_back(static_cast<uint16_t>(v >> 16));
  }
  return out;
}

inline void write_labels(const std::filesystem::path& path, const std::vector<uint16_t>& labels,
                         const std::vector<uint16_t>& instances) {
  if (!instances.empty() && instances.size() != labels.size()) {
    throw DataError("label/instance count mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (size_t i = 0; i < labels.size(); ++i) {
    const uint32_t v =
        static_cast<uint32_t>(labels[i]) |
        (static_cast<uint32_t>(instances.empty() ? 0 : instances[i]) << 16);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

struct PosesFile {
  std::vector<PoseSE3> poses;
  std::vector<size_t> reorthonormalized;  // indices of poses that needed repair
};

/// Reads world-frame poses; rotation rows with orthogonality residual above
/// 1e-6 are projected to the nearest rotation and flagged.
inline PosesFile read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PosesFile out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (vals.empty()) continue;
    if (vals.size() != 12) {
      throw FormatError(path.string() + ": expected 12 values on line " + std::to_string(line_no) +
                        ", got " + std::to_string(vals.size()));
    }
    PoseSE3 pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = vals[static_cast<size_t>(r) * 4 + c];
      pose.translation(r) = vals[static_cast<size_t>(r) * 4 + 3];
    }
    if (pose.orthogonality_residual() > 1e-6) {
      pose.rotation = nearest_rotation(pose.rotation);
      out.reorthonormalized.push_back(out.poses.size());
    } else if (pose.rotation.determinant() < 0.0) {
      throw DataError(path.string() + ": reflection on line " + std::to_string(line_no));
    } else {
      // small round-off is still projected so downstream invariants hold exactly
      pose.rotation = nearest_rotation(pose.rotation);
    }
    out.poses.push_back(pose);
  }
  return out;
}

inline void write_pose_line(std::ostream& os, const PoseSE3& pose) {
  os.precision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) os << pose.rotation(r, c) << ' ';
    os << pose.translation(r) << (r == 2 ? '\n' : ' ');
  }
}

inline void write_poses(const std::filesystem::path& path, const std::vector<PoseSE3>& poses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& p : poses) write_pose_line(out, p);
  if (!out) throw IoError("failed writing " + path.string());
}

/// Parses the "Tr:" camera-to-lidar transform from a KITTI calib.txt; a bare
/// 12-value line is accepted as well.
inline PoseSE3 read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    std::vector<double> vals;
    if (line.find(':') != std::string::npos) {
      std::getline(ls, tag, ':');
    }
    double v;
    while (ls >> v) vals.push_back(v);
    const bool is_tr = tag.empty() ? true : (tag == "Tr" || tag == "Tr_velo_cam" || tag == "Tr ");
    if (is_tr && vals.size() == 12) {
      PoseSE3 pose;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose.rotation(r, c) = vals[static_cast<size_t>(r) * 4 + c];
        pose.translation(r) = vals[static_cast<size_t>(r) * 4 + 3];
      }
      pose.rotation = nearest_rotation(pose.rotation);
      return pose;
    }
  }
  throw FormatError(path.string() + ": no 3x4 'Tr' calibration entry found");
}

/// Converts camera-frame trajectory poses into the lidar frame:
/// T_lidar = Tr^-1 * T_cam * Tr.
inline std::vector<PoseSE3> apply_calibration(const std::vector<PoseSE3>& cam_poses,
                                              const PoseSE3& tr) {
  std::vector<PoseSE3> out;
  out.reserve(cam_poses.size());
  const PoseSE3 tr_inv = tr.inverse();
  for (const auto& p : cam_poses) out.push_back(tr_inv.compose(p).compose(tr));
  return out;
}

}  // namespace semreg
