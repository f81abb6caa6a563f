// Desk-scale labeled-scene generator. A world of labeled primitives (plane
// patches, vertical cylinders, yaw-oriented boxes) is sampled by a simulated
// spinning lidar: rays are cast per elevation ring in azimuth order, so
// "consecutive points" is well defined for curvature windows. The second scan
// of a pair reuses the first scan's hit points expressed in the displaced
// sensor frame, with independent per-scan noise; the returned pose is exact.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "semreg/errors.hpp"
#include "semreg/geometry.hpp"
#include "semreg/point_cloud.hpp"
#include "semreg/rng.hpp"

namespace semreg {

struct SceneConfig {
  uint64_t seed = 0;
  // counts per primitive kind; labels are cycled over each kind's list
  int plane_count = 8;
  int cylinder_count = 6;
  int box_count = 4;
  std::vector<uint16_t> plane_labels = {50, 48, 51};  // building, sidewalk, fence
  std::vector<uint16_t> cylinder_labels = {80, 71};   // pole, trunk
  std::vector<uint16_t> box_labels = {10};            // car

  double noise_sigma = 0.02;           // meters, isotropic Gaussian
  double rotation_range_deg = 5.0;     // max angle of the pair displacement
  double translation_range_m = 1.0;    // max norm of the pair translation

  // azimuth resolution of 3 degrees keeps the corner/surface split crisp at
  // the default curvature threshold (bend response scales with spacing/range)
  int rings = 16;
  double min_elevation_deg = -16.0;
  double max_elevation_deg = 4.0;
  int azimuth_steps = 120;
  double world_radius = 12.0;
  double min_placement_radius = 0.0;  // pushes primitives outward when > 0
  double max_range = 40.0;
  double sensor_height = 1.7;

  void validate() const {
    if (plane_count < 0 || cylinder_count < 0 || box_count < 0) {
      throw ConfigError("primitive counts must be non-negative");
    }
    if (plane_count + cylinder_count + box_count == 0) {
      throw ConfigError("scene has zero primitives");
    }
    if ((plane_count > 0 && plane_labels.empty()) ||
        (cylinder_count > 0 && cylinder_labels.empty()) ||
        (box_count > 0 && box_labels.empty())) {
      throw ConfigError("enabled primitive kind has no label assignment");
    }
    if (noise_sigma < 0 || rotation_range_deg < 0 || translation_range_m < 0) {
      throw ConfigError("noise and displacement ranges must be non-negative");
    }
    if (rings < 1 || azimuth_steps < 4) throw ConfigError("ray grid too small");
    if (world_radius <= 0 || max_range <= 0) throw ConfigError("world extent must be positive");
    if (min_placement_radius < 0 || min_placement_radius >= world_radius * 0.8) {
      throw ConfigError("min_placement_radius must be in [0, 0.8 * world_radius)");
    }
  }
};

namespace synth_detail {

struct Rect {
  Eigen::Vector3d center, u, v;  // u, v orthonormal in-plane axes
  double hu = 0, hv = 0;
};

struct Cylinder {
  Eigen::Vector2d center;
  double radius = 0, z0 = 0, z1 = 0;
};

struct Box {
  Eigen::Vector3d center, half;
  double yaw = 0;
};

struct Primitive {
  enum class Kind { rect, cylinder, box } kind;
  uint16_t label = 0;
  uint16_t instance = 0;
  Rect rect;
  Cylinder cyl;
  Box box;
};

inline std::optional<double> ray_rect(const Eigen::Vector3d& dir, const Rect& r) {
  const Eigen::Vector3d n = r.u.cross(r.v);
  const double denom = dir.dot(n);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = r.center.dot(n) / denom;
  if (t <= 0.05) return std::nullopt;
  const Eigen::Vector3d local = t * dir - r.center;
  if (std::abs(local.dot(r.u)) > r.hu || std::abs(local.dot(r.v)) > r.hv) return std::nullopt;
  return t;
}

inline std::optional<double> ray_cylinder(const Eigen::Vector3d& dir, const Cylinder& c) {
  const double a = dir.x() * dir.x() + dir.y() * dir.y();
  if (a < 1e-12) return std::nullopt;
  const double b = -2.0 * (dir.x() * c.center.x() + dir.y() * c.center.y());
  const double q = c.center.squaredNorm() - c.radius * c.radius;
  const double disc = b * b - 4.0 * a * q;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  for (const double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
    if (t > 0.05) {
      const double z = t * dir.z();
      if (z >= c.z0 && z <= c.z1) return t;
    }
  }
  return std::nullopt;
}

inline std::optional<double> ray_box(const Eigen::Vector3d& dir, const Box& b) {
  const Eigen::Matrix3d rot = rotation_z(-b.yaw);
  const Eigen::Vector3d d = rot * dir;
  const Eigen::Vector3d o = rot * (-b.center);
  double t_enter = 0.05, t_exit = std::numeric_limits<double>::infinity();
  for (int ax = 0; ax < 3; ++ax) {
    if (std::abs(d[ax]) < 1e-12) {
      if (std::abs(o[ax]) > b.half[ax]) return std::nullopt;
      continue;
    }
    double t0 = (-b.half[ax] - o[ax]) / d[ax];
    double t1 = (b.half[ax] - o[ax]) / d[ax];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return std::nullopt;
  }
  if (t_enter <= 0.05) return std::nullopt;
  return t_enter;
}

inline std::optional<double> ray_hit(const Eigen::Vector3d& dir, const Primitive& p) {
  switch (p.kind) {
    case Primitive::Kind::rect: return ray_rect(dir, p.rect);
    case Primitive::Kind::cylinder: return ray_cylinder(dir, p.cyl);
    case Primitive::Kind::box: return ray_box(dir, p.box);
  }
  return std::nullopt;
}

inline std::vector<Primitive> build_world(const SceneConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto urange = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<Primitive> world;
  const double ground_z = -cfg.sensor_height;
  auto rho_min = [&](double base) { return std::max(base, cfg.min_placement_radius); };
  uint16_t next_instance = 1;

  for (int i = 0; i < cfg.plane_count; ++i) {
    Primitive p;
    p.kind = Primitive::Kind::rect;
    p.label = cfg.plane_labels[static_cast<size_t>(i) % cfg.plane_labels.size()];
    p.instance = next_instance++;
    const double theta = urange(0, 2 * M_PI);
    if (p.label == 48) {  // sidewalk: horizontal patch
      const double rho = urange(rho_min(2.5), cfg.world_radius * 0.8);
      p.rect.center = {rho * std::cos(theta), rho * std::sin(theta), ground_z};
      const double yaw = urange(0, 2 * M_PI);
      p.rect.u = {std::cos(yaw), std::sin(yaw), 0.0};
      p.rect.v = {-std::sin(yaw), std::cos(yaw), 0.0};
      p.rect.hu = urange(1.5, 3.5);
      p.rect.hv = urange(1.5, 3.5);
    } else {  // building or fence: vertical wall roughly facing the sensor
      const double rho = urange(rho_min(4.0), cfg.world_radius);
      const double height = (p.label == 51) ? urange(1.0, 1.8) : urange(3.0, 5.0);
      const double width = (p.label == 51) ? urange(3.0, 6.0) : urange(4.0, 8.0);
      const double facing = theta + M_PI + urange(-0.5, 0.5);
      const Eigen::Vector3d n(std::cos(facing), std::sin(facing), 0.0);
      p.rect.center = {rho * std::cos(theta), rho * std::sin(theta), ground_z + height / 2};
      p.rect.u = Eigen::Vector3d(-n.y(), n.x(), 0.0);
      p.rect.v = Eigen::Vector3d::UnitZ();
      p.rect.hu = width / 2;
      p.rect.hv = height / 2;
    }
    world.push_back(p);
  }
  for (int i = 0; i < cfg.cylinder_count; ++i) {
    Primitive p;
    p.kind = Primitive::Kind::cylinder;
    p.label = cfg.cylinder_labels[static_cast<size_t>(i) % cfg.cylinder_labels.size()];
    p.instance = next_instance++;
    const double theta = urange(0, 2 * M_PI);
    const double rho = urange(rho_min(3.0), cfg.world_radius * 0.9);
    p.cyl.center = {rho * std::cos(theta), rho * std::sin(theta)};
    if (p.label == 80) {  // pole
      p.cyl.radius = urange(0.08, 0.18);
      p.cyl.z0 = ground_z;
      p.cyl.z1 = ground_z + urange(2.5, 4.5);
    } else {  // trunk
      p.cyl.radius = urange(0.20, 0.40);
      p.cyl.z0 = ground_z;
      p.cyl.z1 = ground_z + urange(1.5, 3.0);
    }
    world.push_back(p);
  }
  for (int i = 0; i < cfg.box_count; ++i) {
    Primitive p;
    p.kind = Primitive::Kind::box;
    p.label = cfg.box_labels[static_cast<size_t>(i) % cfg.box_labels.size()];
    p.instance = next_instance++;
    const double theta = urange(0, 2 * M_PI);
    const double rho = urange(rho_min(3.5), cfg.world_radius * 0.9);
    p.box.half = {urange(1.8, 2.3), urange(0.8, 1.0), urange(0.65, 0.8)};
    p.box.center = {rho * std::cos(theta), rho * std::sin(theta), ground_z + p.box.half.z()};
    p.box.yaw = urange(0, 2 * M_PI);
    world.push_back(p);
  }
  return world;
}

}  // namespace synth_detail

/// Ray-casts the world from the sensor origin; points are appended ring by
/// ring in azimuth order. No noise is applied here.
inline SemanticScan sample_clean_scan(const std::vector<synth_detail::Primitive>& world,
                                      const SceneConfig& cfg) {
  SemanticScan scan;
  for (int ring = 0; ring < cfg.rings; ++ring) {
    const double frac = cfg.rings == 1 ? 0.5 : static_cast<double>(ring) / (cfg.rings - 1);
    const double elev =
        (cfg.min_elevation_deg + frac * (cfg.max_elevation_deg - cfg.min_elevation_deg)) *
        kDegToRad;
    for (int step = 0; step < cfg.azimuth_steps; ++step) {
      const double az = 2 * M_PI * step / cfg.azimuth_steps;
      const Eigen::Vector3d dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                                std::sin(elev));
      double best_t = cfg.max_range;
      const synth_detail::Primitive* best = nullptr;
      for (const auto& prim : world) {
        if (auto t = synth_detail::ray_hit(dir, prim); t && *t < best_t) {
          best_t = *t;
          best = &prim;
        }
      }
      if (best != nullptr) {
        scan.scan.points.push_back(best_t * dir);
        scan.scan.remission.push_back(0.0f);
        scan.labels.push_back(best->label);
        scan.raw_instance.push_back(best->instance);
      }
    }
  }
  return scan;
}

struct SyntheticPair {
  SemanticScan scan_k;
  SemanticScan scan_l;
  PoseSE3 gt;  // maps scan_k points into scan_l's frame
};

/// Draws the pair displacement: rotation about a random axis with angle up to
/// the configured range, translation with norm up to its range.
inline PoseSE3 draw_displacement(const SceneConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::Vector3d axis(gauss(rng), gauss(rng), gauss(rng));
  if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitZ();
  const double angle = unit(rng) * cfg.rotation_range_deg * kDegToRad;
  Eigen::Vector3d tdir(gauss(rng), gauss(rng), gauss(rng));
  if (tdir.norm() < 1e-12) tdir = Eigen::Vector3d::UnitX();
  const double tnorm = unit(rng) * cfg.translation_range_m;
  PoseSE3 out;
  out.rotation = rotation_about_axis(axis, angle);
  out.translation = tdir.normalized() * tnorm;
  return out;
}

inline void add_noise(SemanticScan& scan, double sigma, uint64_t seed) {
  if (sigma <= 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (auto& p : scan.scan.points) {
    p += Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
  }
}

inline SyntheticPair generate_synthetic_pair(const SceneConfig& cfg) {
  cfg.validate();
  const auto world = synth_detail::build_world(cfg);
  SyntheticPair out;
  const SemanticScan clean = sample_clean_scan(world, cfg);
  if (clean.size() == 0) throw ConfigError("scene produced an empty scan; enlarge primitives");

  std::mt19937_64 pose_rng(mix_seed(cfg.seed, 2));
  out.gt = draw_displacement(cfg, pose_rng);

  out.scan_k = clean;
  out.scan_k.scan.scan_index = 0;
  add_noise(out.scan_k, cfg.noise_sigma, mix_seed(cfg.seed, 3));

  out.scan_l = apply_transform(clean, out.gt);
  out.scan_l.scan.scan_index = 1;
  add_noise(out.scan_l, cfg.noise_sigma, mix_seed(cfg.seed, 4));
  return out;
}

}  // namespace semreg
