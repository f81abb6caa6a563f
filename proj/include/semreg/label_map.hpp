// Semantic label taxonomy: class names, the dynamic-to-static remapping and
// the discard list. Shipped as configs/label_map.json; the built-in default
// mirrors the SemanticKITTI class ids.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include <json.hpp>

#include "semreg/errors.hpp"
#include "semreg/point_cloud.hpp"

namespace semreg {

struct LabelMap {
  std::map<uint16_t, std::string> names;
  std::set<uint16_t> static_ids;
  std::map<uint16_t, uint16_t> dynamic_to_static;
  std::set<uint16_t> discard;

  std::string name_of(uint16_t id) const {
    auto it = names.find(id);
    return it == names.end() ? ("label-" + std::to_string(id)) : it->second;
  }

  static LabelMap semantic_kitti() {
    LabelMap m;
    m.names = {{0, "unlabeled"},    {1, "outlier"},       {10, "car"},
               {11, "bicycle"},     {13, "bus"},          {15, "motorcycle"},
               {16, "on-rails"},    {18, "truck"},        {20, "other-vehicle"},
               {30, "person"},      {31, "bicyclist"},    {32, "motorcyclist"},
               {40, "road"},        {44, "parking"},      {48, "sidewalk"},
               {49, "other-ground"},{50, "building"},     {51, "fence"},
               {52, "other-structure"}, {60, "lane-marking"}, {70, "vegetation"},
               {71, "trunk"},       {72, "terrain"},      {80, "pole"},
               {81, "traffic-sign"},{99, "other-object"}, {252, "moving-car"},
               {253, "moving-bicyclist"}, {254, "moving-person"}, {255, "moving-motorcyclist"},
               {256, "moving-on-rails"},  {257, "moving-bus"},    {258, "moving-truck"},
               {259, "moving-other-vehicle"}};
    m.static_ids = {10, 11, 13, 15, 16, 18, 20, 30, 31, 32, 48, 49,
                    50, 51, 70, 71, 72, 80, 81};
    m.dynamic_to_static = {{252, 10}, {253, 31}, {254, 30}, {255, 32},
                           {256, 16}, {257, 13}, {258, 18}, {259, 20}};
    // road and parking are dropped for their inconsistent labelling;
    // unlabeled/outlier/other-* carry no reusable structure.
    m.discard = {0, 1, 40, 44, 52, 60, 99};
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (const auto& [id, name] : names) j["names"][std::to_string(id)] = name;
    j["static"] = std::vector<uint16_t>(static_ids.begin(), static_ids.end());
    for (const auto& [d, s] : dynamic_to_static) j["dynamic_to_static"][std::to_string(d)] = s;
    j["discard"] = std::vector<uint16_t>(discard.begin(), discard.end());
    return j;
  }

  static LabelMap from_json(const nlohmann::json& j) {
    LabelMap m;
    try {
      for (const auto& [key, val] : j.at("names").items()) {
        m.names[static_cast<uint16_t>(std::stoul(key))] = val.get<std::string>();
      }
      for (const auto& id : j.at("static")) m.static_ids.insert(id.get<uint16_t>());
      if (j.contains("dynamic_to_static")) {
        for (const auto& [key, val] : j.at("dynamic_to_static").items()) {
          m.dynamic_to_static[static_cast<uint16_t>(std::stoul(key))] = val.get<uint16_t>();
        }
      }
      if (j.contains("discard")) {
        for (const auto& id : j.at("discard")) m.discard.insert(id.get<uint16_t>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid label map: ") + e.what());
    }
    return m;
  }

  static LabelMap load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << to_json().dump(2) << '\n';
  }
};

/// Replaces dynamic ids by their static counterparts and drops points whose
/// label is in the discard set, preserving the order of retained points.
/// A label that is neither static, nor mapped, nor discarded is a taxonomy
/// error.
inline SemanticScan remap_labels(const SemanticScan& in,
                                 const std::map<uint16_t, uint16_t>& dynamic_to_static,
                                 const std::set<uint16_t>& discard,
                                 const std::set<uint16_t>& static_ids) {
  in.require_valid();
  SemanticScan out;
  out.scan.scan_index = in.scan.scan_index;
  const bool has_rem = !in.scan.remission.empty();
  const bool has_inst = !in.raw_instance.empty();
  for (size_t i = 0; i < in.size(); ++i) {
    uint16_t label = in.labels[i];
    if (auto it = dynamic_to_static.find(label); it != dynamic_to_static.end()) {
      label = it->second;
    }
    if (discard.count(label)) continue;
    if (!static_ids.count(label)) {
      throw TaxonomyError("label id " + std::to_string(in.labels[i]) +
                          " is not static, mapped, or discarded (point " + std::to_string(i) + ")");
    }
    out.scan.points.push_back(in.scan.points[i]);
    if (has_rem) out.scan.remission.push_back(in.scan.remission[i]);
    out.labels.push_back(label);
    if (has_inst) out.raw_instance.push_back(in.raw_instance[i]);
  }
  return out;
}

inline SemanticScan remap_labels(const SemanticScan& in, const LabelMap& map) {
  return remap_labels(in, map.dynamic_to_static, map.discard, map.static_ids);
}

}  // namespace semreg
