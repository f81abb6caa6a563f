// The run configuration: one JSON document covering scene generation, the
// preprocessing pipeline, the network, training and evaluation. Every field
// has a default; unknown keys and type mismatches are config errors. The
// effective configuration is echoed next to each run's outputs.
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "semreg/clustering.hpp"
#include "semreg/label_map.hpp"
#include "semreg/metrics.hpp"
#include "semreg/model.hpp"
#include "semreg/pipeline.hpp"
#include "semreg/synthetic.hpp"
#include "semreg/train.hpp"

namespace semreg {

namespace config_detail {

class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  std::optional<nlohmann::json> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace config_detail

struct RunConfig {
  uint64_t seed = 7;
  int jobs = 1;
  size_t synth_pairs = 20;
  int heatmaps = 3;
  SceneConfig scene;
  PipelineConfig pipeline;
  NetConfig model;
  TrainRunConfig train;
  EvalThresholds eval;
  std::string label_map_file;  // empty: built-in SemanticKITTI taxonomy

  static RunConfig defaults() {
    RunConfig cfg;
    cfg.pipeline.clusters = ClusterParams::semantic_kitti();
    cfg.pipeline.remap = LabelMap::semantic_kitti();
    return cfg;
  }

  void validate() const {
    scene.validate();
    pipeline.validate();
    model.validate();
    train.validate();
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (eval.rte_m <= 0 || eval.rre_deg <= 0) throw ConfigError("eval thresholds must be positive");
  }

  void apply_json(const nlohmann::json& j) {
    config_detail::SectionReader root(j, "config");
    root.get("seed", seed);
    root.get("jobs", jobs);
    root.get("synth_pairs", synth_pairs);
    root.get("heatmaps", heatmaps);
    std::string label_file = label_map_file;
    root.get("label_map_file", label_file);
    label_map_file = label_file;

    if (auto s = root.sub("scene")) {
      config_detail::SectionReader r(*s, "scene");
      r.get("plane_count", scene.plane_count);
      r.get("cylinder_count", scene.cylinder_count);
      r.get("box_count", scene.box_count);
      r.get("plane_labels", scene.plane_labels);
      r.get("cylinder_labels", scene.cylinder_labels);
      r.get("box_labels", scene.box_labels);
      r.get("noise_sigma", scene.noise_sigma);
      r.get("rotation_range_deg", scene.rotation_range_deg);
      r.get("translation_range_m", scene.translation_range_m);
      r.get("rings", scene.rings);
      r.get("min_elevation_deg", scene.min_elevation_deg);
      r.get("max_elevation_deg", scene.max_elevation_deg);
      r.get("azimuth_steps", scene.azimuth_steps);
      r.get("world_radius", scene.world_radius);
      r.get("min_placement_radius", scene.min_placement_radius);
      r.get("max_range", scene.max_range);
      r.get("sensor_height", scene.sensor_height);
      r.finish();
    }
    if (auto s = root.sub("pipeline")) {
      config_detail::SectionReader r(*s, "pipeline");
      r.get("curvature_window", pipeline.curvature_window);
      r.get("curvature_threshold", pipeline.curvature_threshold);
      r.get("nn_radius", pipeline.graph.nn_radius);
      r.get("nn_cap", pipeline.graph.nn_cap);
      r.get("centroid_thresh", pipeline.centroid_thresh);
      r.get("cross_thresh_infer", pipeline.cross_thresh_infer);
      r.get("cross_thresh_train", pipeline.cross_thresh_train);
      bool apply_remap = pipeline.remap.has_value();
      r.get("apply_remap", apply_remap);
      if (auto d = r.sub("cluster_default")) {
        config_detail::SectionReader rd(*d, "pipeline.cluster_default");
        rd.get("min_size", pipeline.clusters.fallback.min_size);
        rd.get("tolerance", pipeline.clusters.fallback.tolerance);
        rd.finish();
      }
      if (auto cp = r.sub("cluster_params")) {
        if (!cp->is_object()) throw ConfigError("pipeline.cluster_params: expected an object");
        for (const auto& [key, val] : cp->items()) {
          uint16_t label = 0;
          try {
            label = static_cast<uint16_t>(std::stoul(key));
          } catch (...) {
            throw ConfigError("pipeline.cluster_params: bad label id '" + key + "'");
          }
          config_detail::SectionReader rd(val, "pipeline.cluster_params." + key);
          ClusterEntry entry = pipeline.clusters.for_label(label);
          rd.get("min_size", entry.min_size);
          rd.get("tolerance", entry.tolerance);
          rd.finish();
          pipeline.clusters.per_label[label] = entry;
        }
      }
      r.finish();
      if (!apply_remap) {
        pipeline.remap.reset();
      } else if (!pipeline.remap) {
        pipeline.remap = LabelMap::semantic_kitti();
      }
    }
    if (auto s = root.sub("model")) {
      config_detail::SectionReader r(*s, "model");
      r.get("enc_gcn1_out", model.enc_gcn1_out);
      r.get("enc_mlp1", model.enc_mlp1);
      r.get("enc_gcn2_out", model.enc_gcn2_out);
      r.get("enc_mlp2", model.enc_mlp2);
      r.get("attn_gat1_out", model.attn_gat1_out);
      r.get("attn_gat1_heads", model.attn_gat1_heads);
      r.get("attn_mlp", model.attn_mlp);
      r.get("attn_gat2_out", model.attn_gat2_out);
      r.get("attn_gat2_heads", model.attn_gat2_heads);
      r.get("dropout", model.dropout_rate);
      r.get("leaky_slope", model.leaky_slope);
      r.finish();
    }
    if (auto s = root.sub("train")) {
      config_detail::SectionReader r(*s, "train");
      r.get("lr", train.lr);
      r.get("epochs", train.epochs);
      r.get("batch_size", train.batch_size);
      r.get("alpha", train.alpha);
      r.get("gt_radius", train.gt_radius);
      r.get("patience", train.patience);
      r.get("seed", train.seed);
      r.get("val_fraction", train.val_fraction);
      r.get("bce_on_selected", train.bce_on_selected);
      r.get("use_attention_loss", train.use_attention_loss);
      r.get("use_pose_loss", train.use_pose_loss);
      r.get("clamp_eps", train.clamp_eps);
      r.finish();
    }
    if (auto s = root.sub("eval")) {
      config_detail::SectionReader r(*s, "eval");
      r.get("rte_threshold_m", eval.rte_m);
      r.get("rre_threshold_deg", eval.rre_deg);
      r.finish();
    }
    root.finish();

    if (!label_map_file.empty()) pipeline.remap = LabelMap::load(label_map_file);
    train.jobs = jobs;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["jobs"] = jobs;
    j["synth_pairs"] = synth_pairs;
    j["heatmaps"] = heatmaps;
    j["label_map_file"] = label_map_file;
    j["scene"] = {{"plane_count", scene.plane_count},
                  {"cylinder_count", scene.cylinder_count},
                  {"box_count", scene.box_count},
                  {"plane_labels", scene.plane_labels},
                  {"cylinder_labels", scene.cylinder_labels},
                  {"box_labels", scene.box_labels},
                  {"noise_sigma", scene.noise_sigma},
                  {"rotation_range_deg", scene.rotation_range_deg},
                  {"translation_range_m", scene.translation_range_m},
                  {"rings", scene.rings},
                  {"min_elevation_deg", scene.min_elevation_deg},
                  {"max_elevation_deg", scene.max_elevation_deg},
                  {"azimuth_steps", scene.azimuth_steps},
                  {"world_radius", scene.world_radius},
                  {"min_placement_radius", scene.min_placement_radius},
                  {"max_range", scene.max_range},
                  {"sensor_height", scene.sensor_height}};
    nlohmann::json cluster_params;
    for (const auto& [label, entry] : pipeline.clusters.per_label) {
      cluster_params[std::to_string(label)] = {{"min_size", entry.min_size},
                                               {"tolerance", entry.tolerance}};
    }
    j["pipeline"] = {{"curvature_window", pipeline.curvature_window},
                     {"curvature_threshold", pipeline.curvature_threshold},
                     {"nn_radius", pipeline.graph.nn_radius},
                     {"nn_cap", pipeline.graph.nn_cap},
                     {"centroid_thresh", pipeline.centroid_thresh},
                     {"cross_thresh_infer", pipeline.cross_thresh_infer},
                     {"cross_thresh_train", pipeline.cross_thresh_train},
                     {"apply_remap", pipeline.remap.has_value()},
                     {"cluster_default",
                      {{"min_size", pipeline.clusters.fallback.min_size},
                       {"tolerance", pipeline.clusters.fallback.tolerance}}},
                     {"cluster_params", cluster_params}};
    j["model"] = {{"enc_gcn1_out", model.enc_gcn1_out},
                  {"enc_mlp1", model.enc_mlp1},
                  {"enc_gcn2_out", model.enc_gcn2_out},
                  {"enc_mlp2", model.enc_mlp2},
                  {"attn_gat1_out", model.attn_gat1_out},
                  {"attn_gat1_heads", model.attn_gat1_heads},
                  {"attn_mlp", model.attn_mlp},
                  {"attn_gat2_out", model.attn_gat2_out},
                  {"attn_gat2_heads", model.attn_gat2_heads},
                  {"dropout", model.dropout_rate},
                  {"leaky_slope", model.leaky_slope}};
    j["train"] = {{"lr", train.lr},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"alpha", train.alpha},
                  {"gt_radius", train.gt_radius},
                  {"patience", train.patience},
                  {"seed", train.seed},
                  {"val_fraction", train.val_fraction},
                  {"bce_on_selected", train.bce_on_selected},
                  {"use_attention_loss", train.use_attention_loss},
                  {"use_pose_loss", train.use_pose_loss},
                  {"clamp_eps", train.clamp_eps}};
    j["eval"] = {{"rte_threshold_m", eval.rte_m}, {"rre_threshold_deg", eval.rre_deg}};
    return j;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    RunConfig cfg = defaults();
    cfg.apply_json(j);
    return cfg;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace semreg
