// Named trainable parameters with per-parameter Adam state and a binary
// checkpoint container that round-trips bit-exactly.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "semreg/ad/engine.hpp"
#include "semreg/errors.hpp"

namespace semreg::ad {

using ParamMap = std::unordered_map<std::string, Value>;

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

class ParamStore {
 public:
  std::vector<std::string> order;  // creation order, fixed across save/load
  ParamMap params;
  std::unordered_map<std::string, AdamMoments> adam;
  int64_t step_count = 0;

  Value create(const std::string& name, int rows, int cols) {
    if (params.count(name)) throw ConfigError("duplicate parameter name " + name);
    Value v = leaf(rows, cols);
    order.push_back(name);
    params[name] = v;
    adam[name] = AdamMoments{std::vector<double>(v->size(), 0.0),
                             std::vector<double>(v->size(), 0.0)};
    return v;
  }

  const Value& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  size_t total_count() const {
    size_t n = 0;
    for (const auto& name : order) n += params.at(name)->size();
    return n;
  }

  void zero_grad() {
    for (const auto& name : order) {
      auto& g = params.at(name)->grad;
      std::fill(g.begin(), g.end(), 0.0);
    }
  }

  /// Standard Adam with bias correction. The whole step aborts (no mutation)
  /// if any gradient is non-finite; gradients are cleared afterwards.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    for (const auto& name : order) {
      for (double g : params.at(name)->grad) {
        if (!std::isfinite(g)) throw DataError("non-finite gradient in parameter " + name);
      }
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (const auto& name : order) {
      Node& p = *params.at(name);
      AdamMoments& mom = adam.at(name);
      for (size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
        mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        p.val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
    zero_grad();
  }

  /// Fresh leaves carrying this store's current values; used to run one batch
  /// member's forward/backward in isolation so member gradients can be
  /// reduced in a fixed order. Pass requires_grad = false for inference-only
  /// forwards (no backward closures get built).
  ParamMap member_clone(bool requires_grad = true) const {
    ParamMap clone;
    for (const auto& name : order) {
      const Value& p = params.at(name);
      Value v = make_node(p->rows, p->cols);
      v->requires_grad = requires_grad;
      v->val = p->val;
      clone[name] = v;
    }
    return clone;
  }

  void accumulate_grads(const ParamMap& member) {
    for (const auto& name : order) {
      auto it = member.find(name);
      if (it == member.end()) continue;
      auto& dst = params.at(name)->grad;
      const auto& src = it->second->grad;
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  void copy_values_from(const ParamStore& other) {
    for (const auto& name : order) params.at(name)->val = other.params.at(name)->val;
  }

  ParamStore deep_copy() const {
    ParamStore out;
    for (const auto& name : order) {
      const Value& p = params.at(name);
      Value v = out.create(name, p->rows, p->cols);
      v->val = p->val;
    }
    out.adam = adam;
    out.step_count = step_count;
    return out;
  }

  // --- checkpoint container -------------------------------------------------
  //
  //   8 bytes magic "SREGCKP1", u32 parameter count,
  //   per parameter: u32 name length, name bytes, u32 rows, u32 cols,
  //   then per parameter: raw little-endian f64 values,
  //   then per parameter: Adam first and second moments, then i64 step count.

  void save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write("SREGCKP1", 8);
    auto write_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto write_doubles = [&](const std::vector<double>& v) {
      out.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    write_u32(static_cast<uint32_t>(order.size()));
    for (const auto& name : order) {
      const Value& p = params.at(name);
      write_u32(static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(static_cast<uint32_t>(p->rows));
      write_u32(static_cast<uint32_t>(p->cols));
    }
    for (const auto& name : order) write_doubles(params.at(name)->val);
    for (const auto& name : order) {
      write_doubles(adam.at(name).m);
      write_doubles(adam.at(name).v);
    }
    out.write(reinterpret_cast<const char*>(&step_count), 8);
    if (!out) throw IoError("failed writing " + path.string());
  }

  static ParamStore load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "SREGCKP1", 8) != 0) {
      throw FormatError(path.string() + ": not a checkpoint file");
    }
    auto read_u32 = [&]() {
      uint32_t v = 0;
      if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("truncated checkpoint");
      return v;
    };
    auto read_doubles = [&](std::vector<double>& v) {
      if (!in.read(reinterpret_cast<char*>(v.data()),
                   static_cast<std::streamsize>(v.size() * sizeof(double)))) {
        throw FormatError("truncated checkpoint");
      }
    };
    ParamStore store;
    const uint32_t count = read_u32();
    for (uint32_t i = 0; i < count; ++i) {
      std::string name(read_u32(), '\0');
      if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) {
        throw FormatError("truncated checkpoint");
      }
      const uint32_t rows = read_u32();
      const uint32_t cols = read_u32();
      store.create(name, static_cast<int>(rows), static_cast<int>(cols));
    }
    for (const auto& name : store.order) read_doubles(store.params.at(name)->val);
    for (const auto& name : store.order) {
      read_doubles(store.adam.at(name).m);
      read_doubles(store.adam.at(name).v);
    }
    if (!in.read(reinterpret_cast<char*>(&store.step_count), 8)) {
      throw FormatError("truncated checkpoint");
    }
    return store;
  }
};

/// Uniform Glorot fill: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_init(const Value& v, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& x : v->val) x = dist(rng);
}

}  // namespace semreg::ad
