#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "spuq/sliceprop.hpp"
#include "spuq/uqwrap/strategy.hpp"

namespace spuq::bench {

using nlohmann::json;

// Bad command-line input or configuration; maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  prop::PropagatorKind propagator = prop::PropagatorKind::Affinity;
  uq::UqStrategy strategy;
  grad::SgdConfig sgd;
  prop::ArchConfig arch;
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw UsageError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline json to_json(const uq::UqStrategy& s) {
  return {{"kind", uq::to_string(s.kind)},
          {"n_members", s.n_members},
          {"n_samples", s.n_samples},
          {"dropout_rate", s.dropout_rate},
          {"member_factor_std", s.member_factor_std},
          {"concrete",
           {{"temperature", s.concrete.temperature},
            {"weight_reg", s.concrete.weight_reg},
            {"dropout_reg", s.concrete.dropout_reg},
            {"init_p", s.concrete.init_p}}},
          {"swag",
           {{"collect_every", s.swag.collect_every},
            {"n_collect", s.swag.n_collect},
            {"sample_scale", s.swag.sample_scale}}}};
}

inline json to_json(const grad::SgdConfig& s) {
  return {{"learning_rate", s.learning_rate}, {"momentum", s.momentum}, {"steps", s.steps},
          {"batch_size", s.batch_size}};
}

inline json to_json(const prop::ArchConfig& a) {
  return {{"edge_channels", a.edge_channels},
          {"hidden_channels", a.hidden_channels},
          {"feature_channels", a.feature_channels},
          {"window_radius", a.window_radius},
          {"feature_gain", a.feature_gain},
          {"temperature", a.temperature},
          {"verify", a.verify},
          {"verify_threshold", a.verify_threshold},
          {"flow_channels1", a.flow_channels1},
          {"flow_channels2", a.flow_channels2},
          {"flow_gain", a.flow_gain},
          {"flow_standardize", a.flow_standardize},
          {"lambda", a.lambda},
          {"ssim_window", a.ssim_window},
          {"ssim_c1", a.ssim_c1},
          {"ssim_c2", a.ssim_c2},
          {"neighborhood", a.neighborhood},
          {"crop_margin", a.crop_margin},
          {"refine", a.refine},
          {"refine_gamma", a.refine_gamma},
          {"refine_support", a.refine_support},
          {"refine_ridge", a.refine_ridge}};
}

inline json to_json(const RunConfig& c) {
  return {{"propagator", prop::to_string(c.propagator)},
          {"strategy", to_json(c.strategy)},
          {"sgd", to_json(c.sgd)},
          {"arch", to_json(c.arch)},
          {"manifest", c.manifest.generic_string()},
          {"output_dir", c.output_dir.generic_string()},
          {"seed", c.seed}};
}

inline uq::UqStrategy strategy_from_json(const json& j, const std::string& where = "strategy") {
  using detail::read_opt;
  detail::reject_unknown(j, {"kind", "n_members", "n_samples", "dropout_rate", "member_factor_std", "concrete", "swag"},
                         where);
  uq::UqStrategy s;
  std::string kind = uq::to_string(s.kind);
  read_opt(j, "kind", kind, where);
  try {
    s.kind = uq::uq_kind_from_string(kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(where + ": " + e.what());
  }
  read_opt(j, "n_members", s.n_members, where);
  read_opt(j, "n_samples", s.n_samples, where);
  read_opt(j, "dropout_rate", s.dropout_rate, where);
  read_opt(j, "member_factor_std", s.member_factor_std, where);
  if (j.contains("concrete")) {
    const auto& c = j.at("concrete");
    const std::string w = where + ".concrete";
    detail::reject_unknown(c, {"temperature", "weight_reg", "dropout_reg", "init_p"}, w);
    read_opt(c, "temperature", s.concrete.temperature, w);
    read_opt(c, "weight_reg", s.concrete.weight_reg, w);
    read_opt(c, "dropout_reg", s.concrete.dropout_reg, w);
    read_opt(c, "init_p", s.concrete.init_p, w);
  }
  if (j.contains("swag")) {
    const auto& c = j.at("swag");
    const std::string w = where + ".swag";
    detail::reject_unknown(c, {"collect_every", "n_collect", "sample_scale"}, w);
    read_opt(c, "collect_every", s.swag.collect_every, w);
    read_opt(c, "n_collect", s.swag.n_collect, w);
    read_opt(c, "sample_scale", s.swag.sample_scale, w);
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(where + ": " + e.what());
  }
  return s;
}

inline grad::SgdConfig sgd_from_json(const json& j, const std::string& where = "sgd") {
  detail::reject_unknown(j, {"learning_rate", "momentum", "steps", "batch_size"}, where);
  grad::SgdConfig s;
  detail::read_opt(j, "learning_rate", s.learning_rate, where);
  detail::read_opt(j, "momentum", s.momentum, where);
  detail::read_opt(j, "steps", s.steps, where);
  detail::read_opt(j, "batch_size", s.batch_size, where);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(where + ": " + e.what());
  }
  return s;
}

inline prop::ArchConfig arch_from_json(const json& j, const std::string& where = "arch") {
  prop::ArchConfig a;
  const json defaults = to_json(a);
  std::set<std::string> keys;
  for (const auto& [k, _] : defaults.items()) keys.insert(k);
  detail::reject_unknown(j, keys, where);
  using detail::read_opt;
  read_opt(j, "edge_channels", a.edge_channels, where);
  read_opt(j, "hidden_channels", a.hidden_channels, where);
  read_opt(j, "feature_channels", a.feature_channels, where);
  read_opt(j, "window_radius", a.window_radius, where);
  read_opt(j, "feature_gain", a.feature_gain, where);
  read_opt(j, "temperature", a.temperature, where);
  read_opt(j, "verify", a.verify, where);
  read_opt(j, "verify_threshold", a.verify_threshold, where);
  read_opt(j, "flow_channels1", a.flow_channels1, where);
  read_opt(j, "flow_channels2", a.flow_channels2, where);
  read_opt(j, "flow_gain", a.flow_gain, where);
  read_opt(j, "flow_standardize", a.flow_standardize, where);
  read_opt(j, "lambda", a.lambda, where);
  read_opt(j, "ssim_window", a.ssim_window, where);
  read_opt(j, "ssim_c1", a.ssim_c1, where);
  read_opt(j, "ssim_c2", a.ssim_c2, where);
  read_opt(j, "neighborhood", a.neighborhood, where);
  read_opt(j, "crop_margin", a.crop_margin, where);
  read_opt(j, "refine", a.refine, where);
  read_opt(j, "refine_gamma", a.refine_gamma, where);
  read_opt(j, "refine_support", a.refine_support, where);
  read_opt(j, "refine_ridge", a.refine_ridge, where);
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(where + ": " + e.what());
  }
  return a;
}

// Relative paths resolve against `base` (the config file's directory).
inline RunConfig config_from_json(const json& j, const std::filesystem::path& base = {}) {
  detail::reject_unknown(j, {"propagator", "strategy", "sgd", "arch", "manifest", "output_dir", "seed"}, "config");
  RunConfig c;
  if (j.contains("propagator")) {
    try {
      c.propagator = prop::propagator_from_string(j.at("propagator").get<std::string>());
    } catch (const std::exception& e) {
      throw UsageError(std::string("config.propagator: ") + e.what());
    }
  }
  if (j.contains("strategy")) c.strategy = strategy_from_json(j.at("strategy"));
  if (j.contains("sgd")) c.sgd = sgd_from_json(j.at("sgd"));
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  std::string manifest, out;
  detail::read_opt(j, "manifest", manifest, "config");
  detail::read_opt(j, "output_dir", out, "config");
  detail::read_opt(j, "seed", c.seed, "config");
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    const std::filesystem::path fp(p);
    return fp.is_absolute() || base.empty() ? fp : base / fp;
  };
  c.manifest = resolve(manifest);
  c.output_dir = resolve(out);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(path.string() + ": cannot open config");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": malformed JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

// Checks the run-start invariants: inputs exist, an output location is named.
inline void require_paths(const RunConfig& c) {
  if (c.manifest.empty()) throw UsageError("config: 'manifest' is required");
  if (!std::filesystem::is_regular_file(c.manifest)) throw UsageError(c.manifest.string() + ": manifest not found");
  if (c.output_dir.empty()) throw UsageError("config: 'output_dir' is required");
}

// JSON Schema (draft 2020-12) for RunConfig documents.
inline json config_schema() {
  auto num = [](const char* d) { return json{{"type", "number"}, {"description", d}}; };
  auto integer = [](const char* d) { return json{{"type", "integer"}, {"minimum", 0}, {"description", d}}; };
  auto boolean = [](const char* d) { return json{{"type", "boolean"}, {"description", d}}; };
  auto object = [](json props, json required = json::array()) {
    return json{{"type", "object"}, {"additionalProperties", false}, {"properties", std::move(props)},
                {"required", std::move(required)}};
  };
  json kinds = json::array();
  for (auto k : uq::kAllUqKinds) kinds.push_back(uq::to_string(k));

  json arch_props;
  const json arch_defaults = to_json(prop::ArchConfig{});
  for (const auto& [k, v] : arch_defaults.items()) {
    arch_props[k] = v.is_boolean() ? boolean("architecture flag")
                    : v.is_number_integer() || v.is_number_unsigned() ? integer("architecture size")
                                                                       : num("architecture scalar");
  }
  return {{"$schema", "https://json-schema.org/draft/2020-12/schema"},
          {"title", "spuq RunConfig"},
          {"type", "object"},
          {"additionalProperties", false},
          {"required", {"manifest", "output_dir"}},
          {"properties",
           {{"propagator", {{"enum", {"affinity", "flow"}}}},
            {"strategy",
             object({{"kind", {{"enum", kinds}}},
                     {"n_members", integer("ensemble size")},
                     {"n_samples", integer("posterior samples for sampling strategies")},
                     {"dropout_rate", num("MC dropout rate in [0, 1)")},
                     {"member_factor_std", num("batch-ensemble factor init spread")},
                     {"concrete", object({{"temperature", num("relaxation temperature")},
                                          {"weight_reg", num("weight regularizer")},
                                          {"dropout_reg", num("dropout regularizer")},
                                          {"init_p", num("initial dropout probability")}})},
                     {"swag", object({{"collect_every", integer("steps between snapshots")},
                                      {"n_collect", integer("number of snapshots")},
                                      {"sample_scale", num("posterior sampling scale")}})}})},
            {"sgd", object({{"learning_rate", num("step size")},
                            {"momentum", num("heavy-ball momentum")},
                            {"steps", integer("optimizer steps")},
                            {"batch_size", integer("samples per step")}})},
            {"arch", object(arch_props)},
            {"manifest", {{"type", "string"}, {"description", "dataset manifest.json"}}},
            {"output_dir", {{"type", "string"}}},
            {"seed", integer("global seed")}}}};
}

}  // namespace spuq::bench
