#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spuq/benchcli/config.hpp"
#include "spuq/uqwrap.hpp"

namespace spuq::bench {

// Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
// then float32 little-endian payload: model tensors in header order, followed
// by the SWAG mean, second-moment and variance tensors when present.
inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'U', 'Q', 'C', 'K', 'P', '1'};
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One trained network plus whatever its strategy needs at prediction time.
struct Checkpoint {
  uq::UqStrategy strategy;
  std::size_t member = 0;  // index within a deep ensemble
  prop::PropagatorModel model;
  std::optional<uq::SwagStats> swag;
};

inline json stochastic_json(const prop::StochasticConfig& s) {
  return {{"dropout_rate", s.dropout_rate},   {"concrete", s.concrete},
          {"concrete_temperature", s.concrete_temperature}, {"concrete_init_p", s.concrete_init_p},
          {"weight_reg", s.weight_reg},       {"dropout_reg", s.dropout_reg},
          {"members", s.members},             {"member_factor_std", s.member_factor_std}};
}

inline prop::StochasticConfig stochastic_from_json(const json& j) {
  prop::StochasticConfig s;
  s.dropout_rate = j.at("dropout_rate").get<double>();
  s.concrete = j.at("concrete").get<bool>();
  s.concrete_temperature = j.at("concrete_temperature").get<double>();
  s.concrete_init_p = j.at("concrete_init_p").get<double>();
  s.weight_reg = j.at("weight_reg").get<double>();
  s.dropout_reg = j.at("dropout_reg").get<double>();
  s.members = j.at("members").get<std::size_t>();
  s.member_factor_std = j.at("member_factor_std").get<double>();
  return s;
}

namespace detail {

inline void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little) {
    throw CheckpointError("checkpoint I/O requires a little-endian host");
  }
}

inline void write_floats(std::ostream& out, const grad::Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline void read_floats(std::istream& in, grad::Tensor& t, const std::string& what) {
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!in) throw CheckpointError(what + ": truncated payload");
}

inline grad::Shape shape_of(const json& j) { return j.get<grad::Shape>(); }

}  // namespace detail

inline json checkpoint_header(const Checkpoint& c) {
  auto& net = const_cast<prop::Network&>(c.model.net);
  json tensors = json::array();
  for (const auto& [name, t] : net.named_tensors()) tensors.push_back({{"name", name}, {"shape", t->shape()}});
  json header{{"format_version", kCheckpointVersion},
              {"propagator", prop::to_string(c.model.kind)},
              {"strategy", to_json(c.strategy)},
              {"member", c.member},
              {"arch", to_json(c.model.arch)},
              {"stochastic", stochastic_json(c.model.stochastic)},
              {"init",
               {{"mode", std::string(grad::to_string(c.model.init.mode))},
                {"seed", c.model.init.seed},
                {"custom_normal_std", c.model.init.custom_normal_std}}},
              {"tensors", tensors},
              {"dropout_probabilities", c.model.dropout_probabilities()},
              {"loss_history", c.model.loss_history},
              {"clamp_events", c.model.clamp_events},
              {"swag", nullptr}};
  if (c.swag) {
    json shapes = json::array();
    for (const auto& t : c.swag->mean()) shapes.push_back(t.shape());
    header["swag"] = {{"n_collected", c.swag->n_collected()}, {"shapes", shapes}};
  }
  return header;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  detail::require_little_endian();
  const std::string header = checkpoint_header(c).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [_, t] : const_cast<prop::Network&>(c.model.net).named_tensors()) detail::write_floats(out, *t);
  if (c.swag) {
    for (const auto& t : c.swag->mean()) detail::write_floats(out, t);
    for (const auto& t : c.swag->sq_mean()) detail::write_floats(out, t);
    for (const auto& t : c.swag->variance()) detail::write_floats(out, t);
  }
  if (!out) throw CheckpointError(path.string() + ": write failed");
}

inline json read_checkpoint_header(std::istream& in, const std::string& what) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw CheckpointError(what + ": bad magic");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw CheckpointError(what + ": bad header length");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(what + ": truncated header");
  try {
    return json::parse(header);
  } catch (const json::exception& e) {
    throw CheckpointError(what + ": malformed header: " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::require_little_endian();
  const std::string what = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(what + ": cannot open");
  const json h = read_checkpoint_header(in, what);
  Checkpoint c;
  try {
    if (h.at("format_version").get<int>() != kCheckpointVersion) throw CheckpointError(what + ": unsupported version");
    c.strategy = strategy_from_json(h.at("strategy"));
    c.member = h.at("member").get<std::size_t>();
    const auto kind = prop::propagator_from_string(h.at("propagator").get<std::string>());
    const auto arch = arch_from_json(h.at("arch"));
    const auto st = stochastic_from_json(h.at("stochastic"));
    grad::InitSpec init;
    init.mode = grad::init_mode_from_string(h.at("init").at("mode").get<std::string>());
    init.seed = h.at("init").at("seed").get<std::uint64_t>();
    init.custom_normal_std = h.at("init").at("custom_normal_std").get<double>();
    c.model = prop::make_model(kind, arch, st, init);
    c.model.loss_history = h.at("loss_history").get<std::vector<double>>();
    c.model.clamp_events = h.at("clamp_events").get<std::size_t>();

    auto named = c.model.net.named_tensors();
    const auto& tensors = h.at("tensors");
    if (tensors.size() != named.size()) throw CheckpointError(what + ": tensor count differs from the architecture");
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != named[i].first ||
          detail::shape_of(tensors[i].at("shape")) != named[i].second->shape()) {
        throw CheckpointError(what + ": tensor '" + tensors[i].at("name").get<std::string>() +
                              "' does not match the architecture");
      }
      detail::read_floats(in, *named[i].second, what);
    }
    if (!h.at("swag").is_null()) {
      const auto& s = h.at("swag");
      std::vector<grad::Tensor> mean;
      for (const auto& shape : s.at("shapes")) mean.emplace_back(detail::shape_of(shape));
      std::vector<grad::Tensor> sq = mean, var = mean;
      for (auto* list : {&mean, &sq, &var})
        for (auto& t : *list) detail::read_floats(in, t, what);
      c.swag = uq::SwagStats::from_moments(std::move(mean), std::move(sq), std::move(var),
                                           s.at("n_collected").get<std::size_t>());
    }
  } catch (const json::exception& e) {
    throw CheckpointError(what + ": malformed header: " + e.what());
  } catch (const UsageError& e) {
    throw CheckpointError(what + ": " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(what + ": trailing bytes after payload");
  return c;
}

// Checkpoint file names written by training.
inline std::vector<std::string> checkpoint_names(const uq::UqStrategy& s) {
  if (s.kind != uq::UqKind::DeepEnsemble) return {"model.ckpt"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.n_members; ++i) out.push_back("member_" + std::to_string(i) + ".ckpt");
  return out;
}

inline std::vector<Checkpoint> to_checkpoints(const uq::UqArtifacts& a) {
  std::vector<Checkpoint> out;
  for (std::size_t i = 0; i < a.models.size(); ++i) out.push_back({a.strategy, i, a.models[i], a.swag});
  return out;
}

// Reassembles prediction artifacts; ensemble members may come in any order.
inline uq::UqArtifacts from_checkpoints(std::vector<Checkpoint> cks) {
  if (cks.empty()) throw CheckpointError("no checkpoints given");
  uq::UqArtifacts a;
  a.strategy = cks.front().strategy;
  a.propagator = cks.front().model.kind;
  std::sort(cks.begin(), cks.end(), [](const Checkpoint& x, const Checkpoint& y) { return x.member < y.member; });
  for (std::size_t i = 0; i < cks.size(); ++i) {
    if (uq::to_string(cks[i].strategy.kind) != uq::to_string(a.strategy.kind) || cks[i].model.kind != a.propagator) {
      throw CheckpointError("checkpoints mix propagators or strategies");
    }
    if (cks[i].member != i) throw CheckpointError("ensemble member " + std::to_string(i) + " missing or duplicated");
    a.models.push_back(std::move(cks[i].model));
  }
  a.swag = std::move(cks.front().swag);
  try {
    uq::check_artifacts(a);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  return a;
}

}  // namespace spuq::bench
