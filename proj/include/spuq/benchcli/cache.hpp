#pragma once

#include <filesystem>
#include <fstream>
#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "spuq/benchcli/checkpoint.hpp"
#include "spuq/phantomgen/suite.hpp"

namespace spuq::bench {

// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256: digest initialisation failed");
    }
  }

  Sha256& update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("sha256: update failed");
    return *this;
  }
  Sha256& update(const std::string& s) { return update(s.data(), s.size()); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw std::runtime_error("sha256: finalisation failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 0xF];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(const std::string& s) { return Sha256().update(s).hex(); }

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open for hashing");
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// Digest of everything training may read: ids and bytes of the train-split volumes.
inline std::string training_data_digest(const phantom::Manifest& m) {
  Sha256 h;
  for (const auto* e : m.select(phantom::Split::Train)) {
    h.update(e->id).update("\n").update(sha256_file(m.volume_file(*e))).update("\n");
  }
  return h.hex();
}

// Fields that only shape inference; excluded from the training key so that
// e.g. switching refinement off reuses trained weights.
inline const std::vector<std::string>& inference_only_arch_keys() {
  static const std::vector<std::string> keys = {"verify", "verify_threshold", "refine",
                                                "refine_gamma", "refine_support", "refine_ridge"};
  return keys;
}

inline void apply_inference_arch(prop::PropagatorModel& m, const prop::ArchConfig& a) {
  m.arch.verify = a.verify;
  m.arch.verify_threshold = a.verify_threshold;
  m.arch.refine = a.refine;
  m.arch.refine_gamma = a.refine_gamma;
  m.arch.refine_support = a.refine_support;
  m.arch.refine_ridge = a.refine_ridge;
}

// A trained unit that several strategies may share. The none and swag cells
// share the plain baseline; each dropout variant and each ensemble trains on its own.
enum class UnitRole { Base, Swag, Own };

inline UnitRole unit_role(uq::UqKind k) {
  if (k == uq::UqKind::None) return UnitRole::Base;
  if (k == uq::UqKind::Swag) return UnitRole::Swag;
  return UnitRole::Own;
}

struct TrainingInputs {
  prop::PropagatorKind propagator = prop::PropagatorKind::Affinity;
  uq::UqStrategy strategy;
  grad::SgdConfig sgd;
  prop::ArchConfig arch;
  std::uint64_t seed = 0;
  std::string data_digest;
};

inline json training_key_json(const TrainingInputs& in, UnitRole role) {
  json arch = to_json(in.arch);
  for (const auto& k : inference_only_arch_keys()) arch.erase(k);
  json j{{"format", kCheckpointVersion}, {"propagator", prop::to_string(in.propagator)}, {"sgd", to_json(in.sgd)},
         {"arch", arch}, {"seed", in.seed}, {"data", in.data_digest}};
  const auto& s = in.strategy;
  switch (role) {
    case UnitRole::Base: j["unit"] = "base"; break;
    case UnitRole::Swag:
      j["unit"] = "swag";
      j["swag"] = {{"collect_every", s.swag.collect_every}, {"n_collect", s.swag.n_collect}};
      break;
    case UnitRole::Own: {
      j["unit"] = uq::to_string(s.kind);
      const json full = to_json(s);
      if (s.kind == uq::UqKind::McDropout) j["dropout_rate"] = s.dropout_rate;
      if (s.kind == uq::UqKind::ConcreteDropout) j["concrete"] = full.at("concrete");
      if (s.kind == uq::UqKind::BatchEnsemble) j["member_factor_std"] = s.member_factor_std;
      if (s.is_ensemble()) j["n_members"] = s.n_members;
      break;
    }
  }
  return j;
}

inline std::string training_key(const TrainingInputs& in, UnitRole role) {
  return sha256_hex(training_key_json(in, role).dump());
}

// Directory of <key>/ entries, each holding the checkpoints of one unit.
// Entries are written to a temporary sibling and renamed into place.
class CheckpointCache {
 public:
  CheckpointCache() = default;
  explicit CheckpointCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  bool enabled() const { return !dir_.empty(); }
  const std::filesystem::path& dir() const { return dir_; }

  std::optional<std::vector<Checkpoint>> load(const std::string& key) const {
    if (!enabled()) return std::nullopt;
    const auto entry = dir_ / key;
    const auto index = entry / "index.json";
    if (!std::filesystem::is_regular_file(index)) return std::nullopt;
    try {
      std::ifstream in(index);
      const json names = json::parse(in).at("checkpoints");
      std::vector<Checkpoint> out;
      for (const auto& n : names) out.push_back(load_checkpoint(entry / n.get<std::string>()));
      return out;
    } catch (const std::exception&) {
      return std::nullopt;  // unreadable entries are retrained and overwritten
    }
  }

  void store(const std::string& key, const std::vector<Checkpoint>& cks, const json& key_doc) const {
    if (!enabled()) return;
    namespace fs = std::filesystem;
    fs::create_directories(dir_);
    const auto tmp = dir_ / (key + ".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    json names = json::array();
    for (std::size_t i = 0; i < cks.size(); ++i) {
      const std::string name = "unit_" + std::to_string(i) + ".ckpt";
      save_checkpoint(tmp / name, cks[i]);
      names.push_back(name);
    }
    std::ofstream(tmp / "key.json") << key_doc.dump(2) << '\n';
    std::ofstream(tmp / "index.json") << json{{"checkpoints", names}}.dump() << '\n';
    const auto entry = dir_ / key;
    fs::remove_all(entry);
    fs::rename(tmp, entry);
  }

 private:
  std::filesystem::path dir_;
};

// Trains each unit at most once per process, consulting the on-disk cache first.
class TrainingStore {
 public:
  TrainingStore(CheckpointCache cache, std::vector<Volume3D> volumes, std::size_t jobs = 1)
      : cache_(std::move(cache)), volumes_(std::move(volumes)), jobs_(jobs) {}

  std::size_t trained_units() const { return trained_; }
  std::size_t cache_hits() const { return hits_; }

  // Prediction artifacts for `in.strategy`; inference settings follow `in`.
  uq::UqArtifacts artifacts(const TrainingInputs& in) {
    const UnitRole role = unit_role(in.strategy.kind);
    std::vector<Checkpoint> cks = unit(in, role);
    uq::UqArtifacts a;
    a.propagator = in.propagator;
    a.strategy = in.strategy;
    for (auto& c : cks) {
      apply_inference_arch(c.model, in.arch);
      a.models.push_back(std::move(c.model));
    }
    a.swag = std::move(cks.front().swag);
    uq::check_artifacts(a);
    return a;
  }

 private:
  struct Entry {
    std::mutex m;
    bool done = false;
    std::vector<Checkpoint> value;
  };

  std::vector<Checkpoint> unit(const TrainingInputs& in, UnitRole role) {
    const std::string key = training_key(in, role);
    std::shared_ptr<Entry> e;
    {
      std::lock_guard<std::mutex> lock(map_mutex_);
      auto& slot = entries_[key];
      if (!slot) slot = std::make_shared<Entry>();
      e = slot;
    }
    std::lock_guard<std::mutex> lock(e->m);
    if (e->done) return e->value;
    if (auto hit = cache_.load(key)) {
      e->value = std::move(*hit);
      ++hits_;
    } else {
      e->value = train(in, role);
      cache_.store(key, e->value, training_key_json(in, role));
      ++trained_;
    }
    e->done = true;
    return e->value;
  }

  std::vector<Checkpoint> train(const TrainingInputs& in, UnitRole role) {
    const uq::TrainConfig cfg{in.sgd, in.arch, in.seed, jobs_};
    switch (role) {
      case UnitRole::Base: {
        uq::UqStrategy none;
        auto a = uq::train_uq(in.propagator, volumes_, cfg, none);
        return to_checkpoints(a);
      }
      case UnitRole::Swag: {
        TrainingInputs base = in;
        base.strategy = uq::UqStrategy{};
        auto cks = unit(base, UnitRole::Base);
        Checkpoint c = cks.front();
        c.strategy = in.strategy;
        c.swag = uq::swag_collect_and_fit(c.model, volumes_, in.sgd, in.seed, in.strategy.swag);
        return {std::move(c)};
      }
      case UnitRole::Own:
        return to_checkpoints(uq::train_uq(in.propagator, volumes_, cfg, in.strategy));
    }
    return {};
  }

  CheckpointCache cache_;
  std::vector<Volume3D> volumes_;
  std::size_t jobs_;
  std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
  std::atomic<std::size_t> trained_{0}, hits_{0};
};

}  // namespace spuq::bench
