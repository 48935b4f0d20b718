#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spuq/phantomgen/generator.hpp"
#include "spuq/phantomgen/volume_io.hpp"

namespace spuq::phantom {

enum class Split { Train, Eval };

inline std::string to_string(Split s) { return s == Split::Train ? "train" : "eval"; }
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "eval") return Split::Eval;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string id;
  Kind kind = Kind::Ellipsoid;
  // Stored relative to the manifest directory; resolved by load_manifest.
  std::filesystem::path volume_path;
  std::filesystem::path mask_path;
  Split split = Split::Train;
  PhantomSpec spec;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> phantoms;

  std::filesystem::path volume_file(const ManifestEntry& e) const { return root / e.volume_path; }
  std::filesystem::path mask_file(const ManifestEntry& e) const { return root / e.mask_path; }

  std::vector<const ManifestEntry*> select(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : phantoms) {
      if (e.split == s) out.push_back(&e);
    }
    return out;
  }
};

inline nlohmann::json manifest_json(const Manifest& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : m.phantoms) {
    arr.push_back({{"id", e.id},
                   {"kind", to_string(e.kind)},
                   {"volume_path", e.volume_path.generic_string()},
                   {"mask_path", e.mask_path.generic_string()},
                   {"split", to_string(e.split)},
                   {"spec", e.spec}});
  }
  return nlohmann::json{{"phantoms", arr}};
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open manifest");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error(path.string() + ": malformed manifest: " + ex.what());
  }
  Manifest m;
  m.root = path.parent_path();
  for (const auto& p : j.at("phantoms")) {
    ManifestEntry e;
    e.id = p.at("id").get<std::string>();
    e.kind = kind_from_string(p.at("kind").get<std::string>());
    e.volume_path = p.at("volume_path").get<std::string>();
    e.mask_path = p.at("mask_path").get<std::string>();
    e.split = split_from_string(p.at("split").get<std::string>());
    e.spec = p.at("spec").get<PhantomSpec>();
    m.phantoms.push_back(std::move(e));
  }
  return m;
}

inline std::uint64_t phantom_seed(std::uint64_t suite_seed, Kind kind, std::size_t index) {
  return grad::Rng::stream(suite_seed, "phantom_" + to_string(kind), index).next_u64();
}

struct SuiteOptions {
  std::size_t n_per_kind = 8;
  std::size_t height = 32, width = 32, depth = 24;
};

// Writes volumes/<id>.vol, masks/<id>.mask and manifest.json under out_dir.
// Within each kind even indices go to the train split, odd ones to eval.
inline Manifest generate_suite(const std::filesystem::path& out_dir, std::uint64_t seed, const SuiteOptions& opt = {}) {
  if (opt.n_per_kind < 1) throw std::invalid_argument("n_per_kind must be >= 1");
  Manifest m;
  m.root = out_dir;
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "volumes", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw std::runtime_error(out_dir.string() + ": cannot create dataset directories: " + ec.message());

  for (Kind kind : kAllKinds) {
    for (std::size_t i = 0; i < opt.n_per_kind; ++i) {
      ManifestEntry e;
      std::ostringstream id;
      id << to_string(kind) << '_' << (i < 10 ? "0" : "") << i;
      e.id = id.str();
      e.kind = kind;
      e.split = i % 2 == 0 ? Split::Train : Split::Eval;
      e.spec = random_spec(kind, phantom_seed(seed, kind, i), opt.height, opt.width, opt.depth);
      e.volume_path = std::filesystem::path("volumes") / (e.id + ".vol");
      e.mask_path = std::filesystem::path("masks") / (e.id + ".mask");
      const auto ph = generate(e.spec);
      write_volume(out_dir / e.volume_path, ph.volume);
      write_mask(out_dir / e.mask_path, ph.mask);
      m.phantoms.push_back(std::move(e));
    }
  }
  const auto manifest_path = out_dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw std::runtime_error(manifest_path.string() + ": cannot write manifest");
  out << manifest_json(m).dump(2) << '\n';
  if (!out) throw std::runtime_error(manifest_path.string() + ": write failed");
  return m;
}

// Training-side access: reads only the volumes of the train split, never masks.
inline std::vector<Volume3D> load_training_volumes(const Manifest& m) {
  std::vector<Volume3D> vols;
  for (const auto* e : m.select(Split::Train)) vols.push_back(read_volume(m.volume_file(*e)));
  return vols;
}

}  // namespace spuq::phantom
