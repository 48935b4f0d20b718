#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/volume.hpp"

namespace spuq::phantom {

static_assert(std::endian::native == std::endian::little, "VolumeFile I/O assumes a little-endian host");

inline constexpr char kVolumeMagic[8] = {'S', 'P', 'U', 'Q', 'V', 'O', 'L', '1'};
inline constexpr std::size_t kVolumeHeaderSize = 8 + 4 * 4 + 3 * 8;

enum class DType : std::uint32_t { Float32 = 1, UInt8 = 2 };

enum class VolumeErrc { Io, BadMagic, BadDType, Truncated, BadDims };

inline const char* to_string(VolumeErrc c) {
  switch (c) {
    case VolumeErrc::Io: return "io";
    case VolumeErrc::BadMagic: return "bad_magic";
    case VolumeErrc::BadDType: return "bad_dtype";
    case VolumeErrc::Truncated: return "truncated";
    case VolumeErrc::BadDims: return "bad_dims";
  }
  return "unknown";
}

class VolumeFormatError : public std::runtime_error {
 public:
  VolumeFormatError(VolumeErrc code, const std::filesystem::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + to_string(code) + ": " + what), code_(code), path_(path) {}
  VolumeErrc code() const { return code_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  VolumeErrc code_;
  std::filesystem::path path_;
};

namespace detail {

template <typename T>
void put(std::vector<char>& buf, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void write_grid(const std::filesystem::path& path, const Grid3<T>& g, DType dtype) {
  std::vector<char> buf;
  buf.reserve(kVolumeHeaderSize + g.size() * sizeof(T));
  buf.insert(buf.end(), kVolumeMagic, kVolumeMagic + 8);
  put(buf, static_cast<std::uint32_t>(dtype));
  put(buf, static_cast<std::uint32_t>(g.height()));
  put(buf, static_cast<std::uint32_t>(g.width()));
  put(buf, static_cast<std::uint32_t>(g.depth()));
  for (double s : g.spacing()) put(buf, s);
  const char* payload = reinterpret_cast<const char*>(g.values().data());
  buf.insert(buf.end(), payload, payload + g.size() * sizeof(T));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeFormatError(VolumeErrc::Io, path, "cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw VolumeFormatError(VolumeErrc::Io, path, "write failed");
}

template <typename T>
Grid3<T> read_grid(const std::filesystem::path& path, DType expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolumeFormatError(VolumeErrc::Io, path, "cannot open for reading");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kVolumeMagic, 8) != 0) {
    throw VolumeFormatError(VolumeErrc::BadMagic, path, "missing SPUQVOL1 magic");
  }
  if (buf.size() < kVolumeHeaderSize) throw VolumeFormatError(VolumeErrc::Truncated, path, "header truncated");
  const auto dtype = get<std::uint32_t>(buf.data() + 8);
  if (dtype != static_cast<std::uint32_t>(DType::Float32) && dtype != static_cast<std::uint32_t>(DType::UInt8)) {
    throw VolumeFormatError(VolumeErrc::BadDType, path, "unknown dtype code " + std::to_string(dtype));
  }
  if (dtype != static_cast<std::uint32_t>(expected)) {
    throw VolumeFormatError(VolumeErrc::BadDType, path,
                            "dtype code " + std::to_string(dtype) + ", expected " +
                                std::to_string(static_cast<std::uint32_t>(expected)));
  }
  const auto h = get<std::uint32_t>(buf.data() + 12);
  const auto w = get<std::uint32_t>(buf.data() + 16);
  const auto d = get<std::uint32_t>(buf.data() + 20);
  if (h == 0 || w == 0 || d == 0) throw VolumeFormatError(VolumeErrc::BadDims, path, "zero dimension");
  Spacing sp{};
  for (int i = 0; i < 3; ++i) sp[i] = get<double>(buf.data() + 24 + 8 * i);
  const std::size_t n = std::size_t{h} * w * d;
  if (buf.size() < kVolumeHeaderSize + n * sizeof(T)) {
    throw VolumeFormatError(VolumeErrc::Truncated, path,
                            "payload has " + std::to_string(buf.size() - kVolumeHeaderSize) + " bytes, expected " +
                                std::to_string(n * sizeof(T)));
  }
  if (buf.size() > kVolumeHeaderSize + n * sizeof(T)) {
    throw VolumeFormatError(VolumeErrc::BadDims, path, "trailing bytes after payload");
  }
  Grid3<T> g(h, w, d, T{}, sp);
  std::memcpy(g.values().data(), buf.data() + kVolumeHeaderSize, n * sizeof(T));
  return g;
}

}  // namespace detail

inline void write_volume(const std::filesystem::path& path, const Grid3<float>& v) {
  detail::write_grid(path, v, DType::Float32);
}
inline Grid3<float> read_volume(const std::filesystem::path& path) {
  return detail::read_grid<float>(path, DType::Float32);
}
inline void write_mask(const std::filesystem::path& path, const MaskVolume& m) {
  detail::write_grid(path, m, DType::UInt8);
}
inline MaskVolume read_mask(const std::filesystem::path& path) {
  auto m = detail::read_grid<std::uint8_t>(path, DType::UInt8);
  for (auto v : m.values()) {
    if (v > 1) throw VolumeFormatError(VolumeErrc::BadDType, path, "mask labels must be 0 or 1");
  }
  return m;
}

}  // namespace spuq::phantom
