#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "spuq/gradcore/rng.hpp"
#include "spuq/volume.hpp"

namespace spuq::phantom {

enum class Kind { Ellipsoid, BranchingY, CappedCylinder, ConstantTube };

inline constexpr std::array<Kind, 4> kAllKinds = {Kind::Ellipsoid, Kind::BranchingY, Kind::CappedCylinder,
                                                  Kind::ConstantTube};

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::Ellipsoid: return "ellipsoid";
    case Kind::BranchingY: return "branching_y";
    case Kind::CappedCylinder: return "capped_cylinder";
    case Kind::ConstantTube: return "constant_tube";
  }
  return "unknown";
}

inline Kind kind_from_string(const std::string& s) {
  for (Kind k : kAllKinds) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown phantom kind '" + s + "'");
}

class PhantomSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Geometry is expressed in voxel coordinates; the inside test is evaluated at
// integer voxel centres. Fields irrelevant to a kind are ignored by it.
struct PhantomSpec {
  Kind kind = Kind::Ellipsoid;
  std::size_t height = 32, width = 32, depth = 24;
  Spacing spacing{1.0, 1.0, 1.0};
  double fg = 0.75;
  double bg = 0.25;
  double noise_std = 0.01;
  double texture_amplitude = 0.05;
  std::uint64_t seed = 0;

  double center_x = 15.5, center_y = 15.5, center_z = 11.5;
  // Ellipsoid semi-axes; radius_x is also the tube / trunk radius.
  double radius_x = 7.0, radius_y = 7.0, radius_z = 8.0;
  // Axial extent of tube-like kinds (inclusive).
  std::size_t z_start = 2, z_end = 21;
  // In-plane centre drift per slice, relative to center_z for the ellipsoid
  // and to z_start otherwise. The constant tube ignores it.
  double drift_x = 0.0, drift_y = 0.0;
  // branching_y: first slice with two branches, branch radius, centre offset
  // from the trunk axis at the split, growth of that offset per slice, and
  // in-plane direction of the split.
  std::size_t split_depth = 11;
  double branch_radius = 3.5, branch_offset = 5.0, branch_slope = 0.2, branch_angle = 0.0;
  // capped_cylinder: last labelled slice, relative contrast the tube keeps
  // beyond it, and the number of slices over which contrast falls to that level.
  std::size_t cap_depth = 12;
  double cap_residual = 0.5, cap_fade = 3.0;
};

namespace detail {

inline double sq(double v) { return v * v; }

}  // namespace detail

inline double drift_origin(const PhantomSpec& s) {
  return s.kind == Kind::Ellipsoid ? s.center_z : static_cast<double>(s.z_start);
}

// Axis centre of the structure at depth z.
inline std::array<double, 2> axis_center(const PhantomSpec& s, double z) {
  if (s.kind == Kind::ConstantTube) return {s.center_x, s.center_y};
  const double t = z - drift_origin(s);
  return {s.center_x + s.drift_x * t, s.center_y + s.drift_y * t};
}

struct Box {
  double x0, x1, y0, y1, z0, z1;
};

// Conservative continuous bounds of the labelled or visible structure.
inline Box bounding_box(const PhantomSpec& s) {
  double z0 = static_cast<double>(s.z_start), z1 = static_cast<double>(s.z_end);
  double rx = s.radius_x, ry = s.radius_x;
  if (s.kind == Kind::Ellipsoid) {
    z0 = s.center_z - s.radius_z;
    z1 = s.center_z + s.radius_z;
    ry = s.radius_y;
  }
  double ex = 0.0, ey = 0.0;
  if (s.kind == Kind::BranchingY) {
    const double off = s.branch_offset + s.branch_slope * (z1 - static_cast<double>(s.split_depth));
    ex = std::max(0.0, std::abs(std::cos(s.branch_angle)) * off + s.branch_radius - rx);
    ey = std::max(0.0, std::abs(std::sin(s.branch_angle)) * off + s.branch_radius - ry);
  }
  const auto a = axis_center(s, z0), b = axis_center(s, z1);
  return {std::min(a[0], b[0]) - rx - ex, std::max(a[0], b[0]) + rx + ex, std::min(a[1], b[1]) - ry - ey,
          std::max(a[1], b[1]) + ry + ey, z0, z1};
}

inline void validate(const PhantomSpec& s) {
  if (s.height < 8 || s.width < 8 || s.depth < 5) throw PhantomSpecError("phantom dims must be at least 8x8x5");
  if (!(s.noise_std >= 0.0) || !(s.texture_amplitude >= 0.0)) {
    throw PhantomSpecError("noise_std and texture_amplitude must be >= 0");
  }
  if (s.fg < 0.0 || s.fg > 1.0 || s.bg < 0.0 || s.bg > 1.0) throw PhantomSpecError("fg/bg must lie in [0, 1]");
  if (!(std::abs(s.fg - s.bg) > 2.0 * s.noise_std)) {
    throw PhantomSpecError("contrast |fg - bg| must exceed 2 * noise_std");
  }
  for (double sp : s.spacing) {
    if (!(sp > 0.0)) throw PhantomSpecError("spacing must be positive");
  }
  const bool tubular = s.kind != Kind::Ellipsoid;
  if (s.radius_x <= 0.5 || (s.kind == Kind::Ellipsoid && (s.radius_y <= 0.5 || s.radius_z <= 0.5))) {
    throw PhantomSpecError("radii must exceed half a voxel");
  }
  if (tubular && s.z_start >= s.z_end) throw PhantomSpecError("z_start must be below z_end");
  if (s.kind == Kind::CappedCylinder) {
    if (s.cap_depth <= s.z_start || s.cap_depth >= s.z_end) {
      throw PhantomSpecError("cap_depth must lie strictly between z_start and z_end");
    }
    if (s.cap_residual < 0.0 || s.cap_residual > 1.0 || !(s.cap_fade > 0.0)) {
      throw PhantomSpecError("cap_residual must lie in [0, 1] and cap_fade be positive");
    }
  }
  if (s.kind == Kind::BranchingY) {
    if (s.split_depth <= s.z_start || s.split_depth > s.z_end) {
      throw PhantomSpecError("split_depth must lie in (z_start, z_end]");
    }
    if (s.branch_radius <= 0.5 || s.branch_slope < 0.0) throw PhantomSpecError("invalid branch geometry");
    if (s.branch_offset < s.branch_radius + 1.5) {
      throw PhantomSpecError("branch_offset must be >= branch_radius + 1.5 so the branches are disjoint");
    }
  }
  const auto b = bounding_box(s);
  const double m = 2.0;
  if (b.x0 < m || b.y0 < m || b.z0 < m || b.x1 > static_cast<double>(s.width) - 1.0 - m ||
      b.y1 > static_cast<double>(s.height) - 1.0 - m || b.z1 > static_cast<double>(s.depth) - 1.0 - m) {
    throw PhantomSpecError("geometry of " + to_string(s.kind) + " phantom violates the 2-voxel margin");
  }
}

// Analytic inside test at voxel centre (x, y, z).
inline bool inside(const PhantomSpec& s, double x, double y, double z) {
  using detail::sq;
  const auto c = axis_center(s, z);
  const double dx = x - c[0], dy = y - c[1];
  switch (s.kind) {
    case Kind::Ellipsoid:
      return sq(dx / s.radius_x) + sq(dy / s.radius_y) + sq((z - s.center_z) / s.radius_z) <= 1.0;
    case Kind::ConstantTube:
      if (z < static_cast<double>(s.z_start) || z > static_cast<double>(s.z_end)) return false;
      return sq(dx) + sq(dy) <= sq(s.radius_x);
    case Kind::CappedCylinder:
      if (z < static_cast<double>(s.z_start) || z > static_cast<double>(s.cap_depth)) return false;
      return sq(dx) + sq(dy) <= sq(s.radius_x);
    case Kind::BranchingY: {
      if (z < static_cast<double>(s.z_start) || z > static_cast<double>(s.z_end)) return false;
      if (z < static_cast<double>(s.split_depth)) return sq(dx) + sq(dy) <= sq(s.radius_x);
      const double off = s.branch_offset + s.branch_slope * (z - static_cast<double>(s.split_depth));
      const double ux = off * std::cos(s.branch_angle), uy = off * std::sin(s.branch_angle);
      const double r2 = sq(s.branch_radius);
      return sq(dx - ux) + sq(dy - uy) <= r2 || sq(dx + ux) + sq(dy + uy) <= r2;
    }
  }
  return false;
}

// Structure visibility in the image, in [0, 1]. Equals the mask except for the
// capped cylinder, whose tube keeps fading contrast past the cap.
inline double image_indicator(const PhantomSpec& s, double x, double y, double z) {
  if (s.kind != Kind::CappedCylinder) return inside(s, x, y, z) ? 1.0 : 0.0;
  if (z <= static_cast<double>(s.cap_depth)) return inside(s, x, y, z) ? 1.0 : 0.0;
  if (z > static_cast<double>(s.z_end)) return 0.0;
  const auto c = axis_center(s, z);
  if (detail::sq(x - c[0]) + detail::sq(y - c[1]) > detail::sq(s.radius_x)) return 0.0;
  const double u = std::min(1.0, (z - static_cast<double>(s.cap_depth)) / s.cap_fade);
  return s.cap_residual + (1.0 - s.cap_residual) * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

struct Phantom {
  Volume3D volume;
  MaskVolume mask;
};

inline Phantom generate(const PhantomSpec& s) {
  validate(s);
  Phantom p{Volume3D(s.height, s.width, s.depth, 0.0f, s.spacing), MaskVolume(s.height, s.width, s.depth, 0, s.spacing)};

  auto rng = grad::Rng::stream(s.seed, "phantom_texture");
  struct Wave {
    double fx, fy, fz, phase;
  };
  std::array<Wave, 3> waves{};
  for (auto& w : waves) {
    w.fx = static_cast<double>(1 + rng.index(3));
    w.fy = static_cast<double>(1 + rng.index(3));
    w.fz = static_cast<double>(rng.index(3));
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  auto noise = grad::Rng::stream(s.seed, "phantom_noise");
  const double amp = s.texture_amplitude / static_cast<double>(waves.size());
  const double W = static_cast<double>(s.width), H = static_cast<double>(s.height), D = static_cast<double>(s.depth);

  for (std::size_t z = 0; z < s.depth; ++z)
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y), fz = static_cast<double>(z);
        p.mask.at(x, y, z) = inside(s, fx, fy, fz) ? 1 : 0;
        double v = s.bg + (s.fg - s.bg) * image_indicator(s, fx, fy, fz);
        for (const auto& w : waves) {
          v += amp * std::sin(2.0 * std::numbers::pi * (w.fx * fx / W + w.fy * fy / H + w.fz * fz / D) + w.phase);
        }
        if (s.noise_std > 0.0) v += noise.normal(0.0, s.noise_std);
        p.volume.at(x, y, z) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return p;
}

// Draws a valid randomized spec of the given kind, scaled to the dims.
inline PhantomSpec random_spec(Kind kind, std::uint64_t seed, std::size_t height = 32, std::size_t width = 32,
                               std::size_t depth = 24) {
  auto rng = grad::Rng::stream(seed, "phantom_spec");
  const double W = static_cast<double>(width), H = static_cast<double>(height), D = static_cast<double>(depth);
  const double minwh = std::min(W, H);
  for (int attempt = 0; attempt < 200; ++attempt) {
    PhantomSpec s;
    s.kind = kind;
    s.height = height;
    s.width = width;
    s.depth = depth;
    s.seed = seed;
    s.center_x = (W - 1.0) / 2.0 + rng.uniform(-1.5, 1.5);
    s.center_y = (H - 1.0) / 2.0 + rng.uniform(-1.5, 1.5);
    s.z_start = 2;
    s.z_end = depth - 3;
    const double span = static_cast<double>(s.z_end - s.z_start);
    // Oblique axis; later attempts shrink the drift so larger shapes still fit.
    const double drift = rng.uniform(0.25, 0.55) * std::pow(0.97, attempt);
    const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (kind != Kind::ConstantTube) {
      s.drift_x = drift * std::cos(heading);
      s.drift_y = drift * std::sin(heading);
    }
    if (kind != Kind::Ellipsoid) {
      s.center_x -= s.drift_x * span / 2.0;
      s.center_y -= s.drift_y * span / 2.0;
    }
    switch (kind) {
      case Kind::Ellipsoid: {
        s.center_z = (D - 1.0) / 2.0 + rng.uniform(-1.0, 1.0);
        s.radius_x = rng.uniform(0.18, 0.28) * W;
        s.radius_y = rng.uniform(0.18, 0.28) * H;
        const double zmax = std::min(s.center_z - 2.0, D - 3.0 - s.center_z);
        s.radius_z = std::min(zmax, rng.uniform(0.28, 0.4) * D);
        break;
      }
      case Kind::ConstantTube:
        s.radius_x = s.radius_y = rng.uniform(0.15, 0.25) * minwh;
        break;
      case Kind::CappedCylinder:
        s.radius_x = s.radius_y = rng.uniform(0.15, 0.22) * minwh;
        s.cap_depth = s.z_start + static_cast<std::size_t>(std::lround(rng.uniform(0.4, 0.6) * span));
        s.cap_residual = rng.uniform(0.0, 0.1);
        s.cap_fade = rng.uniform(5.0, 7.0);
        break;
      case Kind::BranchingY:
        s.radius_x = s.radius_y = rng.uniform(0.19, 0.22) * minwh;
        s.branch_radius = rng.uniform(0.1, 0.12) * minwh;
        s.split_depth = s.z_start + static_cast<std::size_t>(std::lround(rng.uniform(0.35, 0.55) * span));
        s.branch_offset = s.branch_radius + 1.5 + rng.uniform(0.0, 0.5);
        s.branch_slope = rng.uniform(0.15, 0.3);
        s.branch_angle = rng.uniform(0.0, std::numbers::pi);
        break;
    }
    try {
      validate(s);
      return s;
    } catch (const PhantomSpecError&) {
    }
  }
  throw PhantomSpecError("could not draw a valid " + to_string(kind) + " spec for the requested dims");
}

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"height", s.height},
                     {"width", s.width},
                     {"depth", s.depth},
                     {"spacing", s.spacing},
                     {"fg", s.fg},
                     {"bg", s.bg},
                     {"noise_std", s.noise_std},
                     {"texture_amplitude", s.texture_amplitude},
                     {"seed", s.seed},
                     {"center_x", s.center_x},
                     {"center_y", s.center_y},
                     {"center_z", s.center_z},
                     {"radius_x", s.radius_x},
                     {"radius_y", s.radius_y},
                     {"radius_z", s.radius_z},
                     {"z_start", s.z_start},
                     {"z_end", s.z_end},
                     {"drift_x", s.drift_x},
                     {"drift_y", s.drift_y},
                     {"split_depth", s.split_depth},
                     {"branch_radius", s.branch_radius},
                     {"branch_offset", s.branch_offset},
                     {"branch_slope", s.branch_slope},
                     {"branch_angle", s.branch_angle},
                     {"cap_depth", s.cap_depth},
                     {"cap_residual", s.cap_residual},
                     {"cap_fade", s.cap_fade}};
}

inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
  s.kind = kind_from_string(j.at("kind").get<std::string>());
  j.at("height").get_to(s.height);
  j.at("width").get_to(s.width);
  j.at("depth").get_to(s.depth);
  j.at("spacing").get_to(s.spacing);
  j.at("fg").get_to(s.fg);
  j.at("bg").get_to(s.bg);
  j.at("noise_std").get_to(s.noise_std);
  j.at("texture_amplitude").get_to(s.texture_amplitude);
  j.at("seed").get_to(s.seed);
  j.at("center_x").get_to(s.center_x);
  j.at("center_y").get_to(s.center_y);
  j.at("center_z").get_to(s.center_z);
  j.at("radius_x").get_to(s.radius_x);
  j.at("radius_y").get_to(s.radius_y);
  j.at("radius_z").get_to(s.radius_z);
  j.at("z_start").get_to(s.z_start);
  j.at("z_end").get_to(s.z_end);
  j.at("drift_x").get_to(s.drift_x);
  j.at("drift_y").get_to(s.drift_y);
  j.at("split_depth").get_to(s.split_depth);
  j.at("branch_radius").get_to(s.branch_radius);
  j.at("branch_offset").get_to(s.branch_offset);
  j.at("branch_slope").get_to(s.branch_slope);
  j.at("branch_angle").get_to(s.branch_angle);
  j.at("cap_depth").get_to(s.cap_depth);
  j.at("cap_residual").get_to(s.cap_residual);
  j.at("cap_fade").get_to(s.cap_fade);
}

}  // namespace spuq::phantom
