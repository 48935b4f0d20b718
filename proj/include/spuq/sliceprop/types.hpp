#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/volume.hpp"

namespace spuq::prop {

enum class PropagatorKind { Affinity, Flow };

inline std::string to_string(PropagatorKind k) { return k == PropagatorKind::Affinity ? "affinity" : "flow"; }

inline PropagatorKind propagator_from_string(const std::string& s) {
  if (s == "affinity") return PropagatorKind::Affinity;
  if (s == "flow") return PropagatorKind::Flow;
  throw std::invalid_argument("unknown propagator kind '" + s + "'");
}

// 0-based slice index with its binary mask.
struct SliceAnnotation {
  std::size_t slice_index = 0;
  Image2D mask;
};

struct SliceStep {
  std::size_t slice = 0;
  std::size_t distance = 0;
  double distance_mm = 0.0;
  bool corrected = false;  // verification suppressed pixels on this step
};

struct PropagationRecord {
  std::size_t annotated_slice = 0;
  std::vector<SliceStep> slices;  // indexed by slice
};

struct PropagationResult {
  SoftVolume soft;
  MaskVolume mask;
  PropagationRecord record;
};

inline SliceAnnotation select_annotated_slice(const MaskVolume& gt) {
  std::size_t best = 0, best_area = 0;
  for (std::size_t z = 0; z < gt.depth(); ++z) {
    const std::size_t a = count_foreground(gt.slice(z));
    if (a > best_area) {
      best_area = a;
      best = z;
    }
  }
  if (best_area == 0) throw std::invalid_argument("select_annotated_slice: ground truth is empty");
  return {best, slice_image(gt, best)};
}

inline void validate_annotation(const Volume3D& v, const SliceAnnotation& ann) {
  if (ann.slice_index >= v.depth()) throw std::invalid_argument("annotation slice index outside the volume");
  if (ann.mask.height != v.height() || ann.mask.width != v.width()) {
    throw std::invalid_argument("annotation mask shape does not match the volume slices");
  }
}

inline PropagationRecord make_record(const Volume3D& v, std::size_t annotated) {
  PropagationRecord r;
  r.annotated_slice = annotated;
  for (std::size_t z = 0; z < v.depth(); ++z) {
    const std::size_t d = z > annotated ? z - annotated : annotated - z;
    r.slices.push_back({z, d, static_cast<double>(d) * v.spacing()[2], false});
  }
  return r;
}

}  // namespace spuq::prop
