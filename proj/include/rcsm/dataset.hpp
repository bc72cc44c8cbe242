#pragma once

#include <optional>
#include <vector>

#include "rcsm/geometry.hpp"

namespace rcsm {

/// One training example (Z_t, Z_{t-1}, x): z1 is the newer scan, z2 the
/// older one, and pose_gt is the pose of z1's frame in z2's frame.
struct TrainingSample {
  CartesianScan z1;
  CartesianScan z2;
  Pose pose_gt;
  /// Native polar scans, needed only by polar-frame networks.
  std::optional<PolarScan> p1;
  std::optional<PolarScan> p2;
  /// Static-structure labels on the z1/z2 rasters (empty when unlabelled).
  Image label1;
  Image label2;

  bool has_labels() const { return label1.size() > 0 && label2.size() > 0; }
};

using Dataset = std::vector<TrainingSample>;

}  // namespace rcsm
