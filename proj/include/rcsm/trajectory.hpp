#pragma once

#include <span>
#include <vector>

#include "rcsm/geometry.hpp"

namespace rcsm {

/// Frame-to-frame motion estimates. rel[i] is the pose of frame i+1 in frame
/// i and is stamped with times[i], the time of frame i+1.
struct Trajectory {
  std::vector<double> times;
  std::vector<Pose> rel;
  std::vector<Matrix3> covariances;  ///< empty, or one per relative pose

  std::size_t size() const { return rel.size(); }
  /// Throws DataError unless times are strictly increasing and sizes agree.
  void validate() const;
};

/// Absolute poses by left-folding compose from the origin; n relative poses
/// give n + 1 absolute poses, the first being the identity.
std::vector<Pose> integrate(std::span<const Pose> rel);

/// Inverse of integrate: rel[i] = inverse(abs[i]) * abs[i + 1].
std::vector<Pose> relative_poses(std::span<const Pose> abs);

}  // namespace rcsm
