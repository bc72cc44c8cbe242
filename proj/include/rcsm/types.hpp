#pragma once

#include <Eigen/Core>

namespace rcsm {

/// Dense single-channel raster. The first index runs along +x (width),
/// the second along +y (height), so `img(ix, iy)` is column-major with the
/// x axis contiguous.
using Image = Eigen::ArrayXXd;

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;

}  // namespace rcsm
