#pragma once

#include "rcsm/geometry.hpp"
#include "rcsm/volume.hpp"

namespace rcsm {

/// Correlation scores over a pose grid: scores(i, j, k) rates the candidate
/// grid.pose(i, j, k) as the pose of the first scan's frame in the second's.
struct CorrelationVolume {
  PoseGrid grid;
  Volume scores;
};

/// Dense correlation volume via zero-padded 2-D FFTs, one per theta slice.
///
/// Both scans are first resampled to the grid's translational resolution.
/// Slice k correlates rotate(s1, thetas[k]) against s2; each (x, y) candidate
/// reads the correlation surface at offset (x, y) / metres-per-pixel, with
/// bilinear interpolation between integer shifts when the offset is
/// fractional. Padding removes circular wrap-around.
///
/// Throws ShapeError if the scans disagree in shape or scale, ConfigError
/// if the grid's translation extent exceeds the scans' half-extent.
CorrelationVolume correlate_fft(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2);

/// Spatial-domain reference: direct summation of warp(s1; pose) * s2 for
/// every grid pose, using the same resampling and shift-interpolation rules
/// as correlate_fft. O(|grid| * W * H); intended for small inputs.
CorrelationVolume correlate_bruteforce(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2);

struct CorrelationGradients {
  Image s1;
  Image s2;
};

/// Reverse-mode pass of correlate_fft: given dL/dC, returns dL/ds1 and
/// dL/ds2 on the scans' original rasters.
CorrelationGradients correlate_backward(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2,
                                        const Volume& upstream);

}  // namespace rcsm
