#pragma once

#include <memory>

#include <Eigen/Core>

namespace rcsm::detail {

using Spectrum = Eigen::ArrayXXcd;

/// Real 2-D FFT over an (n0, n1) column-major array. The half spectrum is
/// stored as an (n0/2 + 1, n1) array. Plans are cached process-wide and are
/// safe to share between threads.
class RealFft2d {
 public:
  RealFft2d(int n0, int n1);

  int n0() const { return n0_; }
  int n1() const { return n1_; }

  /// Zero-pads `in` into the top-left corner and transforms it.
  Spectrum forward(const Eigen::ArrayXXd& in) const;
  /// Unnormalised inverse: forward followed by inverse scales by n0 * n1.
  Eigen::ArrayXXd inverse(const Spectrum& spectrum) const;

 private:
  struct Plans;
  int n0_;
  int n1_;
  std::shared_ptr<const Plans> plans_;
};

/// Smallest n' >= n whose only prime factors are 2, 3 and 5.
int fft_friendly_size(int n);

}  // namespace rcsm::detail
