#pragma once

#include <Eigen/Core>

namespace rcsm {

/// Dense (nx, ny, ntheta) array laid out as ntheta contiguous nx-by-ny
/// column-major slices, so every theta slice is an Eigen map.
class Volume {
 public:
  Volume() = default;
  Volume(int nx, int ny, int ntheta, double fill = 0.0)
      : nx_(nx), ny_(ny), nt_(ntheta), data_(Eigen::ArrayXd::Constant(Eigen::Index(nx) * ny * ntheta, fill)) {}

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int ntheta() const { return nt_; }
  Eigen::Index size() const { return data_.size(); }

  double& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }

  Eigen::Map<Eigen::ArrayXXd> slice(int k) { return {data_.data() + slice_offset(k), nx_, ny_}; }
  Eigen::Map<const Eigen::ArrayXXd> slice(int k) const { return {data_.data() + slice_offset(k), nx_, ny_}; }

  Eigen::ArrayXd& values() { return data_; }
  const Eigen::ArrayXd& values() const { return data_; }

  bool same_shape(const Volume& o) const { return nx_ == o.nx_ && ny_ == o.ny_ && nt_ == o.nt_; }

 private:
  Eigen::Index index(int i, int j, int k) const { return i + Eigen::Index(nx_) * (j + Eigen::Index(ny_) * k); }
  Eigen::Index slice_offset(int k) const { return Eigen::Index(nx_) * ny_ * k; }

  int nx_{0};
  int ny_{0};
  int nt_{0};
  Eigen::ArrayXd data_;
};

}  // namespace rcsm
