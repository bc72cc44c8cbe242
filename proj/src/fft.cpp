#include "rcsm/detail/fft.hpp"

#include <algorithm>
#include <complex>
#include <map>
#include <mutex>
#include <utility>

#include <fftw3.h>

namespace rcsm::detail {

struct RealFft2d::Plans {
  fftw_plan forward{nullptr};
  fftw_plan inverse{nullptr};
  // Cached plans live until process exit.
  ~Plans() {
    if (forward) fftw_destroy_plan(forward);
    if (inverse) fftw_destroy_plan(inverse);
  }
};

RealFft2d::RealFft2d(int n0, int n1) : n0_(n0), n1_(n1) {
  // FFTW's planner is not thread-safe; plan execution is.
  static std::mutex cache_mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const Plans>> cache;
  std::lock_guard lock(cache_mutex);
  if (auto it = cache.find({n0, n1}); it != cache.end()) {
    plans_ = it->second;
    return;
  }
  auto p = std::make_shared<Plans>();
  // Eigen is column-major: an (n0, n1) array is an FFTW row-major (n1, n0) array.
  Eigen::ArrayXXd real(n0, n1);
  Spectrum cplx(n0 / 2 + 1, n1);
  auto* c = reinterpret_cast<fftw_complex*>(cplx.data());
  p->forward = fftw_plan_dft_r2c_2d(n1, n0, real.data(), c, FFTW_ESTIMATE | FFTW_UNALIGNED);
  p->inverse = fftw_plan_dft_c2r_2d(n1, n0, c, real.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans_ = p;
  cache.emplace(std::make_pair(n0, n1), std::move(p));
}

Spectrum RealFft2d::forward(const Eigen::ArrayXXd& in) const {
  Eigen::ArrayXXd padded = Eigen::ArrayXXd::Zero(n0_, n1_);
  padded.topLeftCorner(in.rows(), in.cols()) = in;
  Spectrum out(n0_ / 2 + 1, n1_);
  fftw_execute_dft_r2c(plans_->forward, padded.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

Eigen::ArrayXXd RealFft2d::inverse(const Spectrum& spectrum) const {
  Spectrum scratch = spectrum;  // c2r overwrites its input
  Eigen::ArrayXXd out(n0_, n1_);
  fftw_execute_dft_c2r(plans_->inverse, reinterpret_cast<fftw_complex*>(scratch.data()), out.data());
  return out;
}

int fft_friendly_size(int n) {
  for (int m = std::max(n, 1);; ++m) {
    int r = m;
    for (int p : {2, 3, 5}) {
      while (r % p == 0) r /= p;
    }
    if (r == 1) return m;
  }
}

}  // namespace rcsm::detail
