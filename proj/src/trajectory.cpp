#include "rcsm/trajectory.hpp"

#include "rcsm/errors.hpp"

namespace rcsm {

void Trajectory::validate() const {
  if (times.size() != rel.size()) throw DataError("trajectory: times and poses differ in length");
  if (!covariances.empty() && covariances.size() != rel.size()) {
    throw DataError("trajectory: covariance count does not match pose count");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw DataError("trajectory: timestamps must be strictly increasing");
  }
}

std::vector<Pose> integrate(std::span<const Pose> rel) {
  std::vector<Pose> abs;
  abs.reserve(rel.size() + 1);
  abs.push_back(Pose::identity());
  for (const Pose& p : rel) abs.push_back(compose(abs.back(), p));
  return abs;
}

std::vector<Pose> relative_poses(std::span<const Pose> abs) {
  std::vector<Pose> rel;
  for (std::size_t i = 1; i < abs.size(); ++i) rel.push_back(compose(inverse(abs[i - 1]), abs[i]));
  return rel;
}

}  // namespace rcsm
