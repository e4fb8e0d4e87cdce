#pragma once

#include "softclu/pointcloud.hpp"

#include <cstdint>
#include <vector>

namespace softclu {

struct BlobCloud {
  PointCloud cloud;
  std::vector<int> membership;  // blob index per point, blobs stored contiguously
};

/// `blobs` balls of radius `radius` with pairwise center distance at least
/// `separation`, `points_per_blob` points drawn uniformly in each.
BlobCloud make_blob_cloud(int blobs, int points_per_blob, double radius, double separation, std::uint64_t seed);

/// Points drawn uniformly on the unit sphere.
PointCloud make_sphere_cloud(Index n, std::uint64_t seed);

/// Fraction of points whose cluster's majority class matches their class.
double purity(const std::vector<int>& clusters, const std::vector<int>& classes);

}  // namespace softclu
