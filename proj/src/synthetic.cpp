#include "softclu/synthetic.hpp"

#include <cmath>
#include <map>
#include <random>

namespace softclu {

BlobCloud make_blob_cloud(int blobs, int points_per_blob, double radius, double separation, std::uint64_t seed) {
  if (blobs < 1 || points_per_blob < 1) throw ConfigError("make_blob_cloud: counts must be positive");
  if (!(radius >= 0.0) || !(separation > 0.0)) throw ConfigError("make_blob_cloud: bad radius or separation");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  const double side = separation * std::max(1.0, std::ceil(std::cbrt(static_cast<double>(blobs)))) * 2.0;
  std::vector<Eigen::RowVector3d> centers;
  for (int attempt = 0; static_cast<int>(centers.size()) < blobs; ++attempt) {
    if (attempt > 100000) throw Error("make_blob_cloud: could not place blob centers");
    Eigen::RowVector3d c(unit(rng), unit(rng), unit(rng));
    c *= side / 2.0;
    bool ok = true;
    for (const auto& o : centers) ok = ok && (c - o).norm() >= separation;
    if (ok) centers.push_back(c);
  }

  BlobCloud out;
  out.cloud.name = "blobs";
  out.cloud.points.resize(static_cast<Index>(blobs) * points_per_blob, 3);
  Index row = 0;
  for (int b = 0; b < blobs; ++b) {
    for (int k = 0; k < points_per_blob; ++k) {
      Eigen::RowVector3d offset;
      do {
        offset = {unit(rng), unit(rng), unit(rng)};
      } while (offset.squaredNorm() > 1.0);
      out.cloud.points.row(row++) = centers[static_cast<std::size_t>(b)] + radius * offset;
      out.membership.push_back(b);
    }
  }
  return out;
}

PointCloud make_sphere_cloud(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud out;
  out.name = "sphere";
  out.points.resize(n, 3);
  for (Index i = 0; i < n; ++i) {
    Eigen::RowVector3d p;
    do {
      p = {g(rng), g(rng), g(rng)};
    } while (p.norm() < 1e-12);
    out.points.row(i) = p.normalized();
  }
  return out;
}

double purity(const std::vector<int>& clusters, const std::vector<int>& classes) {
  if (clusters.size() != classes.size() || clusters.empty()) throw ShapeError("purity: size mismatch");
  std::map<int, std::map<int, int>> table;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++table[clusters[i]][classes[i]];
  long majority = 0;
  for (const auto& [_, counts] : table) {
    int best = 0;
    for (const auto& [__, c] : counts) best = std::max(best, c);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(clusters.size());
}

}  // namespace softclu
