#pragma once

#include "softclu/core.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace softclu {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct PointCloud {
  Points points;
  std::string name;

  Index size() const { return points.rows(); }
};

/// Per-point hard labels derived from a soft-label matrix: the argmax cluster
/// and its soft-label value.
struct LabeledCloud {
  PointCloud cloud;
  std::vector<int> labels;
  std::vector<double> confidences;
};

enum class CloudFormat { OFF, PLY_ASCII, XYZ };

using Rgb = std::array<std::uint8_t, 3>;

/// Format implied by a file extension (.off, .ply, .xyz/.txt/.pts).
/// Throws ParseError for anything else.
CloudFormat format_from_extension(const std::filesystem::path& path);

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_cloud(const std::filesystem::path& path);

/// Centers on the centroid and scales so the farthest point has unit norm.
/// A cloud whose points all coincide maps to the origin.
PointCloud normalize(const PointCloud& cloud);

/// Draws `target` points: without replacement when the cloud is large
/// enough, with replacement otherwise. Deterministic for a given seed.
PointCloud downsample_random(const PointCloud& cloud, Index target, std::uint64_t seed);

LabeledCloud label_cloud(const PointCloud& cloud, const MatrixXd& gamma);

void export_labeled_ply(const LabeledCloud& labeled, const std::filesystem::path& path,
                        const std::vector<Rgb>& palette);

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);

/// J well-separated colors, stable across runs.
std::vector<Rgb> default_palette(int clusters);

}  // namespace softclu
