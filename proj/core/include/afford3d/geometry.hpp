#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace afford3d {

using Vec3 = std::array<double, 3>;

// N x 3 coordinates. Normalized clouds live in the [-1,1] cube with the
// centroid at the origin; source_scale accumulates the divisor applied by
// normalize() so the original extent stays recoverable.
struct PointCloud {
    std::vector<Vec3> points;
    double source_scale = 1.0;

    std::int64_t size() const { return static_cast<std::int64_t>(points.size()); }
};

struct VoxelCell {
    std::array<std::int32_t, 3> index{};  // (i,j,k), each in [0, R-1]
    std::int64_t count = 0;
    Vec3 mean_offset{};  // mean of (point - center) / half_width, per axis in [-1,1]
};

struct VoxelIndexMap {
    std::int32_t resolution = 0;
    std::vector<std::int32_t> point_to_voxel;  // N entries, index into occupied
    std::vector<VoxelCell> occupied;           // sorted lexicographically by index

    Vec3 center(std::size_t cell) const {
        const double r = static_cast<double>(resolution);
        const auto& ix = occupied[cell].index;
        return {2.0 * (ix[0] + 0.5) / r - 1.0, 2.0 * (ix[1] + 0.5) / r - 1.0,
                2.0 * (ix[2] + 0.5) / r - 1.0};
    }
};

// Centroid to origin, uniform scale so max|coord| == 1. Degenerate clouds
// (single point, or all points coincident) map to the origin with scale 1.
// Idempotent: tiny residual centroids and unit scales are snapped so a second
// application is a bitwise no-op.
PointCloud normalize(const PointCloud& cloud);

// index per axis = floor((x+1)/2 * R), clamped to [0, R-1]. Requires a
// normalized cloud (|coord| <= 1 + 1e-9). Per-voxel statistics are
// accumulated over coordinate-sorted points so they are bitwise invariant
// under input permutation.
VoxelIndexMap voxelize(const PointCloud& cloud, std::int32_t resolution);

// Exact brute-force k nearest neighbors by Euclidean distance; each point's
// first neighbor is itself, ties broken by lower index. Row i holds point
// i's neighbors.
std::vector<std::int32_t> knn(const PointCloud& cloud, int k);

// Text cloud file: one "x y z [label...]" line per point, '#' comments
// allowed. Labels beyond the first column are ignored on read.
struct LabeledCloud {
    PointCloud cloud;
    std::vector<int> labels;  // empty when the file has no label column
};

LabeledCloud read_cloud_file(const std::string& path);
void write_cloud_file(const std::string& path, const PointCloud& cloud,
                      const std::vector<int>& labels);

}  // namespace afford3d
