#include "afford3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "afford3d/errors.hpp"

namespace afford3d {

namespace {

void check_finite(const PointCloud& cloud, const char* op) {
    for (const auto& p : cloud.points)
        for (double c : p)
            if (!std::isfinite(c))
                throw InputError(std::string(op) + ": non-finite coordinate in cloud");
}

}  // namespace

PointCloud normalize(const PointCloud& cloud) {
    if (cloud.points.empty()) throw InputError("normalize: empty cloud");
    check_finite(cloud, "normalize");

    const double n = static_cast<double>(cloud.points.size());
    Vec3 centroid{0.0, 0.0, 0.0};
    for (const auto& p : cloud.points)
        for (int a = 0; a < 3; ++a) centroid[a] += p[a];
    for (int a = 0; a < 3; ++a) centroid[a] /= n;

    double extent = 0.0;
    for (const auto& p : cloud.points)
        for (int a = 0; a < 3; ++a) extent = std::max(extent, std::abs(p[a] - centroid[a]));

    // Snap: an already-normalized cloud has a residual centroid and scale
    // within rounding of (0, 1); treating those as exact makes normalize a
    // bitwise fixpoint.
    const double snap = 1e-12 * std::max(extent, 1.0);
    for (int a = 0; a < 3; ++a)
        if (std::abs(centroid[a]) <= snap) centroid[a] = 0.0;
    double scale = extent;
    for (const auto& p : cloud.points)
        for (int a = 0; a < 3; ++a) scale = std::max(scale, std::abs(p[a] - centroid[a]));
    if (scale <= 0.0) scale = 1.0;  // degenerate: all points coincide
    // snap only from below so no coordinate can leak past 1
    if (scale <= 1.0 && 1.0 - scale <= 1e-12) scale = 1.0;

    PointCloud out;
    out.points.resize(cloud.points.size());
    const double inv = 1.0 / scale;
    for (std::size_t i = 0; i < cloud.points.size(); ++i)
        for (int a = 0; a < 3; ++a)
            out.points[i][a] = (cloud.points[i][a] - centroid[a]) * inv;
    out.source_scale = cloud.source_scale * scale;
    return out;
}

VoxelIndexMap voxelize(const PointCloud& cloud, std::int32_t resolution) {
    if (cloud.points.empty()) throw InputError("voxelize: empty cloud");
    if (resolution < 1) throw InputError("voxelize: resolution must be positive");

    const double r = static_cast<double>(resolution);
    auto axis_index = [&](double x) -> std::int32_t {
        auto i = static_cast<std::int64_t>(std::floor((x + 1.0) * 0.5 * r));
        i = std::clamp<std::int64_t>(i, 0, resolution - 1);
        return static_cast<std::int32_t>(i);
    };

    const std::int64_t n = cloud.size();
    std::vector<std::array<std::int32_t, 3>> idx(static_cast<std::size_t>(n));
    for (std::int64_t p = 0; p < n; ++p) {
        for (int a = 0; a < 3; ++a) {
            const double x = cloud.points[static_cast<std::size_t>(p)][a];
            if (!(std::abs(x) <= 1.0 + 1e-9))
                throw InputError("voxelize: coordinate " + std::to_string(x) +
                                 " outside the normalized cube at point " + std::to_string(p));
            idx[static_cast<std::size_t>(p)][a] = axis_index(x);
        }
    }

    // map from voxel index to member points, keys already lexicographic
    std::map<std::array<std::int32_t, 3>, std::vector<std::int64_t>> cells;
    for (std::int64_t p = 0; p < n; ++p) cells[idx[static_cast<std::size_t>(p)]].push_back(p);

    VoxelIndexMap out;
    out.resolution = resolution;
    out.point_to_voxel.resize(static_cast<std::size_t>(n));
    out.occupied.reserve(cells.size());
    const double half_width = 1.0 / r;
    std::int32_t cell_id = 0;
    for (auto& [key, members] : cells) {
        VoxelCell cell;
        cell.index = key;
        cell.count = static_cast<std::int64_t>(members.size());
        const Vec3 center{2.0 * (key[0] + 0.5) / r - 1.0, 2.0 * (key[1] + 0.5) / r - 1.0,
                          2.0 * (key[2] + 0.5) / r - 1.0};
        // Sort member coordinates so the accumulation order (and thus the
        // floating-point sum) does not depend on the input point order.
        std::vector<Vec3> coords;
        coords.reserve(members.size());
        for (std::int64_t p : members) {
            coords.push_back(cloud.points[static_cast<std::size_t>(p)]);
            out.point_to_voxel[static_cast<std::size_t>(p)] = cell_id;
        }
        std::sort(coords.begin(), coords.end());
        Vec3 acc{0.0, 0.0, 0.0};
        for (const auto& c : coords)
            for (int a = 0; a < 3; ++a) acc[a] += (c[a] - center[a]) / half_width;
        for (int a = 0; a < 3; ++a) {
            cell.mean_offset[a] = acc[a] / static_cast<double>(members.size());
            cell.mean_offset[a] = std::clamp(cell.mean_offset[a], -1.0, 1.0);
        }
        out.occupied.push_back(cell);
        ++cell_id;
    }
    return out;
}

std::vector<std::int32_t> knn(const PointCloud& cloud, int k) {
    const std::int64_t n = cloud.size();
    if (k < 1 || k > n)
        throw InputError("knn: k=" + std::to_string(k) + " out of range for " +
                         std::to_string(n) + " points");

    std::vector<std::int32_t> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(k));
    std::vector<std::pair<double, std::int32_t>> dist(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const Vec3& pi = cloud.points[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < n; ++j) {
            const Vec3& pj = cloud.points[static_cast<std::size_t>(j)];
            const double dx = pi[0] - pj[0], dy = pi[1] - pj[1], dz = pi[2] - pj[2];
            dist[static_cast<std::size_t>(j)] = {dx * dx + dy * dy + dz * dz,
                                                 static_cast<std::int32_t>(j)};
        }
        // self has distance 0 and the lowest-index tie-break among duplicates
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i * k + j)] = dist[static_cast<std::size_t>(j)].second;
        // guarantee self-first even if a duplicate point shares distance 0
        if (out[static_cast<std::size_t>(i * k)] != i) {
            for (int j = 1; j < k; ++j) {
                if (out[static_cast<std::size_t>(i * k + j)] == i) {
                    std::swap(out[static_cast<std::size_t>(i * k)],
                              out[static_cast<std::size_t>(i * k + j)]);
                    break;
                }
            }
        }
    }
    return out;
}

LabeledCloud read_cloud_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open cloud file: " + path);
    LabeledCloud out;
    std::string line;
    std::int64_t line_no = 0;
    bool has_labels = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        Vec3 p;
        if (!(is >> p[0] >> p[1] >> p[2]))
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'x y z [label...]'");
        out.cloud.points.push_back(p);
        int label;
        if (is >> label) {
            has_labels = true;
            out.labels.push_back(label);
        } else if (has_labels) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": missing label column");
        }
    }
    if (out.cloud.points.empty()) throw ParseError(path + ": no points");
    if (has_labels && out.labels.size() != out.cloud.points.size())
        throw ParseError(path + ": label column present on only some lines");
    return out;
}

void write_cloud_file(const std::string& path, const PointCloud& cloud,
                      const std::vector<int>& labels) {
    if (!labels.empty() && labels.size() != cloud.points.size())
        throw InputError("write_cloud_file: label count does not match point count");
    std::ofstream outf(path);
    if (!outf) throw IoError("cannot write cloud file: " + path);
    char buf[128];
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const auto& p = cloud.points[i];
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", p[0], p[1], p[2]);
        outf << buf;
        if (!labels.empty()) outf << ' ' << labels[i];
        outf << '\n';
    }
    if (!outf) throw IoError("failed writing cloud file: " + path);
}

}  // namespace afford3d
