#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <cstring>
#include <map>
#include <set>

#include "afford3d/errors.hpp"
#include "afford3d/geometry.hpp"
#include "afford3d/rng.hpp"

using namespace afford3d;

namespace {

PointCloud random_cloud(Rng& rng, std::int64_t n, double lo = -4.0, double hi = 4.0) {
    PointCloud c;
    c.points.resize(static_cast<std::size_t>(n));
    for (auto& p : c.points)
        for (int a = 0; a < 3; ++a) p[a] = rng.uniform(lo, hi);
    return c;
}

}  // namespace

TEST_CASE("normalize: two-point symmetry and degenerate single point") {
    PointCloud c;
    c.points = {{2, 2, 2}, {4, 4, 4}};
    const PointCloud n = normalize(c);
    for (int a = 0; a < 3; ++a) {
        CHECK(n.points[0][a] == -1.0);
        CHECK(n.points[1][a] == 1.0);
    }

    PointCloud single;
    single.points = {{5, 5, 5}};
    const PointCloud ns = normalize(single);
    for (int a = 0; a < 3; ++a) CHECK(ns.points[0][a] == 0.0);
    CHECK(ns.source_scale == 1.0);

    CHECK_THROWS_AS(normalize(PointCloud{}), InputError);
}

TEST_CASE("normalize: random cloud centroid and extent, idempotence") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const PointCloud raw = random_cloud(rng, 100);
        const PointCloud n = normalize(raw);
        double max_abs = 0.0;
        Vec3 centroid{0, 0, 0};
        for (const auto& p : n.points)
            for (int a = 0; a < 3; ++a) {
                max_abs = std::max(max_abs, std::abs(p[a]));
                centroid[a] += p[a];
            }
        for (int a = 0; a < 3; ++a) CHECK(std::abs(centroid[a] / 100.0) < 1e-12);
        CHECK(std::abs(max_abs - 1.0) < 1e-12);

        const PointCloud again = normalize(n);
        REQUIRE(again.points.size() == n.points.size());
        for (std::size_t i = 0; i < n.points.size(); ++i)
            for (int a = 0; a < 3; ++a) {
                // bitwise
                CHECK(std::memcmp(&again.points[i][a], &n.points[i][a], sizeof(double)) == 0);
            }
        CHECK(again.source_scale == n.source_scale);
    }
}

TEST_CASE("voxelize: corners, clamping, errors") {
    PointCloud c;
    c.points = {{-1, -1, -1}, {1, 1, 1}};
    const VoxelIndexMap map = voxelize(c, 16);
    REQUIRE(map.occupied.size() == 2);
    CHECK(map.occupied[0].index == std::array<std::int32_t, 3>{0, 0, 0});
    CHECK(map.occupied[1].index == std::array<std::int32_t, 3>{15, 15, 15});

    PointCloud bad;
    bad.points = {{1.5, 0, 0}};
    CHECK_THROWS_AS(voxelize(bad, 16), InputError);
}

TEST_CASE("voxelize: occupancy matches brute-force floor oracle") {
    Rng rng(43);
    const PointCloud raw = normalize(random_cloud(rng, 200));
    const VoxelIndexMap map = voxelize(raw, 32);

    std::map<std::array<std::int32_t, 3>, std::int64_t> oracle_counts;
    for (const auto& p : raw.points) {
        std::array<std::int32_t, 3> idx;
        for (int a = 0; a < 3; ++a) {
            double v = std::floor((p[a] + 1.0) / 2.0 * 32.0);
            v = std::min(std::max(v, 0.0), 31.0);
            idx[static_cast<std::size_t>(a)] = static_cast<std::int32_t>(v);
        }
        oracle_counts[idx]++;
    }
    REQUIRE(map.occupied.size() == oracle_counts.size());
    std::int64_t total = 0;
    for (const auto& cell : map.occupied) {
        CHECK(oracle_counts.at(cell.index) == cell.count);
        total += cell.count;
        for (int a = 0; a < 3; ++a) {
            CHECK(cell.mean_offset[a] >= -1.0);
            CHECK(cell.mean_offset[a] <= 1.0);
        }
    }
    CHECK(total == raw.size());
    CHECK(std::is_sorted(map.occupied.begin(), map.occupied.end(),
                         [](const VoxelCell& a, const VoxelCell& b) { return a.index < b.index; }));
}

TEST_CASE("voxelize: permutation covariance, bitwise") {
    Rng rng(47);
    const PointCloud raw = normalize(random_cloud(rng, 120));
    PointCloud permuted = raw;
    std::vector<std::size_t> perm(raw.points.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t i = 0; i < perm.size(); ++i) permuted.points[i] = raw.points[perm[i]];

    const VoxelIndexMap a = voxelize(raw, 16);
    const VoxelIndexMap b = voxelize(permuted, 16);
    REQUIRE(a.occupied.size() == b.occupied.size());
    for (std::size_t i = 0; i < a.occupied.size(); ++i) {
        CHECK(a.occupied[i].index == b.occupied[i].index);
        CHECK(a.occupied[i].count == b.occupied[i].count);
        for (int ax = 0; ax < 3; ++ax)
            CHECK(std::memcmp(&a.occupied[i].mean_offset[ax], &b.occupied[i].mean_offset[ax],
                              sizeof(double)) == 0);
    }
    // point_to_voxel permutes identically
    for (std::size_t i = 0; i < perm.size(); ++i)
        CHECK(b.point_to_voxel[i] == a.point_to_voxel[perm[i]]);
}

TEST_CASE("voxelize: nested resolutions stay aligned") {
    Rng rng(53);
    const PointCloud raw = normalize(random_cloud(rng, 300));
    const VoxelIndexMap coarse = voxelize(raw, 16);
    const VoxelIndexMap mid = voxelize(raw, 32);
    const VoxelIndexMap fine = voxelize(raw, 64);
    CHECK(coarse.occupied.size() <= mid.occupied.size());
    CHECK(mid.occupied.size() <= fine.occupied.size());

    std::set<std::array<std::int32_t, 3>> coarse_set;
    for (const auto& cell : coarse.occupied) coarse_set.insert(cell.index);
    for (const auto& cell : mid.occupied) {
        const std::array<std::int32_t, 3> parent{cell.index[0] / 2, cell.index[1] / 2,
                                                 cell.index[2] / 2};
        CHECK(coarse_set.count(parent) == 1);
    }
}

TEST_CASE("knn: collinear, exhaustive, brute-force oracle") {
    PointCloud line;
    line.points = {{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
    const auto nn = knn(line, 2);
    CHECK(nn[2] == 1);  // middle point: itself first
    CHECK(nn[3] == 0);  // then the nearer endpoint

    const auto all = knn(line, 3);
    for (int i = 0; i < 3; ++i) {
        std::set<std::int32_t> row(all.begin() + i * 3, all.begin() + (i + 1) * 3);
        CHECK(row == std::set<std::int32_t>{0, 1, 2});
        CHECK(all[static_cast<std::size_t>(i * 3)] == i);
    }

    CHECK_THROWS_AS(knn(line, 4), InputError);

    Rng rng(59);
    const PointCloud cloud = random_cloud(rng, 50);
    const auto got = knn(cloud, 5);
    for (std::int64_t i = 0; i < 50; ++i) {
        std::vector<std::pair<double, std::int32_t>> dist;
        for (std::int64_t j = 0; j < 50; ++j) {
            double d2 = 0;
            for (int a = 0; a < 3; ++a) {
                const double dd = cloud.points[size_t(i)][a] - cloud.points[size_t(j)][a];
                d2 += dd * dd;
            }
            dist.push_back({d2, static_cast<std::int32_t>(j)});
        }
        std::sort(dist.begin(), dist.end());
        for (int j = 0; j < 5; ++j) CHECK(got[size_t(i * 5 + j)] == dist[size_t(j)].second);
    }
}

TEST_CASE("cloud file round trip with labels") {
    Rng rng(61);
    const PointCloud cloud = normalize(random_cloud(rng, 30));
    std::vector<int> labels(30);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));

    const auto dir = std::filesystem::temp_directory_path() / "afford3d_geom_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "cloud.xyz").string();
    write_cloud_file(path, cloud, labels);
    const LabeledCloud back = read_cloud_file(path);
    REQUIRE(back.cloud.points.size() == cloud.points.size());
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        for (int a = 0; a < 3; ++a) CHECK(back.cloud.points[i][a] == cloud.points[i][a]);
        CHECK(back.labels[i] == labels[i]);
    }
    CHECK_THROWS_AS(read_cloud_file((dir / "missing.xyz").string()), IoError);
}
