#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "afford3d/errors.hpp"
#include "afford3d/rng.hpp"
#include "afford3d/voxel_encoder.hpp"

using namespace afford3d;

namespace {

PointCloud random_normalized(Rng& rng, std::int64_t n) {
    PointCloud c;
    c.points.resize(static_cast<std::size_t>(n));
    for (auto& p : c.points)
        for (int a = 0; a < 3; ++a) p[a] = rng.uniform(-0.999, 0.999);
    return normalize(c);
}

}  // namespace

TEST_CASE("encode_pyramid: single point at origin") {
    Rng rng(3);
    VoxelEncoder enc({16, 32, 64}, 32, 24, rng);
    PointCloud c;
    c.points = {{0.0, 0.0, 0.0}};
    const auto pyramid = enc.encode_pyramid(c);
    REQUIRE(pyramid.size() == 3);
    for (const auto& level : pyramid) {
        CHECK(level.occupied_count() == 1);
        CHECK(level.tokens.dim(0) == 1);
        CHECK(level.tokens.dim(1) == 32);
        // position is the exact center of the containing voxel
        const double r = static_cast<double>(level.scale);
        const double expected = 2.0 * (std::floor(0.5 * r) + 0.5) / r - 1.0;
        for (int a = 0; a < 3; ++a) CHECK(level.positions[0][a] == expected);
    }
}

TEST_CASE("encode_pyramid: permutation of points is bit-invariant") {
    Rng rng(5);
    VoxelEncoder enc({16, 32, 64}, 16, 24, rng);
    const PointCloud cloud = random_normalized(rng, 150);
    PointCloud permuted = cloud;
    for (std::size_t i = permuted.points.size(); i > 1; --i)
        std::swap(permuted.points[i - 1], permuted.points[rng.below(i)]);

    const auto a = enc.encode_pyramid(cloud);
    const auto b = enc.encode_pyramid(permuted);
    for (std::size_t s = 0; s < a.size(); ++s) {
        CHECK(a[s].tokens.same_values(b[s].tokens));
        CHECK(a[s].positions == b[s].positions);
    }
}

TEST_CASE("encode_pyramid: occupied counts match brute force, monotone") {
    Rng rng(7);
    VoxelEncoder enc({16, 32, 64}, 16, 24, rng);
    for (int trial = 0; trial < 10; ++trial) {
        const PointCloud cloud = random_normalized(rng, 200);
        const auto pyramid = enc.encode_pyramid(cloud);
        std::int64_t prev = 0;
        for (std::size_t s = 0; s < pyramid.size(); ++s) {
            const int r = pyramid[s].scale;
            std::set<std::array<int, 3>> oracle;
            for (const auto& p : cloud.points) {
                std::array<int, 3> idx;
                for (int a = 0; a < 3; ++a) {
                    double v = std::floor((p[a] + 1.0) / 2.0 * r);
                    idx[size_t(a)] = static_cast<int>(std::min(std::max(v, 0.0), double(r - 1)));
                }
                oracle.insert(idx);
            }
            CHECK(pyramid[s].occupied_count() == static_cast<std::int64_t>(oracle.size()));
            CHECK(pyramid[s].occupied_count() >= prev);
            prev = pyramid[s].occupied_count();
        }
    }
}

TEST_CASE("feature locality: a voxel's feature ignores outside points") {
    Rng rng(11);
    VoxelEncoder enc({16}, 16, 24, rng);
    PointCloud cloud;
    // two far-apart clusters; both land in distinct voxels
    for (int i = 0; i < 20; ++i)
        cloud.points.push_back({-0.9 + 0.01 * rng.uniform(), -0.9, -0.9});
    for (int i = 0; i < 20; ++i)
        cloud.points.push_back({0.9 + 0.01 * rng.uniform(), 0.9, 0.9});

    const auto before = enc.encode_pyramid(cloud);
    // perturb only the second cluster, within its voxel
    PointCloud moved = cloud;
    for (int i = 20; i < 40; ++i) moved.points[size_t(i)][1] += 0.01;
    const auto after = enc.encode_pyramid(moved);

    REQUIRE(before[0].occupied_count() == after[0].occupied_count());
    // first occupied voxel (the low corner cluster) is untouched bitwise
    const std::int64_t d = before[0].tokens.dim(1);
    for (std::int64_t c = 0; c < d; ++c) CHECK(before[0].tokens.at(c) == after[0].tokens.at(c));
    // the perturbed voxel's feature moved
    bool changed = false;
    for (std::int64_t c = 0; c < d; ++c)
        changed = changed || before[0].tokens.at(d + c) != after[0].tokens.at(d + c);
    CHECK(changed);
}

TEST_CASE("frozen encoder is a pure function of the cloud") {
    Rng rng(13);
    VoxelEncoder enc({16, 32}, 16, 24, rng);
    const PointCloud cloud = random_normalized(rng, 64);
    const auto a = enc.encode_pyramid(cloud);
    const auto b = enc.encode_pyramid(cloud);
    for (std::size_t s = 0; s < a.size(); ++s) CHECK(a[s].tokens.same_values(b[s].tokens));
}

TEST_CASE("descriptor shape and config validation") {
    Rng rng(17);
    CHECK_THROWS_AS(VoxelEncoder({16}, 8, 20, rng), ConfigError);  // 20 % 6 != 0
    VoxelEncoder enc({16}, 8, 24, rng);
    PointCloud c;
    c.points = {{0.25, -0.25, 0.5}};
    const auto map = voxelize(normalize(c), 16);
    const Tensor desc = voxel_descriptors(map, 1, 24);
    CHECK(desc.dim(0) == 1);
    CHECK(desc.dim(1) == 29);
    CHECK(desc.at(0) == 1.0);  // occupancy flag
    CHECK(desc.at(1) == 1.0);  // count / N
}
