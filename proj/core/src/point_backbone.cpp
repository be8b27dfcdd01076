#include "afford3d/point_backbone.hpp"

#include "afford3d/errors.hpp"

namespace afford3d {

Tensor coords_tensor(const PointCloud& cloud) {
    std::vector<double> data;
    data.reserve(cloud.points.size() * 3);
    for (const auto& p : cloud.points) {
        data.push_back(p[0]);
        data.push_back(p[1]);
        data.push_back(p[2]);
    }
    return Tensor::from({cloud.size(), 3}, std::move(data));
}

PointBackbone::PointBackbone(std::int64_t d, int k, Rng& rng) : d_(d), k_(k) {
    block1 = Linear("backbone.block1", 3, d, rng);
    block2 = Linear("backbone.block2", 2 * d, d, rng);
    head = Linear("backbone.head", 2 * d, d, rng);
}

Tensor PointBackbone::extract(const PointCloud& cloud) const {
    if (cloud.size() < k_)
        throw InputError("backbone: cloud has " + std::to_string(cloud.size()) +
                         " points, neighborhood needs " + std::to_string(k_));
    const auto neighbors = knn(cloud, k_);
    return extract(coords_tensor(cloud), neighbors);
}

Tensor PointBackbone::extract(const Tensor& coords, std::span<const std::int32_t> neighbors) const {
    const std::int64_t n = coords.dim(0);
    if (static_cast<std::int64_t>(neighbors.size()) != n * k_)
        throw InputError("backbone: neighbor table size " + std::to_string(neighbors.size()) +
                         " for " + std::to_string(n) + " points, k=" + std::to_string(k_));
    const Tensor h1 = gelu(block1(coords));
    const Tensor c1 = concat_cols(h1, knn_max_pool(h1, neighbors, k_));
    const Tensor h2 = gelu(block2(c1));
    const Tensor c2 = concat_cols(h2, knn_max_pool(h2, neighbors, k_));
    return head(c2);
}

void PointBackbone::collect(std::vector<Parameter*>& out) {
    block1.collect(out);
    block2.collect(out);
    head.collect(out);
}

}  // namespace afford3d
