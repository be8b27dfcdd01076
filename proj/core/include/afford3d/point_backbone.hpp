#pragma once

#include <span>

#include "afford3d/geometry.hpp"
#include "afford3d/nn.hpp"
#include "afford3d/tensor.hpp"

namespace afford3d {

// Dense per-point embeddings from a compact neighborhood-pooling network:
// two blocks of {linear, gelu, kNN max-pool concatenated back}, then a
// linear head to the token width.
class PointBackbone {
  public:
    PointBackbone() = default;
    PointBackbone(std::int64_t d, int k, Rng& rng);

    Tensor extract(const PointCloud& cloud) const;
    // Cached-graph path; neighbors is the row-major N x k table from knn().
    Tensor extract(const Tensor& coords /*[N,3]*/,
                   std::span<const std::int32_t> neighbors) const;

    int neighborhood() const { return k_; }
    void collect(std::vector<Parameter*>& out);

  private:
    std::int64_t d_ = 0;
    int k_ = 16;
    Linear block1;  // 3 -> d
    Linear block2;  // 2d -> d
    Linear head;    // 2d -> d
};

Tensor coords_tensor(const PointCloud& cloud);

}  // namespace afford3d
