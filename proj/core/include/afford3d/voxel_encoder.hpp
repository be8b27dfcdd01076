#pragma once

#include <vector>

#include "afford3d/geometry.hpp"
#include "afford3d/nn.hpp"
#include "afford3d/tensor.hpp"

namespace afford3d {

// Per-scale voxel features over the occupied cells only. Positions are exact
// voxel centers in [-1,1].
struct VoxelFeatureSet {
    std::int32_t scale = 0;
    Tensor tokens;  // [M, d]
    std::vector<Vec3> positions;
    std::int64_t occupied_count() const { return static_cast<std::int64_t>(positions.size()); }
};

// Raw per-voxel descriptor: (occupancy=1, count/N, mean offset xyz) plus a
// sinusoidal encoding of the voxel center. Constant given the cloud; the
// learnable part is the per-scale projection below.
Tensor voxel_descriptors(const VoxelIndexMap& map, std::int64_t n_points, std::int64_t d_pos);

// Learnable multi-scale feature pyramid over occupancy grids. Stands in for
// a frozen pre-trained volumetric encoder: a transparent geometric
// descriptor followed by a per-scale linear projection to the token width.
class VoxelEncoder {
  public:
    VoxelEncoder() = default;
    VoxelEncoder(const std::vector<int>& scales, std::int64_t d, std::int64_t d_pos, Rng& rng);

    // Convenience path: voxelizes at every scale.
    std::vector<VoxelFeatureSet> encode_pyramid(const PointCloud& cloud) const;

    // Cached path: caller provides the index maps and precomputed
    // descriptors (see voxel_descriptors).
    VoxelFeatureSet encode_scale(const VoxelIndexMap& map, const Tensor& descriptors,
                                 std::size_t scale_index) const;

    const std::vector<int>& scales() const { return scales_; }
    std::int64_t descriptor_width() const { return 5 + d_pos_; }
    void collect(std::vector<Parameter*>& out);

  private:
    std::vector<int> scales_;
    std::int64_t d_ = 0;
    std::int64_t d_pos_ = 0;
    std::vector<Linear> proj_;
};

}  // namespace afford3d
