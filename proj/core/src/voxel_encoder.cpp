#include "afford3d/voxel_encoder.hpp"

#include <cmath>

#include "afford3d/errors.hpp"

namespace afford3d {

Tensor voxel_descriptors(const VoxelIndexMap& map, std::int64_t n_points, std::int64_t d_pos) {
    if (d_pos % 6 != 0) throw ConfigError("voxel descriptor: d_pos must be divisible by 6");
    if (map.occupied.empty()) throw InputError("voxel descriptor: empty occupied set");
    const std::int64_t m = static_cast<std::int64_t>(map.occupied.size());
    const std::int64_t width = 5 + d_pos;
    const std::int64_t freqs = d_pos / 6;
    std::vector<double> data(static_cast<std::size_t>(m * width));
    const double r = static_cast<double>(map.resolution);
    for (std::int64_t i = 0; i < m; ++i) {
        const VoxelCell& cell = map.occupied[static_cast<std::size_t>(i)];
        double* row = data.data() + i * width;
        row[0] = 1.0;
        row[1] = static_cast<double>(cell.count) / static_cast<double>(n_points);
        row[2] = cell.mean_offset[0];
        row[3] = cell.mean_offset[1];
        row[4] = cell.mean_offset[2];
        std::int64_t off = 5;
        for (int a = 0; a < 3; ++a) {
            const double c = 2.0 * (cell.index[static_cast<std::size_t>(a)] + 0.5) / r - 1.0;
            double freq = 3.14159265358979323846;
            for (std::int64_t f = 0; f < freqs; ++f) {
                row[off++] = std::sin(freq * c);
                row[off++] = std::cos(freq * c);
                freq *= 2.0;
            }
        }
    }
    return Tensor::from({m, width}, std::move(data));
}

VoxelEncoder::VoxelEncoder(const std::vector<int>& scales, std::int64_t d, std::int64_t d_pos,
                           Rng& rng)
    : scales_(scales), d_(d), d_pos_(d_pos) {
    if (scales.empty()) throw ConfigError("voxel encoder: empty scale list");
    if (d_pos % 6 != 0) throw ConfigError("voxel encoder: d_pos must be divisible by 6");
    proj_.reserve(scales.size());
    for (int s : scales_)
        proj_.emplace_back("voxel_encoder.s" + std::to_string(s) + ".proj", 5 + d_pos, d, rng);
}

VoxelFeatureSet VoxelEncoder::encode_scale(const VoxelIndexMap& map, const Tensor& descriptors,
                                           std::size_t scale_index) const {
    if (scale_index >= scales_.size())
        throw ConfigError("voxel encoder: scale index out of range");
    if (map.resolution != scales_[scale_index])
        throw ShapeError("voxel encoder: map resolution " + std::to_string(map.resolution) +
                         " does not match configured scale " +
                         std::to_string(scales_[scale_index]));
    VoxelFeatureSet out;
    out.scale = map.resolution;
    out.tokens = proj_[scale_index](descriptors);
    out.positions.reserve(map.occupied.size());
    for (std::size_t i = 0; i < map.occupied.size(); ++i) out.positions.push_back(map.center(i));
    return out;
}

std::vector<VoxelFeatureSet> VoxelEncoder::encode_pyramid(const PointCloud& cloud) const {
    std::vector<VoxelFeatureSet> out;
    out.reserve(scales_.size());
    for (std::size_t si = 0; si < scales_.size(); ++si) {
        const VoxelIndexMap map = voxelize(cloud, scales_[si]);
        out.push_back(encode_scale(map, voxel_descriptors(map, cloud.size(), d_pos_), si));
    }
    return out;
}

void VoxelEncoder::collect(std::vector<Parameter*>& out) {
    for (auto& p : proj_) p.collect(out);
}

}  // namespace afford3d
