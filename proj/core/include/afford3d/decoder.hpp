#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afford3d/nn.hpp"
#include "afford3d/tensor.hpp"

namespace afford3d {

using Mask = std::vector<std::uint8_t>;

// Per-point prediction for one query. confidence is the mean probability
// over predicted-positive points (0 when the binary mask is empty); it
// drives the average-precision ranking.
struct AffordanceMask {
    std::vector<double> probabilities;
    Mask binary;  // probabilities[i] >= 0.5
    std::string query_text;
    double confidence = 0.0;

    std::int64_t size() const { return static_cast<std::int64_t>(probabilities.size()); }
};

AffordanceMask make_mask(const std::vector<double>& probabilities, const std::string& query_text,
                         double threshold = 0.5);

// Mask files: one probability per line plus a JSON sidecar (threshold,
// confidence, query) at <path>.json.
void write_mask_files(const std::string& path, const AffordanceMask& mask,
                      double threshold = 0.5);
AffordanceMask read_mask_file(const std::string& path, const std::string& query_text);

// Small two-way transformer: the prompt attends to points and points attend
// back, alternating over L layers, then a scaled dot-product head between
// the final prompt vector and per-point features yields logits.
class TwoWayDecoder {
  public:
    TwoWayDecoder() = default;
    TwoWayDecoder(std::int64_t d, int heads, int layers, Rng& rng);

    Tensor decode_logits(const Tensor& prompt /*[1,d]*/, const Tensor& points /*[N,d]*/) const;
    Tensor decode_probabilities(const Tensor& prompt, const Tensor& points) const {
        return sigmoid(decode_logits(prompt, points));
    }

    int layers() const { return static_cast<int>(layers_.size()); }
    void collect(std::vector<Parameter*>& out);

  private:
    struct Layer {
        MultiHeadAttention prompt_to_points;
        LayerNormLayer ln_prompt;
        Linear ffn1, ffn2;
        LayerNormLayer ln_ffn;
        MultiHeadAttention points_to_prompt;
        LayerNormLayer ln_points;
    };
    std::int64_t d_ = 0;
    std::vector<Layer> layers_;
    Linear mask_head;  // d -> d on the final prompt
};

}  // namespace afford3d
