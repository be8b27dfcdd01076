#include "afford3d/decoder.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "afford3d/errors.hpp"

namespace afford3d {

AffordanceMask make_mask(const std::vector<double>& probabilities, const std::string& query_text,
                         double threshold) {
    AffordanceMask mask;
    mask.probabilities = probabilities;
    mask.query_text = query_text;
    mask.binary.resize(probabilities.size());
    double sum = 0.0;
    std::int64_t positives = 0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        const double p = probabilities[i];
        if (!std::isfinite(p) || p < 0.0 || p > 1.0)
            throw NumericError("mask: probability " + std::to_string(p) + " at point " +
                               std::to_string(i));
        mask.binary[i] = probabilities[i] >= threshold ? 1 : 0;
        if (mask.binary[i]) {
            sum += probabilities[i];
            ++positives;
        }
    }
    mask.confidence = positives > 0 ? sum / static_cast<double>(positives) : 0.0;
    return mask;
}

void write_mask_files(const std::string& path, const AffordanceMask& mask, double threshold) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write mask file: " + path);
    char buf[64];
    for (double p : mask.probabilities) {
        std::snprintf(buf, sizeof(buf), "%.17g\n", p);
        out << buf;
    }
    if (!out) throw IoError("failed writing mask file: " + path);

    nlohmann::ordered_json sidecar;
    sidecar["threshold"] = threshold;
    sidecar["confidence"] = mask.confidence;
    sidecar["query"] = mask.query_text;
    std::ofstream side(path + ".json");
    if (!side) throw IoError("cannot write mask sidecar: " + path + ".json");
    side << sidecar.dump(2) << '\n';
}

AffordanceMask read_mask_file(const std::string& path, const std::string& query_text) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mask file: " + path);
    std::vector<double> probs;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        try {
            probs.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": bad probability '" + line +
                             "'");
        }
    }
    if (probs.empty()) throw ParseError(path + ": empty mask");
    return make_mask(probs, query_text);
}

TwoWayDecoder::TwoWayDecoder(std::int64_t d, int heads, int n_layers, Rng& rng) : d_(d) {
    layers_.reserve(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        const std::string prefix = "decoder.layer" + std::to_string(l);
        Layer layer;
        layer.prompt_to_points = MultiHeadAttention(prefix + ".p2f", d, heads, rng);
        layer.ln_prompt = LayerNormLayer(prefix + ".ln_prompt", d, rng);
        layer.ffn1 = Linear(prefix + ".ffn1", d, 2 * d, rng);
        layer.ffn2 = Linear(prefix + ".ffn2", 2 * d, d, rng);
        layer.ln_ffn = LayerNormLayer(prefix + ".ln_ffn", d, rng);
        layer.points_to_prompt = MultiHeadAttention(prefix + ".f2p", d, heads, rng);
        layer.ln_points = LayerNormLayer(prefix + ".ln_points", d, rng);
        layers_.push_back(std::move(layer));
    }
    mask_head = Linear("decoder.mask_head", d, d, rng);
}

Tensor TwoWayDecoder::decode_logits(const Tensor& prompt, const Tensor& points) const {
    if (prompt.rank() != 2 || prompt.dim(0) != 1 || prompt.dim(1) != d_)
        throw ShapeError("decoder: prompt must be 1x" + std::to_string(d_) + ", got " +
                         shape_str(prompt.shape()));
    if (points.rank() != 2 || points.dim(1) != d_)
        throw ShapeError("decoder: point features must be Nx" + std::to_string(d_) + ", got " +
                         shape_str(points.shape()));

    Tensor p = prompt;
    Tensor f = points;
    for (const Layer& layer : layers_) {
        p = layer.ln_prompt(add(p, layer.prompt_to_points(p, f, f)));
        p = layer.ln_ffn(add(p, layer.ffn2(gelu(layer.ffn1(p)))));
        f = layer.ln_points(add(f, layer.points_to_prompt(f, p, p)));
    }
    const Tensor m = mask_head(p);  // [1,d]
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_));
    return reshape(scale(matmul(f, transpose(m)), inv_scale), {points.dim(0)});
}

void TwoWayDecoder::collect(std::vector<Parameter*>& out) {
    for (auto& layer : layers_) {
        layer.prompt_to_points.collect(out);
        layer.ln_prompt.collect(out);
        layer.ffn1.collect(out);
        layer.ffn2.collect(out);
        layer.ln_ffn.collect(out);
        layer.points_to_prompt.collect(out);
        layer.ln_points.collect(out);
    }
    mask_head.collect(out);
}

}  // namespace afford3d
