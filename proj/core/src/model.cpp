#include "afford3d/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "afford3d/errors.hpp"

namespace afford3d {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

ForwardOptions options_from_config(const TrainConfig& config) {
    ForwardOptions opts;
    opts.fusion = config.fusion();
    if (opts.fusion.mode == FusionMode::Single) opts.fusion = {FusionMode::Full, 0};
    opts.prompt_source = parse_token_source(config.prompt_source);
    opts.injection_source = parse_token_source(config.injection_source);
    opts.injection_on = config.injection_on;
    opts.aggregation = parse_aggregation(config.aggregation);
    return opts;
}

Model::Model(const TrainConfig& config) : config_(config) {
    config_.validate();
    scales_ = config_.effective_scales();
    Rng rng(mix64(config_.seed ^ 0x5eedf00dull));
    // construction order fixes both parameter names and init draws
    tokenizer_ = SemanticTokenizer(scales_, config_.d, mix64(config_.seed ^ 0x90a5ull), rng);
    voxel_encoder_ = VoxelEncoder(scales_, config_.d, config_.d_pos, rng);
    fusion_ = FusionModule(scales_, config_.d, config_.heads, rng);
    backbone_ = PointBackbone(config_.d, config_.k_nn, rng);
    propagation_ = PropagationModule(config_.d, config_.heads,
                                     static_cast<int>(scales_.size()), rng);
    decoder_ = TwoWayDecoder(config_.d, config_.heads, config_.decoder_layers, rng);
}

ForwardOptions Model::default_options() const { return options_from_config(config_); }

PreparedCloud Model::prepare(const PointCloud& raw_cloud) const {
    PreparedCloud out;
    out.normalized = normalize(raw_cloud);
    out.coords = coords_tensor(out.normalized);
    out.knn_graph = knn(out.normalized, config_.k_nn);
    out.maps.reserve(scales_.size());
    out.descriptors.reserve(scales_.size());
    for (int s : scales_) {
        out.maps.push_back(voxelize(out.normalized, s));
        out.descriptors.push_back(
            voxel_descriptors(out.maps.back(), out.normalized.size(), config_.d_pos));
    }
    return out;
}

Model::Trace Model::forward(const PreparedCloud& cloud, const std::string& query,
                            const ForwardOptions& options) const {
    Trace trace;
    trace.tokens = tokenizer_.embed(query);

    if (options.fusion.mode == FusionMode::Disabled) {
        trace.enhanced = fusion_.fuse(trace.tokens, {}, options.fusion);
    } else {
        std::vector<VoxelFeatureSet> pyramid;
        pyramid.reserve(scales_.size());
        for (std::size_t si = 0; si < scales_.size(); ++si)
            pyramid.push_back(voxel_encoder_.encode_scale(cloud.maps[si], cloud.descriptors[si], si));
        trace.enhanced = fusion_.fuse(trace.tokens, pyramid, options.fusion);
    }

    trace.point_features = backbone_.extract(cloud.coords, cloud.knn_graph);

    const Tensor& prompt_keys = options.prompt_source == TokenSource::Enhanced
                                    ? trace.enhanced.tokens
                                    : trace.tokens.tokens;
    trace.prompt = propagation_.make_prompt(trace.tokens.tokens, prompt_keys, options.aggregation);

    if (options.injection_on) {
        const Tensor& injection_tokens = options.injection_source == TokenSource::Enhanced
                                             ? trace.enhanced.tokens
                                             : trace.tokens.tokens;
        trace.conditioned_features =
            propagation_.inject_semantics(trace.point_features, injection_tokens);
    } else {
        trace.conditioned_features = trace.point_features;
    }

    trace.logits = decoder_.decode_logits(trace.prompt, trace.conditioned_features);
    trace.probabilities = sigmoid(trace.logits);
    return trace;
}

Tensor Model::loss(const Trace& trace, const Mask& gt) const {
    return mask_loss(trace.probabilities, gt, config_.loss);
}

AffordanceMask Model::predict(const PreparedCloud& cloud, const std::string& query,
                              const ForwardOptions& options) const {
    NoGradGuard guard;
    const Trace trace = forward(cloud, query, options);
    return make_mask(trace.probabilities.values(), query);
}

std::vector<Parameter*> Model::parameters() {
    // collected fresh each call: Parameter objects live inside the module
    // members, so cached pointers would not survive a move
    std::vector<Parameter*> out;
    tokenizer_.collect(out);
    voxel_encoder_.collect(out);
    fusion_.collect(out);
    backbone_.collect(out);
    propagation_.collect(out);
    decoder_.collect(out);
    return out;
}

std::vector<Parameter*> Model::parameters_with_prefix(const std::string& prefix) {
    std::vector<Parameter*> out;
    for (Parameter* p : parameters())
        if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
}

void Model::save_checkpoint(const std::string& stem, const CheckpointMeta& meta) const {
    auto* self = const_cast<Model*>(this);
    const auto params = self->parameters();

    std::ofstream manifest(stem + ".manifest");
    if (!manifest) throw IoError("cannot write checkpoint manifest: " + stem + ".manifest");
    for (const Parameter* p : params) {
        manifest << p->name << ' ' << shape_str(p->tensor.shape()) << ' '
                 << init_mode_str(p->init, p->init_value) << '\n';
    }
    if (!manifest) throw IoError("failed writing checkpoint manifest: " + stem + ".manifest");

    std::ofstream blob(stem + ".bin", std::ios::binary);
    if (!blob) throw IoError("cannot write checkpoint blob: " + stem + ".bin");
    for (const Parameter* p : params)
        blob.write(reinterpret_cast<const char*>(p->tensor.data()),
                   static_cast<std::streamsize>(p->tensor.size() * sizeof(double)));
    if (!blob) throw IoError("failed writing checkpoint blob: " + stem + ".bin");

    std::ofstream metaf(stem + ".meta");
    if (!metaf) throw IoError("cannot write checkpoint meta: " + stem + ".meta");
    metaf << "stage=" << meta.stage << "\n";
    metaf << "epoch=" << meta.epoch << "\n";
    metaf << "rng=" << meta.rng_state << "\n";
    metaf << "config_begin\n" << config_to_text(config_) << "config_end\n";
    if (!metaf) throw IoError("failed writing checkpoint meta: " + stem + ".meta");
}

namespace {

struct MetaFile {
    CheckpointMeta meta;
    std::string config_text;
};

MetaFile read_meta(const std::string& stem) {
    std::ifstream in(stem + ".meta");
    if (!in) throw IoError("cannot open checkpoint meta: " + stem + ".meta");
    MetaFile out;
    std::string line;
    bool in_config = false;
    while (std::getline(in, line)) {
        if (line == "config_begin") {
            in_config = true;
        } else if (line == "config_end") {
            in_config = false;
        } else if (in_config) {
            out.config_text += line + "\n";
        } else if (line.rfind("stage=", 0) == 0) {
            out.meta.stage = std::stoi(line.substr(6));
        } else if (line.rfind("epoch=", 0) == 0) {
            out.meta.epoch = std::stoi(line.substr(6));
        } else if (line.rfind("rng=", 0) == 0) {
            out.meta.rng_state = line.substr(4);
        }
    }
    return out;
}

}  // namespace

CheckpointMeta Model::load_checkpoint(const std::string& stem) {
    const auto params = parameters();

    std::ifstream manifest(stem + ".manifest");
    if (!manifest) throw IoError("cannot open checkpoint manifest: " + stem + ".manifest");
    std::string line;
    std::size_t idx = 0;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string name, shape;
        is >> name >> shape;
        if (idx >= params.size())
            throw ParseError(stem + ".manifest: more parameters than the model has");
        if (name != params[idx]->name || shape != shape_str(params[idx]->tensor.shape()))
            throw ParseError(stem + ".manifest: entry " + std::to_string(idx) + " is " + name +
                             " " + shape + ", model expects " + params[idx]->name + " " +
                             shape_str(params[idx]->tensor.shape()));
        ++idx;
    }
    if (idx != params.size())
        throw ParseError(stem + ".manifest: has " + std::to_string(idx) + " entries, model has " +
                         std::to_string(params.size()));

    std::ifstream blob(stem + ".bin", std::ios::binary);
    if (!blob) throw IoError("cannot open checkpoint blob: " + stem + ".bin");
    for (Parameter* p : params) {
        blob.read(reinterpret_cast<char*>(p->tensor.data()),
                  static_cast<std::streamsize>(p->tensor.size() * sizeof(double)));
        if (!blob) throw ParseError(stem + ".bin: truncated blob at " + p->name);
    }
    char extra;
    if (blob.read(&extra, 1)) throw ParseError(stem + ".bin: blob longer than the manifest");

    return read_meta(stem).meta;
}

TrainConfig Model::checkpoint_config(const std::string& stem) {
    return parse_config_text(read_meta(stem).config_text, stem + ".meta");
}

Model Model::from_checkpoint(const std::string& stem, CheckpointMeta* meta_out) {
    Model model(checkpoint_config(stem));
    const CheckpointMeta meta = model.load_checkpoint(stem);
    if (meta_out) *meta_out = meta;
    return model;
}

}  // namespace afford3d
