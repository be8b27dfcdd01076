#include "afford3d/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "afford3d/errors.hpp"
#include "afford3d/propagation.hpp"

namespace afford3d {

std::vector<int> TrainConfig::effective_scales() const {
    const FusionModeSpec spec = fusion();
    if (spec.mode == FusionMode::Single) return {spec.single_scale};
    return scales;
}

void TrainConfig::validate() const {
    if (d < 1 || heads < 1 || d % heads != 0)
        throw ConfigError("config: d=" + std::to_string(d) + " must be divisible by heads=" +
                          std::to_string(heads));
    if (decoder_layers < 1) throw ConfigError("config: decoder_layers must be >= 1");
    if (scales.empty()) throw ConfigError("config: scales must be nonempty");
    if (!std::is_sorted(scales.begin(), scales.end()))
        throw ConfigError("config: scales must be sorted ascending");
    for (int s : scales)
        if (s < 1) throw ConfigError("config: scale " + std::to_string(s) + " must be >= 1");
    if (d_pos < 6 || d_pos % 6 != 0) throw ConfigError("config: d_pos must be a multiple of 6");
    if (k_nn < 1) throw ConfigError("config: k_nn must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (loss.lambda_bce < 0.0 || loss.lambda_dice < 0.0)
        throw ConfigError("config: loss weights must be non-negative");
    if (!(loss.eps_dice > 0.0)) throw ConfigError("config: eps_dice must be positive");
    const FusionModeSpec spec = fusion();  // validates the mode string
    if (spec.mode == FusionMode::Single &&
        std::find(scales.begin(), scales.end(), spec.single_scale) == scales.end())
        throw ConfigError("config: fusion.mode=" + fusion_mode + " but scale list has no " +
                          std::to_string(spec.single_scale));
    parse_token_source(prompt_source);
    parse_token_source(injection_source);
    parse_aggregation(aggregation);
}

namespace {

std::vector<int> parse_scale_list(const std::string& text) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "on" || value == "1") return true;
    if (value == "false" || value == "off" || value == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + value + "'");
}

}  // namespace

TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "d") cfg.d = std::stoll(value);
            else if (key == "heads") cfg.heads = std::stoi(value);
            else if (key == "decoder_layers") cfg.decoder_layers = std::stoi(value);
            else if (key == "scales") cfg.scales = parse_scale_list(value);
            else if (key == "k_nn") cfg.k_nn = std::stoi(value);
            else if (key == "d_pos") cfg.d_pos = std::stoll(value);
            else if (key == "lr") cfg.lr = std::stod(value);
            else if (key == "momentum") cfg.momentum = std::stod(value);
            else if (key == "epochs_stage1") cfg.epochs_stage1 = std::stoi(value);
            else if (key == "epochs_stage2") cfg.epochs_stage2 = std::stoi(value);
            else if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "eval_every") cfg.eval_every = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "lambda_bce") cfg.loss.lambda_bce = std::stod(value);
            else if (key == "lambda_dice") cfg.loss.lambda_dice = std::stod(value);
            else if (key == "eps_dice") cfg.loss.eps_dice = std::stod(value);
            else if (key == "fusion.mode") cfg.fusion_mode = value;
            else if (key == "propagation.prompt_source") cfg.prompt_source = value;
            else if (key == "propagation.injection_source") cfg.injection_source = value;
            else if (key == "propagation.injection") cfg.injection_on = parse_bool(key, value);
            else if (key == "propagation.aggregation") cfg.aggregation = value;
            else if (key == "freeze_voxel_encoder") cfg.freeze_voxel_encoder = parse_bool(key, value);
            else if (key == "n_points") cfg.n_points = std::stoll(value);
            else if (key == "noise_sigma") cfg.noise_sigma = std::stod(value);
            else throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad value for " + key +
                              ": '" + value + "'");
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path);
}

std::string config_to_text(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "d=" << cfg.d << "\n";
    os << "heads=" << cfg.heads << "\n";
    os << "decoder_layers=" << cfg.decoder_layers << "\n";
    os << "scales=";
    for (std::size_t i = 0; i < cfg.scales.size(); ++i) os << (i ? "," : "") << cfg.scales[i];
    os << "\n";
    os << "k_nn=" << cfg.k_nn << "\n";
    os << "d_pos=" << cfg.d_pos << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "lr=%.17g\n", cfg.lr);
    os << buf;
    std::snprintf(buf, sizeof(buf), "momentum=%.17g\n", cfg.momentum);
    os << buf;
    os << "epochs_stage1=" << cfg.epochs_stage1 << "\n";
    os << "epochs_stage2=" << cfg.epochs_stage2 << "\n";
    os << "batch_size=" << cfg.batch_size << "\n";
    os << "eval_every=" << cfg.eval_every << "\n";
    os << "seed=" << cfg.seed << "\n";
    std::snprintf(buf, sizeof(buf), "lambda_bce=%.17g\n", cfg.loss.lambda_bce);
    os << buf;
    std::snprintf(buf, sizeof(buf), "lambda_dice=%.17g\n", cfg.loss.lambda_dice);
    os << buf;
    std::snprintf(buf, sizeof(buf), "eps_dice=%.17g\n", cfg.loss.eps_dice);
    os << buf;
    os << "fusion.mode=" << cfg.fusion_mode << "\n";
    os << "propagation.prompt_source=" << cfg.prompt_source << "\n";
    os << "propagation.injection_source=" << cfg.injection_source << "\n";
    os << "propagation.injection=" << (cfg.injection_on ? "on" : "off") << "\n";
    os << "propagation.aggregation=" << cfg.aggregation << "\n";
    os << "freeze_voxel_encoder=" << (cfg.freeze_voxel_encoder ? "true" : "false") << "\n";
    os << "n_points=" << cfg.n_points << "\n";
    std::snprintf(buf, sizeof(buf), "noise_sigma=%.17g\n", cfg.noise_sigma);
    os << buf;
    return os.str();
}

}  // namespace afford3d
