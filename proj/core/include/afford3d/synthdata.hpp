#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "afford3d/decoder.hpp"
#include "afford3d/geometry.hpp"

namespace afford3d {

enum class Split { Stage1Train, Stage2Train, Val, OpenSetTest };
std::string split_str(Split split);
Split parse_split(const std::string& text);

// Parametric shape instance; parameters are drawn from per-family documented
// ranges by sample_spec and everything downstream is a pure function of the
// spec.
struct ShapeSpec {
    std::string family;
    std::map<std::string, double> parameters;
    std::uint64_t seed = 0;
};

struct AffordanceDef {
    std::string name;     // canonical class ("grasp")
    std::string synonym;  // query variation ("hold")
};

struct Sample {
    ShapeSpec spec;
    PointCloud cloud;  // raw model-space coordinates, surface noise applied
    std::vector<int> part_labels;
    std::vector<std::string> part_names;
    std::map<std::string, Mask> affordance_masks;  // canonical name -> mask
    Split split = Split::Stage2Train;
};

const std::vector<std::string>& shape_families();
const std::vector<AffordanceDef>& family_affordances(const std::string& family);
const std::vector<std::string>& family_parts(const std::string& family);

ShapeSpec sample_spec(const std::string& family, std::uint64_t seed);

// Area-weighted uniform surface sampling of the parametric solid; part
// labels come from the generating primitive and affordance masks from
// geometric predicates evaluated before noise. Retries the point draw until
// every part is hit and every mask is nonempty and nonfull.
Sample generate(const ShapeSpec& spec, std::int64_t n_points, double noise_sigma = 0.0);

struct DataRecord {
    std::int64_t sample_index = 0;
    std::string query;
    std::string cls;  // canonical affordance, or part name for stage-1 records
    std::string family;
    Split split = Split::Stage2Train;
    Mask gt;
};

struct SplitFractions {
    double stage1 = 0.4;
    double stage2 = 0.4;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetParams {
    std::int64_t n_samples = 100;
    std::uint64_t seed = 1;
    std::vector<std::pair<std::string, std::string>> holdout;  // (family, affordance)
    std::int64_t n_points = 2048;
    double noise_sigma = 0.005;
    SplitFractions fractions;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<DataRecord> records;
    DatasetParams params;

    std::vector<std::int64_t> record_indices(Split split) const;
    std::vector<std::int64_t> sample_indices(Split split) const;
};

// Generates samples, assigns splits, and builds the per-record manifest.
// Held-out (family, affordance) combinations appear only in open_set_test;
// stage-1 records are part queries. Every held-out query must share a word
// with some stage-2 training query.
Dataset make_dataset(const DatasetParams& params);

void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& manifest_path);

void write_binary_mask(const std::string& path, const Mask& mask);
Mask read_binary_mask(const std::string& path);

std::string holdout_str(const std::vector<std::pair<std::string, std::string>>& holdout);
std::vector<std::pair<std::string, std::string>> parse_holdout(const std::string& text);

}  // namespace afford3d
