#include "afford3d/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "afford3d/errors.hpp"
#include "afford3d/rng.hpp"
#include "afford3d/semantic_tokens.hpp"

namespace afford3d {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// ---- primitive surface samplers ----

struct Primitive {
    int part_id = 0;
    int prim_id = 0;
    double area = 0.0;
    std::function<Vec3(Rng&)> sample;
};

Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

Primitive cylinder_side(int part, int prim, double radius, double z0, double z1, double cx = 0.0,
                        double cy = 0.0) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    p.area = kTwoPi * radius * (z1 - z0);
    p.sample = [=](Rng& rng) -> Vec3 {
        const double theta = rng.uniform(0.0, kTwoPi);
        const double z = rng.uniform(z0, z1);
        return {cx + radius * std::cos(theta), cy + radius * std::sin(theta), z};
    };
    return p;
}

Primitive disk(int part, int prim, double z, double r0, double r1, double cx = 0.0,
               double cy = 0.0) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    p.area = kPi * (r1 * r1 - r0 * r0);
    p.sample = [=](Rng& rng) -> Vec3 {
        const double r = std::sqrt(rng.uniform(r0 * r0, r1 * r1));
        const double theta = rng.uniform(0.0, kTwoPi);
        return {cx + r * std::cos(theta), cy + r * std::sin(theta), z};
    };
    return p;
}

// torus arc in the x-z plane around center c, tube circles toward y
Primitive torus_arc(int part, int prim, const Vec3& c, double major, double minor, double phi0,
                    double phi1) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    p.area = (phi1 - phi0) * kTwoPi * major * minor;
    p.sample = [=](Rng& rng) -> Vec3 {
        const double phi = rng.uniform(phi0, phi1);
        double psi;
        for (;;) {  // density on psi is proportional to major + minor*cos(psi)
            psi = rng.uniform(0.0, kTwoPi);
            if (rng.uniform() * (major + minor) <= major + minor * std::cos(psi)) break;
        }
        const double ring = major + minor * std::cos(psi);
        return add3(c, {ring * std::cos(phi), minor * std::sin(psi), ring * std::sin(phi)});
    };
    return p;
}

void orthonormal_frame(const Vec3& u, Vec3& e1, Vec3& e2) {
    const Vec3 pick = std::abs(u[2]) < 0.9 ? Vec3{0.0, 0.0, 1.0} : Vec3{0.0, 1.0, 0.0};
    // e1 = normalize(pick x u)
    e1 = {pick[1] * u[2] - pick[2] * u[1], pick[2] * u[0] - pick[0] * u[2],
          pick[0] * u[1] - pick[1] * u[0]};
    const double n = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
    for (auto& v : e1) v /= n;
    e2 = {u[1] * e1[2] - u[2] * e1[1], u[2] * e1[0] - u[0] * e1[2], u[0] * e1[1] - u[1] * e1[0]};
}

Primitive rod_side(int part, int prim, const Vec3& base, const Vec3& axis, double radius,
                   double length) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    p.area = kTwoPi * radius * length;
    Vec3 e1, e2;
    orthonormal_frame(axis, e1, e2);
    p.sample = [=](Rng& rng) -> Vec3 {
        const double s = rng.uniform(0.0, length);
        const double theta = rng.uniform(0.0, kTwoPi);
        const double a = radius * std::cos(theta), b = radius * std::sin(theta);
        return {base[0] + s * axis[0] + a * e1[0] + b * e2[0],
                base[1] + s * axis[1] + a * e1[1] + b * e2[1],
                base[2] + s * axis[2] + a * e1[2] + b * e2[2]};
    };
    return p;
}

Primitive rod_cap(int part, int prim, const Vec3& base, const Vec3& axis, double radius,
                  double length) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    p.area = kPi * radius * radius;
    Vec3 e1, e2;
    orthonormal_frame(axis, e1, e2);
    p.sample = [=](Rng& rng) -> Vec3 {
        const double r = radius * std::sqrt(rng.uniform());
        const double theta = rng.uniform(0.0, kTwoPi);
        const double a = r * std::cos(theta), b = r * std::sin(theta);
        return {base[0] + length * axis[0] + a * e1[0] + b * e2[0],
                base[1] + length * axis[1] + a * e1[1] + b * e2[1],
                base[2] + length * axis[2] + a * e1[2] + b * e2[2]};
    };
    return p;
}

// lower hemisphere shell (z <= cz), uniform by area
Primitive hemisphere(int part, int prim, const Vec3& c, double radius) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    p.area = kTwoPi * radius * radius;
    p.sample = [=](Rng& rng) -> Vec3 {
        const double z = -radius * rng.uniform();
        const double rho = std::sqrt(std::max(0.0, radius * radius - z * z));
        const double theta = rng.uniform(0.0, kTwoPi);
        return add3(c, {rho * std::cos(theta), rho * std::sin(theta), z});
    };
    return p;
}

Primitive frustum_side(int part, int prim, double z0, double z1, double r0, double r1) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    const double slant = std::hypot(z1 - z0, r1 - r0);
    p.area = kPi * (r0 + r1) * slant;
    const double rmax = std::max(r0, r1);
    p.sample = [=](Rng& rng) -> Vec3 {
        double z, r;
        for (;;) {
            z = rng.uniform(z0, z1);
            r = r0 + (r1 - r0) * (z - z0) / (z1 - z0);
            if (rng.uniform() * rmax <= r) break;
        }
        const double theta = rng.uniform(0.0, kTwoPi);
        return {r * std::cos(theta), r * std::sin(theta), z};
    };
    return p;
}

// axis-aligned rectangle at fixed coordinate `fixed` on axis `axis`
Primitive rect_face(int part, int prim, int axis, double fixed, double a0, double a1, double b0,
                    double b1) {
    Primitive p;
    p.part_id = part;
    p.prim_id = prim;
    p.area = (a1 - a0) * (b1 - b0);
    p.sample = [=](Rng& rng) -> Vec3 {
        const double a = rng.uniform(a0, a1);
        const double b = rng.uniform(b0, b1);
        Vec3 out{};
        out[static_cast<std::size_t>(axis)] = fixed;
        out[static_cast<std::size_t>((axis + 1) % 3)] = a;
        out[static_cast<std::size_t>((axis + 2) % 3)] = b;
        return out;
    };
    return p;
}

// ---- family definitions ----

struct FamilyModel {
    std::vector<std::string> parts;
    std::vector<Primitive> prims;
    // canonical affordance -> predicate over (prim_id, pre-noise point)
    std::vector<std::pair<std::string, std::function<bool(int, const Vec3&)>>> predicates;
};

void require_positive(const ShapeSpec& spec, const char* what, double v) {
    if (!(v > 0.0))
        throw GenerationError(spec.family + ": non-positive " + what + " (" + std::to_string(v) +
                              ")");
}

double param(const ShapeSpec& spec, const std::string& key) {
    auto it = spec.parameters.find(key);
    if (it == spec.parameters.end())
        throw GenerationError(spec.family + ": missing parameter " + key);
    return it->second;
}

FamilyModel build_mug(const ShapeSpec& spec) {
    const double radius = param(spec, "radius");
    const double height = param(spec, "height");
    const double wall = param(spec, "wall");
    const double bottom = param(spec, "bottom");
    const double handle_major = param(spec, "handle_major");
    const double handle_minor = param(spec, "handle_minor");
    require_positive(spec, "radius", radius);
    require_positive(spec, "height", height);
    require_positive(spec, "inner radius", radius - wall);
    require_positive(spec, "handle major radius", handle_major);
    require_positive(spec, "handle minor radius", handle_minor);

    FamilyModel m;
    m.parts = {"body", "handle"};
    m.prims = {
        cylinder_side(0, 0, radius, 0.0, height),
        cylinder_side(0, 1, radius - wall, bottom, height),
        disk(0, 2, 0.0, 0.0, radius),
        disk(0, 3, bottom, 0.0, radius - wall),
        disk(0, 4, height, radius - wall, radius),
        torus_arc(1, 5, {radius, 0.0, height / 2.0}, handle_major, handle_minor, -kPi / 2.0,
                  kPi / 2.0),
    };
    const double half = height / 2.0;
    m.predicates = {
        {"grasp", [](int prim, const Vec3&) { return prim == 5; }},
        {"contain", [half](int prim, const Vec3& p) { return prim == 1 && p[2] > half; }},
    };
    return m;
}

FamilyModel build_pan(const ShapeSpec& spec) {
    const double radius = param(spec, "radius");
    const double depth = param(spec, "depth");
    const double wall = param(spec, "wall");
    const double bottom = param(spec, "bottom");
    const double handle_radius = param(spec, "handle_radius");
    const double handle_length = param(spec, "handle_length");
    require_positive(spec, "radius", radius);
    require_positive(spec, "depth", depth);
    require_positive(spec, "inner radius", radius - wall);
    require_positive(spec, "handle radius", handle_radius);
    require_positive(spec, "handle length", handle_length);

    FamilyModel m;
    m.parts = {"body", "handle"};
    const Vec3 attach{radius, 0.0, 0.7 * depth};
    m.prims = {
        cylinder_side(0, 0, radius, 0.0, depth),
        cylinder_side(0, 1, radius - wall, bottom, depth),
        disk(0, 2, 0.0, 0.0, radius),
        disk(0, 3, bottom, 0.0, radius - wall),
        disk(0, 4, depth, radius - wall, radius),
        rod_side(1, 5, attach, {1.0, 0.0, 0.0}, handle_radius, handle_length),
        rod_cap(1, 6, attach, {1.0, 0.0, 0.0}, handle_radius, handle_length),
    };
    m.predicates = {
        {"lift", [](int prim, const Vec3&) { return prim == 5 || prim == 6; }},
        {"contain", [](int prim, const Vec3&) { return prim == 1 || prim == 3; }},
    };
    return m;
}

FamilyModel build_table(const ShapeSpec& spec) {
    const double tx = param(spec, "top_x");
    const double ty = param(spec, "top_y");
    const double tt = param(spec, "top_thickness");
    const double ls = param(spec, "leg_side");
    const double lh = param(spec, "leg_height");
    require_positive(spec, "top_x", tx);
    require_positive(spec, "top_y", ty);
    require_positive(spec, "top thickness", tt);
    require_positive(spec, "leg side", ls);
    require_positive(spec, "leg height", lh);
    const double inset = 0.12 * std::min(tx, ty);
    require_positive(spec, "leg placement", tx / 2.0 - inset - ls);

    FamilyModel m;
    m.parts = {"top", "legs"};
    m.prims = {
        rect_face(0, 0, 2, lh + tt, -tx / 2.0, tx / 2.0, -ty / 2.0, ty / 2.0),  // axis z: a=x,b=y
        rect_face(0, 1, 2, lh, -tx / 2.0, tx / 2.0, -ty / 2.0, ty / 2.0),
        rect_face(0, 2, 0, -tx / 2.0, -ty / 2.0, ty / 2.0, lh, lh + tt),  // axis x: a=y,b=z
        rect_face(0, 3, 0, tx / 2.0, -ty / 2.0, ty / 2.0, lh, lh + tt),
        rect_face(0, 4, 1, -ty / 2.0, lh, lh + tt, -tx / 2.0, tx / 2.0),  // axis y: a=z,b=x
        rect_face(0, 5, 1, ty / 2.0, lh, lh + tt, -tx / 2.0, tx / 2.0),
    };
    // one composite primitive per leg: 4 sides + bottom cap
    int prim_id = 6;
    for (int sx = -1; sx <= 1; sx += 2) {
        for (int sy = -1; sy <= 1; sy += 2) {
            const double cx = sx * (tx / 2.0 - inset - ls / 2.0);
            const double cy = sy * (ty / 2.0 - inset - ls / 2.0);
            Primitive p;
            p.part_id = 1;
            p.prim_id = prim_id++;
            p.area = 4.0 * ls * lh + ls * ls;
            const double half_side = ls / 2.0;
            p.sample = [=](Rng& rng) -> Vec3 {
                const double u = rng.uniform() * (4.0 * ls * lh + ls * ls);
                if (u < ls * ls) {  // bottom cap
                    return {cx + rng.uniform(-half_side, half_side),
                            cy + rng.uniform(-half_side, half_side), 0.0};
                }
                const int face = static_cast<int>((u - ls * ls) / (ls * lh));
                const double along = rng.uniform(-half_side, half_side);
                const double z = rng.uniform(0.0, lh);
                switch (face) {
                    case 0: return {cx - half_side, cy + along, z};
                    case 1: return {cx + half_side, cy + along, z};
                    case 2: return {cx + along, cy - half_side, z};
                    default: return {cx + along, cy + half_side, z};
                }
            };
            m.prims.push_back(std::move(p));
        }
    }
    m.predicates = {
        {"support", [](int prim, const Vec3&) { return prim == 0; }},
        {"grasp", [](int prim, const Vec3&) { return prim >= 6; }},
    };
    return m;
}

FamilyModel build_bottle(const ShapeSpec& spec) {
    const double radius = param(spec, "radius");
    const double body_height = param(spec, "body_height");
    const double shoulder = param(spec, "shoulder_height");
    const double neck_radius = param(spec, "neck_radius");
    const double neck_height = param(spec, "neck_height");
    require_positive(spec, "radius", radius);
    require_positive(spec, "body height", body_height);
    require_positive(spec, "shoulder height", shoulder);
    require_positive(spec, "neck radius", neck_radius);
    require_positive(spec, "neck height", neck_height);

    FamilyModel m;
    m.parts = {"body", "neck"};
    const double z_sh = body_height + shoulder;
    m.prims = {
        disk(0, 0, 0.0, 0.0, radius),
        cylinder_side(0, 1, radius, 0.0, body_height),
        frustum_side(0, 2, body_height, z_sh, radius, neck_radius),
        cylinder_side(1, 3, neck_radius, z_sh, z_sh + neck_height),
        disk(1, 4, z_sh + neck_height, 0.0, neck_radius),
    };
    m.predicates = {
        {"grasp", [](int prim, const Vec3&) { return prim == 1; }},
        {"open", [](int prim, const Vec3&) { return prim == 3 || prim == 4; }},
    };
    return m;
}

FamilyModel build_ladle(const ShapeSpec& spec) {
    const double bowl_radius = param(spec, "bowl_radius");
    const double wall = param(spec, "wall");
    const double handle_radius = param(spec, "handle_radius");
    const double handle_length = param(spec, "handle_length");
    const double handle_angle = param(spec, "handle_angle");
    require_positive(spec, "bowl radius", bowl_radius);
    require_positive(spec, "inner bowl radius", bowl_radius - wall);
    require_positive(spec, "handle radius", handle_radius);
    require_positive(spec, "handle length", handle_length);

    FamilyModel m;
    m.parts = {"bowl", "handle"};
    const Vec3 axis{std::cos(handle_angle), 0.0, std::sin(handle_angle)};
    const Vec3 attach{bowl_radius - handle_radius, 0.0, 0.0};
    m.prims = {
        hemisphere(0, 0, {0.0, 0.0, 0.0}, bowl_radius),
        hemisphere(0, 1, {0.0, 0.0, 0.0}, bowl_radius - wall),
        disk(0, 2, 0.0, bowl_radius - wall, bowl_radius),
        rod_side(1, 3, attach, axis, handle_radius, handle_length),
        rod_cap(1, 4, attach, axis, handle_radius, handle_length),
    };
    m.predicates = {
        {"grasp", [](int prim, const Vec3&) { return prim == 3 || prim == 4; }},
        {"scoop", [](int prim, const Vec3&) { return prim == 1; }},
    };
    return m;
}

FamilyModel build_family(const ShapeSpec& spec) {
    if (spec.family == "mug") return build_mug(spec);
    if (spec.family == "pan") return build_pan(spec);
    if (spec.family == "table") return build_table(spec);
    if (spec.family == "bottle") return build_bottle(spec);
    if (spec.family == "ladle") return build_ladle(spec);
    throw GenerationError("unknown shape family: " + spec.family);
}

const std::map<std::string, std::string>& synonym_table() {
    static const std::map<std::string, std::string> table = {
        {"grasp", "hold"}, {"contain", "fill"},  {"lift", "raise"},
        {"support", "place"}, {"open", "twist"}, {"scoop", "dip"},
    };
    return table;
}

}  // namespace

std::string split_str(Split split) {
    switch (split) {
        case Split::Stage1Train: return "stage1_train";
        case Split::Stage2Train: return "stage2_train";
        case Split::Val: return "val";
        case Split::OpenSetTest: return "open_set_test";
    }
    return "?";
}

Split parse_split(const std::string& text) {
    if (text == "stage1_train") return Split::Stage1Train;
    if (text == "stage2_train") return Split::Stage2Train;
    if (text == "val") return Split::Val;
    if (text == "open_set_test") return Split::OpenSetTest;
    throw ParseError("unknown split: " + text);
}

const std::vector<std::string>& shape_families() {
    static const std::vector<std::string> families = {"mug", "pan", "table", "bottle", "ladle"};
    return families;
}

const std::vector<AffordanceDef>& family_affordances(const std::string& family) {
    static const std::map<std::string, std::vector<AffordanceDef>> table = [] {
        std::map<std::string, std::vector<AffordanceDef>> t;
        t["mug"] = {{"grasp", "hold"}, {"contain", "fill"}};
        t["pan"] = {{"lift", "raise"}, {"contain", "fill"}};
        t["table"] = {{"support", "place"}, {"grasp", "hold"}};
        t["bottle"] = {{"grasp", "hold"}, {"open", "twist"}};
        t["ladle"] = {{"grasp", "hold"}, {"scoop", "dip"}};
        return t;
    }();
    auto it = table.find(family);
    if (it == table.end()) throw GenerationError("unknown shape family: " + family);
    return it->second;
}

const std::vector<std::string>& family_parts(const std::string& family) {
    static const std::map<std::string, std::vector<std::string>> table = {
        {"mug", {"body", "handle"}},   {"pan", {"body", "handle"}}, {"table", {"top", "legs"}},
        {"bottle", {"body", "neck"}},  {"ladle", {"bowl", "handle"}},
    };
    auto it = table.find(family);
    if (it == table.end()) throw GenerationError("unknown shape family: " + family);
    return it->second;
}

ShapeSpec sample_spec(const std::string& family, std::uint64_t seed) {
    ShapeSpec spec;
    spec.family = family;
    spec.seed = seed;
    Rng rng(mix64(seed ^ hash_string(family)));
    auto u = [&](double lo, double hi) { return rng.uniform(lo, hi); };
    if (family == "mug") {
        const double radius = u(0.5, 0.8);
        const double height = u(0.9, 1.4);
        spec.parameters = {{"radius", radius},
                           {"height", height},
                           {"wall", 0.1 * radius},
                           {"bottom", 0.08 * height},
                           {"handle_major", height * u(0.28, 0.38)},
                           {"handle_minor", u(0.05, 0.09)}};
    } else if (family == "pan") {
        const double radius = u(0.7, 1.0);
        const double depth = u(0.15, 0.3);
        spec.parameters = {{"radius", radius},
                           {"depth", depth},
                           {"wall", 0.06 * radius},
                           {"bottom", 0.2 * depth},
                           {"handle_radius", u(0.04, 0.07)},
                           {"handle_length", u(0.5, 0.9)}};
    } else if (family == "table") {
        spec.parameters = {{"top_x", u(0.9, 1.4)},
                           {"top_y", u(0.9, 1.4)},
                           {"top_thickness", u(0.06, 0.12)},
                           {"leg_side", u(0.08, 0.14)},
                           {"leg_height", u(0.6, 1.0)}};
    } else if (family == "bottle") {
        spec.parameters = {{"radius", u(0.4, 0.6)},
                           {"body_height", u(1.0, 1.5)},
                           {"shoulder_height", u(0.15, 0.3)},
                           {"neck_radius", u(0.12, 0.2)},
                           {"neck_height", u(0.25, 0.45)}};
    } else if (family == "ladle") {
        const double bowl = u(0.3, 0.45);
        spec.parameters = {{"bowl_radius", bowl},
                           {"wall", 0.12 * bowl},
                           {"handle_radius", u(0.035, 0.06)},
                           {"handle_length", u(0.9, 1.4)},
                           {"handle_angle", u(0.70, 1.13)}};
    } else {
        throw GenerationError("unknown shape family: " + family);
    }
    return spec;
}

Sample generate(const ShapeSpec& spec, std::int64_t n_points, double noise_sigma) {
    if (n_points < 256)
        throw InputError("generate: n_points must be >= 256, got " + std::to_string(n_points));
    const FamilyModel model = build_family(spec);

    std::vector<double> cdf(model.prims.size());
    double total = 0.0;
    for (std::size_t i = 0; i < model.prims.size(); ++i) {
        total += model.prims[i].area;
        cdf[i] = total;
    }

    Rng rng(mix64(spec.seed));
    Sample sample;
    sample.spec = spec;
    sample.part_names = model.parts;

    const int max_attempts = 32;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        std::vector<Vec3> points(static_cast<std::size_t>(n_points));
        std::vector<int> prim_of(static_cast<std::size_t>(n_points));
        std::vector<int> labels(static_cast<std::size_t>(n_points));
        for (std::int64_t i = 0; i < n_points; ++i) {
            const double u = rng.uniform() * total;
            const std::size_t pi = static_cast<std::size_t>(
                std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            const Primitive& prim = model.prims[std::min(pi, model.prims.size() - 1)];
            points[static_cast<std::size_t>(i)] = prim.sample(rng);
            prim_of[static_cast<std::size_t>(i)] = prim.prim_id;
            labels[static_cast<std::size_t>(i)] = prim.part_id;
        }

        bool ok = true;
        std::vector<std::int64_t> per_part(model.parts.size(), 0);
        for (int l : labels) per_part[static_cast<std::size_t>(l)]++;
        for (std::int64_t c : per_part) ok = ok && c > 0;

        std::map<std::string, Mask> masks;
        for (const auto& [name, pred] : model.predicates) {
            Mask mask(static_cast<std::size_t>(n_points), 0);
            std::int64_t positives = 0;
            for (std::int64_t i = 0; i < n_points; ++i) {
                if (pred(prim_of[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(i)])) {
                    mask[static_cast<std::size_t>(i)] = 1;
                    ++positives;
                }
            }
            ok = ok && positives > 0 && positives < n_points;
            masks[name] = std::move(mask);
        }
        if (!ok) continue;

        if (noise_sigma > 0.0)
            for (auto& p : points)
                for (int a = 0; a < 3; ++a) p[a] += noise_sigma * rng.normal();

        sample.cloud.points = std::move(points);
        sample.part_labels = std::move(labels);
        sample.affordance_masks = std::move(masks);
        return sample;
    }
    throw GenerationError(spec.family + ": could not satisfy mask constraints after " +
                          std::to_string(max_attempts) + " attempts (seed " +
                          std::to_string(spec.seed) + ")");
}

std::vector<std::int64_t> Dataset::record_indices(Split split) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].split == split) out.push_back(static_cast<std::int64_t>(i));
    return out;
}

std::vector<std::int64_t> Dataset::sample_indices(Split split) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].split == split) out.push_back(static_cast<std::int64_t>(i));
    return out;
}

Dataset make_dataset(const DatasetParams& params) {
    if (params.n_samples < 1) throw ConfigError("dataset: n_samples must be >= 1");
    const auto& fams = shape_families();

    // holdout sanity
    std::map<std::string, std::set<std::string>> held;
    for (const auto& [family, affordance] : params.holdout) {
        const auto& defs = family_affordances(family);  // throws on unknown family
        const bool known = std::any_of(defs.begin(), defs.end(),
                                       [&](const AffordanceDef& d) { return d.name == affordance; });
        if (!known)
            throw ConfigError("holdout: family '" + family + "' has no affordance '" +
                              affordance + "'");
        held[family].insert(affordance);
    }
    for (const auto& [family, set] : held)
        if (set.size() >= family_affordances(family).size())
            throw ConfigError("holdout covers every affordance of family '" + family + "'");

    const auto& f = params.fractions;
    if (f.stage1 < 0 || f.stage2 < 0 || f.val < 0 || f.test < 0 ||
        f.stage1 + f.stage2 + f.val + f.test > 1.0 + 1e-9)
        throw ConfigError("dataset: split fractions must be non-negative and sum to <= 1");
    if (f.test > 0.0 && params.holdout.empty())
        throw ConfigError("dataset: open-set test split requires a nonempty holdout");

    const std::int64_t n = params.n_samples;
    std::int64_t n1 = static_cast<std::int64_t>(f.stage1 * static_cast<double>(n));
    std::int64_t n2 = static_cast<std::int64_t>(f.stage2 * static_cast<double>(n));
    std::int64_t nv = static_cast<std::int64_t>(f.val * static_cast<double>(n));
    std::int64_t nt = static_cast<std::int64_t>(f.test * static_cast<double>(n));
    n2 += n - (n1 + n2 + nv + nt);  // remainder goes to stage-2 training
    auto ensure_nonempty = [&](double frac, std::int64_t& target) {
        if (frac > 0.0 && target == 0 && n2 > 1) {
            --n2;
            ++target;
        }
    };
    ensure_nonempty(f.stage1, n1);
    ensure_nonempty(f.val, nv);
    ensure_nonempty(f.test, nt);

    std::vector<Split> assignment;
    assignment.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n1; ++i) assignment.push_back(Split::Stage1Train);
    for (std::int64_t i = 0; i < n2; ++i) assignment.push_back(Split::Stage2Train);
    for (std::int64_t i = 0; i < nv; ++i) assignment.push_back(Split::Val);
    for (std::int64_t i = 0; i < nt; ++i) assignment.push_back(Split::OpenSetTest);

    Rng rng(mix64(params.seed ^ 0xda7a5e7dull));
    for (std::size_t i = assignment.size(); i > 1; --i)
        std::swap(assignment[i - 1], assignment[rng.below(i)]);

    std::vector<std::string> holdout_families;
    for (const auto& [family, set] : held) holdout_families.push_back(family);

    Dataset dataset;
    dataset.params = params;
    dataset.samples.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const Split split = assignment[static_cast<std::size_t>(i)];
        std::string family;
        if (split == Split::OpenSetTest) {
            family = holdout_families[rng.below(holdout_families.size())];
        } else {
            family = fams[rng.below(fams.size())];
        }
        const std::uint64_t sample_seed = mix64(params.seed ^ mix64(static_cast<std::uint64_t>(i) + 1));
        Sample sample = generate(sample_spec(family, sample_seed), params.n_points,
                                 params.noise_sigma);
        sample.split = split;
        dataset.samples.push_back(std::move(sample));
    }

    // records
    static const std::set<std::string> no_holdout;
    for (std::size_t si = 0; si < dataset.samples.size(); ++si) {
        const Sample& sample = dataset.samples[si];
        const std::string& family = sample.spec.family;
        const auto& held_here = held.count(family) ? held.at(family) : no_holdout;
        if (sample.split == Split::Stage1Train) {
            for (std::size_t part = 0; part < sample.part_names.size(); ++part) {
                DataRecord rec;
                rec.sample_index = static_cast<std::int64_t>(si);
                rec.query = "the " + sample.part_names[part];
                rec.cls = sample.part_names[part];
                rec.family = family;
                rec.split = sample.split;
                rec.gt.resize(sample.part_labels.size());
                for (std::size_t i = 0; i < sample.part_labels.size(); ++i)
                    rec.gt[i] = sample.part_labels[i] == static_cast<int>(part) ? 1 : 0;
                dataset.records.push_back(std::move(rec));
            }
            continue;
        }
        for (const AffordanceDef& def : family_affordances(family)) {
            const bool is_held = held_here.count(def.name) > 0;
            if (sample.split == Split::OpenSetTest ? !is_held : is_held) continue;
            DataRecord rec;
            rec.sample_index = static_cast<std::int64_t>(si);
            const bool use_synonym = rng.uniform() < 0.5;
            rec.query = (use_synonym ? def.synonym : def.name) + " the " + family;
            rec.cls = def.name;
            rec.family = family;
            rec.split = sample.split;
            rec.gt = sample.affordance_masks.at(def.name);
            dataset.records.push_back(std::move(rec));
        }
    }

    // lexical overlap: every held-out query must share a word with some
    // stage-2 training query, otherwise the hash-embedding stand-in has no
    // anchor at all
    std::set<std::string> train_words;
    for (const auto& rec : dataset.records)
        if (rec.split == Split::Stage2Train)
            for (const auto& w : parse_query(rec.query).words) train_words.insert(w);
    for (const auto& rec : dataset.records) {
        if (rec.split != Split::OpenSetTest) continue;
        bool overlap = false;
        for (const auto& w : parse_query(rec.query).words) overlap = overlap || train_words.count(w) > 0;
        if (!overlap)
            throw ConfigError("held-out query '" + rec.query +
                              "' shares no word with any training query");
    }
    return dataset;
}

// ---- file formats ----

void write_binary_mask(const std::string& path, const Mask& mask) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write mask file: " + path);
    for (auto v : mask) out << (v ? '1' : '0') << '\n';
    if (!out) throw IoError("failed writing mask file: " + path);
}

Mask read_binary_mask(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mask file: " + path);
    Mask mask;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (line == "1") {
            mask.push_back(1);
        } else if (line == "0") {
            mask.push_back(0);
        } else {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 0 or 1, got '" +
                             line + "'");
        }
    }
    if (mask.empty()) throw ParseError(path + ": empty mask");
    return mask;
}

std::string holdout_str(const std::vector<std::pair<std::string, std::string>>& holdout) {
    std::string out;
    for (std::size_t i = 0; i < holdout.size(); ++i) {
        if (i) out += ',';
        out += holdout[i].first + ":" + holdout[i].second;
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_holdout(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("holdout entry '" + item + "' is not family:affordance");
        out.emplace_back(item.substr(0, colon), item.substr(colon + 1));
    }
    return out;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "clouds", ec);
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) throw IoError("cannot create dataset directories under " + dir);

    char name[64];
    for (std::size_t si = 0; si < dataset.samples.size(); ++si) {
        std::snprintf(name, sizeof(name), "clouds/s%05zu.xyz", si);
        write_cloud_file((fs::path(dir) / name).string(), dataset.samples[si].cloud,
                         dataset.samples[si].part_labels);
    }

    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot write manifest under " + dir);
    const auto& p = dataset.params;
    manifest << "# afford3d dataset manifest\n";
    manifest << "# n_samples=" << p.n_samples << " seed=" << p.seed << " n_points=" << p.n_points
             << " noise_sigma=" << p.noise_sigma << "\n";
    manifest << "# holdout=" << holdout_str(p.holdout) << "\n";
    manifest << "# fractions=" << p.fractions.stage1 << "," << p.fractions.stage2 << ","
             << p.fractions.val << "," << p.fractions.test << "\n";
    manifest << "# columns: cloud\tquery\tmask\tclass\tsplit\tfamily\n";
    for (std::size_t ri = 0; ri < dataset.records.size(); ++ri) {
        const DataRecord& rec = dataset.records[ri];
        std::snprintf(name, sizeof(name), "masks/r%06zu.txt", ri);
        write_binary_mask((fs::path(dir) / name).string(), rec.gt);
        char cloud_name[64];
        std::snprintf(cloud_name, sizeof(cloud_name), "clouds/s%05lld.xyz",
                      static_cast<long long>(rec.sample_index));
        manifest << cloud_name << '\t' << rec.query << '\t' << name << '\t' << rec.cls << '\t'
                 << split_str(rec.split) << '\t' << rec.family << '\n';
    }
    if (!manifest) throw IoError("failed writing manifest under " + dir);
}

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    Dataset dataset;
    std::map<std::string, std::int64_t> cloud_to_sample;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::string col;
        std::istringstream is(line);
        while (std::getline(is, col, '\t')) cols.push_back(col);
        if (cols.size() != 6)
            throw ParseError(manifest_path + ":" + std::to_string(line_no) +
                             ": expected 6 tab-separated columns, got " +
                             std::to_string(cols.size()));
        DataRecord rec;
        rec.query = cols[1];
        rec.cls = cols[3];
        rec.split = parse_split(cols[4]);
        rec.family = cols[5];
        auto it = cloud_to_sample.find(cols[0]);
        if (it == cloud_to_sample.end()) {
            LabeledCloud lc = read_cloud_file((base / cols[0]).string());
            Sample sample;
            sample.cloud = std::move(lc.cloud);
            sample.part_labels = std::move(lc.labels);
            sample.spec.family = rec.family;
            sample.split = rec.split;
            dataset.samples.push_back(std::move(sample));
            it = cloud_to_sample
                     .emplace(cols[0], static_cast<std::int64_t>(dataset.samples.size() - 1))
                     .first;
        }
        rec.sample_index = it->second;
        rec.gt = read_binary_mask((base / cols[2]).string());
        if (rec.gt.size() != dataset.samples[static_cast<std::size_t>(rec.sample_index)]
                                 .cloud.points.size())
            throw ParseError(manifest_path + ":" + std::to_string(line_no) +
                             ": mask length does not match cloud size");
        dataset.records.push_back(std::move(rec));
    }
    if (dataset.records.empty()) throw ParseError(manifest_path + ": no records");
    dataset.params.n_samples = static_cast<std::int64_t>(dataset.samples.size());
    if (!dataset.samples.empty())
        dataset.params.n_points = dataset.samples[0].cloud.size();
    return dataset;
}

}  // namespace afford3d
