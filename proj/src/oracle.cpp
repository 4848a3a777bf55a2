// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/oracle.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gags/image_io.hpp"
#include "gags/tensor_file.hpp"

namespace gags {

const std::array<std::string, 4> Codebook::kCanonicalNames = {
    "object", "things", "stuff", "texture"};

namespace {

constexpr double kPi = 3.14159265358979323846;

Eigen::VectorXd random_unit(Rng& rng, int dim) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.normal();
    double n = v.norm();
    while (n < 1e-9) {
        for (int i = 0; i < dim; ++i) v[i] = rng.normal();
        n = v.norm();
    }
    return v / n;
}

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

nlohmann::json vec3_to_json(const Vec3<double>& v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

Vec3<double> vec3_from_json(const nlohmann::json& a) {
    return Vec3<double>(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

}  // namespace

Codebook Codebook::generate(const std::vector<std::string>& labels, int dim,
                            std::uint64_t seed) {
    Codebook cb;
    cb.dim = dim;
    const int needed = static_cast<int>(labels.size()) + 4;
    Rng rng = Rng::stream(seed, 0x636f6465ull);

    std::vector<Eigen::VectorXd> vectors;
    if (needed <= dim) {
        Eigen::MatrixXd m(dim, dim);
        for (int r = 0; r < dim; ++r)
            for (int c = 0; c < dim; ++c) m(r, c) = rng.normal();
        Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
        for (int k = 0; k < needed; ++k) vectors.push_back(q.col(k));
    } else {
        std::fprintf(stderr,
                     "[gags] warning: %d labels exceed codebook dim %d, using "
                     "random (non-orthogonal) unit vectors\n",
                     needed, dim);
        for (int k = 0; k < needed; ++k) vectors.push_back(random_unit(rng, dim));
    }

    for (int k = 0; k < 4; ++k) cb.canonical[k] = vectors[k];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (cb.features.count(labels[i]))
            throw DataError("duplicate label in codebook: " + labels[i]);
        cb.features[labels[i]] = vectors[4 + i];
    }
    cb.text = cb.features;
    return cb;
}

const Eigen::VectorXd& Codebook::feature(const std::string& label) const {
    auto it = features.find(label);
    if (it == features.end()) throw DataError("codebook missing label: " + label);
    return it->second;
}

const Eigen::VectorXd& Codebook::text_embedding(const std::string& label) const {
    auto it = text.find(label);
    if (it == text.end()) throw DataError("codebook text table missing: " + label);
    return it->second;
}

void Codebook::validate() const {
    auto check_unit = [](const Eigen::VectorXd& v, const std::string& what) {
        if (std::abs(v.norm() - 1.0) > 1e-6)
            throw DataError("codebook vector not unit norm: " + what);
    };
    for (int k = 0; k < 4; ++k) {
        if (canonical[k].size() != dim)
            throw DataError("canonical entry missing or wrong dim");
        check_unit(canonical[k], kCanonicalNames[k]);
    }
    for (const auto& [label, v] : features) {
        if (v.size() != dim) throw DataError("codebook dim mismatch: " + label);
        check_unit(v, label);
    }
    for (const auto& [label, v] : text) {
        if (v.size() != dim) throw DataError("codebook text dim mismatch: " + label);
        check_unit(v, label);
    }
}

nlohmann::json Codebook::to_json() const {
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [label, v] : features) labels[label] = vec_to_json(v);
    nlohmann::json canon = nlohmann::json::object();
    for (int k = 0; k < 4; ++k) canon[kCanonicalNames[k]] = vec_to_json(canonical[k]);
    nlohmann::json text_table = nlohmann::json::object();
    for (const auto& [label, v] : text) text_table[label] = vec_to_json(v);
    return {{"dim", dim}, {"labels", labels}, {"canonical", canon}, {"text", text_table}};
}

Codebook Codebook::from_json(const nlohmann::json& j) {
    Codebook cb;
    cb.dim = j.at("dim").get<int>();
    for (const auto& [label, v] : j.at("labels").items())
        cb.features[label] = vec_from_json(v);
    for (int k = 0; k < 4; ++k) {
        const auto& canon = j.at("canonical");
        if (!canon.contains(kCanonicalNames[k]))
            throw DataError("codebook missing canonical entry: " + kCanonicalNames[k]);
        cb.canonical[k] = vec_from_json(canon.at(kCanonicalNames[k]));
    }
    for (const auto& [label, v] : j.at("text").items())
        cb.text[label] = vec_from_json(v);
    cb.validate();
    return cb;
}

// ---------------------------------------------------------------------------
// Scene spec JSON

namespace {

SceneNode node_from_json(const nlohmann::json& j, int depth) {
    if (depth > 2) throw DataError("scene hierarchy deeper than three levels");
    SceneNode n;
    n.label = j.at("label").get<std::string>();
    std::string shape = j.at("shape").get<std::string>();
    if (shape == "box")
        n.shape = SceneNode::Shape::Box;
    else if (shape == "sphere")
        n.shape = SceneNode::Shape::Sphere;
    else if (shape == "disk")
        n.shape = SceneNode::Shape::Disk;
    else
        throw DataError("unknown shape: " + shape);
    n.center = vec3_from_json(j.at("center"));
    n.extent = vec3_from_json(j.at("extent"));
    if (j.contains("parts"))
        for (const auto& c : j.at("parts")) n.parts.push_back(node_from_json(c, depth + 1));
    return n;
}

nlohmann::json node_to_json(const SceneNode& n) {
    const char* shape = n.shape == SceneNode::Shape::Box      ? "box"
                        : n.shape == SceneNode::Shape::Sphere ? "sphere"
                                                              : "disk";
    nlohmann::json j = {{"label", n.label},
                        {"shape", shape},
                        {"center", vec3_to_json(n.center)},
                        {"extent", vec3_to_json(n.extent)}};
    if (!n.parts.empty()) {
        nlohmann::json parts = nlohmann::json::array();
        for (const auto& c : n.parts) parts.push_back(node_to_json(c));
        j["parts"] = parts;
    }
    return j;
}

}  // namespace

nlohmann::json SceneSpec::to_json() const {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : objects) objs.push_back(node_to_json(o));
    return {{"seed", seed},
            {"gaussians_per_unit_area", gaussians_per_unit_area},
            {"feature_dim", feature_dim},
            {"codebook_dim", codebook_dim},
            {"codebook_parent_mix", codebook_parent_mix},
            {"codebook_synonyms",
             [this] {
                 nlohmann::json arr = nlohmann::json::array();
                 for (const auto& syn : codebook_synonyms)
                     arr.push_back({{"a", syn.a}, {"b", syn.b}, {"cosine", syn.cosine}});
                 return arr;
             }()},
            {"camera_ring",
             {{"count", ring.count},
              {"radius_min", ring.radius_min},
              {"radius_max", ring.radius_max},
              {"height", ring.height},
              {"look_at", vec3_to_json(ring.look_at)},
              {"image_width", ring.image_width},
              {"image_height", ring.image_height},
              {"fov_y_deg", ring.fov_y_deg},
              {"near", ring.near_clip},
              {"far", ring.far_clip}}},
            {"objects", objs}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    SceneSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.gaussians_per_unit_area = j.at("gaussians_per_unit_area").get<double>();
    if (j.contains("feature_dim")) spec.feature_dim = j.at("feature_dim").get<int>();
    if (j.contains("codebook_dim")) spec.codebook_dim = j.at("codebook_dim").get<int>();
    if (j.contains("codebook_parent_mix"))
        spec.codebook_parent_mix = j.at("codebook_parent_mix").get<double>();
    if (j.contains("codebook_synonyms"))
        for (const auto& syn : j.at("codebook_synonyms"))
            spec.codebook_synonyms.push_back({syn.at("a").get<std::string>(),
                                              syn.at("b").get<std::string>(),
                                              syn.at("cosine").get<double>()});
    const auto& r = j.at("camera_ring");
    spec.ring.count = r.at("count").get<int>();
    spec.ring.radius_min = r.at("radius_min").get<double>();
    spec.ring.radius_max = r.at("radius_max").get<double>();
    spec.ring.height = r.at("height").get<double>();
    spec.ring.look_at = vec3_from_json(r.at("look_at"));
    spec.ring.image_width = r.at("image_width").get<int>();
    spec.ring.image_height = r.at("image_height").get<int>();
    spec.ring.fov_y_deg = r.at("fov_y_deg").get<double>();
    spec.ring.near_clip = r.at("near").get<double>();
    spec.ring.far_clip = r.at("far").get<double>();
    for (const auto& o : j.at("objects")) spec.objects.push_back(node_from_json(o, 0));
    return spec;
}

nlohmann::json SceneLabels::to_json() const {
    nlohmann::json levels = nlohmann::json::array();
    for (int l = 0; l < 3; ++l) levels.push_back(region_labels[l]);
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& g : gaussian_regions)
        regions.push_back(nlohmann::json::array({g[0], g[1], g[2]}));
    return {{"region_labels", levels}, {"gaussian_regions", regions}};
}

SceneLabels SceneLabels::from_json(const nlohmann::json& j) {
    SceneLabels labels;
    for (int l = 0; l < 3; ++l)
        labels.region_labels[l] =
            j.at("region_labels")[l].get<std::vector<std::string>>();
    for (const auto& g : j.at("gaussian_regions"))
        labels.gaussian_regions.push_back(
            {g[0].get<std::uint32_t>(), g[1].get<std::uint32_t>(), g[2].get<std::uint32_t>()});
    return labels;
}

// ---------------------------------------------------------------------------
// Scene generation

namespace {

struct SurfaceSample {
    Vec3<double> position;
    Vec3<double> normal;
};

double primitive_area(const SceneNode& n) {
    const Vec3<double>& e = n.extent;
    switch (n.shape) {
        case SceneNode::Shape::Box:
            return 8.0 * (e.x() * e.y() + e.y() * e.z() + e.z() * e.x());
        case SceneNode::Shape::Sphere: {
            // Thomsen approximation, exact for spheres
            const double p = 1.6075;
            double a = std::pow(e.x(), p), b = std::pow(e.y(), p), c = std::pow(e.z(), p);
            return 4.0 * kPi * std::pow((a * b + b * c + c * a) / 3.0, 1.0 / p);
        }
        case SceneNode::Shape::Disk:
            return kPi * e.x() * e.y();
    }
    return 0.0;
}

SurfaceSample sample_surface(const SceneNode& n, Rng& rng) {
    SurfaceSample s;
    const Vec3<double>& e = n.extent;
    switch (n.shape) {
        case SceneNode::Shape::Sphere: {
            Eigen::VectorXd dir = random_unit(rng, 3);
            Vec3<double> u(dir[0], dir[1], dir[2]);
            s.position = n.center + u.cwiseProduct(e);
            s.normal = u;
            break;
        }
        case SceneNode::Shape::Box: {
            double ax = e.y() * e.z(), ay = e.x() * e.z(), az = e.x() * e.y();
            double total = 2 * (ax + ay + az);
            double u = rng.uniform(0.0, total);
            int axis;
            double sign;
            if (u < 2 * ax) {
                axis = 0;
                sign = u < ax ? 1.0 : -1.0;
            } else if (u < 2 * ax + 2 * ay) {
                axis = 1;
                sign = (u - 2 * ax) < ay ? 1.0 : -1.0;
            } else {
                axis = 2;
                sign = (u - 2 * ax - 2 * ay) < az ? 1.0 : -1.0;
            }
            Vec3<double> p;
            for (int k = 0; k < 3; ++k) p[k] = rng.uniform(-e[k], e[k]);
            p[axis] = sign * e[axis];
            s.position = n.center + p;
            s.normal = Vec3<double>::Zero();
            s.normal[axis] = sign;
            break;
        }
        case SceneNode::Shape::Disk: {
            double r = std::sqrt(rng.uniform());
            double a = rng.uniform(0.0, 2.0 * kPi);
            s.position = n.center + Vec3<double>(r * std::cos(a) * e.x(),
                                                 r * std::sin(a) * e.y(), 0.0);
            s.normal = Vec3<double>::UnitZ();
            break;
        }
    }
    return s;
}

Vec3<double> label_color(const std::string& label) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : label) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    double hue = static_cast<double>(h % 360u);
    double x = 1.0 - std::abs(std::fmod(hue / 60.0, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    if (hue < 60) { r = 1; g = x; }
    else if (hue < 120) { r = x; g = 1; }
    else if (hue < 180) { g = 1; b = x; }
    else if (hue < 240) { g = x; b = 1; }
    else if (hue < 300) { r = x; b = 1; }
    else { r = 1; b = x; }
    return Vec3<double>(0.25 + 0.75 * r, 0.25 + 0.75 * g, 0.25 + 0.75 * b);
}

struct LeafInstance {
    const SceneNode* node;
    std::array<std::uint32_t, 3> ids;  // (sub, part, whole)
};

// Registers instance ids level by level. Leaves above the sub-part level
// get mirror instances below them so every Gaussian carries a full
// (sub, part, whole) triple.
void collect_leaves(const SceneNode& node, int depth,
                    std::array<std::uint32_t, 3> inherited,
                    std::array<std::vector<std::string>, 3>& tables,
                    std::vector<LeafInstance>& leaves) {
    int level = 2 - depth;  // whole = 2, part = 1, sub = 0
    tables[level].push_back(node.label);
    inherited[level] = static_cast<std::uint32_t>(tables[level].size());
    if (node.parts.empty()) {
        for (int l = level - 1; l >= 0; --l) {
            tables[l].push_back(node.label);
            inherited[l] = static_cast<std::uint32_t>(tables[l].size());
        }
        leaves.push_back({&node, inherited});
        return;
    }
    for (const auto& child : node.parts)
        collect_leaves(child, depth + 1, inherited, tables, leaves);
}

}  // namespace

Scene gen_scene(const SceneSpec& spec) {
    if (spec.objects.empty()) throw DataError("scene spec has no objects");
    Scene scene;
    scene.field.feature_dim = spec.feature_dim;

    std::vector<LeafInstance> leaves;
    for (const auto& obj : spec.objects)
        collect_leaves(obj, 0, {0, 0, 0}, scene.labels.region_labels, leaves);

    Rng rng = Rng::stream(spec.seed, 0x7363656eull);
    for (const auto& leaf : leaves) {
        const SceneNode& node = *leaf.node;
        if (!(node.extent.minCoeff() > 0.0) &&
            !(node.shape == SceneNode::Shape::Disk && node.extent.head<2>().minCoeff() > 0.0))
            throw DataError("degenerate primitive extent for label: " + node.label);
        double area = primitive_area(node);
        if (!(area > 0.0)) throw DataError("degenerate primitive extent for label: " + node.label);
        long count = std::max<long>(1, std::lround(area * spec.gaussians_per_unit_area));
        double spacing = std::sqrt(area / static_cast<double>(count));
        Vec3<double> color = label_color(node.label);
        for (long k = 0; k < count; ++k) {
            SurfaceSample s = sample_surface(node, rng);
            Gaussiand g;
            g.position = s.position;
            g.scale = Vec3<double>(0.6 * spacing, 0.6 * spacing, 0.15 * spacing);
            g.rotation = Eigen::Quaterniond::FromTwoVectors(Vec3<double>::UnitZ(), s.normal);
            g.normalize_rotation();
            g.opacity = 0.9;
            g.color = color;
            g.feature = Eigen::VectorXd::Zero(spec.feature_dim);
            scene.field.gaussians.push_back(std::move(g));
            scene.labels.gaussian_regions.push_back(leaf.ids);
        }
    }

    const CameraRing& ring = spec.ring;
    if (ring.count < 1) throw DataError("camera ring needs at least one view");
    for (int i = 0; i < ring.count; ++i) {
        double angle = 2.0 * kPi * static_cast<double>(i) / ring.count;
        double radius = ring.count > 1
                            ? ring.radius_min + (ring.radius_max - ring.radius_min) *
                                                    static_cast<double>(i) / (ring.count - 1)
                            : ring.radius_min;
        Vec3<double> eye = ring.look_at + Vec3<double>(radius * std::cos(angle),
                                                       radius * std::sin(angle),
                                                       ring.height);
        Camerad cam = look_at_camera<double>(
            eye, ring.look_at, Vec3<double>::UnitZ(), ring.image_width,
            ring.image_height, ring.fov_y_deg * kPi / 180.0, ring.near_clip,
            ring.far_clip);
        cam.validate();
        scene.cameras.push_back(cam);
    }

    // one codebook entry per distinct label
    std::vector<std::string> label_order;
    for (int l = 2; l >= 0; --l)
        for (const auto& name : scene.labels.region_labels[l])
            if (std::find(label_order.begin(), label_order.end(), name) == label_order.end())
                label_order.push_back(name);
    scene.codebook = Codebook::generate(label_order, spec.codebook_dim, spec.seed);

    // hierarchical correlation: blend each node's (orthogonal) vector with its
    // parent's; with orthogonal inputs the result stays unit norm
    if (spec.codebook_parent_mix != 0.0) {
        double mu = spec.codebook_parent_mix;
        if (!(mu > -1.0 && mu < 1.0))
            throw DataError("codebook_parent_mix must lie in (-1, 1)");
        double ortho = std::sqrt(1.0 - mu * mu);
        auto remix = [&](auto&& self, const SceneNode& node,
                         const Eigen::VectorXd* parent) -> void {
            Eigen::VectorXd& own = scene.codebook.features.at(node.label);
            if (parent) own = (mu * *parent + ortho * own).normalized();
            for (const auto& child : node.parts) self(self, child, &own);
        };
        for (const auto& obj : spec.objects) remix(remix, obj, nullptr);
        scene.codebook.text = scene.codebook.features;
    }
    for (const auto& syn : spec.codebook_synonyms) {
        const Eigen::VectorXd& anchor = scene.codebook.feature(syn.a);
        Eigen::VectorXd& other = scene.codebook.features.at(syn.b);
        if (!(syn.cosine > -1.0 && syn.cosine < 1.0))
            throw DataError("synonym cosine must lie in (-1, 1)");
        Eigen::VectorXd ortho = other - anchor * anchor.dot(other);
        double n = ortho.norm();
        if (n < 1e-9) throw DataError("synonym pair is already parallel");
        other = (syn.cosine * anchor +
                 std::sqrt(1.0 - syn.cosine * syn.cosine) * ortho / n)
                    .normalized();
        scene.codebook.text = scene.codebook.features;
    }
    return scene;
}

std::array<Image<std::uint32_t>, 3> render_gt_labels(const GaussianFieldd& field,
                                                     const Camerad& camera,
                                                     const SceneLabels& labels,
                                                     int threads) {
    if (labels.gaussian_regions.size() != field.size())
        throw DataError("scene labels do not match field size");
    RenderOptions<double> opts;
    opts.skip_features = true;
    opts.threads = threads;
    RenderOutput<double> ro = render(field, camera, opts);
    std::array<Image<std::uint32_t>, 3> out;
    for (int l = 0; l < 3; ++l)
        out[l] = Image<std::uint32_t>(ro.width, ro.height, 0);
    for (int y = 0; y < ro.height; ++y)
        for (int x = 0; x < ro.width; ++x) {
            std::uint32_t g = ro.dominant(x, y);
            if (g == kNoGaussian) continue;
            for (int l = 0; l < 3; ++l)
                out[l](x, y) = labels.gaussian_regions[g][l];
        }
    return out;
}

const RegionEntry* GranularityMasks::find_region(int lvl, std::uint32_t id) const {
    for (const auto& r : regions[lvl])
        if (r.id == id) return &r;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Synthetic segmenter

GranularityMasks synth_segment(const std::array<Image<std::uint32_t>, 3>& gt,
                               const std::vector<PromptPoint>& prompts,
                               const SceneLabels& labels,
                               const SegmentNoise& noise, std::uint64_t seed) {
    GranularityMasks out;
    const int w = gt[0].width(), h = gt[0].height();
    for (int l = 0; l < 3; ++l) {
        if (!gt[l].same_shape(w, h)) throw DataError("gt label maps differ in shape");
        out.level[l] = Image<std::uint32_t>(w, h, 0);
    }
    if (prompts.empty()) {
        std::fprintf(stderr, "[gags] warning: no prompt points, masks are empty\n");
        return out;
    }

    for (int l = 0; l < 3; ++l) {
        Rng rng = Rng::stream(seed, 0x73656700ull + static_cast<std::uint64_t>(l));
        const std::uint32_t max_id =
            static_cast<std::uint32_t>(labels.region_labels[l].size());

        // prompt count per ground-truth region
        std::vector<long> prompt_count(max_id + 1, 0);
        for (const auto& p : prompts) {
            if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h) continue;
            std::uint32_t id = gt[l](p.x, p.y);
            if (id > 0 && id <= max_id) ++prompt_count[id];
        }

        // activation + drop noise
        std::vector<char> active(max_id + 1, 0);
        for (std::uint32_t id = 1; id <= max_id; ++id) {
            if (prompt_count[id] == 0) continue;
            if (noise.p_drop[l] > 0.0 && rng.bernoulli(noise.p_drop[l])) continue;
            active[id] = 1;
        }

        // merge noise: under-prompted regions join the active neighbor with
        // the longest shared boundary (8-neighborhood), via union-find
        std::vector<std::uint32_t> parent(max_id + 1);
        std::iota(parent.begin(), parent.end(), 0u);
        auto find_root = [&](std::uint32_t a) {
            while (parent[a] != a) {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            return a;
        };
        if (noise.p_merge[l] > 0.0) {
            std::vector<std::map<std::uint32_t, long>> boundary(max_id + 1);
            auto touch = [&](std::uint32_t a, std::uint32_t b) {
                if (a == b || a == 0 || b == 0) return;
                if (!active[a] || !active[b]) return;
                ++boundary[a][b];
                ++boundary[b][a];
            };
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    std::uint32_t a = gt[l](x, y);
                    if (x + 1 < w) touch(a, gt[l](x + 1, y));
                    if (y + 1 < h) touch(a, gt[l](x, y + 1));
                    if (x + 1 < w && y + 1 < h) touch(a, gt[l](x + 1, y + 1));
                    if (x > 0 && y + 1 < h) touch(a, gt[l](x - 1, y + 1));
                }
            for (std::uint32_t id = 1; id <= max_id; ++id) {
                if (!active[id]) continue;
                if (prompt_count[id] >= noise.merge_prompt_threshold) continue;
                if (!rng.bernoulli(noise.p_merge[l])) continue;
                std::uint32_t best = 0;
                long best_len = 0;
                for (const auto& [nb, len] : boundary[id]) {
                    if (find_root(nb) == find_root(id)) continue;
                    if (len > best_len) {
                        best_len = len;
                        best = nb;
                    }
                }
                if (best != 0) parent[find_root(id)] = find_root(best);
            }
        }

        // contiguous output ids in ascending root order
        std::map<std::uint32_t, std::uint32_t> root_to_out;
        for (std::uint32_t id = 1; id <= max_id; ++id) {
            if (!active[id]) continue;
            std::uint32_t root = find_root(id);
            if (!root_to_out.count(root)) {
                std::uint32_t out_id = static_cast<std::uint32_t>(root_to_out.size()) + 1;
                root_to_out[root] = out_id;
                out.regions[l].push_back(
                    {out_id, 0, labels.region_labels[l][root - 1]});
            }
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                std::uint32_t id = gt[l](x, y);
                if (id == 0 || id > max_id || !active[id]) continue;
                std::uint32_t out_id = root_to_out.at(find_root(id));
                out.level[l](x, y) = out_id;
                ++out.regions[l][out_id - 1].pixels;
            }
    }
    return out;
}

GranularityFeatures synth_embed(const GranularityMasks& masks,
                                const Codebook& codebook,
                                const std::array<double, 3>& level_noise,
                                std::uint64_t seed) {
    GranularityFeatures out;
    out.dim = codebook.dim;
    for (int l = 0; l < 3; ++l) {
        std::uint32_t max_id = 0;
        for (const auto& r : masks.regions[l]) max_id = std::max(max_id, r.id);
        out.feats[l].resize(max_id + 1);
        for (const auto& r : masks.regions[l]) {
            if (r.label.empty())
                throw DataError(
                    "synth_embed requires labeled (oracle-generated) regions; "
                    "use the ingestion path for real data");
            Eigen::VectorXd base = codebook.feature(r.label);
            double theta = level_noise[l];
            if (theta != 0.0) {
                Rng rng = Rng::stream(seed, 0x656d6200ull +
                                                (static_cast<std::uint64_t>(l) << 32) + r.id);
                Eigen::VectorXd r_vec = random_unit(rng, codebook.dim);
                Eigen::VectorXd u = r_vec - base * base.dot(r_vec);
                while (u.norm() < 1e-9) {
                    r_vec = random_unit(rng, codebook.dim);
                    u = r_vec - base * base.dot(r_vec);
                }
                u.normalize();
                base = std::cos(theta) * base + std::sin(theta) * u;
            }
            base.normalize();
            out.feats[l][r.id] = base;
        }
    }
    return out;
}

std::pair<GranularityMasks, GranularityFeatures> ingest(
    const std::array<std::string, 3>& mask_paths,
    const std::array<std::string, 3>& feature_paths) {
    GranularityMasks masks;
    GranularityFeatures feats;
    int w = -1, h = -1;
    for (int l = 0; l < 3; ++l) {
        masks.level[l] = read_mask(mask_paths[l]);
        if (w < 0) {
            w = masks.level[l].width();
            h = masks.level[l].height();
        } else if (!masks.level[l].same_shape(w, h)) {
            throw DataError("ingested masks differ in shape");
        }

        TensorFile t = read_tensor(feature_paths[l]);
        if (t.dtype != TensorFile::DType::F32 || t.shape.size() != 2)
            throw DataError("feature table must be a rank-2 f32 tensor: " +
                            feature_paths[l]);
        const std::uint32_t rows = t.shape[0];
        const std::uint32_t dim = t.shape[1];
        if (feats.dim == 0) feats.dim = static_cast<int>(dim);
        if (feats.dim != static_cast<int>(dim))
            throw DataError("feature tables disagree on dimension");

        std::map<std::uint32_t, long> pixel_counts;
        for (std::size_t i = 0; i < masks.level[l].size(); ++i) {
            std::uint32_t id = masks.level[l][i];
            if (id == 0) continue;
            if (id >= rows)
                throw DataError("mask region id " + std::to_string(id) +
                                " has no feature row in " + feature_paths[l]);
            ++pixel_counts[id];
        }

        feats.feats[l].resize(rows);
        double worst_drift = 0.0;
        for (const auto& [id, pixels] : pixel_counts) {
            Eigen::VectorXd v(dim);
            for (std::uint32_t c = 0; c < dim; ++c)
                v[c] = t.f32[static_cast<std::size_t>(id) * dim + c];
            double n = v.norm();
            if (n < 1e-9)
                throw DataError("feature row for region " + std::to_string(id) +
                                " is zero in " + feature_paths[l]);
            worst_drift = std::max(worst_drift, std::abs(n - 1.0));
            feats.feats[l][id] = v / n;
            masks.regions[l].push_back({id, pixels, ""});
        }
        if (worst_drift > 1e-3)
            std::fprintf(stderr,
                         "[gags] warning: ingested features drift %.2e from unit "
                         "norm in %s, renormalized\n",
                         worst_drift, feature_paths[l].c_str());
    }
    return {std::move(masks), std::move(feats)};
}

nlohmann::json cameras_to_json(const std::vector<Camerad>& cams) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cams) {
        nlohmann::json rot = nlohmann::json::array();
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) rot.push_back(c.rotation(r, k));
        arr.push_back({{"width", c.width},
                       {"height", c.height},
                       {"fx", c.fx},
                       {"fy", c.fy},
                       {"cx", c.cx},
                       {"cy", c.cy},
                       {"rotation", rot},
                       {"translation", vec3_to_json(c.translation)},
                       {"near", c.near_clip},
                       {"far", c.far_clip}});
    }
    return arr;
}

std::vector<Camerad> cameras_from_json(const nlohmann::json& j) {
    std::vector<Camerad> cams;
    for (const auto& cj : j) {
        Camerad c;
        c.width = cj.at("width").get<int>();
        c.height = cj.at("height").get<int>();
        c.fx = cj.at("fx").get<double>();
        c.fy = cj.at("fy").get<double>();
        c.cx = cj.at("cx").get<double>();
        c.cy = cj.at("cy").get<double>();
        const auto& rot = cj.at("rotation");
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[r * 3 + k].get<double>();
        c.translation = vec3_from_json(cj.at("translation"));
        c.near_clip = cj.at("near").get<double>();
        c.far_clip = cj.at("far").get<double>();
        c.validate();
        cams.push_back(c);
    }
    return cams;
}

}  // namespace gags
