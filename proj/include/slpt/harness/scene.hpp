#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "slpt/geometry/gaussian.hpp"
#include "slpt/harness/config.hpp"
#include "slpt/harness/io.hpp"
#include "slpt/losses/losses.hpp"
#include "slpt/rasterizer/rasterizer.hpp"

// Synthetic tabletop scenes: primitives on a ground plane, surface-sampled
// into disk splats, viewed by a ring of cameras. Ground-truth maps are
// rendered from the splats with the reference rasterizer.
namespace slpt::harness {

enum class Primitive { sphere, box, plane };

inline const char* primitive_name(Primitive p)
{
    switch (p) {
    case Primitive::sphere: return "sphere";
    case Primitive::box: return "box";
    case Primitive::plane: return "plane";
    }
    return "?";
}

struct SceneObject {
    Primitive type = Primitive::sphere;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double yaw = 0.0;                               // about +z, boxes only
    Eigen::Vector3d size = Eigen::Vector3d::Ones(); // sphere: radius in x; box: half extents; plane: half extents in x, y
    Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);
    std::vector<double> embedding;                  // unit norm, length S
};

// One disk splat per surface sample.
struct GroundTruthSplats {
    Tensor<double> means;   // {N,3}
    Tensor<double> quats;   // {N,4}
    Tensor<double> scales;  // {N,3}
    Tensor<double> opacity; // {N,1}
    Tensor<double> colors;  // {N,3}
    Tensor<double> sem;     // {N,S}
    std::vector<int> object;
};

struct SyntheticScene {
    std::vector<SceneObject> objects; // normalized frame
    GroundTruthSplats splats;
    std::vector<CameraRecord> cameras;
    PointCloud<double> points;        // P_raw: splat centers with their colors
};

// Ground-truth maps of one view, {H*W, C}. Depth is 0 where invalid.
struct ViewMaps {
    Tensor<double> rgb;
    Tensor<double> depth;
    Tensor<double> sem;
    Tensor<double> alpha;
};

namespace detail {

inline std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng)
{
    std::normal_distribution<double> n01;
    std::vector<double> v(dim);
    double norm = 0;
    do {
        norm = 0;
        for (auto& x : v) {
            x = n01(rng);
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

inline double bounding_radius(const SceneObject& o)
{
    return o.type == Primitive::sphere ? o.size[0] : std::hypot(o.size[0], o.size[1]);
}

inline double surface_area(const SceneObject& o)
{
    const auto& s = o.size;
    switch (o.type) {
    case Primitive::sphere: return 4.0 * std::numbers::pi * s[0] * s[0];
    case Primitive::box: return 8.0 * (s[0] * s[1] + s[1] * s[2] + s[0] * s[2]);
    case Primitive::plane: return 4.0 * s[0] * s[1];
    }
    return 0.0;
}

struct SurfaceSample {
    Eigen::Vector3d point;
    Eigen::Vector3d normal;
};

inline SurfaceSample sample_surface(const SceneObject& o, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto& s = o.size;
    SurfaceSample out;
    switch (o.type) {
    case Primitive::plane:
        out.point = o.center + Eigen::Vector3d(s[0] * u(rng), s[1] * u(rng), 0.0);
        out.normal = Eigen::Vector3d::UnitZ();
        break;
    case Primitive::sphere: {
        std::normal_distribution<double> n01;
        Eigen::Vector3d d;
        do d = Eigen::Vector3d(n01(rng), n01(rng), n01(rng));
        while (d.norm() < 1e-9);
        out.normal = d.normalized();
        out.point = o.center + s[0] * out.normal;
        break;
    }
    case Primitive::box: {
        // Face pairs weighted by area: (±x: 4 s1 s2), (±y: 4 s0 s2), (±z: 4 s0 s1).
        const double ax = s[1] * s[2], ay = s[0] * s[2], az = s[0] * s[1];
        std::uniform_real_distribution<double> pick(0.0, ax + ay + az);
        const double r = pick(rng);
        const int axis = r < ax ? 0 : (r < ax + ay ? 1 : 2);
        const double side = u(rng) < 0 ? -1.0 : 1.0;
        Eigen::Vector3d local(s[0] * u(rng), s[1] * u(rng), s[2] * u(rng));
        local[axis] = side * s[axis];
        Eigen::Vector3d n = Eigen::Vector3d::Zero();
        n[axis] = side;
        const Eigen::Matrix3d rot = Eigen::AngleAxisd(o.yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
        out.point = o.center + rot * local;
        out.normal = rot * n;
        break;
    }
    }
    return out;
}

// Base color with view-independent diffuse shading from a fixed light.
inline Eigen::Vector3d shade(const SceneObject& o, const Eigen::Vector3d& normal)
{
    const Eigen::Vector3d light = Eigen::Vector3d(0.4, -0.3, 0.85).normalized();
    const double k = 0.55 + 0.45 * std::max(0.0, normal.dot(light));
    return (o.color * k).cwiseMin(1.0).cwiseMax(0.0);
}

// Largest-remainder split of `total` proportional to `weights`.
inline std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total)
{
    double sum = 0;
    for (double w : weights) sum += w;
    std::vector<std::size_t> out(weights.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / sum;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        used += out[i];
        rem.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < total; ++k, ++used) out[rem[k % rem.size()].second] += 1;
    return out;
}

} // namespace detail

// Ground plane plus randomly placed spheres and boxes resting on it, in
// unnormalized units.
inline std::vector<SceneObject> sample_objects(const TrainingConfig& cfg, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SceneObject> objs;
    SceneObject plane;
    plane.type = Primitive::plane;
    plane.size = Eigen::Vector3d(0.5, 0.5, 0.0);
    plane.color = Eigen::Vector3d(0.35 + 0.3 * u(rng), 0.35 + 0.3 * u(rng), 0.35 + 0.3 * u(rng));
    objs.push_back(plane);

    const std::size_t span = cfg.scene.max_objects - cfg.scene.min_objects + 1;
    const std::size_t count = cfg.scene.min_objects + static_cast<std::size_t>(u(rng) * static_cast<double>(span)) % span;
    for (std::size_t k = 0; k < count; ++k) {
        SceneObject o;
        o.type = u(rng) < 0.5 ? Primitive::sphere : Primitive::box;
        if (o.type == Primitive::sphere) {
            const double r = 0.1 + 0.08 * u(rng);
            o.size = Eigen::Vector3d(r, r, r);
        } else {
            o.size = Eigen::Vector3d(0.07 + 0.08 * u(rng), 0.07 + 0.08 * u(rng), 0.06 + 0.1 * u(rng));
            o.yaw = std::numbers::pi * u(rng);
        }
        o.color = Eigen::Vector3d(0.15 + 0.8 * u(rng), 0.15 + 0.8 * u(rng), 0.15 + 0.8 * u(rng));
        // Rejection placement inside the plane without overlapping earlier objects.
        for (int attempt = 0; attempt < 200; ++attempt) {
            const double lim = 0.5 - detail::bounding_radius(o);
            o.center = Eigen::Vector3d((2 * u(rng) - 1) * lim, (2 * u(rng) - 1) * lim, o.size[2]);
            bool clear = true;
            for (std::size_t j = 1; j < objs.size(); ++j) {
                const Eigen::Vector2d d = (o.center - objs[j].center).head<2>();
                clear = clear && d.norm() > detail::bounding_radius(o) + detail::bounding_radius(objs[j]) + 0.02;
            }
            if (clear) break;
        }
        objs.push_back(o);
    }
    return objs;
}

// Surface samples → normalized splats, P_raw, semantic embeddings and cameras.
// Coordinates are rounded to float and colors to 8 bits so the scene equals
// what the dataset files store.
inline SyntheticScene build_scene(std::vector<SceneObject> objects, const TrainingConfig& cfg, std::mt19937_64& rng)
{
    require(!objects.empty(), "build_scene: need at least one object");
    const std::size_t n = cfg.num_points, sdim = cfg.sem_dim;
    for (auto& o : objects) o.embedding = detail::random_unit(sdim, rng);

    std::vector<double> areas;
    for (const auto& o : objects) areas.push_back(detail::surface_area(o));
    const auto counts = detail::apportion(areas, n);

    std::vector<detail::SurfaceSample> samples;
    std::vector<int> owner;
    samples.reserve(n);
    for (std::size_t k = 0; k < objects.size(); ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) {
            samples.push_back(detail::sample_surface(objects[k], rng));
            owner.push_back(static_cast<int>(k));
        }

    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = Eigen::Vector3d::Constant(-1e300);
    for (const auto& s : samples) {
        lo = lo.cwiseMin(s.point);
        hi = hi.cwiseMax(s.point);
    }
    const Eigen::Vector3d mid = 0.5 * (lo + hi);
    const double scale = 0.98 / std::max((hi - lo).maxCoeff(), 1e-9);
    for (auto& o : objects) {
        o.center = (o.center - mid) * scale;
        o.size *= scale;
    }
    double total_area = 0;
    for (double a : areas) total_area += a * scale * scale;
    const double tangent = cfg.scene.tangent_factor * std::sqrt(total_area / static_cast<double>(n));

    SyntheticScene sc;
    auto& g = sc.splats;
    g.means = Tensor<double>::matrix(n, 3);
    g.quats = Tensor<double>::matrix(n, 4);
    g.scales = Tensor<double>::matrix(n, 3);
    g.opacity = Tensor<double>::matrix(n, 1, cfg.scene.splat_opacity);
    g.colors = Tensor<double>::matrix(n, 3);
    g.sem = Tensor<double>::matrix(n, sdim);
    g.object = owner;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = samples[i];
        const auto& o = objects[static_cast<std::size_t>(owner[i])];
        const Eigen::Vector3d p = (s.point - mid) * scale;
        for (std::size_t c = 0; c < 3; ++c) g.means(i, c) = round_to_float(p[static_cast<int>(c)]);
        const Eigen::Vector3d col = detail::shade(o, s.normal);
        for (std::size_t c = 0; c < 3; ++c) g.colors(i, c) = to_byte(col[static_cast<int>(c)]) / 255.0;
        const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), s.normal);
        g.quats(i, 0) = q.w();
        g.quats(i, 1) = q.x();
        g.quats(i, 2) = q.y();
        g.quats(i, 3) = q.z();
        g.scales(i, 0) = tangent;
        g.scales(i, 1) = tangent;
        g.scales(i, 2) = cfg.scene.normal_scale;
        for (std::size_t c = 0; c < sdim; ++c) g.sem(i, c) = o.embedding[c];
    }
    sc.points.coords = g.means;
    sc.points.colors = g.colors;
    sc.objects = std::move(objects);

    // Camera ring around the origin; held-out views spread evenly among the rest.
    const std::size_t v = cfg.total_views();
    std::vector<char> heldout(v, 0);
    for (std::size_t j = 0; j < cfg.heldout_views; ++j)
        heldout[static_cast<std::size_t>((static_cast<double>(j) + 0.5) * static_cast<double>(v) /
                                         static_cast<double>(cfg.heldout_views))] = 1;
    const double f = 0.5 * cfg.width / std::tan(0.5 * cfg.scene.fov_deg * std::numbers::pi / 180.0);
    for (std::size_t k = 0; k < v; ++k) {
        const double az = 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.25) / static_cast<double>(v);
        const double el = (cfg.scene.elevation_deg + (k % 2 ? 1.0 : -1.0) * cfg.scene.elevation_jitter_deg) *
                          std::numbers::pi / 180.0;
        const Eigen::Vector3d eye = cfg.scene.camera_radius *
                                    Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
        CameraRecord r;
        r.model = geometry::CameraModel::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), f, f, cfg.width,
                                                 cfg.height);
        r.heldout = heldout[k] != 0;
        sc.cameras.push_back(r);
    }
    return sc;
}

inline SyntheticScene generate_scene(const TrainingConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.data_seed);
    auto objects = sample_objects(cfg, rng);
    return build_scene(std::move(objects), cfg, rng);
}

// Renders one view of the ground-truth splats with the reference rasterizer.
// Pixels whose coverage is below one half get depth 0 (invalid).
inline ViewMaps render_ground_truth(const SyntheticScene& sc, const geometry::CameraModel& cam)
{
    const auto& s = sc.splats;
    Graph<double> g;
    auto proj = geometry::project_gaussians(g, g.constant(s.means), g.constant(s.quats), g.constant(s.scales), s.opacity, cam);
    raster::ScreenSplats<double> ss;
    ss.mean2d = &g.value(proj.mean2d);
    ss.cov2d = &g.value(proj.cov2d);
    ss.depth = &g.value(proj.depth);
    ss.opacity = &s.opacity;
    ss.features = &s.sem;
    ss.colors = &s.colors;
    ss.visible = &proj.visible;
    auto maps = raster::rasterize_oracle(ss, cam.width, cam.height);
    ViewMaps out{std::move(maps.rgb), std::move(maps.depth), std::move(maps.feature), std::move(maps.alpha)};
    for (std::size_t p = 0; p < out.depth.size(); ++p)
        if (out.alpha[p] < 0.5) out.depth[p] = 0.0;
    return out;
}

inline nlohmann::json scene_json(const SyntheticScene& sc)
{
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : sc.objects)
        objs.push_back({{"type", primitive_name(o.type)},
                        {"center", {o.center[0], o.center[1], o.center[2]}},
                        {"yaw", o.yaw},
                        {"size", {o.size[0], o.size[1], o.size[2]}},
                        {"color", {o.color[0], o.color[1], o.color[2]}},
                        {"embedding", o.embedding}});
    return nlohmann::json{{"objects", objs}};
}

// Writes points.ply, cameras.json, scene.json, config.json, the per-view
// ground truth (view_k_rgb.ppm, view_k_depth.bin, view_k_sem.bin) and the
// ground-truth splat properties (gt_*.bin).
inline void write_dataset(const SyntheticScene& sc, const TrainingConfig& cfg, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "': " + ec.message());
    write_ply(dir / "points.ply", sc.points);
    write_cameras(dir / "cameras.json", sc.cameras);
    write_text(dir / "scene.json", scene_json(sc).dump(2) + "\n");
    write_text(dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");
    for (std::size_t k = 0; k < sc.cameras.size(); ++k) {
        const auto m = render_ground_truth(sc, sc.cameras[k].model);
        write_ppm(dir / view_file(k, "rgb", "ppm"), m.rgb, cfg.width, cfg.height);
        io::write_tensor(dir / view_file(k, "depth", "bin"), m.depth);
        io::write_tensor(dir / view_file(k, "sem", "bin"), m.sem);
    }
    io::write_tensor(dir / "gt_quats.bin", sc.splats.quats);
    io::write_tensor(dir / "gt_scales.bin", sc.splats.scales);
    io::write_tensor(dir / "gt_opacity.bin", sc.splats.opacity);
    io::write_tensor(dir / "gt_sem.bin", sc.splats.sem);
}

// A dataset loaded for training or evaluation.
template <class T>
struct Dataset {
    PointCloud<T> points;
    std::vector<CameraRecord> cameras;
    std::vector<losses::ViewTarget<T>> views;
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};

template <class T>
Dataset<T> load_dataset(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory '" + dir.string() + "' does not exist");
    Dataset<T> ds;
    ds.points = read_ply<T>(dir / "points.ply");
    ds.cameras = read_cameras(dir / "cameras.json");
    for (std::size_t k = 0; k < ds.cameras.size(); ++k) {
        const auto& cam = ds.cameras[k].model;
        int w = 0, h = 0;
        losses::ViewTarget<T> t;
        t.rgb = read_ppm<T>(dir / view_file(k, "rgb", "ppm"), w, h);
        if (w != cam.width || h != cam.height) throw InputError("view " + std::to_string(k) + " size disagrees with its camera");
        t.depth = io::read_tensor(dir / view_file(k, "depth", "bin")).template cast<T>();
        t.sem = io::read_tensor(dir / view_file(k, "sem", "bin")).template cast<T>();
        const std::size_t pixels = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
        if (t.depth.size() != pixels || t.sem.rows() != pixels)
            throw InputError("view " + std::to_string(k) + " depth/semantic maps have the wrong size");
        ds.views.push_back(std::move(t));
        (ds.cameras[k].heldout ? ds.heldout : ds.train).push_back(k);
    }
    return ds;
}

} // namespace slpt::harness
