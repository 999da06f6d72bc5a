#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "slpt/diffcore/gradcheck.hpp"
#include "slpt/harness/pipeline.hpp"
#include "slpt/harness/scene.hpp"

namespace slpt::harness {

struct GradcheckCase {
    std::string name;
    std::function<double()> run; // worst relative error over all checked inputs
};

struct GradcheckRow {
    std::string name;
    double error = 0;
    double seconds = 0;
};

inline constexpr double kGradcheckTolerance = 1e-4;

namespace detail {

inline Tensor<double> draw(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1, double hi = 1)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t = Tensor<double>::matrix(rows, cols);
    for (auto& x : t.vec()) x = u(rng);
    return t;
}

inline GradcheckCase op_case(std::string name, std::uint64_t seed, std::function<std::vector<Tensor<double>>(std::mt19937_64&)> make,
                             ScalarGraphFn<double> fn)
{
    return {std::move(name), [seed, make = std::move(make), fn = std::move(fn)] {
                std::mt19937_64 rng(seed);
                return static_cast<double>(gradcheck<double>(fn, make(rng)).worst());
            }};
}

// Four overlapping splats in front of a small camera, projected then
// rasterized; the scalar mixes features, depth and coverage.
inline double composite_raster_check()
{
    const auto cam = geometry::CameraModel::look_at({0.2, -1.5, 0.6}, {0, 0, 0}, {0, 0, 1}, 28, 28, 20, 18);
    std::mt19937_64 rng(404);
    Tensor<double> means = draw(4, 3, rng, -0.12, 0.12);
    Tensor<double> quats = draw(4, 4, rng);
    Tensor<double> scales = draw(4, 3, rng, 0.05, 0.12);
    Tensor<double> opacity = draw(4, 1, rng, 0.4, 0.9);
    Tensor<double> feats = draw(4, 3, rng);
    auto fn = [&cam](Graph<double>& g, const std::vector<Var>& v) {
        auto proj = geometry::project_gaussians(g, v[0], v[1], v[2], g.value(v[3]), cam);
        raster::RasterOptions<double> opt;
        opt.tile = 8;
        opt.background = {0.1, 0.2, 0.3};
        auto r = raster::rasterize_op(g, proj, v[3], v[4], cam, opt);
        return ops::add(g, random_projection(g, r.feature, 51),
                        ops::add(g, random_projection(g, r.depth, 52), random_projection(g, r.alpha, 53)));
    };
    return static_cast<double>(gradcheck<double>(fn, {means, quats, scales, opacity, feats}).worst());
}

// A complete training objective on a 64-point scene: encoder, PL-VAE with
// fixed noise, decoder, heads, two rendered views and every loss term.
inline double pipeline_check()
{
    TrainingConfig cfg;
    cfg.data_seed = 3;
    cfg.num_points = 64;
    cfg.num_sparse = 8;
    cfg.group_size = 4;
    cfg.sparse_dim = 5;
    cfg.dense_dim = 5;
    cfg.stage1_dim = 4;
    cfg.hidden = 6;
    cfg.splat_dim = 6;
    cfg.sem_dim = 3;
    cfg.latent_dim = 3;
    cfg.width = 16;
    cfg.height = 16;
    cfg.train_views = 2;
    cfg.heldout_views = 0;
    cfg.steps = 8;
    const auto scene = generate_scene(cfg);
    std::vector<losses::ViewTarget<double>> targets;
    for (const auto& c : scene.cameras) {
        auto m = render_ground_truth(scene, c.model);
        targets.push_back({std::move(m.rgb), std::move(m.depth), std::move(m.sem)});
    }
    const Model<double> model(cfg);
    ParamStore<double> store;
    model.init(store, 9);
    // Move every parameter off its structured init so no unit sits at zero.
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    for (auto& [name, e] : store.entries())
        for (auto& x : e.value.vec()) x += jitter(rng);
    const auto in = make_inputs(scene.points, cfg);
    const std::vector<const geometry::CameraModel*> cams{&scene.cameras[0].model, &scene.cameras[1].model};
    const std::vector<const losses::ViewTarget<double>*> tp{&targets[0], &targets[1]};
    auto fn = [&](Graph<double>& g, ParamStore<double>& s) {
        const auto fr = model.forward(g, s, in, cams, ForwardOptions{true, 77});
        return model.losses(g, fr, in, tp, cfg.steps / 4).total;
    };
    return static_cast<double>(worst_of(gradcheck_params<double>(fn, store)));
}

} // namespace detail

// Every differentiable operation, a composite rasterizer check and the full
// objective, all in double precision.
inline std::vector<GradcheckCase> gradcheck_cases()
{
    using detail::draw;
    using detail::op_case;
    using V = std::vector<Var>;
    using G = Graph<double>;
    auto one = [](std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
        return [=](std::mt19937_64& rng) { return std::vector<Tensor<double>>{draw(r, c, rng, lo, hi)}; };
    };
    auto two = [](std::size_t r, std::size_t c) {
        return [=](std::mt19937_64& rng) { return std::vector<Tensor<double>>{draw(r, c, rng), draw(r, c, rng)}; };
    };
    std::vector<GradcheckCase> cases;
    cases.push_back(op_case("add", 1, two(3, 4), [](G& g, const V& v) { return random_projection(g, ops::add(g, v[0], v[1]), 1); }));
    cases.push_back(op_case("sub", 2, two(3, 4), [](G& g, const V& v) { return random_projection(g, ops::sub(g, v[0], v[1]), 2); }));
    cases.push_back(op_case("mul", 3, two(3, 4), [](G& g, const V& v) { return random_projection(g, ops::mul(g, v[0], v[1]), 3); }));
    cases.push_back(op_case("scale", 4, one(3, 4), [](G& g, const V& v) { return random_projection(g, ops::scale(g, v[0], -1.3), 4); }));
    cases.push_back(op_case("weighted_sum", 5, two(3, 4), [](G& g, const V& v) {
        return random_projection(g, ops::weighted_sum(g, {v[0], v[1]}, {0.4, -2.0}), 5);
    }));
    cases.push_back(op_case("sum", 6, one(3, 4), [](G& g, const V& v) { return ops::scale(g, ops::sum(g, v[0]), 0.7); }));
    cases.push_back(op_case(
        "linear", 7,
        [](std::mt19937_64& rng) { return std::vector<Tensor<double>>{draw(5, 3, rng), draw(3, 4, rng), draw(1, 4, rng)}; },
        [](G& g, const V& v) { return random_projection(g, ops::linear(g, v[0], v[1], v[2]), 7); }));
    cases.push_back(op_case("silu", 8, one(3, 4, -3, 3), [](G& g, const V& v) { return random_projection(g, ops::silu(g, v[0]), 8); }));
    cases.push_back(op_case("sigmoid", 9, one(3, 4, -3, 3), [](G& g, const V& v) { return random_projection(g, ops::sigmoid(g, v[0]), 9); }));
    cases.push_back(op_case("exp", 10, one(3, 4, -2, 2), [](G& g, const V& v) { return random_projection(g, ops::exp(g, v[0]), 10); }));
    cases.push_back(op_case("clamp", 11, one(3, 4, -2, 2), [](G& g, const V& v) {
        return random_projection(g, ops::clamp(g, v[0], -1.5, 1.5), 11);
    }));
    cases.push_back(op_case("concat_cols", 12, two(3, 4), [](G& g, const V& v) {
        return random_projection(g, ops::concat_cols(g, {v[0], v[1], v[0]}), 12);
    }));
    cases.push_back(op_case("slice_cols", 13, one(3, 5), [](G& g, const V& v) {
        return random_projection(g, ops::slice_cols(g, v[0], 1, 3), 13);
    }));
    cases.push_back(op_case("gather_rows", 14, one(4, 3), [](G& g, const V& v) {
        return random_projection(g, ops::gather_rows(g, v[0], {3, 0, 3, 1, 2, 3}), 14);
    }));
    cases.push_back(op_case("group_max", 15, one(6, 4), [](G& g, const V& v) {
        return random_projection(g, ops::group_max(g, v[0], 3), 15);
    }));
    cases.push_back(op_case("broadcast_rows", 16, one(1, 4), [](G& g, const V& v) {
        return random_projection(g, ops::broadcast_rows(g, v[0], 5), 16);
    }));
    cases.push_back(op_case("mean_rows", 17, one(5, 3), [](G& g, const V& v) { return random_projection(g, ops::mean_rows(g, v[0]), 17); }));
    cases.push_back(op_case(
        "attention_pool", 18,
        [](std::mt19937_64& rng) { return std::vector<Tensor<double>>{draw(6, 1, rng, -2, 2), draw(6, 4, rng)}; },
        [](G& g, const V& v) { return random_projection(g, ops::attention_pool(g, v[0], v[1]), 18); }));
    cases.push_back(op_case("normalize_rows", 19, one(4, 3), [](G& g, const V& v) {
        return random_projection(g, ops::normalize_rows(g, v[0]), 19);
    }));
    cases.push_back(op_case("reparameterize", 20, two(4, 3), [](G& g, const V& v) {
        std::mt19937_64 rng(200);
        return random_projection(g, ops::reparameterize(g, v[0], v[1], draw(4, 3, rng)), 20);
    }));
    cases.push_back(op_case("masked_abs_sum", 21, one(4, 3), [](G& g, const V& v) {
        std::mt19937_64 rng(210);
        return ops::masked_abs_sum(g, v[0], draw(4, 3, rng), {1, 0, 1, 1}, 7.0);
    }));
    cases.push_back(op_case("abs_diff_sum", 22, two(4, 3), [](G& g, const V& v) { return ops::abs_diff_sum(g, v[0], v[1], 3.0); }));
    cases.push_back(op_case("kl_standard_normal", 23, two(4, 3), [](G& g, const V& v) {
        return ops::kl_standard_normal(g, v[0], v[1]);
    }));
    cases.push_back(op_case("interpolate_fixed", 24, one(4, 3), [](G& g, const V& v) {
        return random_projection(g, codec::interpolate_fixed<double>(g, v[0], {0, 1, 2, 3, 2, 1}, {0.2, 0.5, 0.3, 0.6, 0.3, 0.1}, 3), 24);
    }));
    cases.push_back(op_case(
        "three_interpolate", 25,
        [](std::mt19937_64& rng) { return std::vector<Tensor<double>>{draw(6, 3, rng), draw(6, 2, rng)}; },
        [](G& g, const V& v) {
            std::mt19937_64 rng(250);
            return random_projection(g, codec::three_interpolate(g, v[0], v[1], draw(5, 3, rng), 1e-8), 25);
        }));
    cases.push_back(op_case(
        "project_gaussians", 26,
        [](std::mt19937_64& rng) {
            return std::vector<Tensor<double>>{draw(5, 3, rng, -0.2, 0.2), draw(5, 4, rng), draw(5, 3, rng, 0.02, 0.2)};
        },
        [](G& g, const V& v) {
            const auto cam = geometry::CameraModel::look_at({0.3, -1.4, 0.8}, {0, 0, 0}, {0, 0, 1}, 60, 60, 48, 40);
            auto p = geometry::project_gaussians(g, v[0], v[1], v[2], Tensor<double>::matrix(5, 1, 0.7), cam);
            return random_projection(g, ops::concat_cols(g, {p.mean2d, p.cov2d, p.depth}), 26);
        }));
    cases.push_back({"rasterize", detail::composite_raster_check});
    cases.push_back({"pipeline_loss", detail::pipeline_check});
    return cases;
}

inline std::vector<GradcheckRow> run_gradchecks()
{
    std::vector<GradcheckRow> rows;
    for (const auto& c : gradcheck_cases()) {
        const auto t0 = std::chrono::steady_clock::now();
        const double e = c.run();
        rows.push_back({c.name, e, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }
    return rows;
}

} // namespace slpt::harness
