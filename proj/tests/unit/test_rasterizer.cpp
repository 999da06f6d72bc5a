#include <gtest/gtest.h>

#include "slpt/diffcore/gradcheck.hpp"
#include "slpt/rasterizer/rasterizer.hpp"
#include "support/random_scene.hpp"

using namespace slpt;
using namespace slpt::raster;
using Td = Tensor<double>;

namespace {

struct OneSplat {
    Td mean2d{{1, 2}, std::vector<double>{8, 8}};
    Td cov2d{{1, 3}, std::vector<double>{4, 0, 4}};
    Td depth{{1, 1}, std::vector<double>{2}};
    Td opacity{{1, 1}, std::vector<double>{1}};
    Td features{{1, 2}, std::vector<double>{0.3, -0.6}};

    ScreenSplats<double> view() const
    {
        ScreenSplats<double> s;
        s.mean2d = &mean2d;
        s.cov2d = &cov2d;
        s.depth = &depth;
        s.opacity = &opacity;
        s.features = &features;
        return s;
    }
};

std::size_t pixel(int x, int y, int width) { return static_cast<std::size_t>(y * width + x); }

// Graph-level render of raw screen-space splat tensors, reduced to a scalar.
Var render_scalar(Graph<double>& g, const std::vector<Var>& v, int width, int height, std::uint64_t seed)
{
    geometry::ProjectedSplats<double> proj;
    proj.mean2d = v[0];
    proj.cov2d = v[1];
    proj.depth = v[2];
    proj.visible.assign(g.value(v[0]).rows(), 1);
    geometry::CameraModel cam;
    cam.width = width;
    cam.height = height;
    RasterOptions<double> opt;
    opt.background = std::vector<double>(g.value(v[4]).cols(), 0.25);
    auto r = rasterize_op(g, proj, v[3], v[4], cam, opt);
    return ops::add(g, random_projection(g, r.feature, seed),
                    ops::add(g, random_projection(g, r.depth, seed + 1), random_projection(g, r.alpha, seed + 2)));
}

} // namespace

TEST(Rasterize, EmptySceneIsBackground)
{
    Td empty2 = Td::matrix(0, 2), empty3 = Td::matrix(0, 3), empty1 = Td::matrix(0, 1), emptyk = Td::matrix(0, 2);
    ScreenSplats<double> s;
    s.mean2d = &empty2;
    s.cov2d = &empty3;
    s.depth = &empty1;
    s.opacity = &empty1;
    s.features = &emptyk;
    RasterOptions<double> opt;
    opt.background = {0.2, -0.4};
    const auto maps = rasterize(s, 20, 10, opt);
    for (std::size_t p = 0; p < 200; ++p) {
        EXPECT_EQ(maps.feature(p, 0), 0.2);
        EXPECT_EQ(maps.feature(p, 1), -0.4);
        EXPECT_EQ(maps.alpha(p, 0), 0.0);
        EXPECT_EQ(maps.depth(p, 0), 0.0);
    }
}

TEST(Rasterize, SingleOpaqueSplatAtCenterIsClamped)
{
    OneSplat one;
    RasterOptions<double> opt;
    opt.background = {1.0, 2.0};
    const auto maps = rasterize(one.view(), 16, 16, opt);
    const std::size_t p = pixel(8, 8, 16);
    EXPECT_NEAR(maps.feature(p, 0), 0.99 * 0.3 + 0.01 * 1.0, 1e-15);
    EXPECT_NEAR(maps.feature(p, 1), 0.99 * -0.6 + 0.01 * 2.0, 1e-15);
    EXPECT_NEAR(maps.depth(p, 0), 0.99 * 2, 1e-15);
    EXPECT_NEAR(maps.alpha(p, 0), 0.99, 1e-15);
}

TEST(Rasterize, TwoHalfSplatsComposite)
{
    Td mean2d({2, 2}, std::vector<double>{4, 4, 4, 4});
    Td cov2d({2, 3}, std::vector<double>{1, 0, 1, 1, 0, 1});
    Td depth({2, 1}, std::vector<double>{3, 1}); // splat 1 is in front
    Td opacity({2, 1}, std::vector<double>{0.5, 0.5});
    Td features({2, 1}, std::vector<double>{10, 100});
    ScreenSplats<double> s;
    s.mean2d = &mean2d;
    s.cov2d = &cov2d;
    s.depth = &depth;
    s.opacity = &opacity;
    s.features = &features;
    RasterOptions<double> opt;
    opt.background = {1000};
    const auto maps = rasterize(s, 8, 8, opt);
    EXPECT_NEAR(maps.feature(pixel(4, 4, 8), 0), 0.5 * 100 + 0.25 * 10 + 0.25 * 1000, 1e-12);
    const auto oracle = rasterize_oracle(s, 8, 8, opt.background);
    EXPECT_NEAR(oracle.feature(pixel(4, 4, 8), 0), 302.5, 1e-12);
}

TEST(Rasterize, NonPositiveDefiniteCovarianceNamesSplat)
{
    OneSplat one;
    one.cov2d = Td({1, 3}, std::vector<double>{1, 2, 1});
    try {
        rasterize(one.view(), 8, 8, RasterOptions<double>{});
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("splat 0"), std::string::npos);
    }
}

TEST(Rasterize, MatchesOracleOnRandomScenes)
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto scene = test_support::random_screen_scene<double>(seed, 1 + seed % 64, 32, 32, 32);
        RasterOptions<double> opt;
        const auto tiled = rasterize(scene.view(), 32, 32, opt);
        const auto oracle = rasterize_oracle(scene.view(), 32, 32);
        EXPECT_LT(max_abs_diff(tiled.feature, oracle.feature), 1e-6) << seed;
        EXPECT_LT(max_abs_diff(tiled.depth, oracle.depth), 1e-6) << seed;
        EXPECT_LT(max_abs_diff(tiled.alpha, oracle.alpha), 1e-6) << seed;
        EXPECT_LT(max_abs_diff(tiled.rgb, oracle.rgb), 1e-6) << seed;
    }
}

TEST(Rasterize, FloatMatchesOracle)
{
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        const auto scene = test_support::random_screen_scene<float>(seed, 48, 32, 32, 8);
        const auto tiled = rasterize(scene.view(), 32, 32, RasterOptions<float>{});
        const auto oracle = rasterize_oracle(scene.view(), 32, 32);
        EXPECT_LT(max_abs_diff(tiled.feature, oracle.feature), 1e-4f);
    }
}

TEST(Rasterize, WorkerCountDoesNotChangeBits)
{
    const auto scene = test_support::random_screen_scene<double>(7, 64, 48, 40, 16);
    RenderedMaps<double> ref;
    SplatGrads<double> ref_grads;
    Td d_feature = Td::matrix(48 * 40, 16, 0.5), d_depth = Td::matrix(48 * 40, 1, -0.3);
    for (int workers : {1, 2, 8}) {
        RasterOptions<double> opt;
        opt.workers = workers;
        ForwardContext<double> ctx;
        auto maps = rasterize(scene.view(), 48, 40, opt, &ctx);
        auto grads = rasterize_backward(scene.view(), ctx, opt, &d_feature, &d_depth, nullptr);
        if (workers == 1) {
            ref = maps;
            ref_grads = grads;
            continue;
        }
        EXPECT_EQ(maps.feature, ref.feature);
        EXPECT_EQ(maps.depth, ref.depth);
        EXPECT_EQ(grads.mean2d, ref_grads.mean2d);
        EXPECT_EQ(grads.cov2d, ref_grads.cov2d);
        EXPECT_EQ(grads.features, ref_grads.features);
    }
}

TEST(Rasterize, WeightsSumToOne)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto scene = test_support::random_screen_scene<double>(seed, 40, 32, 32, 1);
        scene.features.fill(1.0);
        const auto maps = rasterize(scene.view(), 32, 32, RasterOptions<double>{});
        for (std::size_t p = 0; p < maps.alpha.size(); ++p) {
            EXPECT_NEAR(maps.feature(p, 0) + (1 - maps.alpha(p, 0)), 1.0, 1e-12);
            EXPECT_GE(maps.alpha(p, 0), 0.0);
            EXPECT_LE(maps.alpha(p, 0), 1.0);
        }
    }
}

TEST(Rasterize, InputOrderDoesNotMatter)
{
    const auto scene = test_support::random_screen_scene<double>(3, 30, 32, 32, 4);
    auto shuffled = scene;
    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
    // Give every splat a distinct depth so the order is canonical.
    auto base = scene;
    for (std::size_t i = 0; i < 30; ++i) base.depth(i, 0) = 1.0 + 0.1 * static_cast<double>(i);
    shuffled = base;
    for (std::size_t i = 0; i < 30; ++i) {
        const auto j = static_cast<std::size_t>(perm[i]);
        for (std::size_t c = 0; c < 2; ++c) shuffled.mean2d(i, c) = base.mean2d(j, c);
        for (std::size_t c = 0; c < 3; ++c) shuffled.cov2d(i, c) = base.cov2d(j, c);
        for (std::size_t c = 0; c < 4; ++c) shuffled.features(i, c) = base.features(j, c);
        for (std::size_t c = 0; c < 3; ++c) shuffled.colors(i, c) = base.colors(j, c);
        shuffled.depth(i, 0) = base.depth(j, 0);
        shuffled.opacity(i, 0) = base.opacity(j, 0);
    }
    const auto a = rasterize(base.view(), 32, 32, RasterOptions<double>{});
    const auto b = rasterize(shuffled.view(), 32, 32, RasterOptions<double>{});
    EXPECT_EQ(a.feature, b.feature);
    EXPECT_EQ(a.depth, b.depth);
}

TEST(Rasterize, EqualDepthTieBrokenByIndex)
{
    Td mean2d({2, 2}, std::vector<double>{4, 4, 4, 4});
    Td cov2d({2, 3}, std::vector<double>{1, 0, 1, 1, 0, 1});
    Td depth({2, 1}, std::vector<double>{2, 2});
    Td opacity({2, 1}, std::vector<double>{0.5, 0.5});
    Td features({2, 1}, std::vector<double>{10, 100});
    ScreenSplats<double> s;
    s.mean2d = &mean2d;
    s.cov2d = &cov2d;
    s.depth = &depth;
    s.opacity = &opacity;
    s.features = &features;
    const auto maps = rasterize(s, 8, 8, RasterOptions<double>{});
    EXPECT_NEAR(maps.feature(pixel(4, 4, 8), 0), 0.5 * 10 + 0.25 * 100, 1e-12);
    const auto oracle = rasterize_oracle(s, 8, 8);
    EXPECT_NEAR(oracle.feature(pixel(4, 4, 8), 0), 30, 1e-12);
}

TEST(Binning, CornerSplatsLandInOverlappingTilesOnce)
{
    // Small splats centered on the four corners of the first tile.
    Td mean2d({4, 2}, std::vector<double>{0, 0, 15, 0, 0, 15, 15.5, 15.5});
    Td cov2d({4, 3}, std::vector<double>{0.3, 0, 0.3, 0.3, 0, 0.3, 0.3, 0, 0.3, 0.3, 0, 0.3});
    Td depth({4, 1}, std::vector<double>{1, 2, 3, 4});
    Td opacity({4, 1}, std::vector<double>{0.9, 0.9, 0.9, 0.9});
    ScreenSplats<double> s;
    s.mean2d = &mean2d;
    s.cov2d = &cov2d;
    s.depth = &depth;
    s.opacity = &opacity;
    const auto bins = bin_splats(s, 32, 32, 16);
    EXPECT_EQ(bins.at(0, 0), (std::vector<int>{0, 1, 2, 3}));
    EXPECT_EQ(bins.at(1, 0), (std::vector<int>{1, 3}));
    EXPECT_EQ(bins.at(0, 1), (std::vector<int>{2, 3}));
    EXPECT_EQ(bins.at(1, 1), (std::vector<int>{3}));
}

TEST(RasterizeBackward, FeatureGradientIsAlpha)
{
    OneSplat one;
    one.opacity(0, 0) = 0.6;
    ForwardContext<double> ctx;
    RasterOptions<double> opt;
    rasterize(one.view(), 16, 16, opt, &ctx);
    Td d_feature = Td::matrix(256, 2);
    const std::size_t p = pixel(9, 7, 16);
    d_feature(p, 0) = 1;
    const auto grads = rasterize_backward(one.view(), ctx, opt, &d_feature, nullptr, nullptr);
    const double alpha = 0.6 * std::exp(-0.5 * (1.0 + 1.0) / 4.0);
    EXPECT_NEAR(grads.features(0, 0), alpha, 1e-15);
    EXPECT_EQ(grads.features(0, 1), 0.0);
}

TEST(RasterizeBackward, OccludedSplatGetsNoGradient)
{
    // Three coincident splats at the clamp: after two, T = 1e-4 and the third
    // would push it below the cutoff.
    Td mean2d({3, 2}, std::vector<double>{4, 4, 4, 4, 4, 4});
    Td cov2d({3, 3}, std::vector<double>{0.5, 0, 0.5, 0.5, 0, 0.5, 0.5, 0, 0.5});
    Td depth({3, 1}, std::vector<double>{1, 2, 3});
    Td opacity({3, 1}, std::vector<double>{1, 1, 1});
    Td features({3, 1}, std::vector<double>{1, 2, 3});
    ScreenSplats<double> s;
    s.mean2d = &mean2d;
    s.cov2d = &cov2d;
    s.depth = &depth;
    s.opacity = &opacity;
    s.features = &features;
    ForwardContext<double> ctx;
    RasterOptions<double> opt;
    rasterize(s, 8, 8, opt, &ctx);
    const std::size_t p = pixel(4, 4, 8);
    EXPECT_LT(ctx.final_t[p], 2e-4);
    Td d_feature = Td::matrix(64, 1, 1.0), d_depth = Td::matrix(64, 1, 1.0), d_alpha = Td::matrix(64, 1, 1.0);
    // Isolate the center pixel, where the third splat is cut off.
    for (std::size_t q = 0; q < 64; ++q)
        if (q != p) d_feature(q, 0) = d_depth(q, 0) = d_alpha(q, 0) = 0;
    const auto grads = rasterize_backward(s, ctx, opt, &d_feature, &d_depth, &d_alpha);
    EXPECT_EQ(grads.features(2, 0), 0.0);
    EXPECT_EQ(grads.mean2d(2, 0), 0.0);
    EXPECT_EQ(grads.mean2d(2, 1), 0.0);
    EXPECT_EQ(grads.opacity(2, 0), 0.0);
    EXPECT_EQ(grads.depth(2, 0), 0.0);
    EXPECT_EQ(grads.cov2d(2, 0), 0.0);
}

TEST(RasterizeBackward, GradcheckRandomScenes)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto scene = test_support::random_screen_scene<double>(seed + 500, 8, 16, 16, 3, 0.9);
        // Distinct depths: the finite difference must not reorder splats.
        for (std::size_t i = 0; i < 8; ++i) scene.depth(i, 0) = 1.0 + 0.37 * static_cast<double>((i * 5) % 8);
        auto fn = [seed](Graph<double>& g, const std::vector<Var>& v) { return render_scalar(g, v, 16, 16, seed); };
        const auto r = gradcheck<double>(fn, {scene.mean2d, scene.cov2d, scene.depth, scene.opacity, scene.features});
        for (std::size_t k = 0; k < r.max_error.size(); ++k) EXPECT_LT(r.max_error[k], 1e-4) << "seed " << seed << " input " << k;
    }
}

TEST(RasterizeBackward, MismatchedContextRejected)
{
    OneSplat one;
    ForwardContext<double> ctx;
    rasterize(one.view(), 16, 16, RasterOptions<double>{}, &ctx);
    const auto other = test_support::random_screen_scene<double>(1, 3, 16, 16, 2);
    EXPECT_THROW(rasterize_backward(other.view(), ctx, RasterOptions<double>{}, nullptr, nullptr, nullptr),
                 ContractViolation);
}

TEST(Rasterize, ResolutionDoublingKeepsWeightMass)
{
    // Same splat rendered at twice the resolution (screen covariance scales by
    // four, low-pass term stays): integrated weight per pixel area within 5%.
    const double var = 6.0;
    Td mean2d({1, 2}, std::vector<double>{16, 16});
    Td cov2d({1, 3}, std::vector<double>{var + geometry::kLowPass, 0, var + geometry::kLowPass});
    Td depth({1, 1}, std::vector<double>{1});
    Td opacity({1, 1}, std::vector<double>{0.5});
    Td features({1, 1}, std::vector<double>{1});
    ScreenSplats<double> s;
    s.mean2d = &mean2d;
    s.cov2d = &cov2d;
    s.depth = &depth;
    s.opacity = &opacity;
    s.features = &features;
    double mass_lo = 0, mass_hi = 0;
    for (double v : rasterize(s, 32, 32, RasterOptions<double>{}).feature.vec()) mass_lo += v;
    mean2d = Td({1, 2}, std::vector<double>{32, 32});
    cov2d = Td({1, 3}, std::vector<double>{4 * var + geometry::kLowPass, 0, 4 * var + geometry::kLowPass});
    for (double v : rasterize(s, 64, 64, RasterOptions<double>{}).feature.vec()) mass_hi += v;
    EXPECT_NEAR(mass_hi / 4 / mass_lo, 1.0, 0.05);
}
