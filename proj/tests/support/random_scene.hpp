#pragma once

#include <random>

#include "slpt/rasterizer/rasterizer.hpp"

namespace slpt::test_support {

// Random screen-space splats with owned storage.
template <class T>
struct RandomScreenScene {
    Tensor<T> mean2d, cov2d, depth, opacity, features, colors;
    std::vector<unsigned char> visible;

    raster::ScreenSplats<T> view() const
    {
        raster::ScreenSplats<T> s;
        s.mean2d = &mean2d;
        s.cov2d = &cov2d;
        s.depth = &depth;
        s.opacity = &opacity;
        s.features = &features;
        s.colors = &colors;
        s.visible = &visible;
        return s;
    }
};

// `count` splats over a width×height image. A few depths are duplicated to
// exercise the index tie rule.
template <class T>
RandomScreenScene<T> random_screen_scene(std::uint64_t seed, std::size_t count, int width, int height,
                                         std::size_t channels, double max_opacity = 0.99)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RandomScreenScene<T> s;
    s.mean2d = Tensor<T>::matrix(count, 2);
    s.cov2d = Tensor<T>::matrix(count, 3);
    s.depth = Tensor<T>::matrix(count, 1);
    s.opacity = Tensor<T>::matrix(count, 1);
    s.features = Tensor<T>::matrix(count, channels);
    s.colors = Tensor<T>::matrix(count, 3);
    s.visible.assign(count, 1);
    for (std::size_t i = 0; i < count; ++i) {
        s.mean2d(i, 0) = static_cast<T>(-4 + (width + 8) * u(rng));
        s.mean2d(i, 1) = static_cast<T>(-4 + (height + 8) * u(rng));
        const double sx = 0.5 + 5 * u(rng), sy = 0.5 + 5 * u(rng), rho = -0.8 + 1.6 * u(rng);
        s.cov2d(i, 0) = static_cast<T>(sx * sx);
        s.cov2d(i, 1) = static_cast<T>(rho * sx * sy);
        s.cov2d(i, 2) = static_cast<T>(sy * sy);
        s.depth(i, 0) = static_cast<T>(i % 7 == 3 && i > 0 ? s.depth(i - 1, 0) : 0.5 + 4 * u(rng));
        s.opacity(i, 0) = static_cast<T>(0.05 + (max_opacity - 0.05) * u(rng));
        for (std::size_t c = 0; c < channels; ++c) s.features(i, c) = static_cast<T>(-1 + 2 * u(rng));
        for (std::size_t c = 0; c < 3; ++c) s.colors(i, c) = static_cast<T>(u(rng));
    }
    return s;
}

} // namespace slpt::test_support
