#pragma once

#include <cmath>
#include <random>

#include "slpt/diffcore/layers.hpp"

// Prediction heads on the dense decoded points: splat properties (G), the
// color/semantic projectors applied to rendered feature maps (H_c, H_s) and
// the point reconstruction head.
namespace slpt::heads {

struct HeadsConfig {
    std::size_t dense_dim = 64; // D_d
    std::size_t hidden = 64;
    std::size_t splat_dim = 32; // K
    std::size_t sem_dim = 16;   // S
    bool constant_splats = false;
    bool offset_head = false;
    double scale_min = 1e-4;
    double scale_max = 0.5;
    double init_scale = 0.015;  // bias of the raw scale output
    double init_opacity = 0.9;  // bias of the opacity logit
};

// Fixed splat properties of the ablation without geometric reasoning.
struct ConstantSplatConfig {
    double opacity = 1.0;
    double scale = 1e-3;
    double quat[4] = {1.0, 0.0, 0.0, 0.0};
};

// One splat per dense point.
struct SplatSet {
    Var means;    // {N,3}
    Var quats;    // {N,4}, unit norm
    Var scales;   // {N,3}
    Var opacity;  // {N,1}
    Var features; // {N,K}
};

struct ReconstructedPoints {
    Var coords; // {N,3}
    Var colors; // {N,3} in (0,1)
};

template <class T>
class Heads {
public:
    explicit Heads(HeadsConfig cfg = {}) : cfg_(cfg)
    {
        const std::size_t h = cfg.hidden;
        geo_ = Mlp{"heads/geo", {cfg.dense_dim, h, geo_width()}};
        offset_ = Mlp{"heads/offset", {cfg.dense_dim, h, 3}};
        color_ = Mlp{"heads/color", {cfg.splat_dim, h, 3}};
        sem_ = Mlp{"heads/sem", {cfg.splat_dim, h, cfg.sem_dim}};
        recon_ = Mlp{"heads/recon", {cfg.dense_dim, h, 6}};
    }

    const HeadsConfig& config() const { return cfg_; }

    // Learned mode: [opacity logit | 3 log-scales | 4 quaternion | K features];
    // constant mode: K features only.
    std::size_t geo_width() const { return (cfg_.constant_splats ? 0 : 8) + cfg_.splat_dim; }

    void init(ParamStore<T>& store, std::mt19937_64& rng) const
    {
        geo_.init(store, rng);
        if (!cfg_.constant_splats) {
            // Geometry outputs start near a small isotropic, mostly opaque splat.
            auto& w = store.at(geo_.weight(1)).value;
            for (std::size_t r = 0; r < w.rows(); ++r)
                for (std::size_t c = 0; c < 8; ++c) w(r, c) *= T(0.1);
            auto& b = store.at(geo_.bias(1)).value;
            b[0] = static_cast<T>(std::log(cfg_.init_opacity / (1.0 - cfg_.init_opacity)));
            for (std::size_t c = 1; c < 4; ++c) b[c] = static_cast<T>(std::log(cfg_.init_scale));
            b[4] = T(1);
        }
        if (cfg_.offset_head) offset_.init(store, rng, /*zero_last=*/true);
        color_.init(store, rng, /*zero_last=*/true);
        sem_.init(store, rng, /*zero_last=*/true);
        recon_.init(store, rng, /*zero_last=*/true);
    }

    SplatSet predict_gaussians(Graph<T>& g, ParamStore<T>& store, Var dense, Var coords) const
    {
        const std::size_t n = g.value(dense).rows();
        require(g.value(coords).rows() == n && g.value(coords).cols() == 3,
                "predict_gaussians: coords must be {N,3} matching the dense features");
        Var out = geo_(g, store, dense);
        SplatSet s;
        s.means = cfg_.offset_head ? ops::add(g, coords, offset_(g, store, dense)) : coords;
        if (cfg_.constant_splats) {
            const ConstantSplatConfig c;
            Tensor<T> q = Tensor<T>::matrix(n, 4);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < 4; ++k) q(i, k) = static_cast<T>(c.quat[k]);
            s.quats = g.constant(std::move(q));
            s.scales = g.constant(Tensor<T>::matrix(n, 3, static_cast<T>(c.scale)));
            s.opacity = g.constant(Tensor<T>::matrix(n, 1, static_cast<T>(c.opacity)));
            s.features = out;
            return s;
        }
        const T lo = static_cast<T>(std::log(cfg_.scale_min)), hi = static_cast<T>(std::log(cfg_.scale_max));
        s.opacity = ops::sigmoid(g, ops::slice_cols(g, out, 0, 1));
        s.scales = ops::exp(g, ops::clamp(g, ops::slice_cols(g, out, 1, 3), lo, hi));
        s.quats = ops::normalize_rows(g, ops::slice_cols(g, out, 4, 4));
        s.features = ops::slice_cols(g, out, 8, cfg_.splat_dim);
        return s;
    }

    // Per-pixel projectors on a rendered feature map {P,K}: color through a
    // sigmoid, semantics linear.
    std::pair<Var, Var> project_feature_map(Graph<T>& g, ParamStore<T>& store, Var features) const
    {
        return {ops::sigmoid(g, color_(g, store, features)), sem_(g, store, features)};
    }

    ReconstructedPoints reconstruct_points(Graph<T>& g, ParamStore<T>& store, Var dense, Var coords) const
    {
        Var out = recon_(g, store, dense);
        return {ops::add(g, coords, ops::slice_cols(g, out, 0, 3)), ops::sigmoid(g, ops::slice_cols(g, out, 3, 3))};
    }

private:
    HeadsConfig cfg_;
    Mlp geo_, offset_, color_, sem_, recon_;
};

} // namespace slpt::heads
