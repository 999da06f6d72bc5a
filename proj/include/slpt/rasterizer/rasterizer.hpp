#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "slpt/geometry/gaussian.hpp"

namespace slpt::raster {

using geometry::kAlphaMax;
using geometry::kAlphaMin;
using geometry::kTransmittanceMin;

// Screen-space splats, one row per splat. Rows with visible == 0 are ignored.
template <class T>
struct ScreenSplats {
    const Tensor<T>* mean2d = nullptr;   // {n,2}
    const Tensor<T>* cov2d = nullptr;    // {n,3} xx, xy, yy
    const Tensor<T>* depth = nullptr;    // {n,1}
    const Tensor<T>* opacity = nullptr;  // {n,1}
    const Tensor<T>* features = nullptr; // {n,K}
    const Tensor<T>* colors = nullptr;   // {n,3}, optional (oracle / diagnostics)
    const std::vector<unsigned char>* visible = nullptr;

    std::size_t count() const { return mean2d->rows(); }
    std::size_t channels() const { return features ? features->cols() : 0; }
    bool is_visible(std::size_t i) const { return !visible || (*visible)[i]; }
};

template <class T>
struct RenderedMaps {
    int width = 0;
    int height = 0;
    Tensor<T> feature; // {H*W, K}
    Tensor<T> depth;   // {H*W, 1}
    Tensor<T> rgb;     // {H*W, 3}; only filled when colors are supplied
    Tensor<T> alpha;   // {H*W, 1}, 1 − final transmittance
};

template <class T>
struct RasterOptions {
    int tile = 16;
    int workers = 1;
    std::vector<T> background; // per feature channel; empty = zeros
};

// Per-tile splat lists ordered by (view depth, splat index).
struct TileBinning {
    int tile = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<int>> lists;

    const std::vector<int>& at(int tx, int ty) const { return lists[static_cast<std::size_t>(ty * tiles_x + tx)]; }
};

template <class T>
struct Conic {
    T a, b, c;
};

template <class T>
Conic<T> conic_of(const ScreenSplats<T>& s, std::size_t i)
{
    const T xx = (*s.cov2d)(i, 0), xy = (*s.cov2d)(i, 1), yy = (*s.cov2d)(i, 2);
    const T det = xx * yy - xy * xy;
    if (!(det > T(0)) || !(xx > T(0)))
        throw NumericalError("splat " + std::to_string(i) + " has a non positive-definite screen covariance");
    return {yy / det, -xy / det, xx / det};
}

template <class T>
T support_radius_of(const ScreenSplats<T>& s, std::size_t i)
{
    const geometry::Vec3<T> cov((*s.cov2d)(i, 0), (*s.cov2d)(i, 1), (*s.cov2d)(i, 2));
    return geometry::support_radius(cov, (*s.opacity)(i, 0));
}

// Visible splats sorted front to back, ties broken by index.
template <class T>
std::vector<int> depth_order(const ScreenSplats<T>& s)
{
    std::vector<int> order;
    for (std::size_t i = 0; i < s.count(); ++i)
        if (s.is_visible(i)) order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const T da = (*s.depth)(static_cast<std::size_t>(a), 0), db = (*s.depth)(static_cast<std::size_t>(b), 0);
        return da < db || (da == db && a < b);
    });
    return order;
}

template <class T>
TileBinning bin_splats(const ScreenSplats<T>& s, int width, int height, int tile)
{
    require(tile > 0, "tile size must be positive");
    TileBinning bins;
    bins.tile = tile;
    bins.tiles_x = (width + tile - 1) / tile;
    bins.tiles_y = (height + tile - 1) / tile;
    bins.lists.resize(static_cast<std::size_t>(bins.tiles_x * bins.tiles_y));
    for (int i : depth_order(s)) {
        const auto ui = static_cast<std::size_t>(i);
        const geometry::Vec2<T> mean((*s.mean2d)(ui, 0), (*s.mean2d)(ui, 1));
        const auto rect = geometry::footprint(mean, support_radius_of(s, ui), width, height);
        if (rect.empty()) continue;
        for (int ty = rect.y0 / tile; ty <= rect.y1 / tile; ++ty)
            for (int tx = rect.x0 / tile; tx <= rect.x1 / tile; ++tx)
                bins.lists[static_cast<std::size_t>(ty * bins.tiles_x + tx)].push_back(i);
    }
    return bins;
}

namespace detail {

// Gaussian falloff exponent at pixel (px, py); d = mean − pixel.
template <class T>
T falloff_power(const Conic<T>& q, T dx, T dy)
{
    return T(-0.5) * (q.a * dx * dx + q.c * dy * dy) - q.b * dx * dy;
}

template <class T>
T background_at(const RasterOptions<T>& opt, std::size_t k)
{
    return opt.background.empty() ? T(0) : opt.background[k];
}

} // namespace detail

// Saved forward state: final transmittance and the number of list entries
// walked up to the last contributor, per pixel.
template <class T>
struct ForwardContext {
    int width = 0;
    int height = 0;
    TileBinning bins;
    std::vector<Conic<T>> conics;
    std::vector<T> final_t;
    std::vector<int> last;
};

// Tiled front-to-back compositing of features and depth:
//   α_i(x) = min(0.99, o_i·exp(−½(x−μ_i)ᵀΣ'_i⁻¹(x−μ_i))), skipped below 1/255,
//   C(x) = Σ f_i α_i ∏_{j<i}(1−α_j) + T_final·background,
// stopping before the transmittance would fall below 1e-4.
template <class T>
RenderedMaps<T> rasterize(const ScreenSplats<T>& s, int width, int height, const RasterOptions<T>& opt,
                          ForwardContext<T>* ctx_out = nullptr)
{
    const std::size_t n = s.count();
    const std::size_t k = s.channels();
    require(opt.background.empty() || opt.background.size() == k, "rasterize: background size must equal channels");
    ForwardContext<T> ctx;
    ctx.width = width;
    ctx.height = height;
    ctx.conics.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        if (s.is_visible(i)) ctx.conics[i] = conic_of(s, i);
    ctx.bins = bin_splats(s, width, height, opt.tile);
    const std::size_t pixels = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    ctx.final_t.assign(pixels, T(1));
    ctx.last.assign(pixels, 0);

    RenderedMaps<T> out;
    out.width = width;
    out.height = height;
    out.feature = Tensor<T>::matrix(pixels, k);
    out.depth = Tensor<T>::matrix(pixels, 1);
    out.alpha = Tensor<T>::matrix(pixels, 1);
    const bool with_rgb = s.colors != nullptr;
    if (with_rgb) out.rgb = Tensor<T>::matrix(pixels, 3);

    const int tiles = ctx.bins.tiles_x * ctx.bins.tiles_y;
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, opt.workers))
    for (int t = 0; t < tiles; ++t) {
        const auto& list = ctx.bins.lists[static_cast<std::size_t>(t)];
        const int tx = t % ctx.bins.tiles_x, ty = t / ctx.bins.tiles_x;
        for (int py = ty * opt.tile; py < std::min(height, (ty + 1) * opt.tile); ++py) {
            for (int px = tx * opt.tile; px < std::min(width, (tx + 1) * opt.tile); ++px) {
                const std::size_t p = static_cast<std::size_t>(py) * static_cast<std::size_t>(width) + static_cast<std::size_t>(px);
                T* feat = out.feature.row(p);
                T trans = T(1), depth = T(0);
                int last = 0;
                for (std::size_t pos = 0; pos < list.size(); ++pos) {
                    const auto i = static_cast<std::size_t>(list[pos]);
                    const T dx = (*s.mean2d)(i, 0) - static_cast<T>(px);
                    const T dy = (*s.mean2d)(i, 1) - static_cast<T>(py);
                    const T power = detail::falloff_power(ctx.conics[i], dx, dy);
                    if (power > T(0)) continue;
                    const T alpha = std::min(T(kAlphaMax), (*s.opacity)(i, 0) * std::exp(power));
                    if (alpha < T(kAlphaMin)) continue;
                    const T next = trans * (T(1) - alpha);
                    if (next < T(kTransmittanceMin)) break;
                    const T w = alpha * trans;
                    const T* f = s.features->row(i);
                    for (std::size_t c = 0; c < k; ++c) feat[c] += w * f[c];
                    if (with_rgb)
                        for (std::size_t c = 0; c < 3; ++c) out.rgb(p, c) += w * (*s.colors)(i, c);
                    depth += w * (*s.depth)(i, 0);
                    trans = next;
                    last = static_cast<int>(pos) + 1;
                }
                for (std::size_t c = 0; c < k; ++c) feat[c] += trans * detail::background_at(opt, c);
                out.depth(p, 0) = depth;
                out.alpha(p, 0) = T(1) - trans;
                ctx.final_t[p] = trans;
                ctx.last[p] = last;
            }
        }
    }
    if (ctx_out) *ctx_out = std::move(ctx);
    return out;
}

// Reference renderer for tests and ground truth: one global depth order and
// a loop over every splat at every pixel. Splats after the transmittance
// cutoff contribute nothing, matching the tiled path's termination rule.
template <class T>
RenderedMaps<T> rasterize_oracle(const ScreenSplats<T>& s, int width, int height, const std::vector<T>& background = {})
{
    const std::size_t k = s.channels();
    const std::vector<int> order = depth_order(s);
    std::vector<Conic<T>> conics(s.count());
    for (int i : order) conics[static_cast<std::size_t>(i)] = conic_of(s, static_cast<std::size_t>(i));
    const std::size_t pixels = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    RenderedMaps<T> out;
    out.width = width;
    out.height = height;
    out.feature = Tensor<T>::matrix(pixels, k);
    out.depth = Tensor<T>::matrix(pixels, 1);
    out.alpha = Tensor<T>::matrix(pixels, 1);
    out.rgb = Tensor<T>::matrix(pixels, 3);
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            const std::size_t p = static_cast<std::size_t>(py) * static_cast<std::size_t>(width) + static_cast<std::size_t>(px);
            T trans = T(1);
            bool done = false;
            for (int si : order) {
                const auto i = static_cast<std::size_t>(si);
                const Conic<T>& q = conics[i];
                const T dx = (*s.mean2d)(i, 0) - static_cast<T>(px);
                const T dy = (*s.mean2d)(i, 1) - static_cast<T>(py);
                const T power = T(-0.5) * (q.a * dx * dx + q.c * dy * dy) - q.b * dx * dy;
                if (power > T(0)) continue;
                const T alpha = std::min(T(kAlphaMax), (*s.opacity)(i, 0) * std::exp(power));
                if (alpha < T(kAlphaMin)) continue;
                const T next = trans * (T(1) - alpha);
                done = done || next < T(kTransmittanceMin);
                if (done) continue;
                const T w = alpha * trans;
                for (std::size_t c = 0; c < k; ++c) out.feature(p, c) += w * (*s.features)(i, c);
                if (s.colors)
                    for (std::size_t c = 0; c < 3; ++c) out.rgb(p, c) += w * (*s.colors)(i, c);
                out.depth(p, 0) += w * (*s.depth)(i, 0);
                trans = next;
            }
            for (std::size_t c = 0; c < k; ++c) out.feature(p, c) += trans * (background.empty() ? T(0) : background[c]);
            out.alpha(p, 0) = T(1) - trans;
        }
    }
    return out;
}

// Per-splat gradients produced by rasterize_backward.
template <class T>
struct SplatGrads {
    Tensor<T> mean2d;   // {n,2}
    Tensor<T> cov2d;    // {n,3}
    Tensor<T> depth;    // {n,1}
    Tensor<T> opacity;  // {n,1}
    Tensor<T> features; // {n,K}
};

// Adjoint of rasterize. Re-walks each pixel's list back to front from its last
// contributor, rebuilding transmittance as T_i = T_{i+1} / (1 − α_i). Per-tile
// partial gradients are reduced in tile order, so results do not depend on
// the worker count. Any of the map gradients may be null.
template <class T>
SplatGrads<T> rasterize_backward(const ScreenSplats<T>& s, const ForwardContext<T>& ctx, const RasterOptions<T>& opt,
                                 const std::type_identity_t<Tensor<T>>* d_feature,
                                 const std::type_identity_t<Tensor<T>>* d_depth,
                                 const std::type_identity_t<Tensor<T>>* d_alpha)
{
    const std::size_t n = s.count();
    const std::size_t k = s.channels();
    require(ctx.conics.size() == n && ctx.final_t.size() ==
                                          static_cast<std::size_t>(ctx.width) * static_cast<std::size_t>(ctx.height),
            "rasterize_backward: forward context does not match these splats");
    constexpr std::size_t kFixed = 7; // mean(2) conic(3) opacity depth
    const std::size_t stride = kFixed + k;
    const int tiles = ctx.bins.tiles_x * ctx.bins.tiles_y;
    std::vector<std::vector<T>> partial(static_cast<std::size_t>(tiles));

#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, opt.workers))
    for (int t = 0; t < tiles; ++t) {
        const auto& list = ctx.bins.lists[static_cast<std::size_t>(t)];
        auto& acc = partial[static_cast<std::size_t>(t)];
        acc.assign(list.size() * stride, T(0));
        if (list.empty()) continue;
        const int tx = t % ctx.bins.tiles_x, ty = t / ctx.bins.tiles_x;
        std::vector<T> suffix(k);
        for (int py = ty * opt.tile; py < std::min(ctx.height, (ty + 1) * opt.tile); ++py) {
            for (int px = tx * opt.tile; px < std::min(ctx.width, (tx + 1) * opt.tile); ++px) {
                const std::size_t p = static_cast<std::size_t>(py) * static_cast<std::size_t>(ctx.width) + static_cast<std::size_t>(px);
                const int last = ctx.last[p];
                if (last == 0) continue;
                const T t_final = ctx.final_t[p];
                const T* gf = d_feature ? d_feature->row(p) : nullptr;
                const T gd = d_depth ? (*d_depth)(p, 0) : T(0);
                const T ga = d_alpha ? (*d_alpha)(p, 0) : T(0);
                // Suffix sums S = Σ_{j>i} v_j α_j T_j + T_final·bg, per channel and for depth.
                for (std::size_t c = 0; c < k; ++c) suffix[c] = t_final * detail::background_at(opt, c);
                T suffix_depth = 0;
                T trans = t_final;
                for (int pos = last - 1; pos >= 0; --pos) {
                    const auto i = static_cast<std::size_t>(list[static_cast<std::size_t>(pos)]);
                    const Conic<T>& q = ctx.conics[i];
                    const T dx = (*s.mean2d)(i, 0) - static_cast<T>(px);
                    const T dy = (*s.mean2d)(i, 1) - static_cast<T>(py);
                    const T power = detail::falloff_power(q, dx, dy);
                    if (power > T(0)) continue;
                    const T gauss = std::exp(power);
                    const T raw_alpha = (*s.opacity)(i, 0) * gauss;
                    const T alpha = std::min(T(kAlphaMax), raw_alpha);
                    if (alpha < T(kAlphaMin)) continue;
                    const T one_minus = T(1) - alpha;
                    trans = trans / one_minus;
                    const T w = alpha * trans;
                    T* a = acc.data() + static_cast<std::size_t>(pos) * stride;
                    const T* f = s.features->row(i);
                    T d_alpha_i = 0;
                    for (std::size_t c = 0; c < k; ++c) {
                        const T g = gf ? gf[c] : T(0);
                        a[kFixed + c] += w * g;
                        d_alpha_i += g * (f[c] * trans - suffix[c] / one_minus);
                        suffix[c] += f[c] * w;
                    }
                    const T di = (*s.depth)(i, 0);
                    a[6] += w * gd;
                    d_alpha_i += gd * (di * trans - suffix_depth / one_minus);
                    suffix_depth += di * w;
                    d_alpha_i += ga * (t_final / one_minus);
                    if (raw_alpha > T(kAlphaMax)) continue; // clamped: flat in o and the falloff
                    a[5] += gauss * d_alpha_i;
                    const T d_power = alpha * d_alpha_i;
                    a[0] += (-q.a * dx - q.b * dy) * d_power;
                    a[1] += (-q.c * dy - q.b * dx) * d_power;
                    a[2] += T(-0.5) * dx * dx * d_power;
                    a[3] += -dx * dy * d_power;
                    a[4] += T(-0.5) * dy * dy * d_power;
                }
            }
        }
    }

    SplatGrads<T> out;
    out.mean2d = Tensor<T>::matrix(n, 2);
    out.cov2d = Tensor<T>::matrix(n, 3);
    out.depth = Tensor<T>::matrix(n, 1);
    out.opacity = Tensor<T>::matrix(n, 1);
    out.features = Tensor<T>::matrix(n, k);
    Tensor<T> d_conic = Tensor<T>::matrix(n, 3);
    for (int t = 0; t < tiles; ++t) {
        const auto& list = ctx.bins.lists[static_cast<std::size_t>(t)];
        const auto& acc = partial[static_cast<std::size_t>(t)];
        for (std::size_t pos = 0; pos < list.size(); ++pos) {
            const auto i = static_cast<std::size_t>(list[pos]);
            const T* a = acc.data() + pos * stride;
            out.mean2d(i, 0) += a[0];
            out.mean2d(i, 1) += a[1];
            d_conic(i, 0) += a[2];
            d_conic(i, 1) += a[3];
            d_conic(i, 2) += a[4];
            out.opacity(i, 0) += a[5];
            out.depth(i, 0) += a[6];
            for (std::size_t c = 0; c < k; ++c) out.features(i, c) += a[kFixed + c];
        }
    }
    // Conic = Σ'⁻¹, so dL/dΣ' = −Q·(dL/dQ)·Q with the off-diagonal gradient split
    // between the two symmetric entries.
    for (std::size_t i = 0; i < n; ++i) {
        if (!s.is_visible(i)) continue;
        const Conic<T>& q = ctx.conics[i];
        geometry::Mat2<T> qm, gq;
        qm << q.a, q.b, q.b, q.c;
        gq << d_conic(i, 0), T(0.5) * d_conic(i, 1), T(0.5) * d_conic(i, 1), d_conic(i, 2);
        const geometry::Mat2<T> gs = -qm * gq * qm;
        out.cov2d(i, 0) = gs(0, 0);
        out.cov2d(i, 1) = gs(0, 1) + gs(1, 0);
        out.cov2d(i, 2) = gs(1, 1);
    }
    return out;
}

struct RenderVars {
    Var feature; // {H*W, K}
    Var depth;   // {H*W, 1}
    Var alpha;   // {H*W, 1}
};

// Graph op: rasterize projected splats with per-splat opacity {n,1} and
// features {n,K}.
template <class T>
RenderVars rasterize_op(Graph<T>& g, const geometry::ProjectedSplats<T>& proj, Var opacity, Var features,
                        const geometry::CameraModel& cam, const RasterOptions<T>& opt)
{
    ScreenSplats<T> s;
    s.mean2d = &g.value(proj.mean2d);
    s.cov2d = &g.value(proj.cov2d);
    s.depth = &g.value(proj.depth);
    s.opacity = &g.value(opacity);
    s.features = &g.value(features);
    s.visible = &proj.visible;
    require(s.opacity->rows() == s.count() && s.features->rows() == s.count(),
            "rasterize_op: opacity/features must have one row per splat");
    ForwardContext<T> ctx;
    RenderedMaps<T> maps = rasterize(s, cam.width, cam.height, opt, &ctx);
    std::vector<Tensor<T>> outs;
    outs.push_back(std::move(maps.feature));
    outs.push_back(std::move(maps.depth));
    outs.push_back(std::move(maps.alpha));
    const Var m = proj.mean2d, c = proj.cov2d, d = proj.depth;
    auto vars = g.record("rasterize", {m, c, d, opacity, features}, std::move(outs),
                         [m, c, d, opacity, features, visible = proj.visible, ctx = std::move(ctx),
                          opt](Graph<T>& g, const auto& dy) {
                             ScreenSplats<T> s;
                             s.mean2d = &g.value(m);
                             s.cov2d = &g.value(c);
                             s.depth = &g.value(d);
                             s.opacity = &g.value(opacity);
                             s.features = &g.value(features);
                             s.visible = &visible;
                             SplatGrads<T> gr = rasterize_backward(s, ctx, opt, dy[0], dy[1], dy[2]);
                             if (g.requires_grad(m)) g.grad(m) += gr.mean2d;
                             if (g.requires_grad(c)) g.grad(c) += gr.cov2d;
                             if (g.requires_grad(d)) g.grad(d) += gr.depth;
                             if (g.requires_grad(opacity)) g.grad(opacity) += gr.opacity;
                             if (g.requires_grad(features)) g.grad(features) += gr.features;
                         });
    return RenderVars{vars[0], vars[1], vars[2]};
}

} // namespace slpt::raster
