#pragma once

#include <vector>

#include "slpt/codec/codec.hpp"
#include "slpt/diffcore/ops.hpp"
#include "slpt/plvae/plvae.hpp"

namespace slpt::losses {

struct LossWeights {
    double beta_rgb = 1.0;
    double beta_depth = 0.2;
    double beta_sem = 0.1;
    double omega_coord = 1.0;
    double omega_feat = 0.1;
    double kl_weight = 1.0;
    double anneal_floor = 0.1;
    double depth_alpha_min = 0.05; // rendered coverage required for a depth pixel to count
};

struct LossBreakdown {
    double l_render = 0;
    double l_render_rgb = 0;
    double l_render_depth = 0;
    double l_render_sem = 0;
    double l_recon = 0;
    double l_vae = 0;
    double l_kl = 0;
    double w_t = 1;
    double l_total = 0;
    bool depth_empty = false; // no pixel passed the depth mask in any view
};

// One rendered view: graph outputs plus the rendered coverage (a value, used
// only for masking).
struct ViewPrediction {
    Var rgb;   // {P,3}
    Var depth; // {P,1}
    Var sem;   // {P,S}
    Var alpha; // {P,1}
    Var feature; // {P,K} rendered splat features, optional
};

template <class T>
struct ViewTarget {
    Tensor<T> rgb;   // {P,3}
    Tensor<T> depth; // {P,1}, 0 where invalid
    Tensor<T> sem;   // {P,S}
};

struct RenderLossVars {
    Var total;
    Var rgb;
    Var depth;
    Var sem;
    bool depth_empty = false;
};

// Depth pixels that count: valid ground truth and rendered coverage above the threshold.
template <class T>
std::vector<unsigned char> depth_mask(const Tensor<T>& gt_depth, const Tensor<T>& alpha, double alpha_min)
{
    require(gt_depth.size() == alpha.size(), "depth_mask: size mismatch");
    std::vector<unsigned char> m(gt_depth.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = gt_depth[i] > T(0) && static_cast<double>(alpha[i]) > alpha_min ? 1 : 0;
    return m;
}

// (1/V) Σ_v [β₁ mean|I−Î| + β₂ masked-mean|D−D̂| + β₃ mean|F−F̂|].
template <class T>
RenderLossVars render_loss(Graph<T>& g, const std::vector<ViewPrediction>& preds,
                           const std::vector<const ViewTarget<T>*>& targets, const LossWeights& w)
{
    require(!preds.empty() && preds.size() == targets.size(), "render_loss: need one target per predicted view");
    std::vector<Var> rgb_terms, depth_terms, sem_terms;
    for (std::size_t v = 0; v < preds.size(); ++v) {
        const auto& p = preds[v];
        const auto& t = *targets[v];
        // Sizes are read up front: recording new nodes may reallocate graph storage.
        const std::size_t n_rgb = g.value(p.rgb).size(), n_sem = g.value(p.sem).size();
        rgb_terms.push_back(ops::masked_abs_sum(g, p.rgb, t.rgb, {}, static_cast<T>(n_rgb)));
        sem_terms.push_back(ops::masked_abs_sum(g, p.sem, t.sem, {}, static_cast<T>(n_sem)));
        auto mask = depth_mask(t.depth, g.value(p.alpha), w.depth_alpha_min);
        std::size_t valid = 0;
        for (auto m : mask) valid += m;
        if (valid) depth_terms.push_back(ops::masked_abs_sum(g, p.depth, t.depth, std::move(mask), static_cast<T>(valid)));
    }
    const T inv_v = T(1) / static_cast<T>(preds.size());
    RenderLossVars out;
    out.rgb = ops::weighted_sum(g, rgb_terms, std::vector<T>(rgb_terms.size(), inv_v));
    out.sem = ops::weighted_sum(g, sem_terms, std::vector<T>(sem_terms.size(), inv_v));
    if (depth_terms.empty()) {
        out.depth = g.constant(Tensor<T>::scalar(T(0)));
        out.depth_empty = true;
    } else {
        out.depth = ops::weighted_sum(g, depth_terms, std::vector<T>(depth_terms.size(), inv_v));
    }
    out.total = ops::weighted_sum(g, {out.rgb, out.depth, out.sem},
                                  {static_cast<T>(w.beta_rgb), static_cast<T>(w.beta_depth), static_cast<T>(w.beta_sem)});
    return out;
}

// (1/N) Σ (‖p − p̂‖₁ + ‖c − ĉ‖₁).
template <class T>
Var recon_loss(Graph<T>& g, Var coords_hat, Var colors_hat, const Tensor<T>& coords, const Tensor<T>& colors)
{
    const std::size_t n = coords.rows();
    require(g.value(coords_hat).rows() == n && colors.rows() == n, "recon_loss: point counts differ");
    const T denom = static_cast<T>(n);
    return ops::add(g, ops::masked_abs_sum(g, coords_hat, coords, {}, denom),
                    ops::masked_abs_sum(g, colors_hat, colors, {}, denom));
}

// (1/M) Σ (ω₁‖p − p̂‖₁ + ω₂‖f − f̂‖₁), index-aligned.
template <class T>
Var vae_loss(Graph<T>& g, const codec::SparseLatentPoints& target, const codec::SparseLatentPoints& rec,
             const LossWeights& w)
{
    const T denom = static_cast<T>(g.value(target.coords).rows());
    return ops::weighted_sum(g, {ops::abs_diff_sum(g, rec.coords, target.coords, denom),
                                 ops::abs_diff_sum(g, rec.features, target.features, denom)},
                             {static_cast<T>(w.omega_coord), static_cast<T>(w.omega_feat)});
}

// Per-point KL to N(0, I) of the feature and coordinate posteriors, summed.
template <class T>
Var kl_loss(Graph<T>& g, const plvae::PosteriorParams& post)
{
    return ops::add(g, ops::kl_standard_normal(g, post.mu_f, post.logvar_f),
                    ops::kl_standard_normal(g, post.mu_p, post.logvar_p));
}

// Linear from 1 at t = 0 to `floor` at t = T/2, then constant.
inline double anneal(std::size_t t, std::size_t total, double floor = 0.1)
{
    require(t <= total, "anneal: step " + std::to_string(t) + " beyond total " + std::to_string(total));
    const double knee = 0.5 * static_cast<double>(total);
    if (static_cast<double>(t) >= knee) return t == 0 ? 1.0 : floor;
    return 1.0 - (1.0 - floor) * static_cast<double>(t) / knee;
}

// (1 − w)·render + w·recon + vae + kl_weight·KL.
template <class T>
Var total_loss(Graph<T>& g, Var render, Var recon, Var vae, Var kl, double w_t, const LossWeights& w)
{
    return ops::weighted_sum(g, {render, recon, vae, kl},
                             {static_cast<T>(1.0 - w_t), static_cast<T>(w_t), T(1), static_cast<T>(w.kl_weight)});
}

inline double total_from_parts(const LossBreakdown& b, const LossWeights& w)
{
    return (1.0 - b.w_t) * b.l_render + b.w_t * b.l_recon + b.l_vae + w.kl_weight * b.l_kl;
}

} // namespace slpt::losses
