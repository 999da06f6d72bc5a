#pragma once

#include <cstdint>
#include <random>

#include "slpt/codec/codec.hpp"
#include "slpt/diffcore/layers.hpp"

// Point-wise latent VAE over the encoder's sparse points: per-point Gaussian
// posteriors over both features and coordinates, a reparameterized sample
// z = (z_f, z_p), and a decoder back to sparse points.
namespace slpt::plvae {

using codec::SparseLatentPoints;

struct PlvaeConfig {
    std::size_t sparse_dim = 64; // D_s
    std::size_t latent_dim = 32; // Z_f
    std::size_t hidden = 64;
    bool residual_mu_p = true;   // μ_p = coords + Δ instead of an absolute prediction
    double logvar_min = -10.0;
    double logvar_max = 4.0;
};

struct PosteriorParams {
    Var mu_f;     // {M, Z_f}
    Var logvar_f; // {M, Z_f}
    Var mu_p;     // {M, 3}
    Var logvar_p; // {M, 3}
    Var global;   // {1, hidden}, attention-pooled descriptor
};

template <class T>
struct LatentSample {
    Var z_f;         // {M, Z_f}
    Var z_p;         // {M, 3}
    Tensor<T> eps_f; // noise draws used, zero in deterministic mode
    Tensor<T> eps_p;
};

template <class T>
Tensor<T> standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor<T> t = Tensor<T>::matrix(rows, cols);
    for (auto& x : t.vec()) x = static_cast<T>(dist(rng));
    return t;
}

template <class T>
class PointLatentVae {
public:
    explicit PointLatentVae(PlvaeConfig cfg = {}) : cfg_(cfg)
    {
        const std::size_t h = cfg.hidden;
        backbone_ = Mlp{"plvae/psi", {3 + cfg.sparse_dim, h, h}};
        score_ = Mlp{"plvae/score", {h, 1}};
        local_ = Mlp{"plvae/local", {h, h}};
        head_f_ = Mlp{"plvae/phi_f", {2 * h, h, 2 * cfg.latent_dim}};
        head_p_ = Mlp{"plvae/phi_p", {2 * h, h, 6}};
        const std::size_t zin = cfg.latent_dim + 3;
        decoder_ = Mlp{"plvae/dec", {2 * zin, h, h, 3 + cfg.sparse_dim}};
    }

    const PlvaeConfig& config() const { return cfg_; }

    void init(ParamStore<T>& store, std::mt19937_64& rng) const
    {
        backbone_.init(store, rng);
        score_.init(store, rng, /*zero_last=*/true);
        local_.init(store, rng);
        head_f_.init(store, rng);
        head_p_.init(store, rng);
        decoder_.init(store, rng);
    }

    // h_i = [attention-pooled global descriptor, per-point descriptor]; the two
    // heads emit (μ_f, log σ_f²) and (μ_p or Δ, log σ_p²), log-variances clamped.
    PosteriorParams encode(Graph<T>& g, ParamStore<T>& store, const SparseLatentPoints& sparse) const
    {
        const std::size_t m = g.value(sparse.coords).rows();
        require(g.value(sparse.features).rows() == m && g.value(sparse.features).cols() == cfg_.sparse_dim,
                "plvae encode: expected {M," + std::to_string(cfg_.sparse_dim) + "} sparse features");
        Var psi = ops::silu(g, backbone_(g, store, ops::concat_cols(g, {sparse.coords, sparse.features})));
        Var global = ops::attention_pool(g, score_(g, store, psi), psi);
        Var local = local_(g, store, psi);
        Var h = ops::concat_cols(g, {ops::broadcast_rows(g, global, m), local});
        const T lo = static_cast<T>(cfg_.logvar_min), hi = static_cast<T>(cfg_.logvar_max);
        Var pf = head_f_(g, store, h);
        Var pp = head_p_(g, store, h);
        PosteriorParams out;
        out.mu_f = ops::slice_cols(g, pf, 0, cfg_.latent_dim);
        out.logvar_f = ops::clamp(g, ops::slice_cols(g, pf, cfg_.latent_dim, cfg_.latent_dim), lo, hi);
        Var mp = ops::slice_cols(g, pp, 0, 3);
        out.mu_p = cfg_.residual_mu_p ? ops::add(g, sparse.coords, mp) : mp;
        out.logvar_p = ops::clamp(g, ops::slice_cols(g, pp, 3, 3), lo, hi);
        out.global = global;
        return out;
    }

    // z = μ + exp(½ log σ²) ⊙ ε with ε ~ N(0, I) from `seed`; ε = 0 when deterministic.
    LatentSample<T> reparameterize(Graph<T>& g, const PosteriorParams& post, std::uint64_t seed,
                                   bool deterministic) const
    {
        const std::size_t m = g.value(post.mu_f).rows();
        LatentSample<T> z;
        if (deterministic) {
            z.eps_f = Tensor<T>::matrix(m, cfg_.latent_dim);
            z.eps_p = Tensor<T>::matrix(m, 3);
        } else {
            std::mt19937_64 rng(seed);
            z.eps_f = standard_normal<T>(m, cfg_.latent_dim, rng);
            z.eps_p = standard_normal<T>(m, 3, rng);
        }
        z.z_f = ops::reparameterize(g, post.mu_f, post.logvar_f, z.eps_f);
        z.z_p = ops::reparameterize(g, post.mu_p, post.logvar_p, z.eps_p);
        return z;
    }

    // Per-point map of [z_f, z_p, mean-pooled z] to reconstructed coordinates
    // and features.
    SparseLatentPoints decode(Graph<T>& g, ParamStore<T>& store, Var z_f, Var z_p) const
    {
        const std::size_t m = g.value(z_f).rows();
        require(g.value(z_f).cols() == cfg_.latent_dim && g.value(z_p).cols() == 3 && g.value(z_p).rows() == m,
                "plvae decode: expected z_f {M,Z_f} and z_p {M,3}");
        Var z = ops::concat_cols(g, {z_f, z_p});
        Var summary = ops::broadcast_rows(g, ops::mean_rows(g, z), m);
        Var out = decoder_(g, store, ops::concat_cols(g, {z, summary}));
        Var dp = ops::slice_cols(g, out, 0, 3);
        SparseLatentPoints rec;
        rec.coords = cfg_.residual_mu_p ? ops::add(g, z_p, dp) : dp;
        rec.features = ops::slice_cols(g, out, 3, cfg_.sparse_dim);
        return rec;
    }

private:
    PlvaeConfig cfg_;
    Mlp backbone_, score_, local_, head_f_, head_p_, decoder_;
};

enum class SampleMode { stochastic, deterministic };

template <class T>
struct Representation {
    PosteriorParams posterior;
    LatentSample<T> latent;
};

// Raw colored cloud → sparse points → posterior → z_vae. Parameters must
// already be present in `store`.
template <class T>
Representation<T> extract_representation(Graph<T>& g, ParamStore<T>& store, const codec::PointCodec<T>& codec,
                                         const PointLatentVae<T>& vae, const codec::CodecIndex<T>& ix,
                                         const Tensor<T>& colors, SampleMode mode, std::uint64_t seed)
{
    auto enc = codec.encode(g, store, ix, g.constant(colors));
    Representation<T> r;
    r.posterior = vae.encode(g, store, enc.sparse);
    r.latent = vae.reparameterize(g, r.posterior, seed, mode == SampleMode::deterministic);
    return r;
}

} // namespace slpt::plvae
