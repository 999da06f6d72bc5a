#pragma once

#include <random>
#include <vector>

#include "slpt/codec/point_cloud.hpp"
#include "slpt/codec/sampling.hpp"
#include "slpt/diffcore/layers.hpp"

// Two-stage set-abstraction encoder (N → N/4 → M) and the matching
// feature-propagation decoder (M → N/4 → N) with skip connections.
namespace slpt::codec {

struct CodecConfig {
    std::size_t num_sparse = 256;  // M
    std::size_t group_size = 16;   // k of the kNN grouping
    std::size_t stage1_div = 4;    // N / stage1_div centers after the first stage
    std::size_t sparse_dim = 64;   // D_s
    std::size_t dense_dim = 64;    // D_d
    std::size_t stage1_dim = 32;
    std::size_t hidden = 64;
    double interp_eps = 1e-8;
};

// Latent point set living on a graph: coords {M,3}, features {M,D_s}.
struct SparseLatentPoints {
    Var coords;
    Var features;
};

// Sampling and neighborhood structure of one input cloud. Depends only on the
// coordinates, so it is computed once per scene.
template <class T>
struct CodecIndex {
    Tensor<T> raw_coords;    // {N,3}
    std::vector<int> fps1;   // N/4 indices into raw
    std::vector<int> group1; // {N/4 * k} indices into raw
    Tensor<T> level1_coords; // {N/4,3}
    std::vector<int> fps2;   // M indices into level1
    std::vector<int> group2; // {M * k} indices into level1
    Tensor<T> level2_coords; // {M,3}
    std::vector<int> up2_idx;    // {N * 3} nearest level1 points of each raw point
    std::vector<T> up2_weights;  // {N * 3} normalized inverse-distance weights
    Tensor<T> rel1;              // {N/4 * k, 3} neighbor − center offsets
    Tensor<T> rel2;              // {M * k, 3}
    std::size_t k = 0;
};

template <class T>
Tensor<T> relative_offsets(const Tensor<T>& src, const std::vector<int>& group, const Tensor<T>& centers, std::size_t k)
{
    Tensor<T> rel = Tensor<T>::matrix(group.size(), 3);
    for (std::size_t r = 0; r < group.size(); ++r)
        for (std::size_t c = 0; c < 3; ++c)
            rel(r, c) = src(static_cast<std::size_t>(group[r]), c) - centers(r / k, c);
    return rel;
}

// Normalized inverse-squared-distance weights over each query's neighbor list.
template <class T>
std::vector<T> idw_weights(const Tensor<T>& queries, const Tensor<T>& src, const std::vector<int>& idx, std::size_t per,
                           double eps)
{
    std::vector<T> w(idx.size());
    for (std::size_t q = 0; q < queries.rows(); ++q) {
        double total = 0;
        for (std::size_t j = 0; j < per; ++j) {
            const double d2 = squared_distance(queries, q, src, static_cast<std::size_t>(idx[q * per + j]));
            total += (w[q * per + j] = static_cast<T>(1.0 / (d2 + eps)));
        }
        for (std::size_t j = 0; j < per; ++j) w[q * per + j] = static_cast<T>(w[q * per + j] / total);
    }
    return w;
}

template <class T>
CodecIndex<T> build_index(const Tensor<T>& coords, const CodecConfig& cfg)
{
    const std::size_t n = coords.rows();
    if (n < cfg.num_sparse) throw InputError("encode needs N >= M (" + std::to_string(n) + " < " +
                                             std::to_string(cfg.num_sparse) + ")");
    CodecIndex<T> ix;
    ix.k = cfg.group_size;
    ix.raw_coords = coords;
    const std::size_t n1 = std::max(cfg.num_sparse, n / cfg.stage1_div);
    ix.fps1 = farthest_point_sample(coords, n1);
    ix.level1_coords = rows_gather(coords, ix.fps1);
    ix.group1 = knn(ix.level1_coords, coords, cfg.group_size);
    ix.fps2 = farthest_point_sample(ix.level1_coords, cfg.num_sparse);
    ix.level2_coords = rows_gather(ix.level1_coords, ix.fps2);
    ix.group2 = knn(ix.level2_coords, ix.level1_coords, cfg.group_size);
    const std::size_t k1 = ix.group1.size() / n1, k2 = ix.group2.size() / cfg.num_sparse;
    require(k1 == k2 && k1 > 0, "build_index: inconsistent group sizes");
    ix.k = k1;
    ix.rel1 = relative_offsets(coords, ix.group1, ix.level1_coords, k1);
    ix.rel2 = relative_offsets(ix.level1_coords, ix.group2, ix.level2_coords, k2);
    const std::size_t per = std::min<std::size_t>(3, n1);
    ix.up2_idx = knn(coords, ix.level1_coords, per);
    ix.up2_weights = idw_weights(coords, ix.level1_coords, ix.up2_idx, per, cfg.interp_eps);
    return ix;
}

// Inverse-distance interpolation with fixed neighbors and weights.
template <class T>
Var interpolate_fixed(Graph<T>& g, Var src_feats, std::vector<int> idx, std::vector<T> weights, std::size_t per)
{
    const auto& vf = g.value(src_feats);
    const std::size_t nq = idx.size() / per, c = vf.cols();
    Tensor<T> out = Tensor<T>::matrix(nq, c);
    for (std::size_t q = 0; q < nq; ++q)
        for (std::size_t j = 0; j < per; ++j) {
            const T w = weights[q * per + j];
            const T* f = vf.row(static_cast<std::size_t>(idx[q * per + j]));
            T* o = out.row(q);
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += w * f[ch];
        }
    return g.record1("interpolate_fixed", {src_feats}, std::move(out),
                     [src_feats, idx = std::move(idx), weights = std::move(weights), per](Graph<T>& g, const auto& dy) {
                         auto& gf = g.grad(src_feats);
                         const auto& d = *dy[0];
                         const std::size_t c = gf.cols();
                         for (std::size_t q = 0; q < idx.size() / per; ++q)
                             for (std::size_t j = 0; j < per; ++j) {
                                 const T w = weights[q * per + j];
                                 T* o = gf.row(static_cast<std::size_t>(idx[q * per + j]));
                                 for (std::size_t ch = 0; ch < c; ++ch) o[ch] += w * d(q, ch);
                             }
                     });
}

// Interpolates src features onto `dst` coordinates from the 3 nearest source
// points, w_j = 1/(d_j² + ε) normalized. Differentiable in the source
// features and the source coordinates; neighbor selection is piecewise constant.
template <class T>
Var three_interpolate(Graph<T>& g, Var src_coords, Var src_feats, const Tensor<T>& dst, double eps)
{
    const auto& vc = g.value(src_coords);
    const auto& vf = g.value(src_feats);
    require(vc.cols() == 3 && vc.rows() == vf.rows(), "three_interpolate: source coords/features mismatch");
    const std::size_t per = std::min<std::size_t>(3, vc.rows());
    const std::size_t nq = dst.rows(), c = vf.cols();
    std::vector<int> idx = knn(dst, vc, per);
    std::vector<T> raw(idx.size()), total(nq, T(0));
    for (std::size_t q = 0; q < nq; ++q)
        for (std::size_t j = 0; j < per; ++j) {
            T d2 = 0;
            for (std::size_t a = 0; a < 3; ++a) {
                const T diff = vc(static_cast<std::size_t>(idx[q * per + j]), a) - dst(q, a);
                d2 += diff * diff;
            }
            raw[q * per + j] = T(1) / (d2 + static_cast<T>(eps));
            total[q] += raw[q * per + j];
        }
    Tensor<T> out = Tensor<T>::matrix(nq, c);
    for (std::size_t q = 0; q < nq; ++q)
        for (std::size_t j = 0; j < per; ++j) {
            const T w = raw[q * per + j] / total[q];
            const T* f = vf.row(static_cast<std::size_t>(idx[q * per + j]));
            for (std::size_t ch = 0; ch < c; ++ch) out(q, ch) += w * f[ch];
        }
    return g.record1("three_interpolate", {src_coords, src_feats}, std::move(out),
                     [src_coords, src_feats, dst, idx = std::move(idx), raw = std::move(raw), total = std::move(total),
                      per](Graph<T>& g, const auto& dy) {
                         const auto& d = *dy[0];
                         const auto& vc = g.value(src_coords);
                         const auto& vf = g.value(src_feats);
                         const std::size_t c = vf.cols();
                         const bool need_f = g.requires_grad(src_feats), need_c = g.requires_grad(src_coords);
                         for (std::size_t q = 0; q < total.size(); ++q) {
                             T a[3] = {0, 0, 0};
                             T mean_a = 0;
                             for (std::size_t j = 0; j < per; ++j) {
                                 const auto src = static_cast<std::size_t>(idx[q * per + j]);
                                 const T w = raw[q * per + j] / total[q];
                                 for (std::size_t ch = 0; ch < c; ++ch) a[j] += d(q, ch) * vf(src, ch);
                                 mean_a += w * a[j];
                                 if (need_f) {
                                     T* gf = g.grad(src_feats).row(src);
                                     for (std::size_t ch = 0; ch < c; ++ch) gf[ch] += w * d(q, ch);
                                 }
                             }
                             if (!need_c) continue;
                             for (std::size_t j = 0; j < per; ++j) {
                                 const auto src = static_cast<std::size_t>(idx[q * per + j]);
                                 const T wr = raw[q * per + j];
                                 const T d_raw = (a[j] - mean_a) / total[q];
                                 const T d_d2 = -wr * wr * d_raw;
                                 for (std::size_t ax = 0; ax < 3; ++ax)
                                     g.grad(src_coords)(src, ax) += d_d2 * T(2) * (vc(src, ax) - dst(q, ax));
                             }
                         }
                     });
}

// Encoder output plus the skip features the decoder consumes.
struct EncodeResult {
    SparseLatentPoints sparse;
    Var skip0; // raw colors {N,3}
    Var skip1; // first-stage features {N/4, stage1_dim}
};

template <class T>
class PointCodec {
public:
    explicit PointCodec(CodecConfig cfg = {}) : cfg_(cfg)
    {
        sa1_ = Mlp{"codec/sa1", {3 + 3, cfg.stage1_dim, cfg.stage1_dim}};
        sa2_ = Mlp{"codec/sa2", {3 + cfg.stage1_dim, cfg.hidden, cfg.sparse_dim}};
        up1_ = Mlp{"codec/up1", {cfg.sparse_dim + cfg.stage1_dim, cfg.hidden, cfg.hidden}};
        up2_ = Mlp{"codec/up2", {cfg.hidden + 3, cfg.hidden, cfg.dense_dim}};
    }

    const CodecConfig& config() const { return cfg_; }

    void init(ParamStore<T>& store, std::mt19937_64& rng) const
    {
        sa1_.init(store, rng);
        sa2_.init(store, rng);
        up1_.init(store, rng);
        up2_.init(store, rng);
    }

    // Set abstraction twice: FPS centers, kNN groups, shared map on
    // (relative offset, neighbor feature), max-pool per group.
    EncodeResult encode(Graph<T>& g, ParamStore<T>& store, const CodecIndex<T>& ix, Var colors) const
    {
        require(g.value(colors).rows() == ix.raw_coords.rows() && g.value(colors).cols() == 3,
                "encode: colors must be {N,3} matching the index");
        Var x1 = ops::concat_cols(g, {g.constant(ix.rel1), ops::gather_rows(g, colors, ix.group1)});
        Var f1 = ops::group_max(g, sa1_(g, store, x1), ix.k);
        Var x2 = ops::concat_cols(g, {g.constant(ix.rel2), ops::gather_rows(g, f1, ix.group2)});
        Var f2 = ops::group_max(g, sa2_(g, store, x2), ix.k);
        return EncodeResult{SparseLatentPoints{g.constant(ix.level2_coords), f2}, colors, f1};
    }

    // Feature propagation back to the raw resolution; output {N, D_d}.
    Var decode(Graph<T>& g, ParamStore<T>& store, const CodecIndex<T>& ix, const SparseLatentPoints& sparse,
               Var skip0, Var skip1) const
    {
        require(g.value(skip1).rows() == ix.level1_coords.rows() && g.value(skip1).cols() == cfg_.stage1_dim,
                "decode: first-stage skip features do not match the index");
        require(g.value(skip0).rows() == ix.raw_coords.rows() && g.value(skip0).cols() == 3,
                "decode: raw skip features do not match the index");
        require(g.value(sparse.features).cols() == cfg_.sparse_dim && g.value(sparse.coords).cols() == 3 &&
                    g.value(sparse.coords).rows() == g.value(sparse.features).rows(),
                "decode: sparse points must be {M,3} + {M,D_s}");
        Var up = three_interpolate(g, sparse.coords, sparse.features, ix.level1_coords, cfg_.interp_eps);
        Var h1 = up1_(g, store, ops::concat_cols(g, {up, skip1}));
        const std::size_t per = ix.up2_idx.size() / ix.raw_coords.rows();
        Var up2 = interpolate_fixed(g, h1, ix.up2_idx, ix.up2_weights, per);
        return up2_(g, store, ops::concat_cols(g, {up2, skip0}));
    }

private:
    CodecConfig cfg_;
    Mlp sa1_, sa2_, up1_, up2_;
};

} // namespace slpt::codec
