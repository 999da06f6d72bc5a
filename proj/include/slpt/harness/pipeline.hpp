#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slpt/codec/codec.hpp"
#include "slpt/diffcore/checkpoint.hpp"
#include "slpt/geometry/gaussian.hpp"
#include "slpt/harness/config.hpp"
#include "slpt/heads/heads.hpp"
#include "slpt/losses/losses.hpp"
#include "slpt/plvae/plvae.hpp"
#include "slpt/rasterizer/rasterizer.hpp"

namespace slpt::harness {

// Per-scene inputs that stay fixed over training.
template <class T>
struct SceneInputs {
    codec::CodecIndex<T> index;
    Tensor<T> coords; // {N,3}
    Tensor<T> colors; // {N,3}
};

template <class T>
SceneInputs<T> make_inputs(const PointCloud<T>& pc, const TrainingConfig& cfg)
{
    if (pc.size() != cfg.num_points)
        throw ConfigError("point cloud has " + std::to_string(pc.size()) + " points, config expects " +
                          std::to_string(cfg.num_points));
    return SceneInputs<T>{codec::build_index(pc.coords, cfg.codec_config()), pc.coords, pc.colors};
}

// Fixed splat properties that replace the predicted ones. With `features`
// laid out as [rgb | semantics | ...] the projectors are bypassed and the
// rendered channels are read out directly.
template <class T>
struct SplatInjection {
    Tensor<T> quats;    // {N,4}
    Tensor<T> scales;   // {N,3}
    Tensor<T> opacity;  // {N,1}
    Tensor<T> features; // {N,K}
};

struct ForwardOptions {
    bool stochastic = false;     // sample z; otherwise z = μ
    std::uint64_t noise_seed = 0;
};

template <class T>
struct ForwardResult {
    codec::SparseLatentPoints sparse;                 // encoder output
    std::optional<plvae::PosteriorParams> posterior;  // absent without the VAE
    std::optional<plvae::LatentSample<T>> latent;
    codec::SparseLatentPoints sparse_hat;             // what the decoder consumed
    Var dense;
    heads::SplatSet splats;
    heads::ReconstructedPoints recon;
    std::vector<losses::ViewPrediction> views;
};

template <class T>
struct LossResult {
    Var total;
    losses::LossBreakdown parts;
};

template <class T>
class Model {
public:
    explicit Model(TrainingConfig cfg)
        : cfg_(std::move(cfg)), codec_(cfg_.codec_config()), vae_(cfg_.plvae_config()), heads_(cfg_.heads_config())
    {
        cfg_.validate();
    }

    const TrainingConfig& config() const { return cfg_; }
    const codec::PointCodec<T>& codec() const { return codec_; }
    const plvae::PointLatentVae<T>& vae() const { return vae_; }
    const heads::Heads<T>& heads() const { return heads_; }

    void init(ParamStore<T>& store, std::uint64_t seed) const
    {
        std::mt19937_64 rng(seed);
        codec_.init(store, rng);
        if (cfg_.plvae_enabled) vae_.init(store, rng);
        heads_.init(store, rng);
    }

    // Encoder → optional PL-VAE → decoder → heads → one render per camera.
    ForwardResult<T> forward(Graph<T>& g, ParamStore<T>& store, const SceneInputs<T>& in,
                             const std::vector<const geometry::CameraModel*>& cams, const ForwardOptions& opt,
                             const SplatInjection<T>* inject = nullptr) const
    {
        ForwardResult<T> r;
        auto enc = codec_.encode(g, store, in.index, g.constant(in.colors));
        r.sparse = enc.sparse;
        if (cfg_.plvae_enabled) {
            r.posterior = vae_.encode(g, store, enc.sparse);
            r.latent = vae_.reparameterize(g, *r.posterior, opt.noise_seed, !opt.stochastic);
            r.sparse_hat = vae_.decode(g, store, r.latent->z_f, r.latent->z_p);
        } else {
            r.sparse_hat = enc.sparse;
        }
        r.dense = codec_.decode(g, store, in.index, r.sparse_hat, enc.skip0, enc.skip1);
        Var coords = g.constant(in.coords);
        r.splats = heads_.predict_gaussians(g, store, r.dense, coords);
        r.recon = heads_.reconstruct_points(g, store, r.dense, coords);
        if (inject) {
            const std::size_t n = in.coords.rows();
            require(inject->quats.rows() == n && inject->scales.rows() == n && inject->opacity.rows() == n &&
                        inject->features.rows() == n && inject->features.cols() >= 3 + cfg_.sem_dim,
                    "SplatInjection: properties must cover every point and hold rgb + semantics");
            r.splats.quats = g.constant(inject->quats);
            r.splats.scales = g.constant(inject->scales);
            r.splats.opacity = g.constant(inject->opacity);
            r.splats.features = g.constant(inject->features);
        }
        raster::RasterOptions<T> ropt;
        ropt.workers = cfg_.workers;
        ropt.tile = cfg_.raster_tile;
        for (const auto* cam : cams) {
            // Rendering order is the view order; gradients accumulate in reverse view order.
            auto proj = geometry::project_gaussians(g, r.splats.means, r.splats.quats, r.splats.scales,
                                                    g.value(r.splats.opacity), *cam);
            auto rv = raster::rasterize_op(g, proj, r.splats.opacity, r.splats.features, *cam, ropt);
            losses::ViewPrediction v;
            if (inject) {
                v.rgb = ops::slice_cols(g, rv.feature, 0, 3);
                v.sem = ops::slice_cols(g, rv.feature, 3, cfg_.sem_dim);
            } else {
                auto [rgb, sem] = heads_.project_feature_map(g, store, rv.feature);
                v.rgb = rgb;
                v.sem = sem;
            }
            v.depth = rv.depth;
            v.alpha = rv.alpha;
            v.feature = rv.feature;
            r.views.push_back(v);
        }
        return r;
    }

    // Every term of the objective at step t of T. A non-finite term aborts
    // with its name.
    LossResult<T> losses(Graph<T>& g, const ForwardResult<T>& fr, const SceneInputs<T>& in,
                         const std::vector<const losses::ViewTarget<T>*>& targets, std::size_t t) const
    {
        const auto& w = cfg_.loss;
        LossResult<T> out;
        auto& p = out.parts;
        auto rl = losses::render_loss(g, fr.views, targets, w);
        Var recon = losses::recon_loss(g, fr.recon.coords, fr.recon.colors, in.coords, in.colors);
        Var vae = g.constant(Tensor<T>::scalar(T(0)));
        Var kl = g.constant(Tensor<T>::scalar(T(0)));
        if (fr.posterior) {
            vae = losses::vae_loss(g, fr.sparse, fr.sparse_hat, w);
            kl = losses::kl_loss(g, *fr.posterior);
        }
        p.w_t = losses::anneal(t, cfg_.steps, w.anneal_floor);
        out.total = losses::total_loss(g, rl.total, recon, vae, kl, p.w_t, w);
        auto val = [&](Var v, const char* name) {
            const double x = static_cast<double>(g.value(v).item());
            if (!std::isfinite(x)) throw NumericalError(std::string("non-finite loss term '") + name + "'");
            return x;
        };
        p.l_render_rgb = val(rl.rgb, "l_render_rgb");
        p.l_render_depth = val(rl.depth, "l_render_depth");
        p.l_render_sem = val(rl.sem, "l_render_sem");
        p.l_render = val(rl.total, "l_render");
        p.l_recon = val(recon, "l_recon");
        p.l_vae = val(vae, "l_vae");
        p.l_kl = val(kl, "l_kl");
        p.l_total = val(out.total, "l_total");
        p.depth_empty = rl.depth_empty;
        return out;
    }

private:
    TrainingConfig cfg_;
    codec::PointCodec<T> codec_;
    plvae::PointLatentVae<T> vae_;
    heads::Heads<T> heads_;
};

// Checkpoint plus a JSON sidecar "<path>.json" with the config, its hash and
// the dataset the run trained on.
template <class T>
void save_run_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store, const TrainingConfig& cfg,
                         std::size_t step, const std::filesystem::path& dataset = {})
{
    io::save_checkpoint(path, store, true);
    nlohmann::json side{{"config", cfg},
                        {"config_hash", config_hash(cfg)},
                        {"step", step},
                        {"dataset", dataset.empty() ? std::string() : std::filesystem::absolute(dataset).string()}};
    std::ofstream os(path.string() + ".json");
    if (!os) throw IoError("cannot write checkpoint sidecar for " + path.string());
    os << side.dump(2) << '\n';
    if (!os) throw IoError("checkpoint sidecar write failed: " + path.string());
}

inline nlohmann::json checkpoint_sidecar(const std::filesystem::path& path)
{
    std::ifstream is(path.string() + ".json");
    if (!is) throw IoError("missing checkpoint sidecar " + path.string() + ".json");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad checkpoint sidecar: " + std::string(e.what()));
    }
}

// Dataset directory recorded at training time; empty when unknown.
inline std::filesystem::path checkpoint_dataset(const std::filesystem::path& path)
{
    return checkpoint_sidecar(path).value("dataset", std::string());
}

inline TrainingConfig checkpoint_config(const std::filesystem::path& path)
{
    const nlohmann::json side = checkpoint_sidecar(path);
    TrainingConfig cfg = side.at("config").get<TrainingConfig>();
    cfg.validate();
    if (side.value("config_hash", std::string()) != config_hash(cfg))
        throw ConfigError("checkpoint sidecar config hash does not match its config");
    return cfg;
}

// Builds the parameter layout of `cfg` and fills it from the checkpoint.
template <class T>
ParamStore<T> load_run_checkpoint(const std::filesystem::path& path, const TrainingConfig& cfg)
{
    Model<T> model(cfg);
    ParamStore<T> store;
    model.init(store, 0);
    const auto entries = io::read_checkpoint(path);
    for (auto& [name, e] : store.entries()) {
        auto it = entries.find(name);
        if (it == entries.end()) throw ConfigError("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape() != e.value.shape())
            throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                              ", config expects " + shape_str(e.value.shape()));
        e.value = it->second.template cast<T>();
    }
    return store;
}

} // namespace slpt::harness
