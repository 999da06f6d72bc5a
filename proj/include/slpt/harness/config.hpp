#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "slpt/codec/codec.hpp"
#include "slpt/diffcore/adam.hpp"
#include "slpt/heads/heads.hpp"
#include "slpt/losses/losses.hpp"
#include "slpt/plvae/plvae.hpp"

namespace slpt::harness {

using json = nlohmann::json;

// Scene generator settings.
struct SceneConfig {
    std::size_t min_objects = 2;
    std::size_t max_objects = 3;
    double camera_radius = 1.6;
    double elevation_deg = 35.0;
    double elevation_jitter_deg = 5.0; // alternating ± per camera
    double fov_deg = 50.0;
    double splat_opacity = 0.95;
    double normal_scale = 0.002;
    double tangent_factor = 1.0; // tangent scale as a multiple of the mean sample spacing
};

// Everything that defines a run. Module configs are derived from the flat
// dimensions so they can never disagree.
struct TrainingConfig {
    std::uint64_t seed = 0;      // parameter init, view sampling, latent noise
    std::uint64_t data_seed = 0; // scene
    std::size_t num_points = 4096;     // N
    std::size_t num_sparse = 256;      // M
    std::size_t group_size = 16;
    std::size_t sparse_dim = 64;       // D_s
    std::size_t dense_dim = 64;        // D_d
    std::size_t stage1_dim = 32;
    std::size_t hidden = 64;
    std::size_t splat_dim = 32;        // K
    std::size_t sem_dim = 16;          // S
    std::size_t latent_dim = 32;       // Z_f
    int width = 64;
    int height = 64;
    std::size_t train_views = 8;
    std::size_t heldout_views = 2;
    std::size_t views_per_step = 2;
    std::size_t steps = 2000;          // T
    std::size_t checkpoint_every = 500;
    AdamConfig adam;
    losses::LossWeights loss;
    bool plvae_enabled = true;
    bool constant_splats = false;
    bool residual_mu_p = true;
    bool offset_head = false;
    bool stochastic_training = true;   // sample z during training; evaluation is always deterministic
    int workers = 1;
    int raster_tile = 4; // screen tile edge in pixels
    SceneConfig scene;

    codec::CodecConfig codec_config() const
    {
        codec::CodecConfig c;
        c.num_sparse = num_sparse;
        c.group_size = group_size;
        c.sparse_dim = sparse_dim;
        c.dense_dim = dense_dim;
        c.stage1_dim = stage1_dim;
        c.hidden = hidden;
        return c;
    }

    plvae::PlvaeConfig plvae_config() const
    {
        plvae::PlvaeConfig c;
        c.sparse_dim = sparse_dim;
        c.latent_dim = latent_dim;
        c.hidden = hidden;
        c.residual_mu_p = residual_mu_p;
        return c;
    }

    heads::HeadsConfig heads_config() const
    {
        heads::HeadsConfig c;
        c.dense_dim = dense_dim;
        c.hidden = hidden;
        c.splat_dim = splat_dim;
        c.sem_dim = sem_dim;
        c.constant_splats = constant_splats;
        c.offset_head = offset_head;
        return c;
    }

    std::size_t total_views() const { return train_views + heldout_views; }

    void validate() const
    {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError(what);
        };
        need(num_points >= num_sparse * 2, "num_points must be at least twice num_sparse");
        need(num_sparse >= 4 && group_size >= 1, "num_sparse must be >= 4 and group_size >= 1");
        need(num_points / 4 >= num_sparse, "num_points / 4 must be >= num_sparse");
        need(group_size <= num_sparse, "group_size must not exceed num_sparse");
        need(sparse_dim > 0 && dense_dim > 0 && hidden > 0 && splat_dim > 0 && sem_dim > 0 && latent_dim > 0,
             "all feature widths must be positive");
        need(width > 0 && height > 0, "image size must be positive");
        need(train_views >= 1, "need at least one training view");
        need(views_per_step >= 1 && views_per_step <= train_views, "views_per_step must be in [1, train_views]");
        need(steps >= 1, "steps must be positive");
        need(checkpoint_every >= 1, "checkpoint_every must be positive");
        need(adam.lr > 0 && adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0,
             "invalid optimizer settings");
        const auto& w = loss;
        need(w.beta_rgb >= 0 && w.beta_depth >= 0 && w.beta_sem >= 0 && w.omega_coord >= 0 && w.omega_feat >= 0 &&
                 w.kl_weight >= 0 && w.anneal_floor >= 0 && w.anneal_floor <= 1,
             "loss weights must be nonnegative and the anneal floor in [0,1]");
        need(workers >= 1, "workers must be >= 1");
        need(raster_tile >= 1, "raster_tile must be >= 1");
        need(scene.min_objects >= 1 && scene.max_objects >= scene.min_objects, "invalid object count range");
    }
};

inline void to_json(json& j, const SceneConfig& s)
{
    j = json{{"min_objects", s.min_objects},       {"max_objects", s.max_objects},
             {"camera_radius", s.camera_radius},   {"elevation_deg", s.elevation_deg},
             {"elevation_jitter_deg", s.elevation_jitter_deg}, {"fov_deg", s.fov_deg},
             {"splat_opacity", s.splat_opacity},   {"normal_scale", s.normal_scale},
             {"tangent_factor", s.tangent_factor}};
}

inline void to_json(json& j, const TrainingConfig& c)
{
    j = json{{"seed", c.seed},
             {"data_seed", c.data_seed},
             {"num_points", c.num_points},
             {"num_sparse", c.num_sparse},
             {"group_size", c.group_size},
             {"sparse_dim", c.sparse_dim},
             {"dense_dim", c.dense_dim},
             {"stage1_dim", c.stage1_dim},
             {"hidden", c.hidden},
             {"splat_dim", c.splat_dim},
             {"sem_dim", c.sem_dim},
             {"latent_dim", c.latent_dim},
             {"width", c.width},
             {"height", c.height},
             {"train_views", c.train_views},
             {"heldout_views", c.heldout_views},
             {"views_per_step", c.views_per_step},
             {"steps", c.steps},
             {"checkpoint_every", c.checkpoint_every},
             {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
             {"loss",
              {{"beta_rgb", c.loss.beta_rgb},
               {"beta_depth", c.loss.beta_depth},
               {"beta_sem", c.loss.beta_sem},
               {"omega_coord", c.loss.omega_coord},
               {"omega_feat", c.loss.omega_feat},
               {"kl_weight", c.loss.kl_weight},
               {"anneal_floor", c.loss.anneal_floor},
               {"depth_alpha_min", c.loss.depth_alpha_min}}},
             {"plvae_enabled", c.plvae_enabled},
             {"constant_splats", c.constant_splats},
             {"residual_mu_p", c.residual_mu_p},
             {"offset_head", c.offset_head},
             {"stochastic_training", c.stochastic_training},
             {"workers", c.workers},
             {"raster_tile", c.raster_tile},
             {"scene", c.scene}};
}

namespace detail {

template <class V>
void read_opt(const json& j, const char* key, V& out)
{
    if (j.contains(key)) out = j.at(key).get<V>();
}

inline void reject_unknown(const json& j, const json& reference, const std::string& where)
{
    for (const auto& [key, _] : j.items())
        if (!reference.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
}

} // namespace detail

inline void from_json(const json& j, SceneConfig& s)
{
    detail::reject_unknown(j, json(SceneConfig{}), "scene.");
    detail::read_opt(j, "min_objects", s.min_objects);
    detail::read_opt(j, "max_objects", s.max_objects);
    detail::read_opt(j, "camera_radius", s.camera_radius);
    detail::read_opt(j, "elevation_deg", s.elevation_deg);
    detail::read_opt(j, "elevation_jitter_deg", s.elevation_jitter_deg);
    detail::read_opt(j, "fov_deg", s.fov_deg);
    detail::read_opt(j, "splat_opacity", s.splat_opacity);
    detail::read_opt(j, "normal_scale", s.normal_scale);
    detail::read_opt(j, "tangent_factor", s.tangent_factor);
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const json& j, TrainingConfig& c)
{
    detail::reject_unknown(j, json(TrainingConfig{}), "");
    using detail::read_opt;
    read_opt(j, "seed", c.seed);
    read_opt(j, "data_seed", c.data_seed);
    read_opt(j, "num_points", c.num_points);
    read_opt(j, "num_sparse", c.num_sparse);
    read_opt(j, "group_size", c.group_size);
    read_opt(j, "sparse_dim", c.sparse_dim);
    read_opt(j, "dense_dim", c.dense_dim);
    read_opt(j, "stage1_dim", c.stage1_dim);
    read_opt(j, "hidden", c.hidden);
    read_opt(j, "splat_dim", c.splat_dim);
    read_opt(j, "sem_dim", c.sem_dim);
    read_opt(j, "latent_dim", c.latent_dim);
    read_opt(j, "width", c.width);
    read_opt(j, "height", c.height);
    read_opt(j, "train_views", c.train_views);
    read_opt(j, "heldout_views", c.heldout_views);
    read_opt(j, "views_per_step", c.views_per_step);
    read_opt(j, "steps", c.steps);
    read_opt(j, "checkpoint_every", c.checkpoint_every);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        detail::reject_unknown(a, json(TrainingConfig{})["adam"], "adam.");
        read_opt(a, "lr", c.adam.lr);
        read_opt(a, "beta1", c.adam.beta1);
        read_opt(a, "beta2", c.adam.beta2);
        read_opt(a, "eps", c.adam.eps);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        detail::reject_unknown(l, json(TrainingConfig{})["loss"], "loss.");
        read_opt(l, "beta_rgb", c.loss.beta_rgb);
        read_opt(l, "beta_depth", c.loss.beta_depth);
        read_opt(l, "beta_sem", c.loss.beta_sem);
        read_opt(l, "omega_coord", c.loss.omega_coord);
        read_opt(l, "omega_feat", c.loss.omega_feat);
        read_opt(l, "kl_weight", c.loss.kl_weight);
        read_opt(l, "anneal_floor", c.loss.anneal_floor);
        read_opt(l, "depth_alpha_min", c.loss.depth_alpha_min);
    }
    read_opt(j, "plvae_enabled", c.plvae_enabled);
    read_opt(j, "constant_splats", c.constant_splats);
    read_opt(j, "residual_mu_p", c.residual_mu_p);
    read_opt(j, "offset_head", c.offset_head);
    read_opt(j, "stochastic_training", c.stochastic_training);
    read_opt(j, "workers", c.workers);
    read_opt(j, "raster_tile", c.raster_tile);
    if (j.contains("scene")) c.scene = j.at("scene").get<SceneConfig>();
}

inline TrainingConfig parse_config(const std::string& text)
{
    TrainingConfig c;
    try {
        c = json::parse(text).get<TrainingConfig>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline TrainingConfig load_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

// FNV-1a over the canonical (key-sorted, compact) JSON text, as 16 hex digits.
inline std::string config_hash(const TrainingConfig& c)
{
    const std::string text = json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

} // namespace slpt::harness
