#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "slpt/harness/pipeline.hpp"
#include "slpt/harness/scene.hpp"

namespace slpt::harness {

struct ViewReport {
    std::size_t view = 0;
    double psnr_rgb = 0;
    double l1_depth_masked = 0; // over pixels with valid ground-truth depth
    double l1_sem = 0;
    std::size_t depth_pixels = 0;
};

// Aggregates are means of the per-view values.
struct EvalReport {
    std::vector<ViewReport> views;
    double psnr_rgb = 0;
    double l1_depth_masked = 0;
    double l1_sem = 0;

    nlohmann::json to_json() const
    {
        nlohmann::json per = nlohmann::json::array();
        for (const auto& v : views)
            per.push_back({{"view", v.view},
                           {"psnr_rgb", v.psnr_rgb},
                           {"l1_depth_masked", v.l1_depth_masked},
                           {"l1_sem", v.l1_sem},
                           {"depth_pixels", v.depth_pixels}});
        return {{"psnr_rgb", psnr_rgb}, {"l1_depth_masked", l1_depth_masked}, {"l1_sem", l1_sem}, {"per_view", per}};
    }
};

template <class T>
ViewReport view_metrics(std::size_t view, const Tensor<T>& rgb, const Tensor<T>& depth, const Tensor<T>& sem,
                        const losses::ViewTarget<T>& gt)
{
    ViewReport r;
    r.view = view;
    double se = 0;
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        const double d = static_cast<double>(rgb[i]) - static_cast<double>(gt.rgb[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(rgb.size());
    r.psnr_rgb = mse > 0 ? 10.0 * std::log10(1.0 / mse) : std::numeric_limits<double>::infinity();
    double dl = 0;
    for (std::size_t p = 0; p < depth.size(); ++p) {
        if (!(gt.depth[p] > T(0))) continue;
        dl += std::abs(static_cast<double>(depth[p]) - static_cast<double>(gt.depth[p]));
        ++r.depth_pixels;
    }
    r.l1_depth_masked = r.depth_pixels ? dl / static_cast<double>(r.depth_pixels) : 0.0;
    double sl = 0;
    for (std::size_t i = 0; i < sem.size(); ++i) sl += std::abs(static_cast<double>(sem[i]) - static_cast<double>(gt.sem[i]));
    r.l1_sem = sl / static_cast<double>(sem.size());
    return r;
}

// Deterministic (z = μ) renders of the given views, scored against the dataset.
template <class T>
EvalReport evaluate_views(const Model<T>& model, ParamStore<T>& store, const SceneInputs<T>& in, const Dataset<T>& ds,
                          const std::vector<std::size_t>& views)
{
    require(!views.empty(), "evaluate: no views selected");
    std::vector<const geometry::CameraModel*> cams;
    for (auto k : views) {
        if (k >= ds.cameras.size()) throw InputError("view index " + std::to_string(k) + " out of range");
        cams.push_back(&ds.cameras[k].model);
    }
    Graph<T> g;
    const auto fr = model.forward(g, store, in, cams, ForwardOptions{false, 0});
    EvalReport rep;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& v = fr.views[i];
        rep.views.push_back(view_metrics(views[i], g.value(v.rgb), g.value(v.depth), g.value(v.sem), ds.views[views[i]]));
    }
    for (const auto& v : rep.views) {
        rep.psnr_rgb += v.psnr_rgb;
        rep.l1_depth_masked += v.l1_depth_masked;
        rep.l1_sem += v.l1_sem;
    }
    const double n = static_cast<double>(rep.views.size());
    rep.psnr_rgb /= n;
    rep.l1_depth_masked /= n;
    rep.l1_sem /= n;
    return rep;
}

// A trained run loaded for inference.
struct LoadedRun {
    TrainingConfig config;
    Model<float> model;
    ParamStore<float> store;
    Dataset<float> data;
    SceneInputs<float> inputs;
};

inline LoadedRun load_run(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir)
{
    Eigen::setNbThreads(1);
    TrainingConfig cfg = checkpoint_config(checkpoint);
    auto store = load_run_checkpoint<float>(checkpoint, cfg);
    auto ds = load_dataset<float>(dataset_dir);
    auto in = make_inputs(ds.points, cfg);
    return LoadedRun{cfg, Model<float>(cfg), std::move(store), std::move(ds), std::move(in)};
}

// Held-out views by default.
inline EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir,
                                      std::vector<std::size_t> views = {})
{
    auto run = load_run(checkpoint, dataset_dir);
    if (views.empty()) views = run.data.heldout;
    return evaluate_views(run.model, run.store, run.inputs, run.data, views);
}

// Writes view_<k>_rgb.ppm plus depth, alpha, feature and semantic tensors.
inline void render_view(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir,
                        std::size_t view, const std::filesystem::path& out_dir)
{
    auto run = load_run(checkpoint, dataset_dir);
    if (view >= run.data.cameras.size()) throw InputError("view index " + std::to_string(view) + " out of range");
    const auto& cam = run.data.cameras[view].model;
    Graph<float> g;
    const auto fr = run.model.forward(g, run.store, run.inputs, {&cam}, ForwardOptions{false, 0});
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
    const auto& v = fr.views[0];
    write_ppm(out_dir / view_file(view, "rgb", "ppm"), g.value(v.rgb), cam.width, cam.height);
    io::write_tensor(out_dir / view_file(view, "depth", "bin"), g.value(v.depth));
    io::write_tensor(out_dir / view_file(view, "alpha", "bin"), g.value(v.alpha));
    io::write_tensor(out_dir / view_file(view, "sem", "bin"), g.value(v.sem));
    io::write_tensor(out_dir / view_file(view, "feature", "bin"), g.value(v.feature));
}

// Posterior parameters and the latent sample of the dataset's point cloud.
inline void export_latent(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir,
                          plvae::SampleMode mode, std::uint64_t seed, const std::filesystem::path& out_dir)
{
    auto run = load_run(checkpoint, dataset_dir);
    if (!run.config.plvae_enabled) throw ConfigError("export-latent needs a checkpoint trained with plvae_enabled");
    Graph<float> g;
    const auto rep = plvae::extract_representation(g, run.store, run.model.codec(), run.model.vae(), run.inputs.index,
                                                   run.inputs.colors, mode, seed);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
    io::write_tensor(out_dir / "mu_f.bin", g.value(rep.posterior.mu_f));
    io::write_tensor(out_dir / "logvar_f.bin", g.value(rep.posterior.logvar_f));
    io::write_tensor(out_dir / "mu_p.bin", g.value(rep.posterior.mu_p));
    io::write_tensor(out_dir / "logvar_p.bin", g.value(rep.posterior.logvar_p));
    io::write_tensor(out_dir / "z_f.bin", g.value(rep.latent.z_f));
    io::write_tensor(out_dir / "z_p.bin", g.value(rep.latent.z_p));
    const nlohmann::json side{{"M", g.value(rep.latent.z_f).rows()},
                              {"Z_f", g.value(rep.latent.z_f).cols()},
                              {"seed", seed},
                              {"mode", mode == plvae::SampleMode::deterministic ? "deterministic" : "stochastic"}};
    write_text(out_dir / "latent.json", side.dump(2) + "\n");
}

} // namespace slpt::harness
