#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slpt/diffcore/adam.hpp"
#include "slpt/harness/pipeline.hpp"
#include "slpt/harness/scene.hpp"

namespace slpt::harness {

inline constexpr const char* kMetricsVersionLine = "# slpt-metrics v1";
inline constexpr const char* kMetricsHeader =
    "step,w_t,l_total,l_render,l_render_rgb,l_render_depth,l_render_sem,l_recon,l_vae,l_kl,depth_empty";

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step)
{
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (step + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::string metrics_row(std::size_t step, const losses::LossBreakdown& b)
{
    std::ostringstream os;
    os << std::setprecision(9) << step << ',' << b.w_t << ',' << b.l_total << ',' << b.l_render << ','
       << b.l_render_rgb << ',' << b.l_render_depth << ',' << b.l_render_sem << ',' << b.l_recon << ',' << b.l_vae
       << ',' << b.l_kl << ',' << (b.depth_empty ? 1 : 0);
    return os.str();
}

struct TrainSummary {
    std::vector<losses::LossBreakdown> history;
    std::filesystem::path final_checkpoint;
    double seconds = 0;
};

// Training views of one step: a seeded draw without replacement, in index order.
inline std::vector<std::size_t> pick_views(const std::vector<std::size_t>& train, std::size_t count, std::mt19937_64& rng)
{
    std::vector<std::size_t> v = train;
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, v.size() - 1);
        std::swap(v[i], v[d(rng)]);
    }
    v.resize(count);
    std::sort(v.begin(), v.end());
    return v;
}

// Full training run in single precision. Writes metrics.csv, periodic
// checkpoints ckpt_<step>.slpt and final.slpt (each with a config sidecar).
inline TrainSummary train(const TrainingConfig& cfg, const std::filesystem::path& dataset_dir,
                          const std::filesystem::path& out_dir, std::ostream* log = nullptr)
{
    using T = float;
    cfg.validate();
    Eigen::setNbThreads(1);
    const auto start = std::chrono::steady_clock::now();
    const Dataset<T> ds = load_dataset<T>(dataset_dir);
    if (ds.train.size() < cfg.views_per_step)
        throw ConfigError("dataset has " + std::to_string(ds.train.size()) + " training views, config samples " +
                          std::to_string(cfg.views_per_step) + " per step");
    for (const auto& c : ds.cameras)
        if (c.model.width != cfg.width || c.model.height != cfg.height)
            throw ConfigError("dataset image size differs from the config");
    const SceneInputs<T> in = make_inputs(ds.points, cfg);
    const Model<T> model(cfg);
    ParamStore<T> store;
    model.init(store, cfg.seed);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
    std::ofstream metrics(out_dir / "metrics.csv");
    if (!metrics) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
    metrics << kMetricsVersionLine << '\n' << kMetricsHeader << '\n';

    std::mt19937_64 view_rng(mix_seed(cfg.seed, 0xC0FFEEull));
    TrainSummary summary;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        const auto idx = pick_views(ds.train, cfg.views_per_step, view_rng);
        std::vector<const geometry::CameraModel*> cams;
        std::vector<const losses::ViewTarget<T>*> targets;
        for (auto k : idx) {
            cams.push_back(&ds.cameras[k].model);
            targets.push_back(&ds.views[k]);
        }
        Graph<T> g;
        ForwardOptions opt{cfg.stochastic_training, mix_seed(cfg.seed, t)};
        const auto fr = model.forward(g, store, in, cams, opt);
        const auto lr = model.losses(g, fr, in, targets, t);
        g.backward(lr.total);
        adam_step(store, cfg.adam);
        summary.history.push_back(lr.parts);
        metrics << metrics_row(t, lr.parts) << '\n';
        if (!metrics) throw IoError("metrics write failed");
        if ((t + 1) % cfg.checkpoint_every == 0 && t + 1 < cfg.steps) {
            metrics.flush();
            save_run_checkpoint(out_dir / ("ckpt_" + std::to_string(t + 1) + ".slpt"), store, cfg, t + 1, dataset_dir);
        }
        if (log && (t % 100 == 0 || t + 1 == cfg.steps))
            *log << "step " << t << " total " << lr.parts.l_total << " render " << lr.parts.l_render << " recon "
                 << lr.parts.l_recon << " vae " << lr.parts.l_vae << " kl " << lr.parts.l_kl << '\n';
    }
    summary.final_checkpoint = out_dir / "final.slpt";
    save_run_checkpoint(summary.final_checkpoint, store, cfg, cfg.steps, dataset_dir);
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
}

// Reads the loss history back from metrics.csv.
inline std::vector<losses::LossBreakdown> read_metrics(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != kMetricsVersionLine) throw InputError("unsupported metrics file " + path.string());
    std::getline(is, line);
    if (line != kMetricsHeader) throw InputError("unexpected metrics header in " + path.string());
    std::vector<losses::LossBreakdown> out;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::vector<double> v;
        std::string cell;
        while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
        if (v.size() != 11) throw InputError("malformed metrics row in " + path.string());
        losses::LossBreakdown b;
        b.w_t = v[1];
        b.l_total = v[2];
        b.l_render = v[3];
        b.l_render_rgb = v[4];
        b.l_render_depth = v[5];
        b.l_render_sem = v[6];
        b.l_recon = v[7];
        b.l_vae = v[8];
        b.l_kl = v[9];
        b.depth_empty = v[10] != 0;
        out.push_back(b);
    }
    return out;
}

} // namespace slpt::harness
