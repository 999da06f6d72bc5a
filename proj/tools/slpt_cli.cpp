#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slpt/slpt.hpp"

namespace fs = std::filesystem;
using namespace slpt;
using namespace slpt::harness;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* sub, Common& c, const std::string& out_default)
{
    sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "seed override");
    sub->add_option("--out", c.out, "output directory")->default_val(out_default);
}

TrainingConfig base_config(const Common& c)
{
    return c.config.empty() ? TrainingConfig{} : load_config(c.config);
}

fs::path dataset_for(const std::string& data, const fs::path& checkpoint)
{
    if (!data.empty()) return data;
    fs::path d = checkpoint_dataset(checkpoint);
    if (d.empty()) throw InputError("checkpoint does not record its dataset; pass --data");
    return d;
}

int run_gradcheck()
{
    bool ok = true;
    std::cout << std::left << std::setw(22) << "op" << std::setw(14) << "max_error" << "seconds\n";
    for (const auto& c : gradcheck_cases()) {
        const auto t0 = std::chrono::steady_clock::now();
        const double e = c.run();
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = e < kGradcheckTolerance;
        ok = ok && pass;
        std::cout << std::left << std::setw(22) << c.name << std::setw(14) << std::setprecision(3) << std::scientific
                  << e << std::defaultfloat << std::setprecision(3) << s << (pass ? "" : "  FAIL") << '\n';
    }
    std::cout << (ok ? "all checks below " : "some checks at or above ") << kGradcheckTolerance << '\n';
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Splat-rendered point latents: data generation, training and evaluation"};
    app.require_subcommand(1);

    Common gen_c, train_c, render_c, export_c, eval_c;
    std::string train_data, render_ckpt, render_data, export_ckpt, export_data, export_mode = "deterministic";
    std::string eval_ckpt, eval_data;
    std::size_t render_view_idx = 0;
    std::vector<std::size_t> eval_views;
    bool grad_all = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
    add_common(gen, gen_c, "data");

    auto* tr = app.add_subcommand("train", "train on a dataset");
    add_common(tr, train_c, "run");
    tr->add_option("--data", train_data, "dataset directory")->required()->check(CLI::ExistingDirectory);

    auto* rd = app.add_subcommand("render", "render one view from a checkpoint");
    add_common(rd, render_c, "render");
    rd->add_option("--checkpoint", render_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    rd->add_option("--data", render_data, "dataset directory (default: the one used for training)");
    rd->add_option("--view", render_view_idx, "camera index")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_flag("--all", grad_all, "run every registered check")->required();

    auto* ex = app.add_subcommand("export-latent", "write posterior parameters and a latent sample");
    add_common(ex, export_c, "latent");
    ex->add_option("--checkpoint", export_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    ex->add_option("--data", export_data, "dataset directory (default: the one used for training)");
    ex->add_option("--mode", export_mode, "deterministic or stochastic")
        ->check(CLI::IsMember({"deterministic", "stochastic"}));

    auto* ev = app.add_subcommand("evaluate", "score a checkpoint on dataset views");
    add_common(ev, eval_c, "eval");
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", eval_data, "dataset directory (default: the one used for training)");
    ev->add_option("--views", eval_views, "view indices (default: held-out views)");

    if (argc <= 1) {
        std::cerr << app.help();
        return 1;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*gen) {
            TrainingConfig cfg = base_config(gen_c);
            if (gen_c.seed) cfg.data_seed = *gen_c.seed;
            cfg.validate();
            const auto scene = generate_scene(cfg);
            write_dataset(scene, cfg, gen_c.out);
            std::cout << "wrote " << cfg.total_views() << " views of " << scene.objects.size() << " objects to "
                      << gen_c.out << '\n';
        } else if (*tr) {
            TrainingConfig cfg = base_config(train_c);
            if (train_c.seed) cfg.seed = *train_c.seed;
            const auto s = train(cfg, train_data, train_c.out, &std::cout);
            std::cout << "final checkpoint " << s.final_checkpoint.string() << " after " << s.seconds << " s\n";
        } else if (*rd) {
            render_view(render_ckpt, dataset_for(render_data, render_ckpt), render_view_idx, render_c.out);
            std::cout << "wrote " << (fs::path(render_c.out) / view_file(render_view_idx, "rgb", "ppm")).string() << '\n';
        } else if (*gc) {
            return run_gradcheck();
        } else if (*ex) {
            const auto mode =
                export_mode == "stochastic" ? plvae::SampleMode::stochastic : plvae::SampleMode::deterministic;
            export_latent(export_ckpt, dataset_for(export_data, export_ckpt), mode, export_c.seed.value_or(0),
                          export_c.out);
            std::cout << "wrote latent to " << export_c.out << '\n';
        } else if (*ev) {
            const auto rep = evaluate_checkpoint(eval_ckpt, dataset_for(eval_data, eval_ckpt), eval_views);
            const std::string text = rep.to_json().dump(2);
            fs::create_directories(eval_c.out);
            write_text(fs::path(eval_c.out) / "report.json", text + "\n");
            std::cout << text << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
