// Command-line driver for coupled-ensemble experiments.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 a network diverged.
#include "colearn/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace colearn;

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct CommonOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
    bool svg = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "Override a config value: key=value (dotted keys for nested fields)")
        ->take_all();
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("--svg", o.svg, "Also write SVG plots");
    cmd->add_flag("-q,--quiet", o.quiet, "No progress lines on stderr");
}

nlohmann::json resolve(const CommonOptions& o) {
    nlohmann::json j = o.config.empty() ? nlohmann::json::object() : load_json(o.config);
    apply_overrides(j, o.overrides);
    if (o.seed) j["seed"] = *o.seed;
    if (o.out) j["out"] = *o.out;
    if (o.threads) j["threads"] = *o.threads;
    if (o.svg) j["svg"] = true;
    set_progress(!o.quiet);
    return j;
}

void print_accuracy(const char* label, const std::array<double, 3>& acc) {
    std::printf("%s", label);
    for (std::size_t c = 0; c < kCombiners.size(); ++c)
        std::printf(" %s=%.4f", to_string(kCombiners[c]).c_str(), acc[c]);
    std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Train and analyse ensembles of networks coupled through their predictions"};
    app.require_subcommand(1);

    CommonOptions sweep_opts, scale_opts, expand_opts, train_opts;
    auto* sweep = app.add_subcommand("sweep", "Sweep the coupling strength over sizes and repeats");
    add_common(sweep, sweep_opts);
    auto* scale = app.add_subcommand("scale", "Sweep several sizes and fit the optimal coupling against N");
    add_common(scale, scale_opts);
    auto* expand = app.add_subcommand("expand", "Grow a trained ensemble from a checkpoint");
    add_common(expand, expand_opts);
    auto* trainc = app.add_subcommand("train", "Train one ensemble with checkpoints and streamed metrics");
    add_common(trainc, train_opts);

    std::string report_dir;
    bool report_svg = false;
    auto* report = app.add_subcommand("report", "Aggregate finished runs into plot-ready tables");
    report->add_option("run_dir", report_dir, "Directory holding run outputs")->required()->check(CLI::ExistingDirectory);
    report->add_flag("--svg", report_svg, "Also write SVG plots");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (sweep->parsed()) {
            const auto result = run_beta_sweep(sweep_config_from_json(resolve(sweep_opts)));
            std::printf("wrote %s (%zu jobs)\n", result.dir.string().c_str(), result.jobs.size());
            return result.diverged() ? kExitDiverged : 0;
        }
        if (scale->parsed()) {
            const auto result = run_size_scaling(sweep_config_from_json(resolve(scale_opts)));
            for (const auto& p : result.peaks)
                std::printf("N=%d beta*=%.6g beta_bar*=%.6g accuracy=%.4f\n", p.size, p.beta_star, p.beta_bar_star,
                            p.accuracy);
            if (result.fit)
                std::printf("fit: ln(-beta*) = %.4f ln N + %.4f (rms %.3g)\n", result.fit->slope, result.fit->intercept,
                            result.fit->residual);
            else
                std::printf("fit skipped: %s\n", result.fit_note.c_str());
            return result.sweep.diverged() ? kExitDiverged : 0;
        }
        if (expand->parsed()) {
            const auto config = expansion_config_from_json(resolve(expand_opts));
            const auto result = run_expansion(config);
            for (const auto& r : result.rows) print_accuracy(to_string(r.mode).c_str(), r.accuracy);
            return 0;
        }
        if (trainc->parsed()) {
            const auto result = run_training(train_config_from_json(resolve(train_opts)));
            print_accuracy("ensemble", result.ensemble_accuracy);
            return 0;
        }
        if (report->parsed()) {
            const auto result = emit_report(report_dir, report_svg);
            std::printf("aggregated %zu runs, %zu rows, %zu gaps\n", result.sources, result.rows, result.gaps.size());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
