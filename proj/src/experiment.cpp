#include "colearn/experiment.hpp"

#include "run_io.hpp"
#include "colearn/svg.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace colearn {

namespace {

constexpr std::uint64_t kSplitTag = 0x73706c6974ULL;
constexpr std::uint64_t kNetTag = 0x6e6574ULL;
constexpr std::uint64_t kOrderTag = 0x6f72646572ULL;
constexpr std::uint64_t kSubsetTag = 0x737562ULL;
constexpr std::uint64_t kDataTag = 0x64617461ULL;

std::uint64_t u64(int v) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(v)); }

double grid_value(const JobResult& job, bool normalized) { return normalized ? job.beta_bar : job.beta; }

std::string job_name(const JobResult& job) {
    std::ostringstream s;
    s << "n" << job.size << "_b" << format_number(job.beta_bar) << "_r" << job.repeat;
    return s.str();
}

void job_cells(CsvWriter::Row& row, const JobResult& job) {
    row.num(job.size).num(job.beta).num(job.beta_bar).num(job.repeat);
}

// Predictions on the first `rows` test samples per member, plus their mean.
template <typename Scalar>
std::vector<RowMatrixX<double>> probe_snapshot(const Ensemble<Scalar>& ensemble, const Dataset<Scalar>& test,
                                               Index rows) {
    std::vector<RowMatrixX<Scalar>> probs;
    const RowMatrixX<Scalar> inputs = test.inputs.topRows(rows);
    for (const auto& m : ensemble.members) probs.push_back(predict(m.arch, m.params, inputs));
    std::vector<RowMatrixX<double>> out;
    for (const auto& p : probs) out.push_back(p.template cast<double>());
    out.push_back(ensemble_mean(std::span<const RowMatrixX<Scalar>>(probs)).template cast<double>());
    return out;
}

template <typename Scalar>
void save_run_checkpoint(const Ensemble<Scalar>& ensemble, int epoch, const std::filesystem::path& path,
                         std::uint64_t run_seed, int repeat) {
    auto j = checkpoint_to_json(ensemble, epoch);
    j["run"] = {{"seed", run_seed}, {"repeat", repeat}};
    atomic_write(path, j.dump());
}

template <typename Scalar>
void measure(JobResult& r, const Ensemble<Scalar>& ens, const DataSplit<Scalar>& split) {
    const auto probs = member_predictions(ens, split.test);
    const std::span<const RowMatrixX<Scalar>> view(probs);
    for (std::size_t c = 0; c < kCombiners.size(); ++c)
        r.ensemble_accuracy[c] = accuracy_from_classes(ensemble_predictions(view, kCombiners[c]), split.test.labels);
    const auto train_probs = member_predictions(ens, split.train);
    r.entropy_histogram.assign(kEntropyBins, 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        r.member_test_accuracy.push_back(accuracy_from_probs(probs[i], split.test.labels));
        r.member_train_accuracy.push_back(accuracy_from_probs(train_probs[i], split.train.labels));
        const auto profile = entropy_profile(probs[i]);
        r.member_confidence_mass.push_back(profile.confidence_mass);
        r.member_mean_entropy.push_back(profile.mean_entropy);
        for (int b = 0; b < kEntropyBins; ++b)
            r.entropy_histogram[static_cast<std::size_t>(b)] += profile.histogram[static_cast<std::size_t>(b)];
    }
    const MatrixX<double> d = pairwise_dissimilarity(view);
    r.dissimilarity = DissimilarityMatrix{d, "test"}.mean_off_diagonal();
    r.vote_spearman = vote_confidence_correlation(view, split.test.labels).spearman;
    if (ens.size() == 2) r.wall_mass = sample_agreement_cube(view, split.test.labels).wall_mass;
    if (ens.size() >= 3) r.mds_final = mds_embed(d, 2).correlation;

    const auto n = static_cast<double>(ens.size());
    for (std::size_t i = 0; i < ens.members.size(); ++i) {
        const auto& m = ens.members[i];
        const auto act = activation_sparsity(m.arch, m.params, split.test.inputs);
        const auto spread = weight_spread(m.params);
        if (i == 0) {
            r.sparsity.assign(act.size(), LayerActivity{});
            r.weight_std.assign(spread.size(), 0.0);
        }
        for (std::size_t l = 0; l < act.size(); ++l) {
            r.sparsity[l].layer = act[l].layer;
            r.sparsity[l].inactive_fraction += act[l].inactive_fraction / n;
            r.sparsity[l].mean_activation += act[l].mean_activation / n;
        }
        for (std::size_t l = 0; l < spread.size(); ++l) r.weight_std[l] += spread[l] / n;
    }
    r.params_hash = ensemble_hash(ens);
}

template <typename Scalar>
JobResult run_job(const SweepConfig& config, const Dataset<Scalar>& all, int size, double value, int repeat,
                  const std::filesystem::path& dir) {
    const auto& run = config.run;
    JobResult r;
    r.size = size;
    r.repeat = repeat;
    r.beta = config.normalized ? value / size : value;
    r.beta_bar = config.normalized ? value : value * size;
    r.classes = all.classes;

    const auto split = split_dataset(all, run.dataset, run.seed, repeat);
    const Architecture arch = build_architecture(run.model, split.train.sample_shape, split.train.classes);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < size; ++i) seeds.push_back(network_seed(run.seed, size, repeat, i));
    auto ens = Ensemble<Scalar>::create(arch, seeds, coupling_for<Scalar>(value, size, config.normalized));
    ens.seed = run.seed;
    ens.id = job_name(r);

    TrainConfig cfg = run.train;
    cfg.seed = order_seed(run.seed, size, repeat);
    cfg.threads = 1;

    std::vector<std::vector<RowMatrixX<double>>> snapshots;
    std::vector<int> snapshot_epochs;
    const Index probe = std::min<Index>(cfg.probe_size, split.test.size());
    const bool track = cfg.snapshot_every > 0 && probe > 0;
    if (track) {
        snapshots.push_back(probe_snapshot(ens, split.test, probe));
        snapshot_epochs.push_back(0);
    }
    TrainObserver<Scalar> observer;
    observer.on_record = [&](const EpochRecord& rec) {
        if (track && !rec.probe_predictions.empty()) {
            snapshots.push_back(rec.probe_predictions);
            snapshot_epochs.push_back(rec.epoch);
        }
    };
    try {
        r.history = train(ens, split.train, split.test, cfg, observer).records;
    } catch (const DivergenceError& e) {
        r.diverged = true;
        r.error = e.what();
        return r;
    }
    for (auto& rec : r.history) rec.probe_predictions.clear();

    measure(r, ens, split);
    if (snapshots.size() >= 2) {
        const auto embed = mds_embed(trajectory_distances(snapshots), 2);
        r.mds_trajectory = embed.correlation;
        r.mds_coordinates = embed.coordinates;
        for (std::size_t s = 0; s < snapshots.size(); ++s)
            for (int m = 0; m <= size; ++m) r.mds_points.emplace_back(snapshot_epochs[s], m);
    }
    if (config.save_checkpoints)
        save_run_checkpoint(ens, cfg.epochs, dir / "checkpoints" / (job_name(r) + ".json"), run.seed, repeat);
    return r;
}

template <typename Scalar>
std::vector<JobResult> run_jobs(const SweepConfig& config, const std::filesystem::path& dir) {
    const auto all = load_dataset<Scalar>(config.run.dataset, config.run.seed);
    struct Task {
        int size;
        double value;
        int repeat;
    };
    std::vector<Task> tasks;
    for (int n : config.sizes)
        for (double v : config.betas)
            for (int rep = 0; rep < config.repeats; ++rep) tasks.push_back({n, v, rep});
    if (config.save_checkpoints) std::filesystem::create_directories(dir / "checkpoints");
    std::vector<JobResult> jobs(tasks.size());
    WorkerPool pool(std::min<std::size_t>(static_cast<std::size_t>(config.run.threads), tasks.size()));
    pool.parallel_for(tasks.size(), [&](std::size_t k) {
        const auto& t = tasks[k];
        jobs[k] = run_job(config, all, t.size, t.value, t.repeat, dir);
        const auto& j = jobs[k];
        std::ostringstream line;
        line << "[" << (k + 1) << "/" << tasks.size() << "] " << job_name(j);
        if (j.diverged)
            line << " diverged: " << j.error;
        else
            line << " ensemble " << format_number(j.ensemble_accuracy[0]) << " individual "
                 << format_number(j.individual_mean());
        detail::progress(line.str());
    });
    return jobs;
}

struct SweepOutput {
    SweepResult result;
    std::vector<std::string> files;
    nlohmann::json extra;
};

SweepOutput sweep_into(const SweepConfig& config) {
    detail::prepare_output_dir(config.run.out);
    SweepOutput out;
    auto& res = out.result;
    res.config = config;
    res.dir = config.run.out;
    res.jobs = config.run.precision == "double" ? run_jobs<double>(config, res.dir) : run_jobs<float>(config, res.dir);

    CsvWriter sweep, members, sparsity, weights, entropy, curves, mds;
    sweep.header({"size", "beta", "beta_bar", "repeat", "combiner", "ensemble_accuracy", "individual_mean",
                  "individual_min", "individual_max", "train_accuracy_mean", "dissimilarity", "confidence_mass",
                  "mean_entropy", "vote_spearman", "wall_mass", "mds_final", "mds_trajectory", "params_hash"});
    members.header({"size", "beta", "beta_bar", "repeat", "member", "test_accuracy", "train_accuracy",
                    "confidence_mass", "mean_entropy"});
    sparsity.header({"size", "beta", "beta_bar", "repeat", "layer", "inactive_fraction", "mean_activation"});
    weights.header({"size", "beta", "beta_bar", "repeat", "layer", "weight_std"});
    entropy.header({"size", "beta", "beta_bar", "repeat", "bin", "lower", "upper", "count"});
    curves.header({"size", "beta", "beta_bar", "repeat", "epoch", "member", "lr", "train_accuracy", "train_loss",
                   "test_accuracy", "test_task_kl", "ensemble_accuracy"});
    mds.header({"size", "beta", "beta_bar", "repeat", "epoch", "member", "x", "y"});

    nlohmann::json diverged = nlohmann::json::array();
    std::size_t rows = 0;
    for (const auto& j : res.jobs) {
        if (j.diverged) {
            diverged.push_back({{"size", j.size}, {"beta", j.beta}, {"beta_bar", j.beta_bar}, {"repeat", j.repeat},
                                {"error", j.error}});
            continue;
        }
        const auto [lo, hi] = std::minmax_element(j.member_test_accuracy.begin(), j.member_test_accuracy.end());
        for (std::size_t c = 0; c < kCombiners.size(); ++c) {
            auto row = sweep.row();
            job_cells(row, j);
            row.str(to_string(kCombiners[c])).num(j.ensemble_accuracy[c]).num(j.individual_mean()).num(*lo).num(*hi);
            row.num(detail::mean_of(j.member_train_accuracy)).num(j.dissimilarity);
            row.num(detail::mean_of(j.member_confidence_mass)).num(detail::mean_of(j.member_mean_entropy));
            detail::optional_cell(row, j.vote_spearman);
            detail::optional_cell(row, j.wall_mass);
            detail::optional_cell(row, j.mds_final);
            detail::optional_cell(row, j.mds_trajectory);
            row.str(j.params_hash);
            ++rows;
        }
        for (std::size_t i = 0; i < j.member_test_accuracy.size(); ++i) {
            auto row = members.row();
            job_cells(row, j);
            row.num(i).num(j.member_test_accuracy[i]).num(j.member_train_accuracy[i]);
            row.num(j.member_confidence_mass[i]).num(j.member_mean_entropy[i]);
        }
        for (const auto& a : j.sparsity) {
            auto row = sparsity.row();
            job_cells(row, j);
            row.num(a.layer).num(a.inactive_fraction).num(a.mean_activation);
        }
        for (std::size_t l = 0; l < j.weight_std.size(); ++l) {
            auto row = weights.row();
            job_cells(row, j);
            row.num(l).num(j.weight_std[l]);
        }
        const double max_h = std::log(static_cast<double>(j.classes));
        for (int b = 0; b < kEntropyBins; ++b) {
            auto row = entropy.row();
            job_cells(row, j);
            row.num(b).num(max_h * b / kEntropyBins).num(max_h * (b + 1) / kEntropyBins);
            row.num(j.entropy_histogram[static_cast<std::size_t>(b)]);
        }
        for (const auto& rec : j.history)
            for (std::size_t i = 0; i < rec.test_accuracy.size(); ++i) {
                auto row = curves.row();
                job_cells(row, j);
                row.num(rec.epoch).num(i).num(rec.lr).num(rec.train_accuracy[i]).num(rec.train_loss[i]);
                row.num(rec.test_accuracy[i]).num(rec.test_task_kl[i]).num(rec.ensemble_accuracy);
            }
        for (std::size_t p = 0; p < j.mds_points.size(); ++p) {
            auto row = mds.row();
            job_cells(row, j);
            row.num(j.mds_points[p].first).num(j.mds_points[p].second);
            row.num(j.mds_coordinates(static_cast<Index>(p), 0)).num(j.mds_coordinates(static_cast<Index>(p), 1));
        }
    }

    CsvWriter summary;
    summary.header({"size", "beta", "beta_bar", "combiner", "repeats", "ensemble_accuracy_mean",
                    "ensemble_accuracy_std", "individual_mean", "individual_std", "dissimilarity_mean",
                    "confidence_mass_mean"});
    std::vector<PlotSeries> plot;
    for (int n : config.sizes) {
        PlotSeries ens_series{"ensemble N=" + std::to_string(n), {}, {}};
        PlotSeries ind_series{"individual N=" + std::to_string(n), {}, {}};
        for (double v : config.betas) {
            const auto sel = res.select(n, v);
            if (sel.empty()) continue;
            for (std::size_t c = 0; c < kCombiners.size(); ++c) {
                std::vector<double> acc, ind, dis, conf;
                for (const auto* j : sel) {
                    acc.push_back(j->ensemble_accuracy[c]);
                    ind.push_back(j->individual_mean());
                    dis.push_back(j->dissimilarity);
                    conf.push_back(detail::mean_of(j->member_confidence_mass));
                }
                auto row = summary.row();
                row.num(n).num(sel.front()->beta).num(sel.front()->beta_bar).str(to_string(kCombiners[c]));
                row.num(sel.size()).num(detail::mean_of(acc));
                detail::optional_cell(row, detail::sample_std(acc));
                row.num(detail::mean_of(ind));
                detail::optional_cell(row, detail::sample_std(ind));
                row.num(detail::mean_of(dis)).num(detail::mean_of(conf));
                if (c == 0) {
                    ens_series.x.push_back(v);
                    ens_series.y.push_back(detail::mean_of(acc));
                    ind_series.x.push_back(v);
                    ind_series.y.push_back(detail::mean_of(ind));
                }
            }
        }
        plot.push_back(std::move(ens_series));
        plot.push_back(std::move(ind_series));
    }

    const auto& dir = res.dir;
    sweep.save(dir / "sweep.csv");
    members.save(dir / "members.csv");
    sparsity.save(dir / "sparsity.csv");
    weights.save(dir / "weights.csv");
    entropy.save(dir / "entropy.csv");
    curves.save(dir / "curves.csv");
    mds.save(dir / "mds.csv");
    summary.save(dir / "summary.csv");
    out.files = {"sweep.csv", "members.csv", "sparsity.csv", "weights.csv", "entropy.csv",
                 "curves.csv", "mds.csv", "summary.csv"};
    if (config.run.svg) {
        atomic_write(dir / "sweep.svg",
                     line_plot_svg("Test accuracy vs coupling", config.normalized ? "beta_bar" : "beta",
                                   "accuracy", plot));
        out.files.push_back("sweep.svg");
    }
    out.extra = {{"expected_rows", res.jobs.size() * kCombiners.size()}, {"rows", rows}, {"diverged", diverged}};
    return out;
}

}  // namespace

std::uint64_t split_seed(std::uint64_t run_seed, int repeat) { return derive_seed({run_seed, kSplitTag, u64(repeat)}); }

std::uint64_t network_seed(std::uint64_t run_seed, int size, int repeat, int member) {
    return derive_seed({run_seed, kNetTag, u64(size), u64(repeat), u64(member)});
}

std::uint64_t order_seed(std::uint64_t run_seed, int size, int repeat) {
    return derive_seed({run_seed, kOrderTag, u64(size), u64(repeat)});
}

template <typename Scalar>
Dataset<Scalar> load_dataset(const DatasetSpec& spec, std::uint64_t run_seed) {
    if (spec.kind == "gaussian")
        return synth_gaussian<Scalar>(spec.classes, spec.dim, spec.separation, spec.per_class,
                                      derive_seed({run_seed, kDataTag}));
    if (spec.kind != "mnist") throw ConfigError({"dataset.kind must be \"mnist\" or \"gaussian\""});
    std::vector<std::string> problems;
    for (const auto& p : {spec.images, spec.labels})
        if (!std::filesystem::exists(p)) problems.push_back("dataset: " + p.string() + " does not exist");
    if (!problems.empty()) throw ConfigError(problems);
    auto data = load_mnist_idx<Scalar>(spec.images, spec.labels);
    if (spec.subset > 0) data = stratified_subset(data, spec.subset, derive_seed({run_seed, kSubsetTag}));
    return data;
}

template <typename Scalar>
DataSplit<Scalar> split_dataset(const Dataset<Scalar>& all, const DatasetSpec& spec, std::uint64_t run_seed,
                                int repeat) {
    auto [train_set, test_set] = train_test_split(all, spec.test_fraction, split_seed(run_seed, repeat));
    return {std::move(train_set), std::move(test_set)};
}

Architecture build_architecture(const ModelSpec& spec, const Shape3& input, Index classes) {
    if (spec.kind == "lenet5") return lenet5(input, classes);
    if (spec.kind == "mlp") return mlp(input.size(), spec.hidden, classes);
    throw ConfigError({"model.kind must be \"lenet5\" or \"mlp\""});
}

double JobResult::individual_mean() const { return detail::mean_of(member_test_accuracy); }

bool SweepResult::diverged() const {
    return std::any_of(jobs.begin(), jobs.end(), [](const JobResult& j) { return j.diverged; });
}

std::vector<const JobResult*> SweepResult::select(int size, double value) const {
    std::vector<const JobResult*> out;
    for (const auto& j : jobs)
        if (j.size == size && !j.diverged && grid_value(j, config.normalized) == value) out.push_back(&j);
    return out;
}

template <typename Scalar>
std::string ensemble_hash(const Ensemble<Scalar>& ensemble) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& m : ensemble.members) {
        std::uint64_t p = parameter_hash(m.params);
        for (int b = 0; b < 8; ++b) {
            h ^= (p >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return detail::hex64(h);
}

SweepResult run_beta_sweep(const SweepConfig& config) {
    auto out = sweep_into(config);
    detail::write_manifest(out.result.dir, "sweep", to_json(config), out.files, out.extra);
    return std::move(out.result);
}

std::vector<SizePeak> find_peaks(const SweepResult& sweep, Combiner combiner) {
    const auto c = static_cast<std::size_t>(std::find(kCombiners.begin(), kCombiners.end(), combiner) -
                                            kCombiners.begin());
    std::vector<SizePeak> peaks;
    for (int n : sweep.config.sizes) {
        std::optional<SizePeak> best;
        for (double v : sweep.config.betas) {
            const auto sel = sweep.select(n, v);
            if (sel.empty()) continue;
            std::vector<double> acc;
            for (const auto* j : sel) acc.push_back(j->ensemble_accuracy[c]);
            const double mean = detail::mean_of(acc);
            if (!best || mean > best->accuracy) best = SizePeak{n, sel.front()->beta, sel.front()->beta_bar, mean};
        }
        if (best) peaks.push_back(*best);
    }
    return peaks;
}

ScalingResult run_size_scaling(const SweepConfig& config) {
    auto out = sweep_into(config);
    ScalingResult res;
    res.sweep = std::move(out.result);
    res.peaks = find_peaks(res.sweep);

    std::vector<std::pair<double, double>> points;
    for (const auto& p : res.peaks) {
        if (p.beta_star >= 0 && res.fit_note.empty())
            res.fit_note = "peak coupling is not negative at N=" + std::to_string(p.size) + " (beta*=" +
                           format_number(p.beta_star) + ")";
        points.emplace_back(p.size, p.beta_star);
    }
    if (res.fit_note.empty() && points.size() < 3)
        res.fit_note = "need peaks at three or more sizes, have " + std::to_string(points.size());
    if (res.fit_note.empty()) {
        try {
            res.fit = fit_beta_scaling(points);
        } catch (const std::invalid_argument& e) {
            res.fit_note = e.what();
        }
    }

    const auto& dir = res.sweep.dir;
    CsvWriter peaks;
    peaks.header({"size", "beta_star", "beta_bar_star", "accuracy"});
    for (const auto& p : res.peaks) peaks.row().num(p.size).num(p.beta_star).num(p.beta_bar_star).num(p.accuracy);
    peaks.save(dir / "peaks.csv");

    CsvWriter collapse;
    collapse.header({"size", "beta", "beta_bar", "beta_over_beta_star", "ensemble_accuracy_mean", "individual_mean"});
    std::vector<PlotSeries> plot;
    for (const auto& p : res.peaks) {
        PlotSeries series{"N=" + std::to_string(p.size), {}, {}};
        for (double v : config.betas) {
            const auto sel = res.sweep.select(p.size, v);
            if (sel.empty()) continue;
            std::vector<double> acc, ind;
            for (const auto* j : sel) {
                acc.push_back(j->ensemble_accuracy[0]);
                ind.push_back(j->individual_mean());
            }
            auto row = collapse.row();
            row.num(p.size).num(sel.front()->beta).num(sel.front()->beta_bar);
            std::optional<double> ratio;
            if (p.beta_star != 0) ratio = sel.front()->beta / p.beta_star;
            detail::optional_cell(row, ratio);
            row.num(detail::mean_of(acc)).num(detail::mean_of(ind));
            if (ratio) {
                series.x.push_back(*ratio);
                series.y.push_back(detail::mean_of(acc));
            }
        }
        plot.push_back(std::move(series));
    }
    collapse.save(dir / "collapse.csv");

    nlohmann::json scaling;
    scaling["peaks"] = nlohmann::json::array();
    for (const auto& p : res.peaks)
        scaling["peaks"].push_back(
            {{"size", p.size}, {"beta_star", p.beta_star}, {"beta_bar_star", p.beta_bar_star}, {"accuracy", p.accuracy}});
    if (res.fit)
        scaling["fit"] = {{"slope", res.fit->slope}, {"intercept", res.fit->intercept}, {"residual", res.fit->residual}};
    else
        scaling["fit"] = nullptr;
    scaling["note"] = res.fit_note;
    atomic_write(dir / "scaling.json", scaling.dump(2) + "\n");

    out.files.insert(out.files.end(), {"peaks.csv", "collapse.csv", "scaling.json"});
    if (config.run.svg) {
        atomic_write(dir / "collapse.svg", line_plot_svg("Accuracy vs beta / beta*", "beta / beta*", "accuracy", plot));
        out.files.push_back("collapse.svg");
    }
    out.extra["fit_note"] = res.fit_note;
    detail::write_manifest(dir, "scale", to_json(config), out.files, out.extra);
    return res;
}

template Dataset<float> load_dataset<float>(const DatasetSpec&, std::uint64_t);
template Dataset<double> load_dataset<double>(const DatasetSpec&, std::uint64_t);
template DataSplit<float> split_dataset<float>(const Dataset<float>&, const DatasetSpec&, std::uint64_t, int);
template DataSplit<double> split_dataset<double>(const Dataset<double>&, const DatasetSpec&, std::uint64_t, int);
template std::string ensemble_hash<float>(const Ensemble<float>&);
template std::string ensemble_hash<double>(const Ensemble<double>&);

namespace detail {

template <typename Scalar>
void save_checkpoint_with_run(const Ensemble<Scalar>& ensemble, int epoch, const std::filesystem::path& path,
                              std::uint64_t run_seed, int repeat) {
    save_run_checkpoint(ensemble, epoch, path, run_seed, repeat);
}

template void save_checkpoint_with_run<float>(const Ensemble<float>&, int, const std::filesystem::path&,
                                              std::uint64_t, int);
template void save_checkpoint_with_run<double>(const Ensemble<double>&, int, const std::filesystem::path&,
                                               std::uint64_t, int);

}  // namespace detail

}  // namespace colearn
