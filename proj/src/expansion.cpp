#include "colearn/experiment.hpp"

#include "run_io.hpp"
#include "colearn/svg.hpp"

#include <algorithm>
#include <cmath>

namespace colearn {

namespace {

constexpr std::uint64_t kExpandTag = 0x657870616e64ULL;
constexpr std::uint64_t kScratchTag = 0x73637261746368ULL;

std::uint64_t u64(int v) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(v)); }

template <typename Scalar>
std::array<double, 3> combiner_accuracy(const Ensemble<Scalar>& ens, const Dataset<Scalar>& data) {
    const auto probs = member_predictions(ens, data);
    const std::span<const RowMatrixX<Scalar>> view(probs);
    std::array<double, 3> out{};
    for (std::size_t c = 0; c < kCombiners.size(); ++c)
        out[c] = accuracy_from_classes(ensemble_predictions(view, kCombiners[c]), data.labels);
    return out;
}

template <typename Scalar>
void train_if_needed(Ensemble<Scalar>& ens, const Dataset<Scalar>& train_set, const Dataset<Scalar>& test_set,
                     const TrainConfig& cfg) {
    const bool any = std::any_of(ens.members.begin(), ens.members.end(), [](const auto& m) { return m.trainable; });
    if (any && cfg.epochs > 0) train(ens, train_set, test_set, cfg);
}

template <typename Scalar>
ExpansionResult expand(const ExpansionConfig& config) {
    const auto& run = config.run;
    const auto j = load_json(config.base);
    const auto ckpt = checkpoint_from_json<Scalar>(j);
    const Ensemble<Scalar>& base = ckpt.ensemble;
    std::uint64_t run_seed = run.seed;
    int repeat = 0;
    if (j.contains("run")) {
        run_seed = j["run"].value("seed", run_seed);
        repeat = j["run"].value("repeat", 0);
    }
    const int n = static_cast<int>(base.size());
    if (config.m > n / 2)
        throw ConfigError({"m must be at most N/2 = " + std::to_string(n / 2) + " for a base ensemble of " +
                           std::to_string(n)});

    const auto all = load_dataset<Scalar>(run.dataset, run_seed);
    const auto split = split_dataset(all, run.dataset, run_seed, repeat);
    const Architecture& arch = base.members.front().arch;
    if (arch.input.size() != split.train.inputs.cols() || arch.classes() != split.train.classes)
        throw ConfigError({"base checkpoint does not match the configured dataset"});

    const auto base_accuracy = combiner_accuracy(base, split.test);
    ExpansionResult result;
    for (std::size_t k = 0; k < config.modes.size(); ++k) {
        const auto mode = config.modes[k];
        TrainConfig cfg = run.train;
        cfg.seed = derive_seed({run_seed, kExpandTag, u64(n), u64(static_cast<int>(mode))});
        cfg.threads = run.threads;
        ExpansionRow row;
        row.mode = mode;
        row.base_size = n;
        row.extra = config.extra;
        row.base_accuracy = base_accuracy;
        row.train_samples = split.train.size();
        auto new_member = [&](int i) {
            return Member<Scalar>::create(arch, derive_seed({run_seed, kExpandTag, u64(n), u64(i)}));
        };

        Ensemble<Scalar> ens;
        switch (mode) {
            case ExpansionMode::add_freeze:
            case ExpansionMode::add_retrain: {
                ens = base;
                for (auto& m : ens.members) m.trainable = mode == ExpansionMode::add_retrain;
                for (int i = 0; i < config.extra; ++i) ens.members.push_back(new_member(i));
                ens.coupling = CouplingMatrix<Scalar>::uniform(config.beta_bar, n + config.extra);
                train_if_needed(ens, split.train, split.test, cfg);
                break;
            }
            case ExpansionMode::retrain_scratch: {
                cfg.epochs = std::max(1, static_cast<int>(std::lround(config.scratch_epoch_factor * run.train.epochs)));
                cfg.schedule.t_max = cfg.epochs;
                std::vector<std::uint64_t> seeds;
                for (int i = 0; i < n + config.extra; ++i)
                    seeds.push_back(derive_seed({run_seed, kScratchTag, u64(n + config.extra), u64(i)}));
                ens = Ensemble<Scalar>::create(arch, seeds,
                                               CouplingMatrix<Scalar>::uniform(config.beta_bar, n + config.extra));
                train(ens, split.train, split.test, cfg);
                break;
            }
            case ExpansionMode::boundary_boost: {
                const auto train_probs = member_predictions(base, split.train);
                const auto votes = vote_confidence_correlation(std::span<const RowMatrixX<Scalar>>(train_probs),
                                                               split.train.labels)
                                       .correct_votes;
                std::vector<int> counts(votes.begin(), votes.end());
                const auto subset = boundary_subset(counts, n, config.m);
                row.train_samples = static_cast<Index>(subset.size());
                ens = base;
                if (subset.empty() || config.extra == 0) {
                    row.extra = 0;
                    break;
                }
                Ensemble<Scalar> fresh;
                for (int i = 0; i < config.extra; ++i) fresh.members.push_back(new_member(i));
                fresh.coupling = CouplingMatrix<Scalar>::constant(0.0, config.extra);
                train(fresh, split.train.subset(subset), split.test, cfg);
                for (auto& m : fresh.members) ens.members.push_back(std::move(m));
                ens.coupling = CouplingMatrix<Scalar>::constant(0.0, n + config.extra);
                break;
            }
        }
        row.epochs = mode == ExpansionMode::add_freeze && config.extra == 0 ? 0 : cfg.epochs;
        row.accuracy = combiner_accuracy(ens, split.test);
        detail::progress(to_string(mode) + ": ensemble " + format_number(row.accuracy[0]) + " (base " +
                         format_number(base_accuracy[0]) + ")");
        result.rows.push_back(row);
    }
    return result;
}

template <typename Scalar>
TrainRunResult train_run(const TrainRunConfig& config) {
    const auto& run = config.run;
    const auto& dir = run.out;
    const auto all = load_dataset<Scalar>(run.dataset, run.seed);
    const auto split = split_dataset(all, run.dataset, run.seed, 0);
    const Architecture arch = build_architecture(run.model, split.train.sample_shape, split.train.classes);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < config.size; ++i) seeds.push_back(network_seed(run.seed, config.size, 0, i));
    auto ens = Ensemble<Scalar>::create(arch, seeds, coupling_for<Scalar>(config.beta, config.size, config.normalized));
    ens.seed = run.seed;
    ens.id = "train";

    TrainConfig cfg = run.train;
    cfg.seed = order_seed(run.seed, config.size, 0);
    cfg.threads = run.threads;

    std::string metrics;
    std::vector<std::string> files = {"metrics.jsonl"};
    TrainObserver<Scalar> observer;
    observer.on_record = [&](const EpochRecord& rec) {
        nlohmann::json line = {{"epoch", rec.epoch},
                               {"lr", rec.lr},
                               {"train_accuracy", rec.train_accuracy},
                               {"train_loss", rec.train_loss},
                               {"test_accuracy", rec.test_accuracy},
                               {"test_task_kl", rec.test_task_kl},
                               {"ensemble_accuracy", rec.ensemble_accuracy}};
        if (rec.dissimilarity) {
            std::vector<std::vector<double>> d;
            for (Index r = 0; r < rec.dissimilarity->rows(); ++r) {
                d.emplace_back();
                for (Index c = 0; c < rec.dissimilarity->cols(); ++c) d.back().push_back((*rec.dissimilarity)(r, c));
            }
            line["dissimilarity"] = d;
        }
        metrics += line.dump() + "\n";
        atomic_write(dir / "metrics.jsonl", metrics);
        detail::progress("epoch " + std::to_string(rec.epoch) + ": ensemble " + format_number(rec.ensemble_accuracy));
    };
    observer.on_epoch_end = [&](int epoch, const Ensemble<Scalar>& e) {
        if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch < cfg.epochs) {
            const std::string name = "checkpoints/epoch_" + std::to_string(epoch) + ".json";
            std::filesystem::create_directories(dir / "checkpoints");
            detail::save_checkpoint_with_run(e, epoch, dir / name, run.seed, 0);
            files.push_back(name);
        }
    };

    TrainRunResult result;
    result.history = train(ens, split.train, split.test, cfg, observer);
    result.ensemble_accuracy = combiner_accuracy(ens, split.test);
    result.checkpoint = dir / "checkpoint.json";
    detail::save_checkpoint_with_run(ens, cfg.epochs, result.checkpoint, run.seed, 0);
    files.push_back("checkpoint.json");

    CsvWriter curves;
    curves.header({"epoch", "member", "lr", "train_accuracy", "train_loss", "test_accuracy", "test_task_kl",
                   "ensemble_accuracy"});
    for (const auto& rec : result.history.records)
        for (std::size_t i = 0; i < rec.test_accuracy.size(); ++i)
            curves.row().num(rec.epoch).num(i).num(rec.lr).num(rec.train_accuracy[i]).num(rec.train_loss[i])
                .num(rec.test_accuracy[i]).num(rec.test_task_kl[i]).num(rec.ensemble_accuracy);
    curves.save(dir / "curves.csv");
    files.push_back("curves.csv");

    nlohmann::json accuracy;
    for (std::size_t c = 0; c < kCombiners.size(); ++c)
        accuracy[to_string(kCombiners[c])] = result.ensemble_accuracy[c];
    detail::write_manifest(dir, "train", to_json(config), files, {{"ensemble_accuracy", accuracy}});
    return result;
}

}  // namespace

std::vector<Index> boundary_subset(const std::vector<int>& correct_votes, int size, int m) {
    if (size < 1) throw std::invalid_argument("boundary_subset: size must be >= 1");
    if (m < 0 || m > size / 2) throw std::invalid_argument("boundary_subset: m must lie in [0, N/2]");
    const int lo = size / 2 - m;
    const int hi = (size + 1) / 2 + m;
    std::vector<Index> out;
    for (std::size_t s = 0; s < correct_votes.size(); ++s)
        if (correct_votes[s] >= lo && correct_votes[s] <= hi) out.push_back(static_cast<Index>(s));
    return out;
}

ExpansionResult run_expansion(const ExpansionConfig& config) {
    detail::prepare_output_dir(config.run.out);
    auto result = config.run.precision == "double" ? expand<double>(config) : expand<float>(config);

    CsvWriter csv;
    csv.header({"mode", "base_size", "extra", "epochs", "train_samples", "combiner", "base_accuracy", "accuracy"});
    for (const auto& r : result.rows)
        for (std::size_t c = 0; c < kCombiners.size(); ++c)
            csv.row().str(to_string(r.mode)).num(r.base_size).num(r.extra).num(r.epochs).num(r.train_samples)
                .str(to_string(kCombiners[c])).num(r.base_accuracy[c]).num(r.accuracy[c]);
    csv.save(config.run.out / "expansion.csv");
    detail::write_manifest(config.run.out, "expand", to_json(config), {"expansion.csv"},
                           {{"rows", result.rows.size() * kCombiners.size()}});
    return result;
}

TrainRunResult run_training(const TrainRunConfig& config) {
    detail::prepare_output_dir(config.run.out);
    return config.run.precision == "double" ? train_run<double>(config) : train_run<float>(config);
}

}  // namespace colearn
