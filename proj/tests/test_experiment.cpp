#include "colearn/experiment.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace colearn;
using nlohmann::json;

namespace {

// Small synthetic sweep that finishes in well under a second.
SweepConfig small_sweep(const std::filesystem::path& out) {
    json j = json::object();
    apply_overrides(j, {"dataset.kind=gaussian", "dataset.per_class=60", "model.kind=mlp", "model.hidden=[12]",
                        "train.epochs=4", "train.batch_size=16", "train.lr=0.05", "train.snapshot_every=2",
                        "train.probe_size=20"});
    j["out"] = out.string();
    set_progress(false);
    return sweep_config_from_json(j);
}

std::size_t data_rows(const std::filesystem::path& csv) { return CsvTable::load(csv).rows.size(); }

void write_sweep_fixture(const std::filesystem::path& dir, const std::vector<std::array<double, 3>>& rows) {
    // rows: (beta_bar, ensemble_accuracy, individual_mean) for N = 2, arithmetic only
    std::filesystem::create_directories(dir);
    CsvWriter w;
    w.header({"size", "beta", "beta_bar", "repeat", "combiner", "ensemble_accuracy", "individual_mean",
              "dissimilarity", "confidence_mass", "mean_entropy", "vote_spearman", "wall_mass", "mds_final",
              "mds_trajectory"});
    for (const auto& r : rows)
        w.row().num(2).num(r[0] / 2).num(r[0]).num(0).str("arithmetic").num(r[1]).num(r[2]).num(0.1).num(0.5).num(0.3)
            .num(0.2).num(0.0).str("").str("");
    w.save(dir / "sweep.csv");
    CsvWriter empty;
    empty.header({"size", "beta", "beta_bar", "repeat", "layer", "inactive_fraction", "mean_activation"});
    empty.save(dir / "sparsity.csv");
    CsvWriter weights;
    weights.header({"size", "beta", "beta_bar", "repeat", "layer", "weight_std"});
    weights.save(dir / "weights.csv");
    atomic_write(dir / "manifest.json", json({{"kind", "sweep"}, {"expected_rows", rows.size()}}).dump());
}

}  // namespace

TEST_CASE("seed streams are distinct and ignore the coupling") {
    CHECK(split_seed(1, 0) != split_seed(1, 1));
    CHECK(split_seed(1, 0) != split_seed(2, 0));
    CHECK(network_seed(1, 2, 0, 0) != network_seed(1, 2, 0, 1));
    CHECK(network_seed(1, 2, 0, 0) != network_seed(1, 3, 0, 0));
    CHECK(network_seed(1, 2, 0, 0) != network_seed(1, 2, 1, 0));
    CHECK(order_seed(1, 2, 0) != order_seed(1, 2, 1));
    CHECK(order_seed(1, 2, 0) != network_seed(1, 2, 0, 0));
}

TEST_CASE("architectures and datasets from specs") {
    ModelSpec lenet;
    CHECK(build_architecture(lenet, {1, 28, 28}, 10).classes() == 10);
    ModelSpec mlp_spec{"mlp", {7, 5}};
    const auto a = build_architecture(mlp_spec, {1, 1, 9}, 3);
    CHECK(a.input.size() == 9);
    CHECK(a.classes() == 3);

    DatasetSpec g;
    g.kind = "gaussian";
    g.classes = 3;
    g.dim = 5;
    g.per_class = 40;
    const auto d = load_dataset<double>(g, 11);
    CHECK(d.size() == 120);
    const auto s = split_dataset(d, g, 11, 0);
    CHECK(s.train.size() + s.test.size() == 120);
    CHECK(s.test.size() == 24);
    const auto s2 = split_dataset(d, g, 11, 1);
    CHECK(s.test.labels.size() == s2.test.labels.size());
    CHECK_FALSE(s.test.inputs == s2.test.inputs);

    DatasetSpec missing;
    missing.images = "/nonexistent/images";
    CHECK_THROWS_AS(load_dataset<float>(missing, 1), ConfigError);
}

TEST_CASE("sweep writes one row per job and combiner") {
    const auto dir = testing::scratch_dir("sweep_rows");
    auto cfg = small_sweep(dir);
    cfg.sizes = {2, 3};
    cfg.betas = {-1.0, 0.0, 0.5};
    cfg.repeats = 2;
    const auto res = run_beta_sweep(cfg);
    CHECK(res.jobs.size() == 12);
    CHECK_FALSE(res.diverged());
    CHECK(data_rows(dir / "sweep.csv") == 36);
    CHECK(data_rows(dir / "members.csv") == 6 * 2 + 6 * 3);
    CHECK(data_rows(dir / "summary.csv") == 2 * 3 * 3);
    CHECK(data_rows(dir / "entropy.csv") == 12 * static_cast<std::size_t>(kEntropyBins));
    const auto manifest = json::parse(read_file(dir / "manifest.json"));
    CHECK(manifest["expected_rows"] == 36);
    CHECK(manifest["rows"] == 36);
    CHECK(manifest["config_hash"] == config_hash(to_json(cfg)));
    CHECK(manifest["kind"] == "sweep");

    // Trajectory embedding: snapshots at epochs 0, 2, 4 with N + 1 points each.
    const auto sel = res.select(3, -1.0);
    REQUIRE(sel.size() == 2);
    CHECK(sel[0]->mds_points.size() == 3 * 4);
    CHECK(sel[0]->mds_trajectory.has_value());
    CHECK(sel[0]->mds_final.has_value());
    CHECK_FALSE(res.select(2, 0.0).front()->mds_final.has_value());
    CHECK(res.select(2, 0.0).front()->wall_mass.has_value());
    CHECK(sel[0]->beta == doctest::Approx(-1.0 / 3));
    CHECK(sel[0]->beta_bar == -1.0);
}

TEST_CASE("a one-point grid reproduces direct training") {
    const auto dir = testing::scratch_dir("sweep_direct");
    auto cfg = small_sweep(dir);
    cfg.betas = {0.0};
    const auto res = run_beta_sweep(cfg);
    REQUIRE(res.jobs.size() == 1);

    const auto all = load_dataset<float>(cfg.run.dataset, cfg.run.seed);
    const auto split = split_dataset(all, cfg.run.dataset, cfg.run.seed, 0);
    const auto arch = build_architecture(cfg.run.model, split.train.sample_shape, split.train.classes);
    auto ens = Ensemble<float>::create(arch, {network_seed(cfg.run.seed, 2, 0, 0), network_seed(cfg.run.seed, 2, 0, 1)},
                                       CouplingMatrix<float>::uniform(0.0, 2));
    TrainConfig tc = cfg.run.train;
    tc.seed = order_seed(cfg.run.seed, 2, 0);
    train(ens, split.train, split.test, tc);
    CHECK(res.jobs[0].params_hash == ensemble_hash(ens));
    CHECK(CsvTable::load(dir / "sweep.csv").cell(0, "params_hash") == ensemble_hash(ens));
}

TEST_CASE("outputs do not depend on the thread count") {
    const auto one = testing::scratch_dir("threads_1");
    const auto three = testing::scratch_dir("threads_3");
    auto cfg = small_sweep(one);
    cfg.sizes = {2, 3};
    cfg.repeats = 2;
    run_beta_sweep(cfg);
    cfg.run.out = three;
    cfg.run.threads = 3;
    run_beta_sweep(cfg);
    for (const char* f : {"sweep.csv", "members.csv", "curves.csv", "summary.csv", "mds.csv", "entropy.csv",
                          "sparsity.csv", "weights.csv"})
        CHECK_MESSAGE(read_file(one / f) == read_file(three / f), f);
}

TEST_CASE("diverged jobs are listed and their rows omitted") {
    const auto dir = testing::scratch_dir("sweep_diverge");
    auto cfg = small_sweep(dir);
    cfg.run.train.schedule.eta0 = 1e30;
    cfg.betas = {0.0};
    const auto res = run_beta_sweep(cfg);
    CHECK(res.diverged());
    CHECK(data_rows(dir / "sweep.csv") == 0);
    const auto manifest = json::parse(read_file(dir / "manifest.json"));
    CHECK(manifest["diverged"].size() == 1);
    CHECK(manifest["expected_rows"] == 3);
}

TEST_CASE("peaks pick the first best grid point") {
    SweepResult s;
    s.config.sizes = {2};
    s.config.betas = {-1.0, -0.5, 0.0};
    for (double v : s.config.betas) {
        JobResult j;
        j.size = 2;
        j.beta_bar = v;
        j.beta = v / 2;
        j.ensemble_accuracy = {v == 0.0 ? 0.8 : 0.9, 0.5, 0.5};
        s.jobs.push_back(j);
    }
    const auto peaks = find_peaks(s);
    REQUIRE(peaks.size() == 1);
    CHECK(peaks[0].beta_bar_star == -1.0);
    CHECK(peaks[0].beta_star == -0.5);
    CHECK(peaks[0].accuracy == 0.9);
}

TEST_CASE("scaling refuses a fit from a single size") {
    const auto dir = testing::scratch_dir("scale_single");
    auto cfg = small_sweep(dir);
    cfg.betas = {-1.0, 0.0};
    const auto res = run_size_scaling(cfg);
    CHECK_FALSE(res.fit.has_value());
    CHECK_FALSE(res.fit_note.empty());
    const auto scaling = json::parse(read_file(dir / "scaling.json"));
    CHECK(scaling["fit"].is_null());
    CHECK(scaling["note"] == res.fit_note);
    CHECK(data_rows(dir / "peaks.csv") == 1);
    CHECK(json::parse(read_file(dir / "manifest.json"))["kind"] == "scale");
}

TEST_CASE("boundary window") {
    const std::vector<int> votes = {0, 1, 2, 3, 4, 2, 1};
    CHECK(boundary_subset(votes, 4, 2).size() == votes.size());  // m = N/2 keeps everything
    CHECK(boundary_subset(votes, 4, 0) == std::vector<Index>{2, 5});
    CHECK(boundary_subset(votes, 4, 1) == std::vector<Index>{1, 2, 3, 5, 6});
    CHECK(boundary_subset({0, 1, 2, 3}, 3, 0) == std::vector<Index>{1, 2});
    CHECK(boundary_subset({0, 1, 2, 3}, 3, 1).size() == 4);
    CHECK(boundary_subset({0, 1, 2}, 2, 0) == std::vector<Index>{1});
    CHECK_THROWS_AS(boundary_subset(votes, 4, 3), std::invalid_argument);
    CHECK_THROWS_AS(boundary_subset(votes, 4, -1), std::invalid_argument);
}

TEST_CASE("training run and expansion from its checkpoint") {
    const auto root = testing::scratch_dir("train_expand");
    json j = json::object();
    apply_overrides(j, {"dataset.kind=gaussian", "dataset.per_class=60", "model.kind=mlp", "model.hidden=[12]",
                        "train.epochs=4", "train.batch_size=16", "train.lr=0.05", "train.eval_every=1", "size=3",
                        "checkpoint_every=2"});
    j["out"] = (root / "train").string();
    set_progress(false);
    const auto tc = train_config_from_json(j);
    const auto trained = run_training(tc);
    CHECK(trained.history.records.size() == 4);
    const auto lines = read_file(root / "train" / "metrics.jsonl");
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 4);
    CHECK(std::filesystem::exists(root / "train" / "checkpoints" / "epoch_2.json"));
    CHECK(data_rows(root / "train" / "curves.csv") == 12);
    const auto ckpt = load_checkpoint<float>(trained.checkpoint);
    CHECK(ckpt.epoch == 4);
    CHECK(ckpt.ensemble.size() == 3);

    json e = j;
    e.erase("size");
    e.erase("checkpoint_every");
    e["base"] = trained.checkpoint.string();
    e["extra"] = 0;
    e["out"] = (root / "expand0").string();
    e["modes"] = {"add-freeze", "boundary-boost"};
    const auto zero = run_expansion(expansion_config_from_json(e));
    REQUIRE(zero.rows.size() == 2);
    for (const auto& r : zero.rows) {
        CHECK(r.accuracy == r.base_accuracy);
        CHECK(r.base_accuracy == trained.ensemble_accuracy);
    }

    e["extra"] = 2;
    e["m"] = 1;
    e["modes"] = {"add-freeze", "add-retrain", "retrain-scratch", "boundary-boost"};
    e["out"] = (root / "expand2").string();
    const auto grown = run_expansion(expansion_config_from_json(e));
    REQUIRE(grown.rows.size() == 4);
    CHECK(grown.rows[2].epochs == 8);  // scratch_epoch_factor 2
    CHECK(grown.rows[3].train_samples <= grown.rows[0].train_samples);
    CHECK(data_rows(root / "expand2" / "expansion.csv") == 12);

    e["m"] = 2;
    CHECK_THROWS_AS(run_expansion(expansion_config_from_json(e)), ConfigError);
}

TEST_CASE("report on an empty directory lists the gaps") {
    const auto dir = testing::scratch_dir("report_empty");
    const auto r = emit_report(dir, false);
    CHECK(r.sources == 0);
    CHECK(r.rows == 0);
    CHECK(r.gaps.size() >= 2);
    CHECK(std::filesystem::exists(dir / "report" / "gaps.txt"));
    CHECK_FALSE(read_file(dir / "report" / "gaps.txt").empty());
}

TEST_CASE("report aggregates every run under the directory") {
    const auto root = testing::scratch_dir("report_two");
    auto cfg = small_sweep(root / "a");
    run_beta_sweep(cfg);
    cfg.run.out = root / "nested" / "b";
    cfg.run.seed = 2;
    cfg.repeats = 2;
    run_beta_sweep(cfg);
    const auto r = emit_report(root, true);
    CHECK(r.sources == 2);
    CHECK(r.rows == 6 + 12);
    CHECK(data_rows(root / "report" / "runs.csv") == 18);
    CHECK(std::filesystem::exists(root / "report" / "accuracy_vs_coupling.svg"));
    // A second report ignores the first one's output.
    CHECK(emit_report(root, false).rows == 18);
}

TEST_CASE("report means and deviations match a hand computation") {
    const auto root = testing::scratch_dir("report_fixture");
    write_sweep_fixture(root / "r1", {{-1, 0.90, 0.80}, {0, 0.85, 0.84}});
    write_sweep_fixture(root / "r2", {{-1, 0.80, 0.70}, {0, 0.87, 0.86}});
    write_sweep_fixture(root / "r3", {{-1, 0.85, 0.75}, {0, 0.89, 0.88}});
    const auto r = emit_report(root, false);
    CHECK(r.rows == 6);
    const auto t = CsvTable::load(root / "report" / "accuracy_vs_coupling.csv");
    REQUIRE(t.rows.size() == 2);
    // beta_bar = -1: accuracies 0.90, 0.80, 0.85 -> mean 0.85, sample std 0.05
    CHECK(t.number(0, "beta_bar") == -1);
    CHECK(t.number(0, "repeats") == 3);
    CHECK(t.number(0, "ensemble_accuracy_mean") == doctest::Approx(0.85).epsilon(1e-9));
    CHECK(t.number(0, "ensemble_accuracy_std") == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(t.number(0, "individual_mean") == doctest::Approx(0.75).epsilon(1e-9));
    // beta_bar = 0: 0.85, 0.87, 0.89 -> mean 0.87, std 0.02
    CHECK(t.number(1, "ensemble_accuracy_mean") == doctest::Approx(0.87).epsilon(1e-9));
    CHECK(t.number(1, "ensemble_accuracy_std") == doctest::Approx(0.02).epsilon(1e-9));
    const auto peaks = CsvTable::load(root / "report" / "scaling_peaks.csv");
    REQUIRE(peaks.rows.size() == 1);
    CHECK(peaks.number(0, "beta_bar_star") == 0);

    // A manifest promising more rows than present is reported as partial.
    atomic_write(root / "r3" / "manifest.json", json({{"kind", "sweep"}, {"expected_rows", 5}}).dump());
    const auto partial = emit_report(root, false);
    CHECK(std::any_of(partial.gaps.begin(), partial.gaps.end(),
                      [](const std::string& g) { return g.find("partial") != std::string::npos; }));
}
