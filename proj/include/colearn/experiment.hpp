#pragma once

// Experiment protocols: coupling sweeps, ensemble-size scaling, expansion of
// trained ensembles, single training runs, and report aggregation. Every run
// writes CSV tables plus a manifest.json holding the exact config and its hash.

#include "colearn/analytics.hpp"
#include "colearn/checkpoint.hpp"
#include "colearn/config.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace colearn {

// ---- seeds -------------------------------------------------------------------
// Every stream is derived from the run seed and a tuple that names it, so
// adding sizes, couplings or repeats never changes existing streams. The
// coupling value is deliberately not part of any tuple: within a repeat every
// grid point starts from the same networks and sees the same data, which
// makes comparisons across couplings paired.

std::uint64_t split_seed(std::uint64_t run_seed, int repeat);
std::uint64_t network_seed(std::uint64_t run_seed, int size, int repeat, int member);
std::uint64_t order_seed(std::uint64_t run_seed, int size, int repeat);

// ---- data and models ----------------------------------------------------------

template <typename Scalar>
struct DataSplit {
    Dataset<Scalar> train;
    Dataset<Scalar> test;
};

/// The full dataset named by `spec` (before splitting).
template <typename Scalar>
Dataset<Scalar> load_dataset(const DatasetSpec& spec, std::uint64_t run_seed);

template <typename Scalar>
DataSplit<Scalar> split_dataset(const Dataset<Scalar>& all, const DatasetSpec& spec, std::uint64_t run_seed,
                                int repeat);

Architecture build_architecture(const ModelSpec& spec, const Shape3& input, Index classes);

// ---- sweeps ---------------------------------------------------------------------

inline constexpr std::array<Combiner, 3> kCombiners = {Combiner::arithmetic, Combiner::geometric, Combiner::majority};

struct JobResult {
    int size = 0;
    double beta = 0;      // beta_ij
    double beta_bar = 0;  // beta_ij * N
    int repeat = 0;
    Index classes = 0;
    bool diverged = false;
    std::string error;

    std::array<double, 3> ensemble_accuracy{};  // in kCombiners order
    std::vector<double> member_test_accuracy;
    std::vector<double> member_train_accuracy;
    std::vector<double> member_confidence_mass;
    std::vector<double> member_mean_entropy;
    double dissimilarity = 0;  // mean off-diagonal d(n_i, n_j) on the test set
    std::optional<double> vote_spearman;
    std::optional<double> wall_mass;       // N == 2 only
    std::optional<double> mds_final;       // final dissimilarities, N >= 3
    std::optional<double> mds_trajectory;  // joint embedding of the snapshots
    std::vector<LayerActivity> sparsity;   // member means per ReLU layer
    std::vector<double> weight_std;        // member means per parametric layer
    std::vector<int> entropy_histogram;    // summed over members
    std::vector<EpochRecord> history;
    /// Points of the trajectory embedding: (epoch, member; member == N is the ensemble mean).
    std::vector<std::pair<int, int>> mds_points;
    MatrixX<double> mds_coordinates;
    std::string params_hash;

    double individual_mean() const;
};

struct SweepResult {
    SweepConfig config;
    std::filesystem::path dir;
    std::vector<JobResult> jobs;  // sizes x betas x repeats, in that nesting order

    bool diverged() const;
    /// Jobs of one grid point, in repeat order.
    std::vector<const JobResult*> select(int size, double grid_value) const;
};

/// Trains every (size, beta, repeat) ensemble and writes sweep.csv (one row per
/// job and combiner), members.csv, sparsity.csv, weights.csv, entropy.csv,
/// curves.csv, mds.csv, summary.csv and manifest.json into config.run.out.
/// Diverged jobs are listed in the manifest; their rows are omitted.
SweepResult run_beta_sweep(const SweepConfig& config);

/// Hash of a trained ensemble's parameters (FNV-1a over members in order), hex.
template <typename Scalar>
std::string ensemble_hash(const Ensemble<Scalar>& ensemble);

// ---- scaling ----------------------------------------------------------------

struct SizePeak {
    int size = 0;
    double beta_star = 0;      // raw beta_ij at the best grid point
    double beta_bar_star = 0;  // beta_star * N
    double accuracy = 0;       // mean arithmetic-ensemble accuracy there
};

/// Best grid point per size: argmax of mean ensemble accuracy, first on ties.
std::vector<SizePeak> find_peaks(const SweepResult& sweep, Combiner combiner = Combiner::arithmetic);

struct ScalingResult {
    SweepResult sweep;
    std::vector<SizePeak> peaks;
    std::optional<ScalingFit> fit;
    std::string fit_note;  // why the fit was skipped
};

/// Sweep plus the beta* fit and the collapse table (collapse.csv, peaks.csv,
/// scaling.json).
ScalingResult run_size_scaling(const SweepConfig& config);

// ---- expansion ------------------------------------------------------------------

/// Samples on which between floor(N/2) - m and ceil(N/2) + m of the N base
/// networks vote correctly.
std::vector<Index> boundary_subset(const std::vector<int>& correct_votes, int size, int m);

struct ExpansionRow {
    ExpansionMode mode{};
    int base_size = 0;
    int extra = 0;
    int epochs = 0;
    Index train_samples = 0;
    std::array<double, 3> base_accuracy{};
    std::array<double, 3> accuracy{};
};

struct ExpansionResult {
    std::vector<ExpansionRow> rows;
};

/// Runs each configured mode on the base checkpoint; writes expansion.csv.
ExpansionResult run_expansion(const ExpansionConfig& config);

// ---- single run ---------------------------------------------------------------

struct TrainRunResult {
    TrainHistory history;
    std::array<double, 3> ensemble_accuracy{};
    std::filesystem::path checkpoint;
};

/// Trains one ensemble, streaming metrics.jsonl and writing checkpoints,
/// curves.csv and manifest.json.
TrainRunResult run_training(const TrainRunConfig& config);

// ---- report ---------------------------------------------------------------

struct ReportResult {
    std::size_t sources = 0;  // run directories aggregated
    std::size_t rows = 0;     // sweep rows aggregated
    std::vector<std::string> gaps;
};

/// Aggregates every sweep under `run_dir` into plot-ready tables in
/// `run_dir/report`, lists missing or partial runs in gaps.txt, and
/// optionally renders SVG plots.
ReportResult emit_report(const std::filesystem::path& run_dir, bool svg);

/// Per-job progress lines on stderr (on by default).
void set_progress(bool enabled);

/// Version string of the build (git revision when available).
std::string code_version();

}  // namespace colearn
