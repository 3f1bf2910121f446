#pragma once

// Experiment configuration: JSON documents with `--set key=value` overrides.
// Parsing collects every problem before failing so a bad config is reported
// in one go.

#include "colearn/co_trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace colearn {

/// Invalid configuration; `problems` lists every issue found.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct DatasetSpec {
    std::string kind = "mnist";  // mnist | gaussian
    std::filesystem::path images = "data/mnist10k/images-idx3-ubyte";
    std::filesystem::path labels = "data/mnist10k/labels-idx1-ubyte";
    Index subset = 0;  // stratified subsample before splitting; 0 keeps all
    double test_fraction = 0.2;
    // gaussian
    Index classes = 4;
    Index dim = 8;
    double separation = 2.0;
    Index per_class = 250;
};

struct ModelSpec {
    std::string kind = "lenet5";  // lenet5 | mlp
    std::vector<Index> hidden = {32};
};

/// Fields shared by every subcommand.
struct RunSpec {
    std::uint64_t seed = 1;
    std::filesystem::path out = "runs/out";
    int threads = 1;
    std::string precision = "float";  // float | double
    bool svg = false;
    DatasetSpec dataset;
    ModelSpec model;
    TrainConfig train;
};

struct SweepConfig {
    RunSpec run;
    std::vector<int> sizes = {2};
    std::vector<double> betas = {-1.0, 0.0};
    /// betas are normalized couplings beta_bar = beta * N (beta_ij = beta_bar / N);
    /// otherwise they are the raw beta_ij.
    bool normalized = true;
    int repeats = 1;
    bool save_checkpoints = false;
};

enum class ExpansionMode { add_freeze, add_retrain, retrain_scratch, boundary_boost };

std::string to_string(ExpansionMode mode);
ExpansionMode expansion_mode_from_string(const std::string& name);

struct ExpansionConfig {
    RunSpec run;
    std::filesystem::path base;  // checkpoint of the trained base ensemble
    int extra = 1;               // networks to add
    std::vector<ExpansionMode> modes = {ExpansionMode::add_freeze, ExpansionMode::add_retrain,
                                        ExpansionMode::retrain_scratch, ExpansionMode::boundary_boost};
    /// Boundary window half-width: new networks train on samples where between
    /// floor(N/2) - m and ceil(N/2) + m base networks vote correctly. 0 is the
    /// exact-split case.
    int m = 0;
    double beta_bar = -1.0;  // coupling among members that train together
    /// retrain-scratch gets this many times train.epochs.
    double scratch_epoch_factor = 2.0;
};

struct TrainRunConfig {
    RunSpec run;
    int size = 2;
    double beta = -1.0;
    bool normalized = true;
    int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
};

/// Applies `key=value` overrides (dotted keys address nested objects). The
/// value is parsed as JSON when possible and taken as a string otherwise.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& assignments);

SweepConfig sweep_config_from_json(const nlohmann::json& j);
ExpansionConfig expansion_config_from_json(const nlohmann::json& j);
TrainRunConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SweepConfig& c);
nlohmann::json to_json(const ExpansionConfig& c);
nlohmann::json to_json(const TrainRunConfig& c);

/// FNV-1a of the canonical (sorted-key) dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

nlohmann::json load_json(const std::filesystem::path& path);

/// Coupling for an ensemble of `n` from a grid value.
template <typename Scalar>
CouplingMatrix<Scalar> coupling_for(double value, int n, bool normalized) {
    return normalized ? CouplingMatrix<Scalar>::uniform(value, n) : CouplingMatrix<Scalar>::constant(value, n);
}

}  // namespace colearn
