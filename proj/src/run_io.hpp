#pragma once

// Helpers shared by the experiment sources: output directories, manifests,
// progress lines and summary statistics.

#include "colearn/config.hpp"
#include "colearn/csv.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace colearn::detail {

/// Creates `dir` and checks it accepts files; throws ConfigError otherwise.
void prepare_output_dir(const std::filesystem::path& dir);

/// Writes manifest.json with the config, its hash, the code version, a UTC
/// timestamp, the list of files written and any extra fields.
void write_manifest(const std::filesystem::path& dir, const std::string& kind, const nlohmann::json& config,
                    const std::vector<std::string>& files, nlohmann::json extra = nlohmann::json::object());

void progress(const std::string& line);

std::string hex64(std::uint64_t value);

/// Checkpoint that also records the run seed and repeat, so the data split
/// can be rebuilt from it.
template <typename Scalar>
void save_checkpoint_with_run(const Ensemble<Scalar>& ensemble, int epoch, const std::filesystem::path& path,
                              std::uint64_t run_seed, int repeat);

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample standard deviation; empty below two values.
inline std::optional<double> sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return std::nullopt;
    const double m = mean_of(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline void optional_cell(CsvWriter::Row& row, const std::optional<double>& value) {
    if (value)
        row.num(*value);
    else
        row.str("");
}

}  // namespace colearn::detail
