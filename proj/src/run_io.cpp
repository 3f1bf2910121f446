#include "run_io.hpp"

#include "colearn/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <mutex>

#ifndef COLEARN_CODE_VERSION
#define COLEARN_CODE_VERSION "unknown"
#endif

namespace colearn {

namespace {

std::atomic<bool> g_progress{true};
std::mutex g_progress_mutex;

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void set_progress(bool enabled) { g_progress = enabled; }

std::string code_version() { return COLEARN_CODE_VERSION; }

namespace detail {

void prepare_output_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError({"out: cannot create " + dir.string() + " (" + ec.message() + ")"});
    const auto probe = dir / ".write-probe";
    try {
        atomic_write(probe, "");
    } catch (const std::exception& e) {
        throw ConfigError({"out: " + dir.string() + " is not writable (" + e.what() + ")"});
    }
    std::filesystem::remove(probe, ec);
}

void write_manifest(const std::filesystem::path& dir, const std::string& kind, const nlohmann::json& config,
                    const std::vector<std::string>& files, nlohmann::json extra) {
    nlohmann::json m = std::move(extra);
    m["kind"] = kind;
    m["config"] = config;
    m["config_hash"] = config_hash(config);
    m["code_version"] = code_version();
    m["created"] = utc_timestamp();
    m["files"] = files;
    atomic_write(dir / "manifest.json", m.dump(2) + "\n");
}

void progress(const std::string& line) {
    if (!g_progress) return;
    std::lock_guard lock(g_progress_mutex);
    std::cerr << line << std::endl;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace detail

}  // namespace colearn
