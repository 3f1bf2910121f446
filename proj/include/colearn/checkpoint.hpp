#pragma once

// Ensemble checkpoints as a single JSON document. Tensors are stored as flat
// row-major number arrays in layer order; values go through double, which is
// exact for both float and double networks.

#include "colearn/csv.hpp"
#include "colearn/ensemble.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace colearn {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "colearn-checkpoint";

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

template <typename Scalar>
struct Checkpoint {
    Ensemble<Scalar> ensemble;
    int epoch = 0;
};

namespace detail {

template <typename Scalar>
nlohmann::json tensor_to_json(const Tensor<Scalar>& t) {
    std::vector<double> values(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<double>(t.data[i]);
    return {{"shape", t.shape}, {"data", values}};
}

template <typename Scalar>
Tensor<Scalar> tensor_from_json(const nlohmann::json& j, const std::vector<Index>& expected, const std::string& where) {
    const auto shape = j.at("shape").get<std::vector<Index>>();
    if (shape != expected) throw FormatError("checkpoint: " + where + " has the wrong shape");
    const auto& data = j.at("data");
    Tensor<Scalar> t(shape);
    if (!data.is_array() || static_cast<Index>(data.size()) != t.size())
        throw FormatError("checkpoint: " + where + " holds " + std::to_string(data.size()) + " values, expected " +
                          std::to_string(t.size()));
    for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<Scalar>(data[static_cast<std::size_t>(i)].get<double>());
    return t;
}

template <typename Scalar>
nlohmann::json params_to_json(const NetworkParams<Scalar>& p) {
    auto layers = nlohmann::json::array();
    for (const auto& l : p.layers) {
        if (l.weight.empty())
            layers.push_back(nullptr);
        else
            layers.push_back({{"weight", tensor_to_json(l.weight)}, {"bias", tensor_to_json(l.bias)}});
    }
    return layers;
}

template <typename Scalar>
NetworkParams<Scalar> params_from_json(const nlohmann::json& j, const Architecture& arch, const std::string& where) {
    if (!j.is_array() || j.size() != arch.layers.size())
        throw FormatError("checkpoint: " + where + " does not list one entry per layer");
    auto p = NetworkParams<Scalar>::zeros(arch);
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        if (!arch.layers[l].has_params()) continue;
        const std::string at = where + " layer " + std::to_string(l);
        p.layers[l].weight = tensor_from_json<Scalar>(j[l].at("weight"), arch.weight_shape(l), at + " weight");
        p.layers[l].bias = tensor_from_json<Scalar>(j[l].at("bias"), {arch.layers[l].out}, at + " bias");
    }
    return p;
}

}  // namespace detail

template <typename Scalar>
nlohmann::json checkpoint_to_json(const Ensemble<Scalar>& ensemble, int epoch) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["format_version"] = kCheckpointVersion;
    j["scalar_bits"] = 8 * sizeof(Scalar);
    j["id"] = ensemble.id;
    j["seed"] = ensemble.seed;
    j["epoch"] = epoch;
    auto coupling = nlohmann::json::array();
    for (Index i = 0; i < ensemble.coupling.size(); ++i) {
        std::vector<double> row;
        for (Index k = 0; k < ensemble.coupling.size(); ++k) row.push_back(static_cast<double>(ensemble.coupling(i, k)));
        coupling.push_back(row);
    }
    j["coupling"] = coupling;
    auto members = nlohmann::json::array();
    for (const auto& m : ensemble.members)
        members.push_back({{"seed", m.seed},
                           {"trainable", m.trainable},
                           {"arch", architecture_to_json(m.arch)},
                           {"params", detail::params_to_json(m.params)},
                           {"velocity", detail::params_to_json(m.velocity)}});
    j["members"] = members;
    return j;
}

template <typename Scalar>
Checkpoint<Scalar> checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (!j.contains("format_version")) throw FormatError("checkpoint: missing format_version");
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointVersion)
            throw FormatError("checkpoint: unsupported format_version " + std::to_string(version));
        if (j.value("format", std::string()) != kCheckpointFormat) throw FormatError("checkpoint: not a colearn checkpoint");
        Checkpoint<Scalar> out;
        out.epoch = j.at("epoch").get<int>();
        out.ensemble.seed = j.at("seed").get<std::uint64_t>();
        out.ensemble.id = j.value("id", std::string());
        const auto rows = j.at("coupling").get<std::vector<std::vector<double>>>();
        MatrixX<Scalar> beta(static_cast<Index>(rows.size()), static_cast<Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size()) throw FormatError("checkpoint: coupling matrix is not square");
            for (std::size_t k = 0; k < rows.size(); ++k)
                beta(static_cast<Index>(i), static_cast<Index>(k)) = static_cast<Scalar>(rows[i][k]);
        }
        out.ensemble.coupling = CouplingMatrix<Scalar>(beta);
        std::size_t index = 0;
        for (const auto& mj : j.at("members")) {
            const std::string where = "member " + std::to_string(index++);
            Member<Scalar> m;
            m.arch = architecture_from_json(mj.at("arch"));
            m.seed = mj.at("seed").get<std::uint64_t>();
            m.trainable = mj.value("trainable", true);
            m.params = detail::params_from_json<Scalar>(mj.at("params"), m.arch, where + " params");
            m.velocity = mj.contains("velocity") ? detail::params_from_json<Scalar>(mj.at("velocity"), m.arch,
                                                                                     where + " velocity")
                                                 : m.params.zeros_like();
            out.ensemble.members.push_back(std::move(m));
        }
        out.ensemble.validate();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
}

template <typename Scalar>
void save_checkpoint(const Ensemble<Scalar>& ensemble, int epoch, const std::filesystem::path& path) {
    atomic_write(path, checkpoint_to_json(ensemble, epoch).dump());
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json<Scalar>(j);
}

}  // namespace colearn
