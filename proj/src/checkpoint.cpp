#include "colearn/checkpoint.hpp"

namespace colearn {

nlohmann::json architecture_to_json(const Architecture& arch) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : arch.layers) {
        nlohmann::json j{{"kind", to_string(l.kind)}};
        switch (l.kind) {
            case LayerKind::dense:
                j["in"] = l.in;
                j["out"] = l.out;
                break;
            case LayerKind::conv2d:
                j["in"] = l.in;
                j["out"] = l.out;
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                j["padding"] = l.padding;
                break;
            case LayerKind::maxpool:
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                break;
            case LayerKind::relu:
            case LayerKind::softmax:
                break;
        }
        layers.push_back(j);
    }
    return {{"input", {arch.input.channels, arch.input.height, arch.input.width}}, {"layers", layers}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
    Architecture arch;
    const auto input = j.at("input").get<std::vector<Index>>();
    if (input.size() != 3) throw FormatError("architecture: input must be [channels, height, width]");
    arch.input = {input[0], input[1], input[2]};
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
        l.in = lj.value("in", Index{0});
        l.out = lj.value("out", Index{0});
        l.kernel = lj.value("kernel", Index{0});
        l.stride = lj.value("stride", Index{1});
        l.padding = lj.value("padding", Index{0});
        arch.layers.push_back(l);
    }
    arch.shapes();  // validates
    return arch;
}

}  // namespace colearn
