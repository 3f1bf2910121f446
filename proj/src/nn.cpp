#include "colearn/nn.hpp"

#include <array>
#include <utility>

namespace colearn {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 5> kKindNames{{
    {LayerKind::dense, "dense"},
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::relu, "relu"},
    {LayerKind::softmax, "softmax"},
}};

std::string describe(std::size_t index, const LayerSpec& spec) {
    return "layer " + std::to_string(index) + " (" + to_string(spec.kind) + ")";
}

std::string describe_pair(std::size_t l, const std::vector<LayerSpec>& layers) {
    if (l == 0) return "input -> " + describe(0, layers[0]);
    return describe(l - 1, layers[l - 1]) + " -> " + describe(l, layers[l]);
}

std::string shape_str(const Shape3& s) {
    return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
           std::to_string(s.width) + ")";
}

}  // namespace

std::string to_string(LayerKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return std::string(name);
    return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

std::vector<Shape3> Architecture::shapes() const {
    if (input.size() <= 0) throw ShapeError("architecture: empty input shape");
    if (layers.empty() || layers.back().kind != LayerKind::softmax)
        throw ShapeError("architecture: final layer must be softmax");

    std::vector<Shape3> out{input};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerSpec& spec = layers[l];
        const Shape3 cur = out.back();
        const auto fail = [&](const std::string& why) {
            throw ShapeError("architecture: " + describe_pair(l, layers) + ": " + why);
        };
        switch (spec.kind) {
            case LayerKind::dense:
                if (spec.in != cur.size())
                    fail("expected " + std::to_string(spec.in) + " input features, previous output " +
                         shape_str(cur) + " has " + std::to_string(cur.size()));
                if (spec.out <= 0) fail("dense layer needs positive output width");
                out.push_back({spec.out, 1, 1});
                break;
            case LayerKind::conv2d: {
                if (spec.in != cur.channels)
                    fail("expected " + std::to_string(spec.in) + " input channels, previous output " +
                         shape_str(cur) + " has " + std::to_string(cur.channels));
                if (spec.out <= 0 || spec.kernel <= 0 || spec.stride <= 0 || spec.padding < 0)
                    fail("invalid convolution parameters");
                const Index h = cur.height + 2 * spec.padding - spec.kernel;
                const Index w = cur.width + 2 * spec.padding - spec.kernel;
                if (h < 0 || w < 0)
                    fail("kernel " + std::to_string(spec.kernel) + " larger than padded input " + shape_str(cur));
                out.push_back({spec.out, h / spec.stride + 1, w / spec.stride + 1});
                break;
            }
            case LayerKind::maxpool: {
                if (spec.kernel <= 0 || spec.stride <= 0) fail("invalid pooling parameters");
                if (spec.kernel > cur.height || spec.kernel > cur.width)
                    fail("pooling window larger than input " + shape_str(cur));
                out.push_back({cur.channels, (cur.height - spec.kernel) / spec.stride + 1,
                               (cur.width - spec.kernel) / spec.stride + 1});
                break;
            }
            case LayerKind::relu:
                out.push_back(cur);
                break;
            case LayerKind::softmax:
                if (l + 1 != layers.size()) fail("softmax is only allowed as the final layer");
                if (cur.height != 1 || cur.width != 1) fail("softmax expects a flat class vector");
                out.push_back(cur);
                break;
        }
    }
    return out;
}

Index Architecture::classes() const { return shapes().back().channels; }

std::vector<Index> Architecture::weight_shape(std::size_t layer) const {
    const LayerSpec& spec = layers.at(layer);
    switch (spec.kind) {
        case LayerKind::dense:
            return {spec.out, spec.in};
        case LayerKind::conv2d:
            return {spec.out, spec.in, spec.kernel, spec.kernel};
        default:
            return {};
    }
}

Architecture lenet5(Shape3 input, Index classes) {
    const Index pad = input.height < 32 ? (32 - input.height + 1) / 2 : 0;
    Architecture arch;
    arch.input = input;
    arch.layers = {
        LayerSpec::conv2d(input.channels, 6, 5, 1, pad),
        LayerSpec::relu(),
        LayerSpec::maxpool(2, 2),
        LayerSpec::conv2d(6, 16, 5),
        LayerSpec::relu(),
        LayerSpec::maxpool(2, 2),
        LayerSpec::conv2d(16, 120, 5),
        LayerSpec::relu(),
        LayerSpec::dense(120, 84),
        LayerSpec::relu(),
        LayerSpec::dense(84, classes),
        LayerSpec::softmax(),
    };
    arch.shapes();
    return arch;
}

Architecture mlp(Index inputs, const std::vector<Index>& hidden, Index classes) {
    Architecture arch;
    arch.input = {inputs, 1, 1};
    Index prev = inputs;
    for (Index h : hidden) {
        arch.layers.push_back(LayerSpec::dense(prev, h));
        arch.layers.push_back(LayerSpec::relu());
        prev = h;
    }
    arch.layers.push_back(LayerSpec::dense(prev, classes));
    arch.layers.push_back(LayerSpec::softmax());
    arch.shapes();
    return arch;
}

}  // namespace colearn
