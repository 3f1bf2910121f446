#pragma once

#include "colearn/common.hpp"
#include "colearn/nn.hpp"
#include "colearn/rng.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace colearn {

/// Labelled samples. Inputs are (samples x features) with every value in
/// [0, 1]; targets are the one-hot rows implied by `labels`.
template <typename Scalar>
struct Dataset {
    RowMatrixX<Scalar> inputs;
    std::vector<int> labels;
    Index classes = 0;
    Shape3 sample_shape;
    std::string provenance;
    /// Horizontal flips preserve semantics (off for digits).
    bool flip_allowed = false;

    Index size() const { return inputs.rows(); }

    Distribution<Scalar> target(Index sample) const {
        Distribution<Scalar> q = Distribution<Scalar>::Zero(classes);
        q(labels[static_cast<std::size_t>(sample)]) = Scalar(1);
        return q;
    }

    /// One-hot rows for the given samples.
    RowMatrixX<Scalar> targets(const std::vector<Index>& samples) const {
        RowMatrixX<Scalar> q = RowMatrixX<Scalar>::Zero(static_cast<Index>(samples.size()), classes);
        for (std::size_t r = 0; r < samples.size(); ++r)
            q(static_cast<Index>(r), labels[static_cast<std::size_t>(samples[r])]) = Scalar(1);
        return q;
    }

    RowMatrixX<Scalar> targets() const {
        std::vector<Index> all(static_cast<std::size_t>(size()));
        for (Index i = 0; i < size(); ++i) all[static_cast<std::size_t>(i)] = i;
        return targets(all);
    }

    Dataset subset(const std::vector<Index>& samples) const {
        Dataset d;
        d.inputs.resize(static_cast<Index>(samples.size()), inputs.cols());
        d.labels.reserve(samples.size());
        for (std::size_t r = 0; r < samples.size(); ++r) {
            d.inputs.row(static_cast<Index>(r)) = inputs.row(samples[r]);
            d.labels.push_back(labels[static_cast<std::size_t>(samples[r])]);
        }
        d.classes = classes;
        d.sample_shape = sample_shape;
        d.provenance = provenance;
        d.flip_allowed = flip_allowed;
        return d;
    }

    /// Throws if inputs leave [0, 1] or labels fall outside [0, classes).
    void validate() const {
        if (size() < 1) throw std::invalid_argument("dataset is empty");
        if (static_cast<Index>(labels.size()) != size()) throw ShapeError("dataset: label count != sample count");
        if (inputs.cols() != sample_shape.size()) throw ShapeError("dataset: feature count != sample shape");
        if (inputs.size() > 0 && (inputs.minCoeff() < Scalar(0) || inputs.maxCoeff() > Scalar(1)))
            throw std::invalid_argument("dataset: inputs must lie in [0, 1]");
        for (int y : labels)
            if (y < 0 || y >= classes) throw std::invalid_argument("dataset: label out of range");
    }

    template <typename Other>
    Dataset<Other> cast() const {
        Dataset<Other> d;
        d.inputs = inputs.template cast<Other>();
        d.labels = labels;
        d.classes = classes;
        d.sample_shape = sample_shape;
        d.provenance = provenance;
        d.flip_allowed = flip_allowed;
        return d;
    }
};

// ---- IDX ------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxArray {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> values;
};

/// Reads an unsigned-byte IDX file. Throws FormatError on a magic other than
/// `expected_magic`, LengthError when the payload is shorter than the header.
IdxArray read_idx(const std::filesystem::path& path, std::uint32_t expected_magic);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// MNIST-style image/label pair: images become (n, 1, rows, cols) scaled by
/// 1/255, labels one-hot over 10 classes.
template <typename Scalar>
Dataset<Scalar> load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const IdxArray images = read_idx(images_path, kIdxImagesMagic);
    const IdxArray labels = read_idx(labels_path, kIdxLabelsMagic);
    const Index n = images.dims[0];
    if (labels.dims[0] != images.dims[0])
        throw FormatError("idx: " + std::to_string(images.dims[0]) + " images but " +
                          std::to_string(labels.dims[0]) + " labels");
    Dataset<Scalar> d;
    d.sample_shape = {1, static_cast<Index>(images.dims[1]), static_cast<Index>(images.dims[2])};
    d.classes = 10;
    d.provenance = "idx:" + images_path.filename().string();
    d.flip_allowed = false;
    d.inputs.resize(n, d.sample_shape.size());
    const std::uint8_t* px = images.values.data();
    for (Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = static_cast<Scalar>(px[i]) / Scalar(255);
    d.labels.reserve(static_cast<std::size_t>(n));
    for (std::uint8_t y : labels.values) {
        if (y >= 10) throw FormatError("idx: label " + std::to_string(y) + " outside 0..9");
        d.labels.push_back(y);
    }
    return d;
}

// ---- synthetic ------------------------------------------------------------

/// Unit-norm vertices of a regular simplex (classes points in `dim` dims,
/// dim >= classes - 1), rows = classes.
MatrixX<double> simplex_directions(Index classes, Index dim);

/// Isotropic unit-variance Gaussian clouds centred at separation * simplex
/// directions, then affinely mapped (one global scale) into [0, 1].
template <typename Scalar>
Dataset<Scalar> synth_gaussian(Index classes, Index dim, double separation, Index n_per_class, std::uint64_t seed) {
    if (!(separation > 0)) throw std::invalid_argument("synth_gaussian: separation must be > 0");
    if (classes < 2) throw std::invalid_argument("synth_gaussian: need at least two classes");
    if (dim < classes - 1)
        throw std::invalid_argument("synth_gaussian: dim " + std::to_string(dim) + " cannot embed " +
                                    std::to_string(classes) + " simplex vertices");
    if (n_per_class < 1) throw std::invalid_argument("synth_gaussian: n_per_class must be >= 1");

    const MatrixX<double> means = separation * simplex_directions(classes, dim);
    Rng rng(seed);
    MatrixX<double> x(classes * n_per_class, dim);
    Dataset<Scalar> d;
    d.labels.reserve(static_cast<std::size_t>(x.rows()));
    for (Index c = 0; c < classes; ++c)
        for (Index s = 0; s < n_per_class; ++s) {
            const Index row = c * n_per_class + s;
            for (Index k = 0; k < dim; ++k) x(row, k) = means(c, k) + rng.normal();
            d.labels.push_back(static_cast<int>(c));
        }
    const double lo = x.minCoeff();
    const double hi = x.maxCoeff();
    x = ((x.array() - lo) / (hi - lo)).matrix();
    d.inputs = x.cast<Scalar>();
    d.inputs = d.inputs.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    d.classes = classes;
    d.sample_shape = {dim, 1, 1};
    d.provenance = "synthetic-gaussian";
    d.flip_allowed = false;
    return d;
}

// ---- splitting --------------------------------------------------------------

struct SplitIndices {
    std::vector<Index> train;
    std::vector<Index> test;
};

/// Stratified split. The test set gets round(n * test_fraction) samples, shared
/// across classes by largest remainder, so per-class counts are within one of
/// the exact proportion. Both index lists are sorted.
SplitIndices stratified_split(const std::vector<int>& labels, Index classes, double test_fraction, std::uint64_t seed);

template <typename Scalar>
std::pair<Dataset<Scalar>, Dataset<Scalar>> train_test_split(const Dataset<Scalar>& data, double test_fraction,
                                                             std::uint64_t seed) {
    const SplitIndices s = stratified_split(data.labels, data.classes, test_fraction, seed);
    return {data.subset(s.train), data.subset(s.test)};
}

/// Stratified subsample of `count` samples (whole dataset if count >= size).
template <typename Scalar>
Dataset<Scalar> stratified_subset(const Dataset<Scalar>& data, Index count, std::uint64_t seed) {
    if (count >= data.size()) return data;
    const double fraction = static_cast<double>(count) / static_cast<double>(data.size());
    return data.subset(stratified_split(data.labels, data.classes, fraction, seed).test);
}

// ---- augmentation -----------------------------------------------------------

inline constexpr Index kCropPadding = 4;

/// Shift by (dy, dx) within a zero-padded frame, i.e. pad-4-then-crop at
/// offset (4 + dy, 4 + dx), followed by an optional horizontal flip:
/// out(y, x) = in(y + dy, x' + dx) with x' = W - 1 - x when flipped.
template <typename Scalar>
VectorX<Scalar> shift_and_flip(const Eigen::Ref<const VectorX<Scalar>>& image, const Shape3& shape, Index dy, Index dx,
                               bool flip) {
    if (image.size() != shape.size()) throw ShapeError("augment: image size does not match shape");
    VectorX<Scalar> out = VectorX<Scalar>::Zero(image.size());
    for (Index c = 0; c < shape.channels; ++c)
        for (Index y = 0; y < shape.height; ++y)
            for (Index x = 0; x < shape.width; ++x) {
                const Index sx = (flip ? shape.width - 1 - x : x) + dx;
                const Index sy = y + dy;
                if (sy < 0 || sy >= shape.height || sx < 0 || sx >= shape.width) continue;
                out(c * shape.plane() + y * shape.width + x) = image(c * shape.plane() + sy * shape.width + sx);
            }
    return out;
}

/// Random pad-4 crop plus (when allowed) a horizontal flip with probability 0.5.
template <typename Scalar>
VectorX<Scalar> augment(const Eigen::Ref<const VectorX<Scalar>>& image, const Shape3& shape, Rng& rng,
                        bool flip_allowed) {
    const Index span = 2 * kCropPadding + 1;
    const Index dy = static_cast<Index>(rng.below(span)) - kCropPadding;
    const Index dx = static_cast<Index>(rng.below(span)) - kCropPadding;
    const bool flip = flip_allowed && rng.bernoulli(0.5);
    return shift_and_flip<Scalar>(image, shape, dy, dx, flip);
}

// ---- persistence -----------------------------------------------------------

/// One row per sample: flattened inputs followed by the label index.
template <typename Scalar>
void save_csv(const Dataset<Scalar>& data, const std::filesystem::path& path);

}  // namespace colearn

#include "colearn/csv.hpp"

namespace colearn {

template <typename Scalar>
void save_csv(const Dataset<Scalar>& data, const std::filesystem::path& path) {
    CsvWriter csv;
    std::vector<std::string> header;
    for (Index k = 0; k < data.inputs.cols(); ++k) header.push_back("x" + std::to_string(k));
    header.push_back("label");
    csv.header(header);
    for (Index r = 0; r < data.size(); ++r) {
        auto row = csv.row();
        for (Index k = 0; k < data.inputs.cols(); ++k) row.num(static_cast<double>(data.inputs(r, k)));
        row.num(data.labels[static_cast<std::size_t>(r)]);
    }
    csv.save(path);
}

}  // namespace colearn
