#pragma once

// Post-hoc diagnostics over trained ensembles. Everything here is read-only
// with respect to the networks and reduces in a fixed order.

#include "colearn/coupled_loss.hpp"
#include "colearn/data.hpp"
#include "colearn/ensemble.hpp"
#include "colearn/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace colearn {

/// Probabilities of every member on `data`.
template <typename Scalar>
std::vector<RowMatrixX<Scalar>> member_predictions(const Ensemble<Scalar>& ensemble, const Dataset<Scalar>& data,
                                                   WorkerPool* pool = nullptr) {
    std::vector<RowMatrixX<Scalar>> probs(static_cast<std::size_t>(ensemble.size()));
    auto fn = [&](std::size_t i) {
        probs[i] = predict(ensemble.members[i].arch, ensemble.members[i].params, data.inputs);
    };
    if (pool != nullptr)
        pool->parallel_for(probs.size(), fn);
    else
        for (std::size_t i = 0; i < probs.size(); ++i) fn(i);
    return probs;
}

// ---- functional dissimilarity ----------------------------------------------

/// Mean over rows of JS(a.row(s), b.row(s)), accumulated in double.
template <typename Scalar>
double mean_js(const RowMatrixX<Scalar>& a, const RowMatrixX<Scalar>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mean_js: shape mismatch");
    if (a.rows() == 0) return 0.0;
    const RowMatrixX<Scalar> m = Scalar(0.5) * (a + b);
    const auto log_m = detail::clipped_log(m.array());
    const auto ka = (a.array() * (detail::clipped_log(a.array()) - log_m)).rowwise().sum();
    const auto kb = (b.array() * (detail::clipped_log(b.array()) - log_m)).rowwise().sum();
    const VectorX<double> per_sample = (Scalar(0.5) * ka + Scalar(0.5) * kb).template cast<double>();
    return per_sample.sum() / static_cast<double>(a.rows());
}

/// d(i, j) = mean JS between members i and j; symmetric with an exact zero diagonal.
template <typename Scalar>
MatrixX<double> pairwise_dissimilarity(std::span<const RowMatrixX<Scalar>> probs) {
    const auto n = static_cast<Index>(probs.size());
    MatrixX<double> d = MatrixX<double>::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            d(i, j) = d(j, i) =
                mean_js(probs[static_cast<std::size_t>(i)], probs[static_cast<std::size_t>(j)]);
    return d;
}

struct DissimilarityMatrix {
    MatrixX<double> values;
    std::string split;

    double mean_off_diagonal() const {
        const Index n = values.rows();
        if (n < 2) return 0.0;
        return values.sum() / static_cast<double>(n * (n - 1));
    }
};

template <typename Scalar>
DissimilarityMatrix dissimilarity_matrix(const Ensemble<Scalar>& ensemble, const Dataset<Scalar>& data,
                                         std::string split = "test") {
    if (data.size() < 1) throw std::invalid_argument("dissimilarity_matrix: dataset is empty");
    const auto probs = member_predictions(ensemble, data);
    return {pairwise_dissimilarity(std::span<const RowMatrixX<Scalar>>(probs)), std::move(split)};
}

// ---- correlation -------------------------------------------------------------

/// Pearson correlation; empty when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Ranks starting at 1; tied values share their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation with average-rank ties; empty when undefined.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Exact one-sided paired sign-flip permutation test: the fraction of the 2^n
/// sign assignments to `differences` whose mean is >= the observed mean.
/// Small p supports a positive mean difference. Requires n <= 24.
double paired_sign_flip_pvalue(std::span<const double> differences);

// ---- multidimensional scaling -------------------------------------------

struct MdsResult {
    MatrixX<double> coordinates;      // points x dim
    VectorX<double> eigenvalues;      // leading eigenvalues, descending
    std::optional<double> correlation;  // input vs embedded distances
};

/// Classical (Torgerson) scaling: B = -1/2 J D^2 J, coordinates from the
/// leading eigenpairs. An all-zero matrix yields coincident points and no
/// correlation.
MdsResult mds_embed(const MatrixX<double>& distances, Index dim = 2);

/// Distances between every (snapshot, member) pair, from each snapshot's
/// predictions on a common probe set; rows are ordered snapshot-major.
MatrixX<double> trajectory_distances(const std::vector<std::vector<RowMatrixX<double>>>& snapshots);

// ---- confidence ------------------------------------------------------------

inline constexpr int kEntropyBins = 50;
inline constexpr double kConfidenceThreshold = 0.1;  // fraction of ln(classes)

struct EntropyProfile {
    std::vector<int> histogram;  // kEntropyBins bins over [0, ln C]
    double confidence_mass = 0;  // fraction of samples with H < 0.1 ln C
    double mean_entropy = 0;
};

template <typename Scalar>
EntropyProfile entropy_profile(const RowMatrixX<Scalar>& probs) {
    EntropyProfile out;
    out.histogram.assign(kEntropyBins, 0);
    const double max_h = std::log(static_cast<double>(probs.cols()));
    if (probs.rows() == 0) return out;
    long confident = 0;
    double total = 0;
    for (Index s = 0; s < probs.rows(); ++s) {
        const Distribution<Scalar> p = probs.row(s).transpose();
        const double h = std::clamp(static_cast<double>(entropy(p)), 0.0, max_h);
        total += h;
        if (h < kConfidenceThreshold * max_h) ++confident;
        const int bin = max_h > 0 ? static_cast<int>(h / max_h * kEntropyBins) : 0;
        ++out.histogram[static_cast<std::size_t>(std::min(bin, kEntropyBins - 1))];
    }
    out.confidence_mass = static_cast<double>(confident) / static_cast<double>(probs.rows());
    out.mean_entropy = total / static_cast<double>(probs.rows());
    return out;
}

template <typename Scalar>
EntropyProfile entropy_profile(const Member<Scalar>& network, const Dataset<Scalar>& data) {
    return entropy_profile(predict(network.arch, network.params, data.inputs));
}

struct VoteConfidence {
    std::optional<double> spearman;
    std::vector<double> correct_votes;        // members whose argmax is right
    std::vector<double> ensemble_confidence;  // p_ens(y_true | x)
};

template <typename Scalar>
VoteConfidence vote_confidence_correlation(std::span<const RowMatrixX<Scalar>> probs, const std::vector<int>& labels) {
    const RowMatrixX<Scalar> mean = ensemble_mean(probs);
    VoteConfidence out;
    for (std::size_t s = 0; s < labels.size(); ++s) {
        const auto row = static_cast<Index>(s);
        int votes = 0;
        for (const auto& p : probs)
            if (argmax(p.row(row)) == labels[s]) ++votes;
        out.correct_votes.push_back(votes);
        out.ensemble_confidence.push_back(static_cast<double>(mean(row, labels[s])));
    }
    out.spearman = spearman(out.correct_votes, out.ensemble_confidence);
    return out;
}

template <typename Scalar>
VoteConfidence vote_confidence_correlation(const Ensemble<Scalar>& ensemble, const Dataset<Scalar>& data) {
    const auto probs = member_predictions(ensemble, data);
    return vote_confidence_correlation(std::span<const RowMatrixX<Scalar>>(probs), data.labels);
}

// ---- structure -------------------------------------------------------------

struct LayerActivity {
    std::size_t layer = 0;           // index of the ReLU in the architecture
    double inactive_fraction = 0;    // mean over samples of the fraction of zero units
    double mean_activation = 0;      // mean post-ReLU output per unit per sample
};

template <typename Scalar>
std::vector<LayerActivity> activation_sparsity(const Architecture& arch, const NetworkParams<Scalar>& params,
                                               const RowMatrixX<Scalar>& inputs, Index chunk = 512) {
    if (inputs.rows() < 1) throw std::invalid_argument("activation_sparsity: dataset is empty");
    std::vector<LayerActivity> out;
    for (std::size_t l = 0; l < arch.layers.size(); ++l)
        if (arch.layers[l].kind == LayerKind::relu) out.push_back({l, 0.0, 0.0});
    for (Index start = 0; start < inputs.rows(); start += chunk) {
        const Index len = std::min(chunk, inputs.rows() - start);
        const auto cache = forward(arch, params, RowMatrixX<Scalar>(inputs.middleRows(start, len)), false);
        for (auto& rec : out) {
            const RowMatrixX<Scalar>& a = cache.activations[rec.layer + 1];
            const auto units = static_cast<double>(a.cols());
            for (Index r = 0; r < a.rows(); ++r) {
                rec.inactive_fraction += static_cast<double>((a.row(r).array() == Scalar(0)).count()) / units;
                rec.mean_activation += static_cast<double>(a.row(r).template cast<double>().sum()) / units;
            }
        }
    }
    for (auto& rec : out) {
        rec.inactive_fraction /= static_cast<double>(inputs.rows());
        rec.mean_activation /= static_cast<double>(inputs.rows());
    }
    return out;
}

template <typename Scalar>
std::vector<LayerActivity> activation_sparsity(const Member<Scalar>& network, const Dataset<Scalar>& data) {
    return activation_sparsity(network.arch, network.params, data.inputs);
}

/// Population standard deviation of each parametric layer's weights (biases excluded).
template <typename Scalar>
std::vector<double> weight_spread(const NetworkParams<Scalar>& params) {
    std::vector<double> out;
    for (const auto& l : params.layers) {
        if (l.weight.empty()) continue;
        // Shifted by the first weight so that constant tensors give exactly 0.
        const VectorX<double> w = l.weight.data.template cast<double>().array() - static_cast<double>(l.weight.data[0]);
        const double mean = w.mean();
        out.push_back(std::sqrt((w.array() - mean).square().mean()));
    }
    return out;
}

// ---- coupling scaling -------------------------------------------------------

struct ScalingFit {
    double slope = 0;
    double intercept = 0;
    double residual = 0;  // RMS residual in log space
    std::vector<std::pair<double, double>> points;  // (N, beta*)
};

/// Least squares of ln(-beta*) on ln N. Refuses non-negative beta* and fewer
/// than three points.
ScalingFit fit_beta_scaling(const std::vector<std::pair<double, double>>& points);

// ---- per-sample agreement ------------------------------------------------

struct SampleCube {
    std::vector<std::array<double, 3>> points;  // p_1(y), p_2(y), p_ens(y) at the true label
    std::vector<bool> ensemble_correct;
    double wall_mass = 0;  // fraction with min(p_1, p_2) < 0.1 and max(p_1, p_2) > 0.9
};

template <typename Scalar>
SampleCube sample_agreement_cube(std::span<const RowMatrixX<Scalar>> probs, const std::vector<int>& labels) {
    if (probs.size() != 2) throw std::invalid_argument("sample_agreement_cube needs exactly two networks");
    const RowMatrixX<Scalar> mean = ensemble_mean(probs);
    SampleCube out;
    long walls = 0;
    for (std::size_t s = 0; s < labels.size(); ++s) {
        const auto r = static_cast<Index>(s);
        const double p1 = static_cast<double>(probs[0](r, labels[s]));
        const double p2 = static_cast<double>(probs[1](r, labels[s]));
        out.points.push_back({p1, p2, static_cast<double>(mean(r, labels[s]))});
        out.ensemble_correct.push_back(argmax(mean.row(r)) == labels[s]);
        if (std::min(p1, p2) < 0.1 && std::max(p1, p2) > 0.9) ++walls;
    }
    if (!labels.empty()) out.wall_mass = static_cast<double>(walls) / static_cast<double>(labels.size());
    return out;
}

template <typename Scalar>
SampleCube sample_agreement_cube(const Ensemble<Scalar>& ensemble, const Dataset<Scalar>& data) {
    if (ensemble.size() != 2) throw std::invalid_argument("sample_agreement_cube needs exactly two networks");
    const auto probs = member_predictions(ensemble, data);
    return sample_agreement_cube(std::span<const RowMatrixX<Scalar>>(probs), data.labels);
}

}  // namespace colearn
