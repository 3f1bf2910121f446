#pragma once

#include "colearn/coupled_loss.hpp"
#include "colearn/nn.hpp"

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace colearn {

/// One network of an ensemble plus its optimizer state.
template <typename Scalar>
struct Member {
    Architecture arch;
    NetworkParams<Scalar> params;
    NetworkParams<Scalar> velocity;  // momentum buffers, same shapes as params
    std::uint64_t seed = 0;
    bool trainable = true;

    static Member create(const Architecture& arch, std::uint64_t seed) {
        Member m;
        m.arch = arch;
        m.params = xavier_init<Scalar>(arch, seed);
        m.velocity = m.params.zeros_like();
        m.seed = seed;
        return m;
    }
};

template <typename Scalar>
struct Ensemble {
    std::vector<Member<Scalar>> members;
    CouplingMatrix<Scalar> coupling;
    std::uint64_t seed = 0;
    std::string id;

    Index size() const { return static_cast<Index>(members.size()); }

    Index classes() const { return members.empty() ? 0 : members.front().arch.classes(); }

    /// Throws if members disagree on class count or the coupling does not fit.
    void validate() const {
        if (members.empty()) throw std::invalid_argument("ensemble has no members");
        const Index c = classes();
        for (const auto& m : members)
            if (m.arch.classes() != c) throw ShapeError("ensemble members disagree on class count");
        if (coupling.size() != size())
            throw ShapeError("coupling is " + std::to_string(coupling.size()) + "x" +
                             std::to_string(coupling.size()) + " for an ensemble of " + std::to_string(size()));
    }

    /// N identically shaped networks with the given per-member seeds.
    static Ensemble create(const Architecture& arch, const std::vector<std::uint64_t>& seeds,
                           CouplingMatrix<Scalar> coupling) {
        Ensemble e;
        for (auto s : seeds) e.members.push_back(Member<Scalar>::create(arch, s));
        e.coupling = std::move(coupling);
        e.validate();
        return e;
    }
};

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived>& v) {
    Index best = 0;
    for (Index k = 1; k < v.size(); ++k)
        if (v(k) > v(best)) best = k;
    return best;
}

namespace detail {

template <typename Scalar>
void check_combiner_input(std::span<const Distribution<Scalar>> preds) {
    if (preds.empty()) throw std::invalid_argument("cannot combine an empty set of predictions");
    for (const auto& p : preds)
        if (p.size() != preds.front().size()) throw ShapeError("combiner: predictions differ in class count");
}

}  // namespace detail

/// Arithmetic mean of member distributions.
template <typename Scalar>
Distribution<Scalar> combine_arithmetic(std::span<const Distribution<Scalar>> preds) {
    detail::check_combiner_input(preds);
    Distribution<Scalar> sum = Distribution<Scalar>::Zero(preds.front().size());
    for (const auto& p : preds) sum += p;
    return sum / static_cast<Scalar>(preds.size());
}

/// Normalized geometric mean, prod_i p_i(y)^(1/N) / Z, computed in log space.
template <typename Scalar>
Distribution<Scalar> combine_geometric(std::span<const Distribution<Scalar>> preds) {
    detail::check_combiner_input(preds);
    VectorX<Scalar> log_sum = VectorX<Scalar>::Zero(preds.front().size());
    for (const auto& p : preds) log_sum += detail::clipped_log(p.array()).matrix();
    VectorX<Scalar> mean_log = log_sum / static_cast<Scalar>(preds.size());
    mean_log.array() -= mean_log.maxCoeff();
    Distribution<Scalar> out = mean_log.array().exp().matrix();
    return out / out.sum();
}

struct Vote {
    Index winner = 0;
    std::vector<int> votes;  // per class
};

/// Plurality of member argmaxes. Ties go to the tied class with the largest
/// summed probability, then to the lowest class index.
template <typename Scalar>
Vote combine_majority(std::span<const Distribution<Scalar>> preds) {
    detail::check_combiner_input(preds);
    const Index classes = preds.front().size();
    Vote v;
    v.votes.assign(static_cast<std::size_t>(classes), 0);
    Distribution<Scalar> mass = Distribution<Scalar>::Zero(classes);
    for (const auto& p : preds) {
        ++v.votes[static_cast<std::size_t>(argmax(p))];
        mass += p;
    }
    const int top = *std::max_element(v.votes.begin(), v.votes.end());
    bool found = false;
    for (Index k = 0; k < classes; ++k) {
        if (v.votes[static_cast<std::size_t>(k)] != top) continue;
        if (!found || mass(k) > mass(v.winner)) v.winner = k;
        found = true;
    }
    return v;
}

enum class Combiner { arithmetic, geometric, majority };

std::string to_string(Combiner c);
Combiner combiner_from_string(const std::string& name);
inline constexpr Combiner kAllCombiners[] = {Combiner::arithmetic, Combiner::geometric, Combiner::majority};

/// Predicted class per sample for the ensemble under a combiner. probs[i] is
/// (samples x classes) for member i.
template <typename Scalar>
std::vector<Index> ensemble_predictions(std::span<const RowMatrixX<Scalar>> probs, Combiner combiner) {
    if (probs.empty()) throw std::invalid_argument("ensemble_predictions: no members");
    const Index n = probs.front().rows();
    const Index classes = probs.front().cols();
    std::vector<Index> out(static_cast<std::size_t>(n));
    std::vector<Distribution<Scalar>> row(probs.size(), Distribution<Scalar>(classes));
    for (Index s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < probs.size(); ++i) row[i] = probs[i].row(s).transpose();
        const std::span<const Distribution<Scalar>> view(row);
        switch (combiner) {
            case Combiner::arithmetic:
                out[static_cast<std::size_t>(s)] = argmax(combine_arithmetic(view));
                break;
            case Combiner::geometric:
                out[static_cast<std::size_t>(s)] = argmax(combine_geometric(view));
                break;
            case Combiner::majority:
                out[static_cast<std::size_t>(s)] = combine_majority(view).winner;
                break;
        }
    }
    return out;
}

/// Arithmetic-mean ensemble distribution per sample.
template <typename Scalar>
RowMatrixX<Scalar> ensemble_mean(std::span<const RowMatrixX<Scalar>> probs) {
    if (probs.empty()) throw std::invalid_argument("ensemble_mean: no members");
    RowMatrixX<Scalar> sum = RowMatrixX<Scalar>::Zero(probs.front().rows(), probs.front().cols());
    for (const auto& p : probs) sum += p;
    return sum / static_cast<Scalar>(probs.size());
}

/// Fraction of samples whose prediction equals the label. `predictor(s)` may
/// return either a class index or a distribution (scored by argmax).
template <typename Predictor>
double accuracy(Predictor&& predictor, const std::vector<int>& labels) {
    if (labels.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < labels.size(); ++s) {
        const auto pred = predictor(static_cast<Index>(s));
        Index cls;
        if constexpr (std::is_integral_v<std::decay_t<decltype(pred)>>)
            cls = static_cast<Index>(pred);
        else
            cls = argmax(pred);
        if (cls == labels[s]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Accuracy of a (samples x classes) probability matrix.
template <typename Scalar>
double accuracy_from_probs(const RowMatrixX<Scalar>& probs, const std::vector<int>& labels) {
    return accuracy([&](Index s) { return argmax(probs.row(s)); }, labels);
}

inline double accuracy_from_classes(const std::vector<Index>& predictions, const std::vector<int>& labels) {
    return accuracy([&](Index s) { return predictions[static_cast<std::size_t>(s)]; }, labels);
}

}  // namespace colearn
