#pragma once

// Co-learning objective for network i of an ensemble:
//
//   L_i(x) = KL(q || p_i) + sum_{j != i} beta_ij * KL(p_j || p_i)
//
// Peer predictions p_j enter as constants. All logs are natural and clip
// their argument at kProbabilityFloor.

#include "colearn/common.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace colearn {

template <typename Scalar>
class CouplingMatrix {
public:
    CouplingMatrix() = default;

    explicit CouplingMatrix(MatrixX<Scalar> beta) : beta_(std::move(beta)) {
        if (beta_.rows() != beta_.cols()) throw ShapeError("coupling matrix must be square");
        if (!beta_.allFinite()) throw std::invalid_argument("coupling matrix has non-finite entries");
        for (Index i = 0; i < beta_.rows(); ++i)
            if (beta_(i, i) != Scalar(0)) throw std::invalid_argument("coupling matrix diagonal must be zero");
    }

    /// All-to-all coupling with beta_ij = beta_bar / n.
    static CouplingMatrix uniform(double beta_bar, Index n) { return constant(beta_bar / static_cast<double>(n), n); }

    /// All-to-all coupling with beta_ij = beta.
    static CouplingMatrix constant(double beta, Index n) {
        MatrixX<Scalar> b = MatrixX<Scalar>::Constant(n, n, static_cast<Scalar>(beta));
        b.diagonal().setZero();
        return CouplingMatrix(std::move(b));
    }

    Index size() const { return beta_.rows(); }
    Scalar operator()(Index i, Index j) const { return beta_(i, j); }
    const MatrixX<Scalar>& matrix() const { return beta_; }
    Scalar row_sum(Index i) const { return beta_.row(i).sum(); }
    bool is_zero() const { return (beta_.array() == Scalar(0)).all(); }

    /// Coupling restricted to the listed members (in the given order).
    CouplingMatrix select(const std::vector<Index>& members) const {
        MatrixX<Scalar> b(members.size(), members.size());
        for (std::size_t r = 0; r < members.size(); ++r)
            for (std::size_t c = 0; c < members.size(); ++c) b(r, c) = beta_(members[r], members[c]);
        return CouplingMatrix(std::move(b));
    }

private:
    MatrixX<Scalar> beta_;
};

namespace detail {

template <typename Derived>
auto clipped_log(const Eigen::ArrayBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    return p.max(static_cast<Scalar>(kProbabilityFloor)).log();
}

inline void check_same_size(Index a, Index b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
}

template <typename Scalar>
void check_coupled_args(Index i, std::span<const Distribution<Scalar>> preds, const Distribution<Scalar>& target,
                        const CouplingMatrix<Scalar>& coupling) {
    const auto n = static_cast<Index>(preds.size());
    if (i < 0 || i >= n) throw ContractError("network index " + std::to_string(i) + " out of range");
    if (coupling.size() != n)
        throw ShapeError("coupling matrix is " + std::to_string(coupling.size()) + "x" +
                         std::to_string(coupling.size()) + " but there are " + std::to_string(n) + " predictions");
    for (const auto& p : preds) check_same_size(p.size(), target.size(), "coupled loss");
}

}  // namespace detail

/// KL(p || r) in nats.
template <typename Scalar>
Scalar kl_divergence(const Distribution<Scalar>& p, const Distribution<Scalar>& r) {
    detail::check_same_size(p.size(), r.size(), "kl_divergence");
    return (p.array() * (detail::clipped_log(p.array()) - detail::clipped_log(r.array()))).sum();
}

/// Jensen-Shannon divergence, symmetric and bounded by ln 2.
template <typename Scalar>
Scalar js_divergence(const Distribution<Scalar>& p1, const Distribution<Scalar>& p2) {
    detail::check_same_size(p1.size(), p2.size(), "js_divergence");
    const Distribution<Scalar> m = Scalar(0.5) * (p1 + p2);
    return Scalar(0.5) * kl_divergence(p1, m) + Scalar(0.5) * kl_divergence(p2, m);
}

/// Shannon entropy; zero-probability entries contribute nothing.
template <typename Scalar>
Scalar entropy(const Distribution<Scalar>& p) {
    return -(p.array() * detail::clipped_log(p.array())).sum();
}

template <typename Scalar>
Scalar coupled_loss(Index i, std::span<const Distribution<Scalar>> preds, const Distribution<Scalar>& target,
                    const CouplingMatrix<Scalar>& coupling) {
    detail::check_coupled_args(i, preds, target, coupling);
    Scalar loss = kl_divergence(target, preds[i]);
    for (Index j = 0; j < coupling.size(); ++j)
        if (j != i) loss += coupling(i, j) * kl_divergence(preds[j], preds[i]);
    return loss;
}

/// The form that drops the target's entropy:
///   -sum_y (q log p_i + sum_j beta_ij p_j log p_i) - sum_j beta_ij H[p_j].
/// reduced_loss - coupled_loss == H[q].
template <typename Scalar>
Scalar reduced_loss(Index i, std::span<const Distribution<Scalar>> preds, const Distribution<Scalar>& target,
                    const CouplingMatrix<Scalar>& coupling) {
    detail::check_coupled_args(i, preds, target, coupling);
    const auto log_pi = detail::clipped_log(preds[i].array());
    Scalar loss = -(target.array() * log_pi).sum();
    for (Index j = 0; j < coupling.size(); ++j) {
        if (j == i) continue;
        loss -= coupling(i, j) * (preds[j].array() * log_pi).sum();
        loss -= coupling(i, j) * entropy(preds[j]);
    }
    return loss;
}

namespace detail {

/// Gradient when some entries of p_i sit below the probability floor. There
/// the clipped log is constant, so those entries drop out of the sum:
/// g = (sum_{k in U} w_k) p_i - w_U with w = q + sum_j beta_ij p_j and U the
/// unclipped entries. Off the floor this is the closed form.
template <typename DerivedP, typename DerivedW>
auto floored_grad(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedW>& w) {
    using Scalar = typename DerivedP::Scalar;
    const auto live = (p.array() >= static_cast<Scalar>(kProbabilityFloor)).template cast<Scalar>();
    const auto w_live = (w.array() * live).matrix().eval();
    return (w_live.sum() * p - w_live).eval();
}

}  // namespace detail

/// d L_i / d logits_i = (1 + sum_j beta_ij) p_i - q - sum_j beta_ij p_j while
/// every entry of p_i is above the probability floor.
template <typename Scalar>
Distribution<Scalar> coupled_grad_logits(Index i, std::span<const Distribution<Scalar>> preds,
                                         const Distribution<Scalar>& target,
                                         const CouplingMatrix<Scalar>& coupling) {
    detail::check_coupled_args(i, preds, target, coupling);
    Distribution<Scalar> g = (Scalar(1) + coupling.row_sum(i)) * preds[i] - target;
    for (Index j = 0; j < coupling.size(); ++j)
        if (j != i && coupling(i, j) != Scalar(0)) g -= coupling(i, j) * preds[j];
    if ((preds[i].array() < static_cast<Scalar>(kProbabilityFloor)).any()) {
        Distribution<Scalar> w = target;
        for (Index j = 0; j < coupling.size(); ++j)
            if (j != i && coupling(i, j) != Scalar(0)) w += coupling(i, j) * preds[j];
        g = detail::floored_grad(preds[i], w);
    }
    return g;
}

/// Batch form used by the trainer. probs[j] is (batch x classes) for network j.
template <typename Scalar>
struct BatchLoss {
    Scalar loss = 0;        // mean coupled loss
    Scalar task_term = 0;   // mean KL(q || p_i)
    RowMatrixX<Scalar> grad_logits;  // already divided by the batch size
};

template <typename Scalar>
BatchLoss<Scalar> coupled_batch_loss(Index i, std::span<const RowMatrixX<Scalar>> probs,
                                     const RowMatrixX<Scalar>& targets, const CouplingMatrix<Scalar>& coupling) {
    const auto n = static_cast<Index>(probs.size());
    if (i < 0 || i >= n) throw ContractError("network index " + std::to_string(i) + " out of range");
    if (coupling.size() != n) throw ShapeError("coupling matrix size does not match ensemble");
    for (const auto& p : probs)
        if (p.rows() != targets.rows() || p.cols() != targets.cols())
            throw ShapeError("coupled_batch_loss: prediction and target shapes differ");

    const Index batch = targets.rows();
    const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
    const RowMatrixX<Scalar>& pi = probs[static_cast<std::size_t>(i)];
    const auto log_pi = detail::clipped_log(pi.array());

    BatchLoss<Scalar> out;
    const auto task = (targets.array() * (detail::clipped_log(targets.array()) - log_pi)).rowwise().sum();
    out.task_term = task.sum() * inv_batch;
    Scalar total = task.sum();
    out.grad_logits = (Scalar(1) + coupling.row_sum(i)) * pi - targets;
    for (Index j = 0; j < n; ++j) {
        if (j == i || coupling(i, j) == Scalar(0)) continue;
        const RowMatrixX<Scalar>& pj = probs[static_cast<std::size_t>(j)];
        total += coupling(i, j) * (pj.array() * (detail::clipped_log(pj.array()) - log_pi)).sum();
        out.grad_logits -= coupling(i, j) * pj;
    }
    for (Index r = 0; r < batch; ++r) {
        if (!(pi.row(r).array() < static_cast<Scalar>(kProbabilityFloor)).any()) continue;
        RowMatrixX<Scalar> w = targets.row(r);
        for (Index j = 0; j < n; ++j)
            if (j != i && coupling(i, j) != Scalar(0)) w += coupling(i, j) * probs[static_cast<std::size_t>(j)].row(r);
        out.grad_logits.row(r) = detail::floored_grad(pi.row(r), w);
    }
    out.loss = total * inv_batch;
    out.grad_logits *= inv_batch;
    return out;
}

}  // namespace colearn
