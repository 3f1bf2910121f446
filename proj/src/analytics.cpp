#include "colearn/analytics.hpp"

#include <Eigen/Eigenvalues>

namespace colearn {

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
    if (x.size() < 2) return std::nullopt;
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
    }
    if (sxx <= 0 || syy <= 0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t start = 0; start < order.size();) {
        std::size_t end = start + 1;
        while (end < order.size() && values[order[end]] == values[order[start]]) ++end;
        const double rank = 0.5 * static_cast<double>(start + 1 + end);  // mean of start+1 .. end
        for (std::size_t k = start; k < end; ++k) ranks[order[k]] = rank;
        start = end;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

double paired_sign_flip_pvalue(std::span<const double> differences) {
    const std::size_t n = differences.size();
    if (n == 0) throw std::invalid_argument("paired_sign_flip_pvalue: no differences");
    if (n > 24) throw std::invalid_argument("paired_sign_flip_pvalue: exact enumeration limited to 24 pairs");
    const double observed = std::accumulate(differences.begin(), differences.end(), 0.0);
    // Sums compared with a relative slack so that assignments tying the
    // observed sum are not lost to rounding.
    double scale = 0;
    for (double d : differences) scale += std::abs(d);
    const double slack = 1e-12 * scale;
    std::uint64_t at_least = 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        double sum = 0;
        for (std::size_t k = 0; k < n; ++k) sum += (mask >> k) & 1U ? -differences[k] : differences[k];
        if (sum >= observed - slack) ++at_least;
    }
    return static_cast<double>(at_least) / static_cast<double>(total);
}

MdsResult mds_embed(const MatrixX<double>& distances, Index dim) {
    if (distances.rows() != distances.cols()) throw ShapeError("mds_embed: distance matrix must be square");
    if (dim < 1) throw std::invalid_argument("mds_embed: dim must be >= 1");
    if (!distances.allFinite()) throw std::invalid_argument("mds_embed: non-finite distances");
    const Index n = distances.rows();
    MdsResult out;
    out.coordinates = MatrixX<double>::Zero(n, dim);
    out.eigenvalues = VectorX<double>::Zero(std::min(dim, n));
    if (n == 0 || (distances.array() == 0.0).all()) return out;

    const MatrixX<double> centering =
        MatrixX<double>::Identity(n, n) - MatrixX<double>::Constant(n, n, 1.0 / static_cast<double>(n));
    const MatrixX<double> gram = -0.5 * centering * distances.array().square().matrix() * centering;
    const Eigen::SelfAdjointEigenSolver<MatrixX<double>> solver(gram);
    // Eigenvalues come out ascending; take the largest `dim`.
    for (Index k = 0; k < std::min(dim, n); ++k) {
        const Index src = n - 1 - k;
        const double lambda = solver.eigenvalues()(src);
        out.eigenvalues(k) = lambda;
        if (lambda > 0) out.coordinates.col(k) = solver.eigenvectors().col(src) * std::sqrt(lambda);
    }

    std::vector<double> given, embedded;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            given.push_back(distances(i, j));
            embedded.push_back((out.coordinates.row(i) - out.coordinates.row(j)).norm());
        }
    out.correlation = pearson(given, embedded);
    return out;
}

MatrixX<double> trajectory_distances(const std::vector<std::vector<RowMatrixX<double>>>& snapshots) {
    std::vector<const RowMatrixX<double>*> points;
    for (const auto& snap : snapshots)
        for (const auto& p : snap) points.push_back(&p);
    const auto n = static_cast<Index>(points.size());
    MatrixX<double> d = MatrixX<double>::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            d(i, j) = d(j, i) = mean_js(*points[static_cast<std::size_t>(i)], *points[static_cast<std::size_t>(j)]);
    return d;
}

ScalingFit fit_beta_scaling(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 3)
        throw std::invalid_argument("fit_beta_scaling: need at least 3 (N, beta*) points, got " +
                                    std::to_string(points.size()));
    for (const auto& [size, beta] : points) {
        if (!(beta < 0))
            throw std::invalid_argument("fit_beta_scaling: optimal coupling for N=" + format_number(size) +
                                        " is " + format_number(beta) + "; the fit needs beta* < 0");
        if (!(size > 0)) throw std::invalid_argument("fit_beta_scaling: ensemble sizes must be positive");
    }
    const auto m = static_cast<double>(points.size());
    double sx = 0, sy = 0;
    for (const auto& [size, beta] : points) {
        sx += std::log(size);
        sy += std::log(-beta);
    }
    const double mx = sx / m;
    const double my = sy / m;
    double sxx = 0, sxy = 0;
    for (const auto& [size, beta] : points) {
        sxx += (std::log(size) - mx) * (std::log(size) - mx);
        sxy += (std::log(size) - mx) * (std::log(-beta) - my);
    }
    if (sxx <= 0) throw std::invalid_argument("fit_beta_scaling: all points share one ensemble size");
    ScalingFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss = 0;
    for (const auto& [size, beta] : points) {
        const double r = std::log(-beta) - (fit.intercept + fit.slope * std::log(size));
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / m);
    fit.points = points;
    return fit;
}

}  // namespace colearn
