#pragma once

// Shared fixtures and brute-force reference implementations for the tests.
// The references are deliberately naive scalar loops that share no code with
// the library.

#include "colearn/common.hpp"
#include "colearn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace testing {

using colearn::Index;
using Vec = colearn::VectorX<double>;

inline double ref_log(double p) { return std::log(std::max(p, 1e-12)); }

inline double ref_kl(const Vec& p, const Vec& r) {
    double s = 0;
    for (Index k = 0; k < p.size(); ++k) s += p[k] * (ref_log(p[k]) - ref_log(r[k]));
    return s;
}

inline double ref_entropy(const Vec& p) {
    double s = 0;
    for (Index k = 0; k < p.size(); ++k)
        if (p[k] > 0) s -= p[k] * std::log(p[k]);
    return s;
}

inline double ref_js(const Vec& a, const Vec& b) {
    double s = 0;
    for (Index k = 0; k < a.size(); ++k) {
        const double m = 0.5 * (a[k] + b[k]);
        if (a[k] > 0) s += 0.5 * a[k] * std::log(a[k] / m);
        if (b[k] > 0) s += 0.5 * b[k] * std::log(b[k] / m);
    }
    return s;
}

inline Vec ref_softmax(const Vec& z) {
    double top = z[0];
    for (Index k = 1; k < z.size(); ++k) top = std::max(top, z[k]);
    Vec p(z.size());
    double total = 0;
    for (Index k = 0; k < z.size(); ++k) total += (p[k] = std::exp(z[k] - top));
    for (Index k = 0; k < z.size(); ++k) p[k] /= total;
    return p;
}

inline Vec random_logits(colearn::Rng& rng, Index classes, double scale = 2.0) {
    Vec z(classes);
    for (Index k = 0; k < classes; ++k) z[k] = scale * rng.normal();
    return z;
}

inline Vec random_distribution(colearn::Rng& rng, Index classes) { return ref_softmax(random_logits(rng, classes)); }

inline Vec one_hot(Index classes, Index k) {
    Vec q = Vec::Zero(classes);
    q[k] = 1;
    return q;
}

/// Spearman correlation by the textbook route: rank with averaged ties, then
/// Pearson on the ranks, all with explicit loops.
inline double ref_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (std::size_t k = 0; k < v.size(); ++k) {
                if (v[k] < v[i]) less += 1;
                if (v[k] == v[i]) equal += 1;
            }
            r[i] = less + (equal + 1) / 2;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i] / n;
        my += ry[i] / n;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("colearn_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
