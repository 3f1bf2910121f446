#pragma once

#include "colearn/common.hpp"

#include <cstring>
#include <functional>
#include <numeric>
#include <vector>

namespace colearn {

/// Dense n-dimensional array stored as a flat row-major vector.
template <typename Scalar>
struct Tensor {
    std::vector<Index> shape;
    VectorX<Scalar> data;

    Tensor() = default;
    explicit Tensor(std::vector<Index> dims) : shape(std::move(dims)) {
        data = VectorX<Scalar>::Zero(element_count(shape));
    }

    static Index element_count(const std::vector<Index>& dims) {
        return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
    }

    Index size() const { return data.size(); }
    bool empty() const { return shape.empty(); }

    /// Row-major 2-D view: first axis by the product of the remaining axes.
    Eigen::Map<RowMatrixX<Scalar>> matrix() {
        const Index rows = shape.empty() ? 0 : shape.front();
        return {data.data(), rows, rows == 0 ? 0 : size() / rows};
    }
    Eigen::Map<const RowMatrixX<Scalar>> matrix() const {
        const Index rows = shape.empty() ? 0 : shape.front();
        return {data.data(), rows, rows == 0 ? 0 : size() / rows};
    }

    bool all_finite() const { return data.allFinite(); }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> t;
        t.shape = shape;
        t.data = data.template cast<Other>();
        return t;
    }

    friend bool bitwise_equal(const Tensor& a, const Tensor& b) {
        return a.shape == b.shape && a.size() == b.size() &&
               (a.size() == 0 ||
                std::memcmp(a.data.data(), b.data.data(), sizeof(Scalar) * a.size()) == 0);
    }
};

}  // namespace colearn
