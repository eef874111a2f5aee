#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace siren::nn {

// Dense row-major tensor. The first axis is treated as "rows" and the product
// of the remaining axes as "cols" by the 2-D helpers.
template <typename T>
struct BasicTensor {
    std::vector<int> shape;
    std::vector<T> data;

    BasicTensor() = default;

    explicit BasicTensor(std::vector<int> shape_, T fill = T(0))
        : shape(std::move(shape_)), data(count(shape), fill) {}

    BasicTensor(std::vector<int> shape_, std::vector<T> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        if (data.size() != count(shape)) {
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape product " +
                                        std::to_string(count(shape)));
        }
    }

    static size_t count(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d < 0) {
                throw std::invalid_argument("tensor: negative dimension");
            }
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    int dim(int axis) const {
        if (axis < 0) {
            axis += rank();
        }
        if (axis < 0 || axis >= rank()) {
            throw std::out_of_range("tensor: axis out of range");
        }
        return shape[static_cast<size_t>(axis)];
    }

    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const {
        const int r = rows();
        return r == 0 ? 0 : static_cast<int>(numel() / static_cast<size_t>(r));
    }

    T* row(int i) { return data.data() + static_cast<size_t>(i) * static_cast<size_t>(cols()); }
    const T* row(int i) const {
        return data.data() + static_cast<size_t>(i) * static_cast<size_t>(cols());
    }
    std::span<const T> row_span(int i) const { return {row(i), static_cast<size_t>(cols())}; }

    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    bool same_shape(const BasicTensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (const T& x : data) {
            if (!std::isfinite(x)) {
                return false;
            }
        }
        return true;
    }
};

using Tensor = BasicTensor<float>;

std::string shape_string(const std::vector<int>& shape);

}  // namespace siren::nn
