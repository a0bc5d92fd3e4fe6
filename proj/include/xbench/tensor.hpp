#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "xbench/error.hpp"

namespace xbench {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, "x"));
}

/// Dense row-major float32 array.
class Tensor {
public:
    Tensor() : shape_{1}, data_(1, 0.0f) {}

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (data_.size() != shape_size(shape_))
            throw ConfigError(fmt::format("tensor data length {} does not match shape {}",
                                          data_.size(), shape_string(shape_)));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // 2-D / 3-D accessors assume the matching rank.
    float& at(std::size_t y, std::size_t x) { return data_[y * shape_[1] + x]; }
    float at(std::size_t y, std::size_t x) const { return data_[y * shape_[1] + x]; }
    float& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    /// Same data, new shape of equal size.
    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size())
            throw ConfigError(fmt::format("cannot reshape {} to {}", shape_string(shape_),
                                          shape_string(shape)));
        return Tensor(std::move(shape), data_);
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    double sum() const {
        double s = 0.0;
        for (float v : data_) s += v;
        return s;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw ConfigError("tensor shape must be nonempty");
        for (auto d : shape)
            if (d == 0) throw ConfigError(fmt::format("tensor shape {} has a zero dimension",
                                                      shape_string(shape)));
    }

    Shape shape_;
    std::vector<float> data_;
};

/// Bit-level equality (distinguishes -0.0 / +0.0 and compares NaN payloads).
inline bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::equal(a.values().begin(), a.values().end(), b.values().begin(),
                      [](float x, float y) { return std::bit_cast<unsigned>(x) == std::bit_cast<unsigned>(y); });
}

} // namespace xbench
