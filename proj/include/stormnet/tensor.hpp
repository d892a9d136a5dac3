#pragma once

#include "stormnet/errors.hpp"

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace stormnet {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

// Dense N-dimensional array of doubles, row-major (last index fastest).
// Plain value type: copyable, movable, no shared state.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(Shape shape, double fill) { return Tensor(std::move(shape), fill); }
    static Tensor from_values(Shape shape, std::vector<double> values) {
        return Tensor(std::move(shape), std::move(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    // 3-D accessors for (channel, row, col) tensors; bounds unchecked.
    double& at3(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at3(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double& at2(std::size_t y, std::size_t x) { return data_[y * shape_[1] + x]; }
    double at2(std::size_t y, std::size_t x) const { return data_[y * shape_[1] + x]; }

    // Same data, new shape; element counts must agree.
    Tensor reshaped(Shape shape) const;

    void fill(double value);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Sum over a[i]*b[i] in ascending flat-index order. Shapes may differ as long
// as the element counts match.
double dot(const Tensor& a, const Tensor& b);

std::size_t shape_product(const Shape& shape);

// xoshiro256** seeded via splitmix64. Fixed algorithm so identical seeds give
// identical streams on every platform; doubles take the high 53 bits.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64();

    // Uniform on [0, 1).
    double next_double();
    // Uniform on [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer on [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n);
    // Standard normal via polar Box-Muller (second value of each pair cached).
    double normal();

    // Independent child stream; deterministic in (seed, stream).
    Rng split(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

// Elements i.i.d. uniform on [-L, L] with L = sqrt(6 / (fan_in + fan_out)).
Tensor init_uniform_scaled(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

} // namespace stormnet
