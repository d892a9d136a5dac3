#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace stormnet::detail {

// Additive-recurrence low-discrepancy sequence (R_d): point n has coordinate
// i equal to frac(shift_i + (n+1) / phi_d^(i+1)), where phi_d is the unique
// positive root of x^(d+1) = x + 1. Shifting by a random offset keeps the
// space-filling structure while seeding it.
class RdSequence {
public:
    RdSequence(std::size_t dims, const std::vector<double>& shift) : shift_(shift), alpha_(dims) {
        double phi = 1.5;
        for (int it = 0; it < 64; ++it) phi = std::pow(1.0 + phi, 1.0 / (static_cast<double>(dims) + 1.0));
        double a = 1.0;
        for (std::size_t i = 0; i < dims; ++i) {
            a /= phi;
            alpha_[i] = a;
        }
    }

    std::vector<double> point(std::size_t n) const {
        std::vector<double> x(alpha_.size());
        for (std::size_t i = 0; i < alpha_.size(); ++i) {
            const double v = shift_[i] + static_cast<double>(n + 1) * alpha_[i];
            x[i] = v - std::floor(v);
        }
        return x;
    }

private:
    std::vector<double> shift_;
    std::vector<double> alpha_;
};

} // namespace stormnet::detail
