#pragma once

// Independent test-side oracles. These deliberately avoid the library's
// optimized paths: convolution is a direct quadruple loop, shapes are plain
// integer arithmetic, EI is Monte Carlo.

#include "stormnet/data.hpp"
#include "stormnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

namespace oracles {

// out[f,y,x] = bias[f] + sum_{c,a,b} filter[f,c,a,b] * input[c,y+a,x+b]
inline stormnet::Tensor naive_conv_forward(const stormnet::Tensor& input, const stormnet::Tensor& filters,
                                           const stormnet::Tensor& biases) {
    const std::size_t p = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t k = filters.extent(0), fh = filters.extent(2), fw = filters.extent(3);
    const std::size_t oh = h - fh + 1, ow = w - fw + 1;
    stormnet::Tensor out({k, oh, ow});
    for (std::size_t f = 0; f < k; ++f) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = biases[f];
                for (std::size_t c = 0; c < p; ++c) {
                    for (std::size_t a = 0; a < fh; ++a) {
                        for (std::size_t b = 0; b < fw; ++b) {
                            acc += filters[((f * p + c) * fh + a) * fw + b] * input.at3(c, y + a, x + b);
                        }
                    }
                }
                out.at3(f, y, x) = acc;
            }
        }
    }
    return out;
}

struct ShapeChain {
    std::vector<std::vector<std::size_t>> dims; // after conv1, pool1, conv2, pool2
    std::size_t flatten = 0;
    std::size_t fc1 = 0;
    std::size_t fc2 = 0;
};

// Valid conv / floor pool arithmetic straight from the architecture numbers.
inline ShapeChain shape_rule_chain(std::size_t p, std::size_t m, std::size_t n, std::size_t conv,
                                   std::size_t k1, std::size_t pool1, std::size_t k2, std::size_t pool2,
                                   std::size_t fc1) {
    ShapeChain chain;
    std::size_t h = m - conv + 1, w = n - conv + 1;
    chain.dims.push_back({k1, h, w});
    h /= pool1;
    w /= pool1;
    chain.dims.push_back({k1, h, w});
    h = h - conv + 1;
    w = w - conv + 1;
    chain.dims.push_back({k2, h, w});
    h /= pool2;
    w /= pool2;
    chain.dims.push_back({k2, h, w});
    chain.flatten = k2 * h * w;
    chain.fc1 = fc1;
    chain.fc2 = 2;
    (void)p;
    return chain;
}

// Branin-Hoo on the unit square (domain mapped from [-5,10] x [0,15]);
// global minimum 0.397887.
inline double branin_unit(double u1, double u2) {
    const double x1 = -5.0 + 15.0 * u1;
    const double x2 = 15.0 * u2;
    const double a = 1.0, b = 5.1 / (4.0 * std::numbers::pi * std::numbers::pi);
    const double c = 5.0 / std::numbers::pi, r = 6.0, s = 10.0, t = 1.0 / (8.0 * std::numbers::pi);
    const double inner = x2 - b * x1 * x1 + c * x1 - r;
    return a * inner * inner + s * (1.0 - t) * std::cos(x1) + s;
}

// mean of max(0, best - y) over draws y ~ N(mean, sigma^2)
inline double mc_expected_improvement(double mean, double sigma, double best, std::size_t draws,
                                      stormnet::Rng& rng) {
    double acc = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        const double y = mean + sigma * rng.normal();
        acc += std::max(0.0, best - y);
    }
    return acc / static_cast<double>(draws);
}

// Best achievable accuracy for a threshold on one per-sample scalar feature
// (min, max or mean of one channel, either polarity). The "can a single pixel
// statistic solve it?" baseline.
inline double threshold_baseline_accuracy(const stormnet::PatchDataset& ds) {
    const std::size_t p = ds.dims[0], per = ds.dims[1] * ds.dims[2];
    const std::size_t n = ds.records.size();
    double best_acc = 0.0;
    for (std::size_t c = 0; c < p; ++c) {
        for (int feature = 0; feature < 3; ++feature) {
            std::vector<std::pair<double, bool>> scored(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* v = ds.records[i].patch.data() + c * per;
                double s;
                if (feature == 0) {
                    s = *std::min_element(v, v + per);
                } else if (feature == 1) {
                    s = *std::max_element(v, v + per);
                } else {
                    s = 0.0;
                    for (std::size_t j = 0; j < per; ++j) s += v[j];
                    s /= static_cast<double>(per);
                }
                scored[i] = {s, ds.records[i].positive};
            }
            std::sort(scored.begin(), scored.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            // sweep thresholds between strictly distinct consecutive scores; a
            // cut inside a run of equal values is not a realizable threshold
            std::size_t pos_total = 0;
            for (const auto& [s, label] : scored) pos_total += label ? 1 : 0;
            std::size_t pos_below = 0, neg_below = 0;
            for (std::size_t cut = 0; cut <= n; ++cut) {
                const bool realizable = cut == 0 || cut == n || scored[cut].first > scored[cut - 1].first;
                if (realizable) {
                    // predict positive below the cut
                    const std::size_t correct_below_pos = pos_below + (n - cut - (pos_total - pos_below));
                    // predict positive above the cut
                    const std::size_t correct_above_pos = (pos_total - pos_below) + neg_below;
                    best_acc = std::max({best_acc,
                                         static_cast<double>(correct_below_pos) / static_cast<double>(n),
                                         static_cast<double>(correct_above_pos) / static_cast<double>(n)});
                }
                if (cut < n) (scored[cut].second ? pos_below : neg_below) += 1;
            }
        }
    }
    return best_acc;
}

} // namespace oracles
