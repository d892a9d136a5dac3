#pragma once

#include "stormnet/tensor.hpp"

#include <utility>
#include <vector>

namespace stormnet {

double normal_cdf(double z);
double normal_pdf(double z);

struct GpHyperparams {
    std::vector<double> length_scales; // per dimension, in normalized [0,1] units
    double signal_var = 1.0;
    double noise_var = 1e-12; // noise std floored at 1e-6
};

// Gaussian-process regression on [0,1]^d with a squared-exponential ARD kernel.
// Observed losses are centered to zero mean and (for n > 1) scaled to unit
// variance before fitting; posteriors are reported on the original scale.
class GpModel {
public:
    // Kernel hyperparameters chosen by maximizing the marginal likelihood with
    // a multi-start Nelder-Mead search (deterministic).
    static GpModel fit(const std::vector<std::vector<double>>& points, const std::vector<double>& losses);
    static GpModel with_hyperparams(const std::vector<std::vector<double>>& points,
                                    const std::vector<double>& losses, GpHyperparams hypers);

    // Posterior (mean, variance) of the latent loss at x in [0,1]^d, on the
    // original loss scale; variance clamped at 0.
    std::pair<double, double> posterior(const std::vector<double>& x) const;

    std::size_t dim() const { return dim_; }
    std::size_t observation_count() const { return points_.size(); }
    const GpHyperparams& hyperparams() const { return hypers_; }
    double loss_mean() const { return y_mean_; }
    double loss_scale() const { return y_scale_; }
    // Smallest observed loss on the original scale.
    double min_observed_loss() const;

private:
    GpModel() = default;
    void factorize();
    std::pair<double, double> posterior_standardized(const std::vector<double>& x) const;
    friend double expected_improvement(const GpModel&, const std::vector<double>&, double);

    std::size_t dim_ = 0;
    std::vector<std::vector<double>> points_;
    std::vector<double> y_std_; // standardized losses
    double y_mean_ = 0.0;
    double y_scale_ = 1.0;
    GpHyperparams hypers_;
    std::vector<double> chol_;  // lower Cholesky factor of K, row-major n x n
    std::vector<double> alpha_; // K^-1 y_std
};

// EI for minimization: (best-mu)*Phi(z) + sigma*phi(z) with z = (best-mu)/sigma,
// and max(0, best-mu) once sigma degenerates to 0. Never negative.
double expected_improvement_value(double mean, double sigma, double best_loss);
double expected_improvement(const GpModel& model, const std::vector<double>& x, double best_loss);

} // namespace stormnet
