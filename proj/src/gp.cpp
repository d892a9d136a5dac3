#include "stormnet/gp.hpp"

#include "stormnet/detail/quasirandom.hpp"
#include "stormnet/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace stormnet {

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

namespace {

// Posterior std below this (standardized scale) is treated as exactly zero:
// it is indistinguishable from the noise floor plus factorization round-off.
constexpr double kSigmaFloor = 3e-6;

constexpr double kJitterStart = 1e-10;
constexpr double kJitterMax = 1e-6;

double sq(double v) {
    return v * v;
}

double kernel(const std::vector<double>& a, const std::vector<double>& b, const GpHyperparams& h) {
    double s = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) s += sq((a[d] - b[d]) / h.length_scales[d]);
    return h.signal_var * std::exp(-0.5 * s);
}

// Returns false when the Cholesky fails even at the maximum jitter.
bool try_factorize(const std::vector<std::vector<double>>& points, const std::vector<double>& y,
                   const GpHyperparams& h, std::vector<double>& chol, std::vector<double>& alpha) {
    const std::size_t n = points.size();
    Eigen::MatrixXd k(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double v = kernel(points[i], points[j], h);
            k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
        k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += h.noise_var;
    }
    for (double jitter = kJitterStart; jitter <= kJitterMax * 1.0001; jitter *= 10.0) {
        Eigen::MatrixXd kj = k + jitter * Eigen::MatrixXd::Identity(n, n);
        Eigen::LLT<Eigen::MatrixXd> llt(kj);
        if (llt.info() != Eigen::Success) continue;
        const Eigen::MatrixXd l = llt.matrixL();
        chol.assign(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                chol[i * n + j] = l(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
        }
        Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n));
        Eigen::VectorXd a = llt.solve(yv);
        alpha.assign(a.data(), a.data() + n);
        return true;
    }
    return false;
}

// Negative log marginal likelihood of the standardized data under h.
double nll(const std::vector<std::vector<double>>& points, const std::vector<double>& y,
           const GpHyperparams& h) {
    std::vector<double> chol, alpha;
    if (!try_factorize(points, y, h, chol, alpha)) return std::numeric_limits<double>::infinity();
    const std::size_t n = points.size();
    double logdet = 0.0;
    for (std::size_t i = 0; i < n; ++i) logdet += std::log(chol[i * n + i]);
    double fit = 0.0;
    for (std::size_t i = 0; i < n; ++i) fit += y[i] * alpha[i];
    return logdet + 0.5 * fit + 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

struct Box {
    std::vector<double> lo, hi;
};

// Hyperparameter search space, in log10: per-dimension length scales, signal
// variance, and noise variance (std floored at 1e-6).
Box hyper_box(std::size_t dims) {
    Box box;
    box.lo.assign(dims + 2, std::log10(0.03));
    box.hi.assign(dims + 2, std::log10(30.0));
    box.lo[dims] = -3.0;
    box.hi[dims] = 2.0;
    box.lo[dims + 1] = -12.0;
    box.hi[dims + 1] = 0.0;
    return box;
}

GpHyperparams decode(const std::vector<double>& theta, std::size_t dims) {
    GpHyperparams h;
    h.length_scales.resize(dims);
    for (std::size_t d = 0; d < dims; ++d) h.length_scales[d] = std::pow(10.0, theta[d]);
    h.signal_var = std::pow(10.0, theta[dims]);
    h.noise_var = std::pow(10.0, theta[dims + 1]);
    return h;
}

void clamp_into(std::vector<double>& x, const Box& box) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], box.lo[i], box.hi[i]);
}

template <typename F>
std::pair<std::vector<double>, double> nelder_mead(F&& f, std::vector<double> x0, const Box& box,
                                                   int max_iters) {
    const std::size_t n = x0.size();
    std::vector<std::vector<double>> simplex{x0};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v = x0;
        v[i] += 0.35;
        clamp_into(v, box);
        simplex.push_back(v);
    }
    std::vector<double> values;
    for (const auto& v : simplex) values.push_back(f(v));

    for (int iter = 0; iter < max_iters; ++iter) {
        std::vector<std::size_t> order(simplex.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        if (values[order.back()] - values[order.front()] < 1e-9) break;

        const std::size_t worst = order.back();
        std::vector<double> centroid(n, 0.0);
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
            for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[order[k]][i];
        }
        for (double& c : centroid) c /= static_cast<double>(n);

        auto blend = [&](double t) {
            std::vector<double> v(n);
            for (std::size_t i = 0; i < n; ++i) v[i] = centroid[i] + t * (centroid[i] - simplex[worst][i]);
            clamp_into(v, box);
            return v;
        };

        std::vector<double> reflected = blend(1.0);
        const double fr = f(reflected);
        if (fr < values[order.front()]) {
            std::vector<double> expanded = blend(2.0);
            const double fe = f(expanded);
            if (fe < fr) {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if (fr < values[order[order.size() - 2]]) {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            std::vector<double> contracted = blend(-0.5);
            const double fc = f(contracted);
            if (fc < values[worst]) {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                for (std::size_t k = 1; k < order.size(); ++k) {
                    for (std::size_t i = 0; i < n; ++i) {
                        simplex[order[k]][i] =
                            0.5 * (simplex[order[k]][i] + simplex[order.front()][i]);
                    }
                    values[order[k]] = f(simplex[order[k]]);
                }
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] < values[best]) best = i;
    }
    return {simplex[best], values[best]};
}

void validate_points(const std::vector<std::vector<double>>& points, const std::vector<double>& losses) {
    if (points.empty()) throw ValidationError("gp fit needs at least one observation");
    if (points.size() != losses.size()) throw ValidationError("gp fit: point/loss count mismatch");
    const std::size_t d = points.front().size();
    if (d == 0) throw ValidationError("gp fit: zero-dimensional points");
    for (const auto& p : points) {
        if (p.size() != d) throw ValidationError("gp fit: inconsistent point dimensions");
        for (double v : p) {
            if (v < -1e-9 || v > 1.0 + 1e-9) throw ValidationError("gp fit: point outside [0,1]^d");
        }
    }
    for (double y : losses) {
        if (!std::isfinite(y)) throw ValidationError("gp fit: non-finite loss");
    }
}

} // namespace

GpModel GpModel::with_hyperparams(const std::vector<std::vector<double>>& points,
                                  const std::vector<double>& losses, GpHyperparams hypers) {
    validate_points(points, losses);
    GpModel model;
    model.dim_ = points.front().size();
    model.points_ = points;
    if (hypers.length_scales.size() != model.dim_) throw ValidationError("gp: length scale count mismatch");
    hypers.noise_var = std::max(hypers.noise_var, 1e-12);
    model.hypers_ = std::move(hypers);

    const std::size_t n = losses.size();
    double mean = 0.0;
    for (double y : losses) mean += y;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double y : losses) var += sq(y - mean);
    var /= static_cast<double>(n);
    model.y_mean_ = mean;
    model.y_scale_ = (n > 1 && var > 0.0) ? std::sqrt(var) : 1.0;
    model.y_std_.resize(n);
    for (std::size_t i = 0; i < n; ++i) model.y_std_[i] = (losses[i] - mean) / model.y_scale_;

    model.factorize();
    return model;
}

void GpModel::factorize() {
    if (!try_factorize(points_, y_std_, hypers_, chol_, alpha_)) {
        throw ValidationError("gp covariance not positive definite even at maximum jitter");
    }
}

GpModel GpModel::fit(const std::vector<std::vector<double>>& points, const std::vector<double>& losses) {
    validate_points(points, losses);
    const std::size_t d = points.front().size();

    GpHyperparams defaults;
    defaults.length_scales.assign(d, 0.3);
    defaults.signal_var = 1.0;
    defaults.noise_var = 1e-8;

    // Degenerate targets carry no information for the marginal likelihood.
    double mean = 0.0;
    for (double y : losses) mean += y;
    mean /= static_cast<double>(losses.size());
    double var = 0.0;
    for (double y : losses) var += sq(y - mean);
    if (losses.size() < 2 || var == 0.0) return with_hyperparams(points, losses, defaults);

    // standardized copy for the likelihood search
    GpModel base = with_hyperparams(points, losses, defaults);
    const std::vector<double>& y = base.y_std_;

    const Box box = hyper_box(d);
    auto objective = [&](const std::vector<double>& theta) { return nll(points, y, decode(theta, d)); };

    std::vector<std::vector<double>> starts;
    std::vector<double> theta0(d + 2);
    for (std::size_t i = 0; i < d; ++i) theta0[i] = std::log10(0.3);
    theta0[d] = 0.0;
    theta0[d + 1] = -4.0;
    starts.push_back(theta0);
    detail::RdSequence seq(d + 2, std::vector<double>(d + 2, 0.5));
    for (std::size_t s = 0; s < 7; ++s) {
        std::vector<double> u = seq.point(s);
        std::vector<double> theta(d + 2);
        for (std::size_t i = 0; i < d + 2; ++i) theta[i] = box.lo[i] + u[i] * (box.hi[i] - box.lo[i]);
        starts.push_back(theta);
    }

    std::vector<double> best_theta = theta0;
    double best_value = std::numeric_limits<double>::infinity();
    for (const auto& start : starts) {
        auto [theta, value] = nelder_mead(objective, start, box, 160);
        if (value < best_value) {
            best_value = value;
            best_theta = theta;
        }
    }
    return with_hyperparams(points, losses, decode(best_theta, d));
}

std::pair<double, double> GpModel::posterior_standardized(const std::vector<double>& x) const {
    if (x.size() != dim_) throw ValidationError("gp posterior: dimension mismatch");
    for (double v : x) {
        if (v < -1e-9 || v > 1.0 + 1e-9) throw ValidationError("gp posterior: point outside [0,1]^d");
    }
    const std::size_t n = points_.size();
    std::vector<double> kstar(n);
    for (std::size_t i = 0; i < n; ++i) kstar[i] = kernel(points_[i], x, hypers_);

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += kstar[i] * alpha_[i];

    // v = L^-1 k*, forward substitution on the cached factor
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = kstar[i];
        for (std::size_t j = 0; j < i; ++j) s -= chol_[i * n + j] * v[j];
        v[i] = s / chol_[i * n + i];
    }
    double var = hypers_.signal_var;
    for (std::size_t i = 0; i < n; ++i) var -= v[i] * v[i];
    return {mean, std::max(var, 0.0)};
}

std::pair<double, double> GpModel::posterior(const std::vector<double>& x) const {
    auto [mean, var] = posterior_standardized(x);
    return {mean * y_scale_ + y_mean_, var * y_scale_ * y_scale_};
}

double GpModel::min_observed_loss() const {
    double best = std::numeric_limits<double>::infinity();
    for (double y : y_std_) best = std::min(best, y * y_scale_ + y_mean_);
    return best;
}

double expected_improvement_value(double mean, double sigma, double best_loss) {
    const double gap = best_loss - mean;
    if (sigma <= 0.0) return std::max(0.0, gap);
    const double z = gap / sigma;
    return std::max(0.0, gap * normal_cdf(z) + sigma * normal_pdf(z));
}

double expected_improvement(const GpModel& model, const std::vector<double>& x, double best_loss) {
    auto [mean_s, var_s] = model.posterior_standardized(x);
    double sigma_s = std::sqrt(std::max(var_s, 0.0));
    if (sigma_s < kSigmaFloor) sigma_s = 0.0;
    const double best_s = (best_loss - model.y_mean_) / model.y_scale_;
    return expected_improvement_value(mean_s, sigma_s, best_s) * model.y_scale_;
}

} // namespace stormnet
