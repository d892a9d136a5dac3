#pragma once

#include "stormnet/gp.hpp"
#include "stormnet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace stormnet {

enum class DimKind { Continuous, Log10, Integer };

struct Dimension {
    std::string name;
    DimKind kind = DimKind::Continuous;
    // For Log10 the bounds are base-10 exponents of the actual value.
    double low = 0.0;
    double high = 1.0;
};

struct HyperSpace {
    std::vector<Dimension> dims;

    std::size_t size() const { return dims.size(); }
    void validate() const;

    double denormalize_dim(std::size_t d, double unit) const;
    double normalize_dim(std::size_t d, double value) const;
    std::vector<double> denormalize(const std::vector<double>& x) const;

    // Snaps integer dimensions so x corresponds exactly to the values that a
    // trial will actually run with.
    std::vector<double> snap(std::vector<double> x) const;

    // The box the CNN trainer is tuned over: log10(lr) in [-4,-1],
    // log10(weight_decay) in [-6,-2], momentum in [0,0.99],
    // batch_size integer in [16,256].
    static HyperSpace default_cnn_space();

    static HyperSpace from_json_file(const std::string& path);
    std::string to_json() const;
};

enum class TrialStatus { Proposed, Running, Done, Failed };

const char* trial_status_name(TrialStatus status);
TrialStatus trial_status_from_name(const std::string& name);

struct Trial {
    std::uint64_t id = 0;
    TrialStatus status = TrialStatus::Proposed;
    std::vector<double> x;      // normalized [0,1]^d, integer dims snapped
    std::vector<double> values; // denormalized, aligned with the space dims
    double loss = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;
    double wall_time = 0.0;
    double proposed_at = 0.0;
    double finished_at = 0.0;
};

// Append-only JSON-lines trial log; every record is one flushed line.
class TrialStore {
public:
    TrialStore(std::string path, const HyperSpace& space);

    const std::string& path() const { return path_; }
    void append(const Trial& trial);

    // Full history, one Trial per appended record, in file order.
    std::vector<Trial> load() const;
    // Latest record per trial id, ordered by id.
    std::vector<Trial> load_latest() const;

private:
    std::string path_;
    const HyperSpace* space_;
};

// Argmax of expected improvement over 2048 seeded quasi-random candidates plus
// coordinate-wise hill climbs from the best 8; ties resolve to the earliest
// candidate. Deterministic given rng.
std::vector<double> propose_next(const GpModel& model, const HyperSpace& space, Rng& rng);

using Objective = std::function<double(const Trial&)>;

struct OptimizationResult {
    Trial best;
    std::vector<Trial> trials; // final state of every trial, by id
    std::size_t newly_run = 0;
};

// Bayesian optimization loop: a space-filling design for the first
// max(5, d+1) trials, then GP + EI proposals. Up to `parallelism` trials run
// concurrently; pending points are fantasized at the posterior mean. Failed
// objectives are recorded with an infinite loss and excluded from the fit.
// With a store, previously completed trials count toward the budget (resume).
OptimizationResult run_optimization(const HyperSpace& space, const Objective& objective, std::size_t budget,
                                    std::size_t parallelism, TrialStore* store, Rng& rng);

} // namespace stormnet
