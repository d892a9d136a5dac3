#include "stormnet/hyperopt.hpp"

#include "stormnet/detail/quasirandom.hpp"
#include "stormnet/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace stormnet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// HyperSpace

void HyperSpace::validate() const {
    if (dims.empty()) throw ValidationError("search space needs at least one dimension");
    std::set<std::string> names;
    for (const Dimension& d : dims) {
        if (d.name.empty()) throw ValidationError("dimension name must not be empty");
        if (!names.insert(d.name).second) throw ValidationError("duplicate dimension name \"" + d.name + "\"");
        if (!(d.low < d.high)) throw ValidationError("dimension \"" + d.name + "\" needs low < high");
    }
}

double HyperSpace::denormalize_dim(std::size_t d, double unit) const {
    const Dimension& dim = dims.at(d);
    const double raw = dim.low + unit * (dim.high - dim.low);
    switch (dim.kind) {
        case DimKind::Continuous: return raw;
        case DimKind::Log10: return std::pow(10.0, raw);
        case DimKind::Integer: return std::clamp(std::round(raw), dim.low, dim.high);
    }
    throw ValidationError("unknown dimension kind");
}

double HyperSpace::normalize_dim(std::size_t d, double value) const {
    const Dimension& dim = dims.at(d);
    const double raw = dim.kind == DimKind::Log10 ? std::log10(value) : value;
    return (raw - dim.low) / (dim.high - dim.low);
}

std::vector<double> HyperSpace::denormalize(const std::vector<double>& x) const {
    if (x.size() != dims.size()) throw ValidationError("point dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) out[d] = denormalize_dim(d, x[d]);
    return out;
}

std::vector<double> HyperSpace::snap(std::vector<double> x) const {
    for (std::size_t d = 0; d < x.size(); ++d) {
        if (dims[d].kind == DimKind::Integer) x[d] = normalize_dim(d, denormalize_dim(d, x[d]));
    }
    return x;
}

HyperSpace HyperSpace::default_cnn_space() {
    HyperSpace space;
    space.dims = {
        {"lr", DimKind::Log10, -4.0, -1.0},
        {"weight_decay", DimKind::Log10, -6.0, -2.0},
        {"momentum", DimKind::Continuous, 0.0, 0.99},
        {"batch_size", DimKind::Integer, 16.0, 256.0},
    };
    return space;
}

namespace {

DimKind kind_from_name(const std::string& name) {
    if (name == "continuous") return DimKind::Continuous;
    if (name == "log10") return DimKind::Log10;
    if (name == "integer") return DimKind::Integer;
    throw ValidationError("unknown dimension kind \"" + name + "\"");
}

const char* kind_name(DimKind kind) {
    switch (kind) {
        case DimKind::Continuous: return "continuous";
        case DimKind::Log10: return "log10";
        case DimKind::Integer: return "integer";
    }
    return "?";
}

} // namespace

HyperSpace HyperSpace::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open search space file " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("bad search space JSON in " + path + ": " + e.what());
    }
    HyperSpace space;
    try {
        for (const json& d : doc.at("dimensions")) {
            Dimension dim;
            dim.name = d.at("name").get<std::string>();
            dim.kind = kind_from_name(d.at("kind").get<std::string>());
            dim.low = d.at("low").get<double>();
            dim.high = d.at("high").get<double>();
            space.dims.push_back(std::move(dim));
        }
    } catch (const json::exception& e) {
        throw FormatError("bad search space JSON in " + path + ": " + e.what());
    }
    space.validate();
    return space;
}

std::string HyperSpace::to_json() const {
    json dims_json = json::array();
    for (const Dimension& d : dims) {
        dims_json.push_back({{"name", d.name}, {"kind", kind_name(d.kind)}, {"low", d.low}, {"high", d.high}});
    }
    return json{{"dimensions", dims_json}}.dump(2);
}

// ---------------------------------------------------------------------------
// Trial store

const char* trial_status_name(TrialStatus status) {
    switch (status) {
        case TrialStatus::Proposed: return "proposed";
        case TrialStatus::Running: return "running";
        case TrialStatus::Done: return "done";
        case TrialStatus::Failed: return "failed";
    }
    return "?";
}

TrialStatus trial_status_from_name(const std::string& name) {
    if (name == "proposed") return TrialStatus::Proposed;
    if (name == "running") return TrialStatus::Running;
    if (name == "done") return TrialStatus::Done;
    if (name == "failed") return TrialStatus::Failed;
    throw ValidationError("unknown trial status \"" + name + "\"");
}

TrialStore::TrialStore(std::string path, const HyperSpace& space) : path_(std::move(path)), space_(&space) {}

void TrialStore::append(const Trial& trial) {
    json values = json::object();
    for (std::size_t d = 0; d < space_->dims.size(); ++d) values[space_->dims[d].name] = trial.values[d];
    json rec{
        {"id", trial.id},
        {"status", trial_status_name(trial.status)},
        {"x", trial.x},
        {"values", values},
        {"seed", trial.seed},
        {"wall_time", trial.wall_time},
        {"proposed_at", trial.proposed_at},
        {"finished_at", trial.finished_at},
    };
    if (trial.status == TrialStatus::Done) {
        rec["loss"] = trial.loss;
    } else {
        rec["loss"] = nullptr; // +inf sentinel for failed trials is not JSON
    }
    std::ofstream out(path_, std::ios::app);
    if (!out) throw FormatError("cannot open trial store " + path_ + " for append");
    out << rec.dump() << "\n";
    out.flush();
    if (!out) throw FormatError("trial store write failed for " + path_);
}

std::vector<Trial> TrialStore::load() const {
    std::vector<Trial> out;
    std::ifstream in(path_);
    if (!in) return out; // no store yet
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("trial store " + path_ + " line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            Trial t;
            t.id = rec.at("id").get<std::uint64_t>();
            t.status = trial_status_from_name(rec.at("status").get<std::string>());
            t.x = rec.at("x").get<std::vector<double>>();
            t.values.resize(space_->dims.size());
            for (std::size_t d = 0; d < space_->dims.size(); ++d) {
                t.values[d] = rec.at("values").at(space_->dims[d].name).get<double>();
            }
            if (rec.contains("loss") && !rec.at("loss").is_null()) t.loss = rec.at("loss").get<double>();
            t.seed = rec.at("seed").get<std::uint64_t>();
            t.wall_time = rec.at("wall_time").get<double>();
            t.proposed_at = rec.at("proposed_at").get<double>();
            t.finished_at = rec.at("finished_at").get<double>();
            out.push_back(std::move(t));
        } catch (const json::exception& e) {
            throw FormatError("trial store " + path_ + " line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw FormatError("trial store " + path_ + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<Trial> TrialStore::load_latest() const {
    std::map<std::uint64_t, Trial> latest;
    for (Trial& t : load()) latest[t.id] = std::move(t);
    std::vector<Trial> out;
    out.reserve(latest.size());
    for (auto& [id, t] : latest) out.push_back(std::move(t));
    return out;
}

// ---------------------------------------------------------------------------
// Proposal

namespace {

constexpr std::size_t kCandidates = 2048;
constexpr std::size_t kRefineFrom = 8;
constexpr std::size_t kRefineSteps = 50;

} // namespace

std::vector<double> propose_next(const GpModel& model, const HyperSpace& space, Rng& rng) {
    space.validate();
    const std::size_t d = space.size();
    if (model.dim() != d) throw ValidationError("propose_next: model/space dimension mismatch");

    const double best_loss = model.min_observed_loss();
    auto score = [&](const std::vector<double>& x) { return expected_improvement(model, x, best_loss); };

    std::vector<double> shift(d);
    for (std::size_t i = 0; i < d; ++i) shift[i] = rng.next_double();
    detail::RdSequence seq(d, shift);

    std::vector<std::vector<double>> candidates;
    std::vector<double> ei(kCandidates);
    candidates.reserve(kCandidates);
    for (std::size_t n = 0; n < kCandidates; ++n) {
        candidates.push_back(space.snap(seq.point(n)));
        ei[n] = score(candidates.back());
    }

    // strict comparisons keep the earliest candidate on ties (EI=0 everywhere)
    std::vector<std::size_t> order(kCandidates);
    for (std::size_t i = 0; i < kCandidates; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ei[a] > ei[b]; });

    std::vector<double> best_x = candidates[order.front()];
    double best_ei = ei[order.front()];

    for (std::size_t k = 0; k < std::min(kRefineFrom, kCandidates); ++k) {
        std::vector<double> x = candidates[order[k]];
        double fx = ei[order[k]];
        double step = 0.05;
        for (std::size_t iter = 0; iter < kRefineSteps && step > 1e-5; ++iter) {
            bool improved = false;
            for (std::size_t dim = 0; dim < d; ++dim) {
                for (double dir : {+1.0, -1.0}) {
                    std::vector<double> y = x;
                    y[dim] = std::clamp(y[dim] + dir * step, 0.0, 1.0);
                    y = space.snap(std::move(y));
                    const double fy = score(y);
                    if (fy > fx) {
                        x = std::move(y);
                        fx = fy;
                        improved = true;
                    }
                }
            }
            if (!improved) step *= 0.5;
        }
        if (fx > best_ei) {
            best_ei = fx;
            best_x = std::move(x);
        }
    }
    return best_x;
}

// ---------------------------------------------------------------------------
// Optimization loop

namespace {

double now_unix_seconds() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

// single-producer / single-consumer-group task + result plumbing
struct WorkQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Trial> tasks;
    bool closed = false;

    void push(Trial t) {
        {
            std::lock_guard lock(mu);
            tasks.push_back(std::move(t));
        }
        cv.notify_one();
    }

    void close() {
        {
            std::lock_guard lock(mu);
            closed = true;
        }
        cv.notify_all();
    }

    std::optional<Trial> pop() {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return closed || !tasks.empty(); });
        if (tasks.empty()) return std::nullopt;
        Trial t = std::move(tasks.front());
        tasks.pop_front();
        return t;
    }
};

struct ResultQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Trial> results;

    void push(Trial t) {
        {
            std::lock_guard lock(mu);
            results.push_back(std::move(t));
        }
        cv.notify_one();
    }

    Trial pop() {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return !results.empty(); });
        Trial t = std::move(results.front());
        results.pop_front();
        return t;
    }
};

} // namespace

OptimizationResult run_optimization(const HyperSpace& space, const Objective& objective, std::size_t budget,
                                    std::size_t parallelism, TrialStore* store, Rng& rng) {
    space.validate();
    if (budget == 0) throw ValidationError("budget must be >= 1");
    if (parallelism == 0) throw ValidationError("parallelism must be >= 1");
    const std::size_t d = space.size();

    // resume: completed trials in the store count toward the budget
    std::vector<Trial> completed;
    std::uint64_t next_id = 0;
    if (store) {
        for (Trial& t : store->load_latest()) {
            next_id = std::max(next_id, t.id + 1);
            if (t.status == TrialStatus::Done || t.status == TrialStatus::Failed) completed.push_back(std::move(t));
        }
    }

    const std::size_t n_init = std::max<std::size_t>(5, d + 1);
    std::vector<double> design_shift(d);
    for (std::size_t i = 0; i < d; ++i) design_shift[i] = rng.next_double();
    detail::RdSequence design(d, design_shift);
    std::size_t design_cursor = 0;

    auto fit_points = [&](const std::vector<Trial>& done) {
        std::vector<std::vector<double>> xs;
        std::vector<double> ys;
        for (const Trial& t : done) {
            if (t.status == TrialStatus::Done && std::isfinite(t.loss)) {
                xs.push_back(t.x);
                ys.push_back(t.loss);
            }
        }
        return std::make_pair(std::move(xs), std::move(ys));
    };

    WorkQueue work;
    ResultQueue results;
    std::vector<std::thread> workers;
    workers.reserve(parallelism);
    for (std::size_t w = 0; w < parallelism; ++w) {
        workers.emplace_back([&] {
            while (auto task = work.pop()) {
                Trial t = std::move(*task);
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    t.loss = objective(t);
                    if (!std::isfinite(t.loss)) throw ValidationError("objective returned non-finite loss");
                    t.status = TrialStatus::Done;
                } catch (const std::exception&) {
                    t.status = TrialStatus::Failed;
                    t.loss = std::numeric_limits<double>::infinity();
                }
                t.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                t.finished_at = now_unix_seconds();
                results.push(std::move(t));
            }
        });
    }

    struct JoinGuard {
        WorkQueue& work;
        std::vector<std::thread>& workers;
        ~JoinGuard() {
            work.close();
            for (std::thread& t : workers) {
                if (t.joinable()) t.join();
            }
        }
    } join_guard{work, workers};

    std::vector<Trial> inflight;
    OptimizationResult result;
    result.trials = completed;

    auto propose_point = [&]() -> std::vector<double> {
        const std::size_t started = completed.size() + inflight.size();
        if (started < n_init) return space.snap(design.point(design_cursor++));

        auto [xs, ys] = fit_points(completed);
        if (xs.empty()) return space.snap(design.point(design_cursor++));

        GpModel model = GpModel::fit(xs, ys);
        if (!inflight.empty()) {
            // fantasize pending trials at the posterior mean, keep the fitted kernel
            auto aug_xs = xs;
            auto aug_ys = ys;
            for (const Trial& t : inflight) {
                aug_xs.push_back(t.x);
                aug_ys.push_back(model.posterior(t.x).first);
            }
            model = GpModel::with_hyperparams(aug_xs, aug_ys, model.hyperparams());
        }
        return propose_next(model, space, rng);
    };

    while (completed.size() < budget) {
        while (inflight.size() < parallelism && completed.size() + inflight.size() < budget) {
            Trial t;
            t.id = next_id++;
            t.x = propose_point();
            t.values = space.denormalize(t.x);
            t.seed = rng.split(t.id).seed();
            t.proposed_at = now_unix_seconds();
            t.status = TrialStatus::Proposed;
            if (store) store->append(t);
            t.status = TrialStatus::Running;
            if (store) store->append(t);
            inflight.push_back(t);
            work.push(t);
            ++result.newly_run;
        }

        Trial finished = results.pop();
        if (store) store->append(finished);
        inflight.erase(std::find_if(inflight.begin(), inflight.end(),
                                    [&](const Trial& t) { return t.id == finished.id; }));
        completed.push_back(std::move(finished));
    }

    result.trials = completed;
    std::sort(result.trials.begin(), result.trials.end(),
              [](const Trial& a, const Trial& b) { return a.id < b.id; });

    const Trial* best = nullptr;
    for (const Trial& t : result.trials) {
        if (t.status == TrialStatus::Done && (!best || t.loss < best->loss)) best = &t;
    }
    if (!best) {
        // budget=1 with a failing objective still returns the failed trial
        for (const Trial& t : result.trials) {
            if (!best || t.loss < best->loss) best = &t;
        }
    }
    result.best = *best;
    return result;
}

} // namespace stormnet
