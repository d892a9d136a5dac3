#pragma once

#include "stormnet/data.hpp"
#include "stormnet/layers.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace stormnet {

struct ReluSpec {};
struct LogisticSpec {};

using LayerSpec = std::variant<ConvSpec, PoolSpec, FcSpec, ReluSpec, LogisticSpec>;

enum class Preset : std::uint8_t {
    TropicalCyclone = 0,
    AtmosphericRiver = 1,
    WeatherFront = 2,
    Custom = 3,
};

struct NetworkConfig {
    Preset preset = Preset::Custom;
    std::array<std::size_t, 3> input_dims{0, 0, 0}; // p, m, n
    std::vector<LayerSpec> layers;
    // Per-channel normalization fitted on the training split; empty until a
    // training pipeline fills it. Travels with the model so evaluation can
    // preprocess raw datasets identically.
    std::vector<ChannelStats> input_stats;
};

// The three named architectures: conv -> relu -> pool -> conv -> relu -> pool
// -> fc -> relu -> fc -> logistic, with per-event filter/pool/unit sizes and
// input dims from the event's patch dims.
NetworkConfig preset_config(EventKind event);

// Output dims after every layer under valid-conv / floor-pool rules. Throws a
// ConfigError naming the offending layer when any extent collapses.
std::vector<Shape> infer_shapes(const NetworkConfig& config);

class Network {
public:
    Network(NetworkConfig config, std::vector<std::unique_ptr<Layer>> layers);
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    const NetworkConfig& config() const { return config_; }
    void set_input_stats(std::vector<ChannelStats> stats) { config_.input_stats = std::move(stats); }
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
    std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

    std::size_t param_count() const;
    std::vector<ParamRef> all_params();

    // Pure inference: class probabilities, both in (0,1). Index 0 = event present.
    Tensor forward(const Tensor& patch) const;

    // Caching forward + fused-loss backward; accumulates parameter gradients.
    // Returns (loss, correct-prediction flag).
    std::pair<double, bool> train_step_sample(const Tensor& patch, bool positive);

    void zero_grads();

private:
    NetworkConfig config_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

// All parameters uniform fan-scaled, biases zero; deterministic in rng.
Network build(const NetworkConfig& config, Rng& rng);

struct SgdParams {
    // Defaults sit at the midpoint of the tuner's default search box.
    double learning_rate = 3.1622776601683794e-3; // 10^-2.5
    double weight_decay = 1e-4;
    double momentum = 0.495;
    std::size_t batch_size = 136;
    std::size_t epochs = 15;
    std::uint64_t seed = 1;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainingLog {
    std::vector<EpochStats> epochs;
    std::string to_csv() const; // header: epoch,train_loss,train_acc,val_acc
};

// Minibatch SGD with momentum and L2 weight decay (biases undecayed):
//   v <- momentum*v - lr*(grad + wd*w);  w <- w + v
// Per-epoch reshuffle from the run seed; the last partial minibatch is kept.
TrainingLog train(Network& net, const PatchDataset& train_set, const PatchDataset& val_set,
                  const SgdParams& params);

struct EvalReport {
    double accuracy = 0.0;
    std::array<std::array<std::size_t, 2>, 2> counts{};  // [predicted][true], 0 = positive
    std::array<std::array<double, 2>, 2> confusion{};    // column-normalized by true label
};

// Confusion bookkeeping from (predicted, true) pairs; 0 = positive class.
EvalReport make_report(const std::vector<std::pair<int, int>>& pred_true);
EvalReport evaluate(const Network& net, const PatchDataset& data);
double mean_loss(const Network& net, const PatchDataset& data);

// Rows = predicted, columns = true label.
std::string format_report(const EvalReport& report, const std::string& event);

// Max relative error between analytic gradients and central finite differences
// of the loss, over every parameter: |a-f| / max(|a|,|f|,1e-8).
double gradient_check(Network& net, const PatchRecord& sample, double eps);

// "CNNM" container, little-endian; round-trips bit-identically.
std::vector<std::uint8_t> save_model(const Network& net);
Network load_model(const std::vector<std::uint8_t>& bytes);
void save_model_file(const Network& net, const std::string& path);
Network load_model_file(const std::string& path);

} // namespace stormnet
