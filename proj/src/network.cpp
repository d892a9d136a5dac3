#include "stormnet/network.hpp"

#include "stormnet/detail/bytes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace stormnet {

namespace {

std::string layer_spec_name(const LayerSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, ConvSpec>) {
                return "conv " + std::to_string(s.filter_h) + "x" + std::to_string(s.filter_w) + "-" +
                       std::to_string(s.num_filters);
            } else if constexpr (std::is_same_v<T, PoolSpec>) {
                return "pool " + std::to_string(s.window_h) + "x" + std::to_string(s.window_w);
            } else if constexpr (std::is_same_v<T, FcSpec>) {
                return "fc " + std::to_string(s.num_units);
            } else if constexpr (std::is_same_v<T, ReluSpec>) {
                return "relu";
            } else {
                return "logistic";
            }
        },
        spec);
}

Tensor one_hot_target(bool positive) {
    Tensor t({2});
    t[positive ? 0 : 1] = 1.0;
    return t;
}

int predict(const Tensor& probs) {
    return probs[1] > probs[0] ? 1 : 0;
}

void check_dataset_dims(const Network& net, const PatchDataset& ds, const char* which) {
    if (ds.empty()) throw ValidationError(std::string(which) + " dataset is empty");
    const auto& want = net.config().input_dims;
    if (ds.dims[0] != want[0] || ds.dims[1] != want[1] || ds.dims[2] != want[2]) {
        throw ShapeError(std::string(which) + " dataset dims (" + std::to_string(ds.dims[0]) + "," +
                         std::to_string(ds.dims[1]) + "," + std::to_string(ds.dims[2]) +
                         ") do not match network input " + shape_to_string({want[0], want[1], want[2]}));
    }
}

} // namespace

NetworkConfig preset_config(EventKind event) {
    NetworkConfig config;
    const auto dims = event_patch_dims(event);
    config.input_dims = dims;
    std::size_t conv_h = 5, conv_w = 5, pool1 = 2, pool2 = 2, fc_units = 50;
    switch (event) {
        case EventKind::TropicalCyclone:
            config.preset = Preset::TropicalCyclone;
            break;
        case EventKind::WeatherFront:
            config.preset = Preset::WeatherFront;
            break;
        case EventKind::AtmosphericRiver:
            config.preset = Preset::AtmosphericRiver;
            conv_h = conv_w = 12;
            pool1 = 3;
            fc_units = 200;
            break;
    }
    config.layers = {
        ConvSpec{conv_h, conv_w, 8, 0},  ReluSpec{}, PoolSpec{pool1, pool1},
        ConvSpec{conv_h, conv_w, 16, 0}, ReluSpec{}, PoolSpec{pool2, pool2},
        FcSpec{fc_units, 0},             ReluSpec{}, FcSpec{2, 0},
        LogisticSpec{},
    };
    return config;
}

std::vector<Shape> infer_shapes(const NetworkConfig& config) {
    for (std::size_t e : config.input_dims) {
        if (e == 0) throw ConfigError("input dims must all be >= 1");
    }
    Shape cur{config.input_dims[0], config.input_dims[1], config.input_dims[2]};
    std::vector<Shape> out;
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const std::string where = "layer " + std::to_string(i) + " (" + layer_spec_name(config.layers[i]) + ")";
        const LayerSpec& spec = config.layers[i];
        if (const auto* conv = std::get_if<ConvSpec>(&spec)) {
            if (cur.size() != 3) throw ConfigError(where + ": needs a (p,m,n) input");
            if (conv->in_channels != 0 && conv->in_channels != cur[0]) {
                throw ConfigError(where + ": bound channels " + std::to_string(conv->in_channels) +
                                  " != incoming " + std::to_string(cur[0]));
            }
            if (cur[1] < conv->filter_h || cur[2] < conv->filter_w) {
                throw ConfigError(where + ": filter exceeds input " + shape_to_string(cur));
            }
            cur = {conv->num_filters, cur[1] - conv->filter_h + 1, cur[2] - conv->filter_w + 1};
        } else if (const auto* pool = std::get_if<PoolSpec>(&spec)) {
            if (cur.size() != 3) throw ConfigError(where + ": needs a (c,h,w) input");
            const std::size_t oh = cur[1] / pool->window_h, ow = cur[2] / pool->window_w;
            if (oh == 0 || ow == 0) throw ConfigError(where + ": window exceeds input " + shape_to_string(cur));
            cur = {cur[0], oh, ow};
        } else if (const auto* fc = std::get_if<FcSpec>(&spec)) {
            const std::size_t in_dim = shape_product(cur);
            if (fc->in_dim != 0 && fc->in_dim != in_dim) {
                throw ConfigError(where + ": bound input dim " + std::to_string(fc->in_dim) + " != incoming " +
                                  std::to_string(in_dim));
            }
            if (fc->num_units == 0) throw ConfigError(where + ": needs at least one unit");
            cur = {fc->num_units};
        }
        // relu / logistic leave the shape unchanged
        out.push_back(cur);
    }
    return out;
}

Network::Network(NetworkConfig config, std::vector<std::unique_ptr<Layer>> layers)
    : config_(std::move(config)), layers_(std::move(layers)) {}

Network build(const NetworkConfig& config, Rng& rng) {
    if (config.layers.empty()) throw ConfigError("network needs at least one layer");
    const std::vector<Shape> shapes = infer_shapes(config);
    if (!std::holds_alternative<LogisticSpec>(config.layers.back())) {
        throw ConfigError("final layer must be a logistic activation");
    }
    if (shapes.back() != Shape{2}) {
        throw ConfigError("network must end in 2 output units, got " + shape_to_string(shapes.back()));
    }

    NetworkConfig bound = config;
    Shape cur{config.input_dims[0], config.input_dims[1], config.input_dims[2]};
    std::vector<std::unique_ptr<Layer>> layers;
    for (std::size_t i = 0; i < bound.layers.size(); ++i) {
        LayerSpec& spec = bound.layers[i];
        if (auto* conv = std::get_if<ConvSpec>(&spec)) {
            conv->in_channels = cur[0];
            layers.push_back(ConvLayer::create(*conv, rng));
        } else if (const auto* pool = std::get_if<PoolSpec>(&spec)) {
            layers.push_back(std::make_unique<MaxPoolLayer>(*pool));
        } else if (auto* fc = std::get_if<FcSpec>(&spec)) {
            fc->in_dim = shape_product(cur);
            layers.push_back(FcLayer::create(*fc, rng));
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            layers.push_back(std::make_unique<ReluLayer>());
        } else {
            layers.push_back(std::make_unique<LogisticLayer>());
        }
        cur = shapes[i];
    }
    return Network(std::move(bound), std::move(layers));
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) {
        for (const ParamRef& p : layer->params()) n += p.value->size();
    }
    return n;
}

std::vector<ParamRef> Network::all_params() {
    std::vector<ParamRef> out;
    for (const auto& layer : layers_) {
        for (ParamRef p : layer->params()) out.push_back(p);
    }
    return out;
}

Tensor Network::forward(const Tensor& patch) const {
    if (patch.shape() != Shape{config_.input_dims[0], config_.input_dims[1], config_.input_dims[2]}) {
        throw ShapeError("input shape " + shape_to_string(patch.shape()) + " does not match network input " +
                         shape_to_string({config_.input_dims[0], config_.input_dims[1], config_.input_dims[2]}));
    }
    Tensor x = patch;
    for (const auto& layer : layers_) x = layer->apply(x);
    return x;
}

std::pair<double, bool> Network::train_step_sample(const Tensor& patch, bool positive) {
    Tensor x = patch;
    for (auto& layer : layers_) x = layer->forward(x);
    const Tensor target = one_hot_target(positive);
    LossResult res = cross_entropy_loss(x, target);
    const bool correct = predict(x) == (positive ? 0 : 1);
    // the loss gradient is fused through the final logistic
    Tensor grad = std::move(res.grad_preactivation);
    for (std::size_t i = layers_.size() - 1; i-- > 0;) grad = layers_[i]->backward(grad);
    return {res.loss, correct};
}

void Network::zero_grads() {
    for (auto& layer : layers_) layer->zero_grads();
}

std::string TrainingLog::to_csv() const {
    std::ostringstream out;
    out << "epoch,train_loss,train_acc,val_acc\n";
    out << std::setprecision(17);
    for (const EpochStats& e : epochs) {
        out << e.epoch << "," << e.train_loss << "," << e.train_acc << "," << e.val_acc << "\n";
    }
    return out.str();
}

TrainingLog train(Network& net, const PatchDataset& train_set, const PatchDataset& val_set,
                  const SgdParams& params) {
    check_dataset_dims(net, train_set, "train");
    check_dataset_dims(net, val_set, "validation");
    if (params.learning_rate < 0.0) throw ValidationError("learning_rate must be >= 0");
    if (params.weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
    if (params.momentum < 0.0 || params.momentum >= 1.0) throw ValidationError("momentum must be in [0,1)");
    if (params.batch_size == 0 || params.epochs == 0) throw ValidationError("batch_size and epochs must be >= 1");

    std::vector<ParamRef> prefs = net.all_params();
    std::vector<Tensor> velocity;
    velocity.reserve(prefs.size());
    for (const ParamRef& p : prefs) velocity.push_back(Tensor::zeros(p.value->shape()));

    Rng rng(params.seed);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainingLog log;
    for (std::size_t epoch = 1; epoch <= params.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += params.batch_size) {
            const std::size_t end = std::min(start + params.batch_size, order.size());
            const double batch_n = static_cast<double>(end - start);
            net.zero_grads();
            for (std::size_t i = start; i < end; ++i) {
                const PatchRecord& rec = train_set.records[order[i]];
                auto [loss, ok] = net.train_step_sample(rec.patch, rec.positive);
                epoch_loss += loss;
                correct += ok ? 1 : 0;
            }
            for (std::size_t p = 0; p < prefs.size(); ++p) {
                Tensor& w = *prefs[p].value;
                Tensor& g = *prefs[p].grad;
                Tensor& v = velocity[p];
                const double wd = prefs[p].decay ? params.weight_decay : 0.0;
                for (std::size_t j = 0; j < w.size(); ++j) {
                    v[j] = params.momentum * v[j] - params.learning_rate * (g[j] / batch_n + wd * w[j]);
                    w[j] += v[j];
                }
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(train_set.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
        stats.val_acc = evaluate(net, val_set).accuracy;
        log.epochs.push_back(stats);
    }
    return log;
}

EvalReport make_report(const std::vector<std::pair<int, int>>& pred_true) {
    if (pred_true.empty()) throw ValidationError("cannot evaluate an empty prediction set");
    EvalReport report;
    for (auto [pred, truth] : pred_true) {
        if (pred < 0 || pred > 1 || truth < 0 || truth > 1) throw ValidationError("class indices must be 0 or 1");
        ++report.counts[pred][truth];
    }
    const double total = static_cast<double>(pred_true.size());
    report.accuracy = static_cast<double>(report.counts[0][0] + report.counts[1][1]) / total;
    for (int t = 0; t < 2; ++t) {
        const double col = static_cast<double>(report.counts[0][t] + report.counts[1][t]);
        for (int p = 0; p < 2; ++p) {
            report.confusion[p][t] = col > 0.0 ? static_cast<double>(report.counts[p][t]) / col : 0.0;
        }
    }
    return report;
}

EvalReport evaluate(const Network& net, const PatchDataset& data) {
    check_dataset_dims(net, data, "evaluation");
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(data.size());
    for (const PatchRecord& rec : data.records) {
        pairs.emplace_back(predict(net.forward(rec.patch)), rec.positive ? 0 : 1);
    }
    return make_report(pairs);
}

double mean_loss(const Network& net, const PatchDataset& data) {
    check_dataset_dims(net, data, "evaluation");
    double sum = 0.0;
    for (const PatchRecord& rec : data.records) {
        sum += cross_entropy_loss(net.forward(rec.patch), one_hot_target(rec.positive)).loss;
    }
    return sum / static_cast<double>(data.size());
}

std::string format_report(const EvalReport& report, const std::string& event) {
    std::string ev = event;
    std::transform(ev.begin(), ev.end(), ev.begin(), [](unsigned char c) { return std::toupper(c); });
    const std::string labels[2] = {"Label " + ev, "Label Non_" + ev};
    const std::string rows[2] = {"Predict " + ev, "Predict Non_" + ev};
    const std::size_t row_w = std::max(rows[0].size(), rows[1].size()) + 2;
    const std::size_t col_w = std::max(labels[0].size(), labels[1].size()) + 3;

    std::ostringstream out;
    out << std::string(row_w, ' ');
    for (const auto& l : labels) out << std::setw(static_cast<int>(col_w)) << l;
    out << "\n";
    for (int p = 0; p < 2; ++p) {
        out << std::left << std::setw(static_cast<int>(row_w)) << rows[p] << std::right;
        for (int t = 0; t < 2; ++t) {
            out << std::setw(static_cast<int>(col_w)) << std::fixed << std::setprecision(3)
                << report.confusion[p][t];
        }
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
//
// Numeric side uses only forward machinery: the loss is re-evaluated with one
// parameter shifted, reusing the cached activations upstream of the perturbed
// layer (they cannot change) and each layer's incremental perturbed_output.

double gradient_check(Network& net, const PatchRecord& sample, double eps) {
    if (!(eps > 0.0 && eps <= 1e-3)) throw ValidationError("eps must be in (0, 1e-3]");

    net.zero_grads();
    net.train_step_sample(sample.patch, sample.positive);
    std::vector<Tensor> analytic;
    for (const ParamRef& p : net.all_params()) analytic.push_back(*p.grad);

    const Tensor target = one_hot_target(sample.positive);
    auto& layers = net.layers();
    std::vector<Tensor> acts;
    acts.reserve(layers.size() + 1);
    acts.push_back(sample.patch);
    for (const auto& layer : layers) acts.push_back(layer->apply(acts.back()));

    auto loss_with_shift = [&](std::size_t l, std::size_t t, std::size_t j, double shift) {
        Tensor x = layers[l]->perturbed_output(acts[l], acts[l + 1], t, j, shift);
        for (std::size_t k = l + 1; k < layers.size(); ++k) x = layers[k]->apply(x);
        return cross_entropy_loss(x, target).loss;
    };

    double max_rel = 0.0;
    std::size_t cursor = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto prefs = layers[l]->params();
        for (std::size_t t = 0; t < prefs.size(); ++t) {
            const Tensor& a = analytic[cursor + t];
            for (std::size_t j = 0; j < prefs[t].value->size(); ++j) {
                const double lp = loss_with_shift(l, t, j, eps);
                const double lm = loss_with_shift(l, t, j, -eps);
                const double numeric = (lp - lm) / (2.0 * eps);
                const double rel =
                    std::abs(a[j] - numeric) / std::max({std::abs(a[j]), std::abs(numeric), 1e-8});
                max_rel = std::max(max_rel, rel);
            }
        }
        cursor += prefs.size();
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// CNNM container

namespace {

constexpr std::uint32_t kModelVersion = 1;

using detail::ByteReader;
using detail::put_f64;
using detail::put_u32;
using detail::put_u8;

enum : std::uint8_t { kConv = 0, kPool = 1, kFc = 2, kRelu = 3, kLogistic = 4 };

} // namespace

std::vector<std::uint8_t> save_model(const Network& net) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'C', 'N', 'N', 'M'});
    put_u32(out, kModelVersion);
    const NetworkConfig& config = net.config();
    put_u8(out, static_cast<std::uint8_t>(config.preset));
    for (std::size_t d : config.input_dims) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(config.input_stats.size()));
    for (const ChannelStats& s : config.input_stats) {
        put_f64(out, s.mean);
        put_f64(out, s.std);
    }
    put_u32(out, static_cast<std::uint32_t>(config.layers.size()));
    for (const LayerSpec& spec : config.layers) {
        if (const auto* conv = std::get_if<ConvSpec>(&spec)) {
            put_u8(out, kConv);
            put_u32(out, static_cast<std::uint32_t>(conv->filter_h));
            put_u32(out, static_cast<std::uint32_t>(conv->filter_w));
            put_u32(out, static_cast<std::uint32_t>(conv->num_filters));
            put_u32(out, static_cast<std::uint32_t>(conv->in_channels));
        } else if (const auto* pool = std::get_if<PoolSpec>(&spec)) {
            put_u8(out, kPool);
            put_u32(out, static_cast<std::uint32_t>(pool->window_h));
            put_u32(out, static_cast<std::uint32_t>(pool->window_w));
        } else if (const auto* fc = std::get_if<FcSpec>(&spec)) {
            put_u8(out, kFc);
            put_u32(out, static_cast<std::uint32_t>(fc->num_units));
            put_u32(out, static_cast<std::uint32_t>(fc->in_dim));
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            put_u8(out, kRelu);
        } else {
            put_u8(out, kLogistic);
        }
    }
    for (const auto& layer : net.layers()) {
        for (const ParamRef& p : layer->params()) {
            for (std::size_t i = 0; i < p.value->size(); ++i) put_f64(out, (*p.value)[i]);
        }
    }
    return out;
}

Network load_model(const std::vector<std::uint8_t>& bytes) {
    ByteReader in(bytes.data(), bytes.size());
    in.need(4, "magic");
    if (!(bytes[0] == 'C' && bytes[1] == 'N' && bytes[2] == 'N' && bytes[3] == 'M')) {
        throw FormatError("bad CNNM magic", 0);
    }
    in.skip(4);
    const std::uint32_t version = in.u32("version");
    if (version != kModelVersion) throw FormatError("unsupported CNNM version " + std::to_string(version), 4);

    NetworkConfig config;
    const std::uint8_t preset = in.u8("preset");
    if (preset > 3) throw FormatError("bad preset tag " + std::to_string(preset), in.offset() - 1);
    config.preset = static_cast<Preset>(preset);
    for (std::size_t d = 0; d < 3; ++d) config.input_dims[d] = in.u32("input dims");
    const std::uint32_t n_stats = in.u32("stat count");
    if (n_stats > (1u << 20)) throw FormatError("stat count out of range", in.offset());
    for (std::uint32_t s = 0; s < n_stats; ++s) {
        ChannelStats cs;
        cs.mean = in.f64("channel mean");
        cs.std = in.f64("channel std");
        config.input_stats.push_back(cs);
    }
    const std::uint32_t n_layers = in.u32("layer count");
    if (n_layers == 0 || n_layers > 256) throw FormatError("layer count out of range", in.offset());

    std::vector<std::unique_ptr<Layer>> layers;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const std::uint8_t kind = in.u8("layer kind");
        switch (kind) {
            case kConv: {
                ConvSpec spec;
                spec.filter_h = in.u32("conv filter_h");
                spec.filter_w = in.u32("conv filter_w");
                spec.num_filters = in.u32("conv num_filters");
                spec.in_channels = in.u32("conv in_channels");
                config.layers.emplace_back(spec);
                layers.push_back(std::make_unique<ConvLayer>(
                    spec, Tensor::zeros({spec.num_filters, spec.in_channels, spec.filter_h, spec.filter_w}),
                    Tensor::zeros({spec.num_filters})));
                break;
            }
            case kPool: {
                PoolSpec spec;
                spec.window_h = in.u32("pool window_h");
                spec.window_w = in.u32("pool window_w");
                config.layers.emplace_back(spec);
                layers.push_back(std::make_unique<MaxPoolLayer>(spec));
                break;
            }
            case kFc: {
                FcSpec spec;
                spec.num_units = in.u32("fc num_units");
                spec.in_dim = in.u32("fc in_dim");
                config.layers.emplace_back(spec);
                layers.push_back(std::make_unique<FcLayer>(spec, Tensor::zeros({spec.num_units, spec.in_dim}),
                                                           Tensor::zeros({spec.num_units})));
                break;
            }
            case kRelu:
                config.layers.emplace_back(ReluSpec{});
                layers.push_back(std::make_unique<ReluLayer>());
                break;
            case kLogistic:
                config.layers.emplace_back(LogisticSpec{});
                layers.push_back(std::make_unique<LogisticLayer>());
                break;
            default:
                throw FormatError("unknown layer kind " + std::to_string(kind), in.offset() - 1);
        }
    }
    infer_shapes(config); // consistency of the restored chain
    for (auto& layer : layers) {
        for (const ParamRef& p : layer->params()) in.f64_block(p.value->data(), p.value->size(), "parameters");
    }
    if (in.remaining() != 0) throw FormatError("trailing bytes after parameters", in.offset());
    return Network(std::move(config), std::move(layers));
}

void save_model_file(const Network& net, const std::string& path) {
    const std::vector<std::uint8_t> bytes = save_model(net);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path);
}

Network load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw FormatError("read failed for " + path);
    return load_model(bytes);
}

} // namespace stormnet
