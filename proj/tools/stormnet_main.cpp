#include "stormnet/data.hpp"
#include "stormnet/hyperopt.hpp"
#include "stormnet/network.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

using namespace stormnet;
using nlohmann::json;

std::array<double, 3> parse_split(const std::string& text) {
    std::array<double, 3> out{};
    std::istringstream in(text);
    char sep1 = 0, sep2 = 0;
    if (!(in >> out[0] >> sep1 >> out[1] >> sep2 >> out[2]) || sep1 != ',' || sep2 != ',') {
        throw ValidationError("--split expects three comma-separated fractions, e.g. 0.8,0.1,0.1");
    }
    return out;
}

NetworkConfig config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("bad config JSON in " + path + ": " + e.what());
    }
    NetworkConfig config;
    try {
        const json& net = doc.at("network");
        const auto dims = net.at("input_dims").get<std::vector<std::size_t>>();
        if (dims.size() != 3) throw ValidationError("input_dims must have 3 entries");
        config.input_dims = {dims[0], dims[1], dims[2]};
        for (const json& layer : net.at("layers")) {
            const std::string type = layer.at("type").get<std::string>();
            if (type == "conv") {
                config.layers.emplace_back(ConvSpec{layer.at("h").get<std::size_t>(),
                                                    layer.at("w").get<std::size_t>(),
                                                    layer.at("filters").get<std::size_t>(), 0});
            } else if (type == "pool") {
                config.layers.emplace_back(
                    PoolSpec{layer.at("h").get<std::size_t>(), layer.at("w").get<std::size_t>()});
            } else if (type == "fc") {
                config.layers.emplace_back(FcSpec{layer.at("units").get<std::size_t>(), 0});
            } else if (type == "relu") {
                config.layers.emplace_back(ReluSpec{});
            } else if (type == "logistic") {
                config.layers.emplace_back(LogisticSpec{});
            } else {
                throw ValidationError("unknown layer type \"" + type + "\"");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError("bad config JSON in " + path + ": " + e.what());
    }
    return config;
}

void apply_sgd_from_json(const std::string& path, SgdParams& params, const CLI::App& cmd) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("bad config JSON in " + path + ": " + e.what());
    }
    if (!doc.contains("sgd")) return;
    const json& sgd = doc.at("sgd");
    // flags beat config-file values
    auto set_if = [&](const char* key, const char* flag, auto member) {
        if (sgd.contains(key) && cmd.get_option(flag)->count() == 0) {
            params.*member = sgd.at(key).get<std::decay_t<decltype(params.*member)>>();
        }
    };
    set_if("lr", "--lr", &SgdParams::learning_rate);
    set_if("weight_decay", "--wd", &SgdParams::weight_decay);
    set_if("momentum", "--momentum", &SgdParams::momentum);
    set_if("batch_size", "--batch", &SgdParams::batch_size);
    set_if("epochs", "--epochs", &SgdParams::epochs);
}

bool stats_are_identity(const std::vector<ChannelStats>& stats) {
    for (const ChannelStats& s : stats) {
        if (s.mean != 0.0 || s.std != 1.0) return false;
    }
    return true;
}

bool stats_match(const std::vector<ChannelStats>& a, const std::vector<ChannelStats>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i].mean - b[i].mean) > 1e-12 || std::abs(a[i].std - b[i].std) > 1e-12) return false;
    }
    return true;
}

// Raw datasets get the model's training-split stats; already-normalized ones
// must match them.
PatchDataset prepare_for_model(PatchDataset ds, const Network& net) {
    const auto& model_stats = net.config().input_stats;
    if (model_stats.empty() || stats_match(ds.stats, model_stats)) return ds;
    if (stats_are_identity(ds.stats)) return apply_stats(std::move(ds), model_stats);
    throw ValidationError("dataset was normalized with different stats than the model");
}

int cmd_synth(const std::string& event, std::size_t pos, std::size_t neg, std::uint64_t seed,
              const std::string& out_path) {
    const EventKind kind = event_from_name(event);
    Rng rng(seed);
    const PatchDataset ds = build_synthetic_dataset(kind, pos, neg, rng);
    write_dataset(ds, out_path);
    std::cout << "wrote " << ds.size() << " records (" << ds.dims[0] << "x" << ds.dims[1] << "x" << ds.dims[2]
              << ") to " << out_path << "\n";
    return 0;
}

int cmd_train(const CLI::App& cmd, const std::string& data_path, const std::string& event,
              const std::string& config_path, SgdParams params, const std::string& split_text,
              std::uint64_t seed, const std::string& out_path, std::string log_path) {
    PatchDataset ds = read_dataset(data_path);

    NetworkConfig config;
    if (!config_path.empty()) {
        config = config_from_json_file(config_path);
        apply_sgd_from_json(config_path, params, cmd);
    } else if (!event.empty()) {
        config = preset_config(event_from_name(event));
    } else {
        throw ValidationError("one of --event or --config is required");
    }

    Rng master(seed);
    Rng split_rng = master.split(1);
    Rng net_rng = master.split(2);
    params.seed = master.split(3).seed();

    SplitResult parts = split(ds, parse_split(split_text), split_rng);
    PatchDataset train_set = normalize(std::move(parts.train));
    PatchDataset val_set = apply_stats(std::move(parts.val), train_set.stats);

    Network net = build(config, net_rng);
    std::cout << "built " << event_name(ds.kind) << " network, " << net.param_count() << " parameters\n";

    TrainingLog log = train(net, train_set, val_set, params);

    net.set_input_stats(train_set.stats);
    save_model_file(net, out_path);
    if (log_path.empty()) log_path = out_path + ".csv";
    std::ofstream log_file(log_path, std::ios::trunc);
    log_file << log.to_csv();
    if (!log_file) throw FormatError("cannot write training log " + log_path);

    const EpochStats& last = log.epochs.back();
    std::cout << std::fixed << std::setprecision(4) << "final train accuracy: " << last.train_acc
              << "\nfinal val accuracy:   " << last.val_acc << "\n"
              << "model written to " << out_path << ", log to " << log_path << "\n";
    return 0;
}

int cmd_tune(const std::string& data_path, const std::string& event, std::size_t trials, std::size_t parallel,
             const std::string& space_path, const std::string& store_path, std::uint64_t seed,
             std::size_t epochs, const std::string& split_text) {
    PatchDataset ds = read_dataset(data_path);
    const NetworkConfig config = event.empty() ? preset_config(ds.kind) : preset_config(event_from_name(event));

    HyperSpace space = space_path.empty() ? HyperSpace::default_cnn_space()
                                          : HyperSpace::from_json_file(space_path);
    space.validate();

    Rng master(seed);
    Rng split_rng = master.split(1);
    SplitResult parts = split(ds, parse_split(split_text), split_rng);
    const PatchDataset train_set = normalize(std::move(parts.train));
    const PatchDataset val_set = apply_stats(std::move(parts.val), train_set.stats);

    // the tuning objective: train with the proposed settings, score by
    // validation loss (fixed epoch budget keeps trials comparable)
    Objective objective = [&](const Trial& trial) {
        SgdParams params;
        for (std::size_t d = 0; d < space.dims.size(); ++d) {
            const std::string& name = space.dims[d].name;
            if (name == "lr") params.learning_rate = trial.values[d];
            else if (name == "weight_decay") params.weight_decay = trial.values[d];
            else if (name == "momentum") params.momentum = trial.values[d];
            else if (name == "batch_size") params.batch_size = static_cast<std::size_t>(trial.values[d]);
            else throw ValidationError("space dimension \"" + name + "\" is not an SGD parameter");
        }
        params.epochs = epochs;
        params.seed = trial.seed;
        Rng net_rng(trial.seed);
        Network net = build(config, net_rng);
        train(net, train_set, val_set, params);
        return mean_loss(net, val_set);
    };

    TrialStore store(store_path, space);
    Rng opt_rng = master.split(2);
    OptimizationResult result = run_optimization(space, objective, trials, parallel, &store, opt_rng);

    std::cout << "id      loss    best-so-far  values\n";
    double best = std::numeric_limits<double>::infinity();
    for (const Trial& t : result.trials) {
        if (t.status == TrialStatus::Done) best = std::min(best, t.loss);
        std::cout << std::setw(4) << t.id << "  ";
        if (t.status == TrialStatus::Done) {
            std::cout << std::fixed << std::setprecision(4) << t.loss;
        } else {
            std::cout << "failed";
        }
        std::cout << "  " << std::fixed << std::setprecision(4) << best << "  (";
        for (std::size_t d = 0; d < space.dims.size(); ++d) {
            if (d) std::cout << ", ";
            std::cout << space.dims[d].name << "=" << std::setprecision(6) << t.values[d];
        }
        std::cout << ")\n";
    }
    std::cout << "ran " << result.newly_run << " new trials (budget " << trials << ")\n";
    std::cout << "best trial: id " << result.best.id << ", loss " << std::setprecision(6) << result.best.loss
              << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path) {
    const Network net = load_model_file(model_path);
    PatchDataset ds = prepare_for_model(read_dataset(data_path), net);
    const EvalReport report = evaluate(net, ds);
    std::cout << std::fixed << std::setprecision(4) << "accuracy: " << report.accuracy << " ("
              << (report.counts[0][0] + report.counts[1][1]) << "/" << ds.size() << ")\n"
              << format_report(report, event_name(ds.kind));
    return 0;
}

int cmd_export(const std::string& data_path, std::size_t index, const std::string& channel,
               const std::string& out_path) {
    const PatchDataset ds = read_dataset(data_path);
    write_patch_ppm(ds, index, channel, out_path);
    std::cout << "wrote channel " << channel << " of record " << index << " to " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stormnet: synthetic extreme-weather patch classification"};
    app.require_subcommand(1);

    std::string event, data_path, config_path, out_path, log_path, model_path, channel, space_path, store_path;
    std::string split_text = "0.8,0.1,0.1";
    std::size_t pos = 0, neg = 0, trials = 20, parallel = 1, index = 0, epochs = 15;
    std::uint64_t seed = 1;
    SgdParams sgd;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    synth->add_option("--event", event, "event kind: tc, ar or wf")->required();
    synth->add_option("--pos", pos, "number of positive records")->required();
    synth->add_option("--neg", neg, "number of negative records")->required();
    synth->add_option("--seed", seed, "rng seed");
    synth->add_option("--out", out_path, "output CPDS path")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "train a network on a CPDS dataset");
    train_cmd->add_option("--data", data_path, "CPDS dataset path")->required();
    train_cmd->add_option("--event", event, "preset architecture: tc, ar or wf");
    train_cmd->add_option("--config", config_path, "JSON network/SGD config file");
    train_cmd->add_option("--epochs", sgd.epochs, "training epochs");
    train_cmd->add_option("--lr", sgd.learning_rate, "learning rate");
    train_cmd->add_option("--wd", sgd.weight_decay, "L2 weight decay");
    train_cmd->add_option("--momentum", sgd.momentum, "SGD momentum");
    train_cmd->add_option("--batch", sgd.batch_size, "minibatch size");
    train_cmd->add_option("--split", split_text, "train,val,test fractions");
    train_cmd->add_option("--seed", seed, "rng seed");
    train_cmd->add_option("--out", out_path, "output CNNM model path")->required();
    train_cmd->add_option("--log", log_path, "training log CSV path (default <out>.csv)");

    CLI::App* tune = app.add_subcommand("tune", "Bayesian hyperparameter search");
    tune->add_option("--data", data_path, "CPDS dataset path")->required();
    tune->add_option("--event", event, "preset architecture (default: dataset's event)");
    tune->add_option("--trials", trials, "total trial budget");
    tune->add_option("--parallel", parallel, "concurrent trials");
    tune->add_option("--space", space_path, "JSON search space file (default: built-in box)");
    tune->add_option("--store", store_path, "trial store path (JSON lines, resumable)")->required();
    tune->add_option("--seed", seed, "rng seed");
    tune->add_option("--epochs", epochs, "epochs per trial");
    tune->add_option("--split", split_text, "train,val,test fractions");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a model on a dataset");
    eval_cmd->add_option("--model", model_path, "CNNM model path")->required();
    eval_cmd->add_option("--data", data_path, "CPDS dataset path")->required();

    CLI::App* export_cmd = app.add_subcommand("export", "export one patch channel as PPM");
    export_cmd->add_option("--data", data_path, "CPDS dataset path")->required();
    export_cmd->add_option("--index", index, "record index")->required();
    export_cmd->add_option("--channel", channel, "channel name")->required();
    export_cmd->add_option("--out", out_path, "output PPM path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(event, pos, neg, seed, out_path);
        if (train_cmd->parsed())
            return cmd_train(*train_cmd, data_path, event, config_path, sgd, split_text, seed, out_path, log_path);
        if (tune->parsed())
            return cmd_tune(data_path, event, trials, parallel, space_path, store_path, seed, epochs, split_text);
        if (eval_cmd->parsed()) return cmd_eval(model_path, data_path);
        if (export_cmd->parsed()) return cmd_export(data_path, index, channel, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
