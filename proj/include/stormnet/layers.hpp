#pragma once

#include "stormnet/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace stormnet {

struct ConvSpec {
    std::size_t filter_h = 0;
    std::size_t filter_w = 0;
    std::size_t num_filters = 0;
    std::size_t in_channels = 0; // bound when the layer is built into a network
};

struct PoolSpec {
    std::size_t window_h = 0;
    std::size_t window_w = 0;
};

struct FcSpec {
    std::size_t num_units = 0;
    std::size_t in_dim = 0; // bound at build time
};

// One learnable tensor of a layer plus its gradient accumulator.
// Biases are excluded from weight decay.
struct ParamRef {
    Tensor* value;
    Tensor* grad;
    bool decay;
    std::string name;
};

class Layer {
public:
    virtual ~Layer() = default;

    // Pure forward pass; no caching, safe to call concurrently on a const layer.
    virtual Tensor apply(const Tensor& input) const = 0;

    // Forward pass that caches whatever backward needs.
    virtual Tensor forward(const Tensor& input) = 0;

    // Consumes the cache from the matching forward; accumulates parameter
    // gradients (+=) and returns the gradient w.r.t. the layer input.
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual Shape output_shape(const Shape& input_shape) const = 0;
    virtual std::vector<ParamRef> params() { return {}; }
    virtual std::string describe() const = 0;

    // Layer output for cached-input `input` when parameter `flat` of tensor
    // `param_idx` is shifted by eps, given the unperturbed output `base_out`.
    // Used by the finite-difference gradient checker; parameterless layers
    // never see this call.
    virtual Tensor perturbed_output(const Tensor& input, const Tensor& base_out, std::size_t param_idx,
                                    std::size_t flat, double eps) const;

    void zero_grads();
};

class ConvLayer : public Layer {
public:
    ConvLayer(ConvSpec spec, Tensor filters, Tensor biases);

    // Filters initialised uniform fan-scaled, biases zero.
    static std::unique_ptr<ConvLayer> create(ConvSpec spec, Rng& rng);

    Tensor apply(const Tensor& input) const override;
    Tensor forward(const Tensor& input) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& input_shape) const override;
    std::vector<ParamRef> params() override;
    std::string describe() const override;
    Tensor perturbed_output(const Tensor& input, const Tensor& base_out, std::size_t param_idx,
                            std::size_t flat, double eps) const override;

    const ConvSpec& spec() const { return spec_; }
    const Tensor& filters() const { return filters_; }
    const Tensor& biases() const { return biases_; }

private:
    void check_input(const Shape& s) const;
    Tensor run_forward(const Tensor& input, std::vector<double>& cols) const;

    ConvSpec spec_;
    Tensor filters_; // (k, p, i, j)
    Tensor biases_;  // (k)
    Tensor grad_filters_;
    Tensor grad_biases_;

    Tensor cached_input_;
    std::vector<double> cols_; // im2col scratch, valid between forward and backward
    bool has_cache_ = false;
};

class MaxPoolLayer : public Layer {
public:
    explicit MaxPoolLayer(PoolSpec spec);

    Tensor apply(const Tensor& input) const override;
    Tensor forward(const Tensor& input) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& input_shape) const override;
    std::string describe() const override;

    const PoolSpec& spec() const { return spec_; }

private:
    Tensor run_forward(const Tensor& input, std::vector<std::size_t>* argmax) const;

    PoolSpec spec_;
    Shape cached_input_shape_;
    std::vector<std::size_t> argmax_; // flat input index of each window max
    bool has_cache_ = false;
};

class FcLayer : public Layer {
public:
    FcLayer(FcSpec spec, Tensor weights, Tensor biases);

    static std::unique_ptr<FcLayer> create(FcSpec spec, Rng& rng);

    Tensor apply(const Tensor& input) const override;
    Tensor forward(const Tensor& input) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& input_shape) const override;
    std::vector<ParamRef> params() override;
    std::string describe() const override;
    Tensor perturbed_output(const Tensor& input, const Tensor& base_out, std::size_t param_idx,
                            std::size_t flat, double eps) const override;

    const FcSpec& spec() const { return spec_; }
    const Tensor& weights() const { return weights_; }
    const Tensor& biases() const { return biases_; }

private:
    void check_input(const Tensor& input) const;

    FcSpec spec_;
    Tensor weights_; // (units, in_dim)
    Tensor biases_;  // (units)
    Tensor grad_weights_;
    Tensor grad_biases_;

    Tensor cached_input_;
    bool has_cache_ = false;
};

class ReluLayer : public Layer {
public:
    Tensor apply(const Tensor& input) const override;
    Tensor forward(const Tensor& input) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& input_shape) const override { return input_shape; }
    std::string describe() const override { return "relu"; }

private:
    Tensor cached_input_;
    bool has_cache_ = false;
};

class LogisticLayer : public Layer {
public:
    Tensor apply(const Tensor& input) const override;
    Tensor forward(const Tensor& input) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& input_shape) const override { return input_shape; }
    std::string describe() const override { return "logistic"; }

private:
    Tensor cached_output_;
    bool has_cache_ = false;
};

// Elementwise max(0, x).
Tensor relu(const Tensor& input);

// Elementwise 1/(1+exp(-x)) in the overflow-safe branch form; outputs in (0,1).
Tensor logistic(const Tensor& input);
double logistic_scalar(double x);

struct LossResult {
    double loss;
    Tensor grad_preactivation; // d loss / d logistic-preactivation = (p - t) / q
};

// Mean binary cross-entropy over the q output units, probabilities clamped to
// [1e-12, 1-1e-12] inside the logs. `target` must be one-hot.
LossResult cross_entropy_loss(const Tensor& probs, const Tensor& target);

} // namespace stormnet
