#include "stormnet/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stormnet {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

// Unrolls (p,H,W) into a (p*i*j) x (oh*ow) patch matrix for valid stride-1
// convolution. Row (c*i+a)*j+b holds input[c, y+a, x+b] over output positions.
void im2col(const Tensor& input, std::size_t fh, std::size_t fw, std::vector<double>& cols) {
    const std::size_t p = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t oh = h - fh + 1, ow = w - fw + 1;
    cols.resize(p * fh * fw * oh * ow);
    double* dst = cols.data();
    const double* src = input.data();
    for (std::size_t c = 0; c < p; ++c) {
        for (std::size_t a = 0; a < fh; ++a) {
            for (std::size_t b = 0; b < fw; ++b) {
                for (std::size_t y = 0; y < oh; ++y) {
                    const double* row = src + (c * h + y + a) * w + b;
                    std::copy(row, row + ow, dst);
                    dst += ow;
                }
            }
        }
    }
}

// Scatter-add of the patch-matrix gradient back onto the input grid.
void col2im_add(const std::vector<double>& cols, std::size_t p, std::size_t h, std::size_t w,
                std::size_t fh, std::size_t fw, Tensor& grad_input) {
    const std::size_t oh = h - fh + 1, ow = w - fw + 1;
    const double* src = cols.data();
    double* dst = grad_input.data();
    for (std::size_t c = 0; c < p; ++c) {
        for (std::size_t a = 0; a < fh; ++a) {
            for (std::size_t b = 0; b < fw; ++b) {
                for (std::size_t y = 0; y < oh; ++y) {
                    double* row = dst + (c * h + y + a) * w + b;
                    for (std::size_t x = 0; x < ow; ++x) row[x] += src[x];
                    src += ow;
                }
            }
        }
    }
}

} // namespace

Tensor Layer::perturbed_output(const Tensor&, const Tensor&, std::size_t, std::size_t, double) const {
    throw StateError("perturbed_output called on a parameterless layer");
}

void Layer::zero_grads() {
    for (ParamRef& p : params()) p.grad->fill(0.0);
}

// ---------------------------------------------------------------------------
// ConvLayer

ConvLayer::ConvLayer(ConvSpec spec, Tensor filters, Tensor biases)
    : spec_(spec), filters_(std::move(filters)), biases_(std::move(biases)) {
    if (spec_.filter_h == 0 || spec_.filter_w == 0 || spec_.num_filters == 0 || spec_.in_channels == 0) {
        throw ValidationError("conv spec extents must be >= 1");
    }
    const Shape want{spec_.num_filters, spec_.in_channels, spec_.filter_h, spec_.filter_w};
    if (filters_.shape() != want) {
        throw ShapeError("conv filters shape " + shape_to_string(filters_.shape()) + " != " +
                         shape_to_string(want));
    }
    if (biases_.shape() != Shape{spec_.num_filters}) throw ShapeError("conv biases shape mismatch");
    grad_filters_ = Tensor::zeros(filters_.shape());
    grad_biases_ = Tensor::zeros(biases_.shape());
}

std::unique_ptr<ConvLayer> ConvLayer::create(ConvSpec spec, Rng& rng) {
    const std::size_t fan_in = spec.in_channels * spec.filter_h * spec.filter_w;
    const std::size_t fan_out = spec.num_filters * spec.filter_h * spec.filter_w;
    Tensor filters = init_uniform_scaled({spec.num_filters, spec.in_channels, spec.filter_h, spec.filter_w},
                                         fan_in, fan_out, rng);
    return std::make_unique<ConvLayer>(spec, std::move(filters), Tensor::zeros({spec.num_filters}));
}

void ConvLayer::check_input(const Shape& s) const {
    if (s.size() != 3) throw ShapeError("conv expects a (p,m,n) input, got " + shape_to_string(s));
    if (s[0] != spec_.in_channels) {
        throw ShapeError("conv channel mismatch: input has " + std::to_string(s[0]) + ", spec wants " +
                         std::to_string(spec_.in_channels));
    }
    if (s[1] < spec_.filter_h || s[2] < spec_.filter_w) {
        throw ShapeError("conv filter " + std::to_string(spec_.filter_h) + "x" + std::to_string(spec_.filter_w) +
                         " larger than input " + shape_to_string(s));
    }
}

Shape ConvLayer::output_shape(const Shape& s) const {
    check_input(s);
    return {spec_.num_filters, s[1] - spec_.filter_h + 1, s[2] - spec_.filter_w + 1};
}

Tensor ConvLayer::run_forward(const Tensor& input, std::vector<double>& cols) const {
    check_input(input.shape());
    const std::size_t oh = input.extent(1) - spec_.filter_h + 1;
    const std::size_t ow = input.extent(2) - spec_.filter_w + 1;
    const std::size_t patch = spec_.in_channels * spec_.filter_h * spec_.filter_w;
    const std::size_t n = oh * ow;

    im2col(input, spec_.filter_h, spec_.filter_w, cols);

    Tensor out({spec_.num_filters, oh, ow});
    ConstMapRM w(filters_.data(), static_cast<Eigen::Index>(spec_.num_filters), static_cast<Eigen::Index>(patch));
    ConstMapRM c(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(n));
    MapRM o(out.data(), static_cast<Eigen::Index>(spec_.num_filters), static_cast<Eigen::Index>(n));
    o.noalias() = w * c;
    for (std::size_t f = 0; f < spec_.num_filters; ++f) {
        double* row = out.data() + f * n;
        const double b = biases_[f];
        for (std::size_t i = 0; i < n; ++i) row[i] += b;
    }
    return out;
}

Tensor ConvLayer::apply(const Tensor& input) const {
    std::vector<double> cols;
    return run_forward(input, cols);
}

Tensor ConvLayer::forward(const Tensor& input) {
    Tensor out = run_forward(input, cols_);
    cached_input_ = input;
    has_cache_ = true;
    return out;
}

Tensor ConvLayer::backward(const Tensor& grad_out) {
    if (!has_cache_) throw StateError("conv backward without a cached forward");
    const Shape out_shape = output_shape(cached_input_.shape());
    if (grad_out.shape() != out_shape) {
        throw ShapeError("conv grad_out shape " + shape_to_string(grad_out.shape()) + " != forward output " +
                         shape_to_string(out_shape));
    }
    const std::size_t p = spec_.in_channels, h = cached_input_.extent(1), w = cached_input_.extent(2);
    const std::size_t patch = p * spec_.filter_h * spec_.filter_w;
    const std::size_t n = out_shape[1] * out_shape[2];

    // grad_bias[f] = sum over the f-th output map
    for (std::size_t f = 0; f < spec_.num_filters; ++f) {
        const double* row = grad_out.data() + f * n;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += row[i];
        grad_biases_[f] += acc;
    }

    ConstMapRM g(grad_out.data(), static_cast<Eigen::Index>(spec_.num_filters), static_cast<Eigen::Index>(n));
    ConstMapRM c(cols_.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(n));
    MapRM gw(grad_filters_.data(), static_cast<Eigen::Index>(spec_.num_filters), static_cast<Eigen::Index>(patch));
    gw.noalias() += g * c.transpose();

    // grad w.r.t. input: scatter W^T * grad_out back through im2col
    std::vector<double> grad_cols(patch * n);
    ConstMapRM wm(filters_.data(), static_cast<Eigen::Index>(spec_.num_filters), static_cast<Eigen::Index>(patch));
    MapRM gc(grad_cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(n));
    gc.noalias() = wm.transpose() * g;

    Tensor grad_input = Tensor::zeros(cached_input_.shape());
    col2im_add(grad_cols, p, h, w, spec_.filter_h, spec_.filter_w, grad_input);

    has_cache_ = false;
    return grad_input;
}

std::vector<ParamRef> ConvLayer::params() {
    return {{&filters_, &grad_filters_, true, "filters"}, {&biases_, &grad_biases_, false, "biases"}};
}

std::string ConvLayer::describe() const {
    std::ostringstream out;
    out << "conv " << spec_.filter_h << "x" << spec_.filter_w << "-" << spec_.num_filters;
    return out.str();
}

Tensor ConvLayer::perturbed_output(const Tensor& input, const Tensor& base_out, std::size_t param_idx,
                                   std::size_t flat, double eps) const {
    Tensor out = base_out;
    const std::size_t oh = out.extent(1), ow = out.extent(2);
    const std::size_t n = oh * ow;
    if (param_idx == 1) { // bias f shifts its whole map
        double* row = out.data() + flat * n;
        for (std::size_t i = 0; i < n; ++i) row[i] += eps;
        return out;
    }
    // filter weight (f,c,a,b): out[f,y,x] += eps * input[c, y+a, x+b]
    const std::size_t fw = spec_.filter_w, fh = spec_.filter_h;
    const std::size_t b = flat % fw;
    const std::size_t a = (flat / fw) % fh;
    const std::size_t c = (flat / (fw * fh)) % spec_.in_channels;
    const std::size_t f = flat / (fw * fh * spec_.in_channels);
    const std::size_t w_in = input.extent(2);
    double* dst = out.data() + f * n;
    const double* src = input.data() + (c * input.extent(1) + a) * w_in + b;
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] += eps * src[y * w_in + x];
    }
    return out;
}

// ---------------------------------------------------------------------------
// MaxPoolLayer

MaxPoolLayer::MaxPoolLayer(PoolSpec spec) : spec_(spec) {
    if (spec_.window_h == 0 || spec_.window_w == 0) throw ValidationError("pool window must be >= 1");
}

Shape MaxPoolLayer::output_shape(const Shape& s) const {
    if (s.size() != 3) throw ShapeError("pool expects a (c,h,w) input, got " + shape_to_string(s));
    if (s[1] < spec_.window_h || s[2] < spec_.window_w) {
        throw ShapeError("pool window " + std::to_string(spec_.window_h) + "x" + std::to_string(spec_.window_w) +
                         " exceeds input " + shape_to_string(s));
    }
    return {s[0], s[1] / spec_.window_h, s[2] / spec_.window_w};
}

Tensor MaxPoolLayer::run_forward(const Tensor& input, std::vector<std::size_t>* argmax) const {
    const Shape os = output_shape(input.shape());
    const std::size_t ch = os[0], oh = os[1], ow = os[2];
    const std::size_t h = input.extent(1), w = input.extent(2);
    Tensor out(os);
    if (argmax) argmax->assign(ch * oh * ow, 0);
    const double* src = input.data();
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const std::size_t y0 = y * spec_.window_h, x0 = x * spec_.window_w;
                // first max in row-major window scan wins ties
                std::size_t best = (c * h + y0) * w + x0;
                double best_v = src[best];
                for (std::size_t a = 0; a < spec_.window_h; ++a) {
                    const std::size_t base = (c * h + y0 + a) * w + x0;
                    for (std::size_t b = 0; b < spec_.window_w; ++b) {
                        if (src[base + b] > best_v) {
                            best_v = src[base + b];
                            best = base + b;
                        }
                    }
                }
                out.at3(c, y, x) = best_v;
                if (argmax) (*argmax)[(c * oh + y) * ow + x] = best;
            }
        }
    }
    return out;
}

Tensor MaxPoolLayer::apply(const Tensor& input) const {
    return run_forward(input, nullptr);
}

Tensor MaxPoolLayer::forward(const Tensor& input) {
    Tensor out = run_forward(input, &argmax_);
    cached_input_shape_ = input.shape();
    has_cache_ = true;
    return out;
}

Tensor MaxPoolLayer::backward(const Tensor& grad_out) {
    if (!has_cache_) throw StateError("pool backward without a cached forward");
    if (grad_out.size() != argmax_.size()) {
        throw ShapeError("pool grad_out element count " + std::to_string(grad_out.size()) +
                         " != cached output count " + std::to_string(argmax_.size()));
    }
    Tensor grad_input = Tensor::zeros(cached_input_shape_);
    for (std::size_t i = 0; i < argmax_.size(); ++i) grad_input[argmax_[i]] += grad_out[i];
    has_cache_ = false;
    return grad_input;
}

std::string MaxPoolLayer::describe() const {
    return "maxpool " + std::to_string(spec_.window_h) + "x" + std::to_string(spec_.window_w);
}

// ---------------------------------------------------------------------------
// FcLayer

FcLayer::FcLayer(FcSpec spec, Tensor weights, Tensor biases) : spec_(spec), weights_(std::move(weights)), biases_(std::move(biases)) {
    if (spec_.num_units == 0 || spec_.in_dim == 0) throw ValidationError("fc spec extents must be >= 1");
    if (weights_.shape() != Shape{spec_.num_units, spec_.in_dim}) throw ShapeError("fc weights shape mismatch");
    if (biases_.shape() != Shape{spec_.num_units}) throw ShapeError("fc biases shape mismatch");
    grad_weights_ = Tensor::zeros(weights_.shape());
    grad_biases_ = Tensor::zeros(biases_.shape());
}

std::unique_ptr<FcLayer> FcLayer::create(FcSpec spec, Rng& rng) {
    Tensor weights = init_uniform_scaled({spec.num_units, spec.in_dim}, spec.in_dim, spec.num_units, rng);
    return std::make_unique<FcLayer>(spec, std::move(weights), Tensor::zeros({spec.num_units}));
}

void FcLayer::check_input(const Tensor& input) const {
    if (input.size() != spec_.in_dim) {
        throw ShapeError("fc expects " + std::to_string(spec_.in_dim) + " inputs, got " +
                         std::to_string(input.size()));
    }
}

Shape FcLayer::output_shape(const Shape& s) const {
    if (shape_product(s) != spec_.in_dim) {
        throw ShapeError("fc expects " + std::to_string(spec_.in_dim) + " inputs, got shape " + shape_to_string(s));
    }
    return {spec_.num_units};
}

Tensor FcLayer::apply(const Tensor& input) const {
    check_input(input);
    Tensor out({spec_.num_units});
    ConstMapRM w(weights_.data(), static_cast<Eigen::Index>(spec_.num_units), static_cast<Eigen::Index>(spec_.in_dim));
    Eigen::Map<const Eigen::VectorXd> x(input.data(), static_cast<Eigen::Index>(spec_.in_dim));
    Eigen::Map<Eigen::VectorXd> o(out.data(), static_cast<Eigen::Index>(spec_.num_units));
    o.noalias() = w * x;
    for (std::size_t u = 0; u < spec_.num_units; ++u) out[u] += biases_[u];
    return out;
}

Tensor FcLayer::forward(const Tensor& input) {
    Tensor out = apply(input);
    cached_input_ = input;
    has_cache_ = true;
    return out;
}

Tensor FcLayer::backward(const Tensor& grad_out) {
    if (!has_cache_) throw StateError("fc backward without a cached forward");
    if (grad_out.size() != spec_.num_units) throw ShapeError("fc grad_out size mismatch");

    for (std::size_t u = 0; u < spec_.num_units; ++u) grad_biases_[u] += grad_out[u];

    // grad_W = grad_out (x) input, grad_input = W^T grad_out
    const double* x = cached_input_.data();
    double* gw = grad_weights_.data();
    for (std::size_t u = 0; u < spec_.num_units; ++u) {
        const double g = grad_out[u];
        double* row = gw + u * spec_.in_dim;
        for (std::size_t j = 0; j < spec_.in_dim; ++j) row[j] += g * x[j];
    }

    Tensor grad_input = Tensor::zeros(cached_input_.shape());
    ConstMapRM w(weights_.data(), static_cast<Eigen::Index>(spec_.num_units), static_cast<Eigen::Index>(spec_.in_dim));
    Eigen::Map<const Eigen::VectorXd> g(grad_out.data(), static_cast<Eigen::Index>(spec_.num_units));
    Eigen::Map<Eigen::VectorXd> gi(grad_input.data(), static_cast<Eigen::Index>(spec_.in_dim));
    gi.noalias() = w.transpose() * g;

    has_cache_ = false;
    return grad_input;
}

std::vector<ParamRef> FcLayer::params() {
    return {{&weights_, &grad_weights_, true, "weights"}, {&biases_, &grad_biases_, false, "biases"}};
}

std::string FcLayer::describe() const {
    return "fc " + std::to_string(spec_.num_units);
}

Tensor FcLayer::perturbed_output(const Tensor& input, const Tensor& base_out, std::size_t param_idx,
                                 std::size_t flat, double eps) const {
    Tensor out = base_out;
    if (param_idx == 1) {
        out[flat] += eps;
    } else {
        const std::size_t u = flat / spec_.in_dim;
        const std::size_t j = flat % spec_.in_dim;
        out[u] += eps * input[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations and loss

Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return out;
}

double logistic_scalar(double x) {
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    // keep outputs strictly inside (0,1) even once exp() under/overflows
    if (v < 1e-308) v = 1e-308;
    if (v > 1.0 - 1e-16) v = 1.0 - 1e-16;
    return v;
}

Tensor logistic(const Tensor& input) {
    Tensor out = input;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logistic_scalar(out[i]);
    return out;
}

Tensor ReluLayer::apply(const Tensor& input) const {
    return relu(input);
}

Tensor ReluLayer::forward(const Tensor& input) {
    cached_input_ = input;
    has_cache_ = true;
    return relu(input);
}

Tensor ReluLayer::backward(const Tensor& grad_out) {
    if (!has_cache_) throw StateError("relu backward without a cached forward");
    if (!grad_out.same_shape(cached_input_)) throw ShapeError("relu grad_out shape mismatch");
    Tensor grad_input = grad_out;
    // subgradient 0 at exactly x == 0
    for (std::size_t i = 0; i < grad_input.size(); ++i) {
        if (cached_input_[i] <= 0.0) grad_input[i] = 0.0;
    }
    has_cache_ = false;
    return grad_input;
}

Tensor LogisticLayer::apply(const Tensor& input) const {
    return logistic(input);
}

Tensor LogisticLayer::forward(const Tensor& input) {
    Tensor out = logistic(input);
    cached_output_ = out;
    has_cache_ = true;
    return out;
}

Tensor LogisticLayer::backward(const Tensor& grad_out) {
    if (!has_cache_) throw StateError("logistic backward without a cached forward");
    if (!grad_out.same_shape(cached_output_)) throw ShapeError("logistic grad_out shape mismatch");
    Tensor grad_input = grad_out;
    for (std::size_t i = 0; i < grad_input.size(); ++i) {
        const double s = cached_output_[i];
        grad_input[i] *= s * (1.0 - s);
    }
    has_cache_ = false;
    return grad_input;
}

LossResult cross_entropy_loss(const Tensor& probs, const Tensor& target) {
    if (!probs.same_shape(target)) throw ShapeError("loss: probs and target shapes differ");
    std::size_t ones = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] == 1.0) {
            ++ones;
        } else if (target[i] != 0.0) {
            throw ValidationError("loss target must be one-hot");
        }
    }
    if (ones != 1) throw ValidationError("loss target must have exactly one 1");

    const double q = static_cast<double>(probs.size());
    constexpr double kClamp = 1e-12;
    double loss = 0.0;
    Tensor grad = Tensor::zeros(probs.shape());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::min(std::max(probs[i], kClamp), 1.0 - kClamp);
        loss -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
        grad[i] = (probs[i] - target[i]) / q;
    }
    return {loss / q, std::move(grad)};
}

} // namespace stormnet
