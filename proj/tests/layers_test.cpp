#include "stormnet/layers.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace stormnet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Scalar objective sum(w .* layer(x)) for layer-level gradient checks; the
// numeric side reruns the full forward with one value shifted.
template <typename MakeLayer>
double layer_fd_max_rel_error(MakeLayer&& make_layer, const Tensor& input, Rng& rng, double eps) {
    auto layer = make_layer();
    const Tensor out = layer->forward(input);
    Tensor weights = random_tensor(out.shape(), rng);
    Tensor grads_in = layer->backward(weights);

    std::vector<Tensor> param_grads;
    for (const ParamRef& p : layer->params()) param_grads.push_back(*p.grad);

    auto objective = [&](Layer& l, const Tensor& x) {
        const Tensor o = l.apply(x);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) acc += weights[i] * o[i];
        return acc;
    };

    double max_rel = 0.0;
    auto update = [&](double analytic, double numeric) {
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    };

    // parameters
    auto fresh = make_layer();
    auto prefs = fresh->params();
    for (std::size_t t = 0; t < prefs.size(); ++t) {
        for (std::size_t j = 0; j < prefs[t].value->size(); ++j) {
            double& v = (*prefs[t].value)[j];
            const double keep = v;
            v = keep + eps;
            const double lp = objective(*fresh, input);
            v = keep - eps;
            const double lm = objective(*fresh, input);
            v = keep;
            update(param_grads[t][j], (lp - lm) / (2 * eps));
        }
    }
    // input
    Tensor x = input;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double keep = x[j];
        x[j] = keep + eps;
        const double lp = objective(*fresh, x);
        x[j] = keep - eps;
        const double lm = objective(*fresh, x);
        x[j] = keep;
        update(grads_in[j], (lp - lm) / (2 * eps));
    }
    return max_rel;
}

} // namespace

// ---------------------------------------------------------------------------
// convolution

TEST_CASE("conv degenerate 1x1 window is a scalar product") {
    ConvSpec spec{1, 1, 1, 1};
    ConvLayer layer(spec, Tensor::from_values({1, 1, 1, 1}, {2.5}), Tensor::from_values({1}, {0.75}));
    const Tensor out = layer.apply(Tensor::from_values({1, 1, 1}, {3.0}));
    CHECK(out.shape() == Shape{1, 1, 1});
    CHECK(out[0] == doctest::Approx(2.5 * 3.0 + 0.75).epsilon(1e-15));
}

TEST_CASE("conv 2x2 ones filter on the 3x3 ramp") {
    ConvSpec spec{2, 2, 1, 1};
    ConvLayer layer(spec, Tensor::full({1, 1, 2, 2}, 1.0), Tensor::zeros({1}));
    const Tensor input = Tensor::from_values({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Tensor out = layer.apply(input);
    CHECK(out.shape() == Shape{1, 2, 2});
    CHECK(out[0] == 12.0);
    CHECK(out[1] == 16.0);
    CHECK(out[2] == 24.0);
    CHECK(out[3] == 28.0);
}

TEST_CASE("conv output shape for the 5x5-8 layer on 8x32x32") {
    Rng rng(1);
    auto layer = ConvLayer::create(ConvSpec{5, 5, 8, 8}, rng);
    CHECK(layer->output_shape({8, 32, 32}) == Shape{8, 28, 28});
}

TEST_CASE("conv shape errors") {
    Rng rng(1);
    auto layer = ConvLayer::create(ConvSpec{5, 5, 4, 3}, rng);
    CHECK_THROWS_AS(layer->apply(Tensor({2, 8, 8})), ShapeError);  // channel mismatch
    CHECK_THROWS_AS(layer->apply(Tensor({3, 4, 8})), ShapeError);  // filter taller than input
    CHECK_THROWS_AS(layer->backward(Tensor({4, 4, 4})), StateError);
}

TEST_CASE("conv matches the quadruple-loop oracle on random cases") {
    Rng rng(2024);
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t p = 1 + rng.below(4);
        const std::size_t fh = 1 + rng.below(5), fw = 1 + rng.below(5);
        const std::size_t h = fh + rng.below(16 - fh + 1), w = fw + rng.below(16 - fw + 1);
        const std::size_t k = 1 + rng.below(8);
        const Tensor input = random_tensor({p, h, w}, rng, -2, 2);
        const Tensor filters = random_tensor({k, p, fh, fw}, rng, -1, 1);
        const Tensor biases = random_tensor({k}, rng, -1, 1);
        ConvLayer layer(ConvSpec{fh, fw, k, p}, filters, biases);
        const Tensor got = layer.apply(input);
        const Tensor want = oracles::naive_conv_forward(input, filters, biases);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
}

TEST_CASE("conv backward: zero upstream gradient gives zero gradients") {
    Rng rng(5);
    auto layer = ConvLayer::create(ConvSpec{3, 3, 2, 2}, rng);
    const Tensor input = random_tensor({2, 6, 6}, rng);
    const Tensor out = layer->forward(input);
    const Tensor grad_in = layer->backward(Tensor::zeros(out.shape()));
    for (std::size_t i = 0; i < grad_in.size(); ++i) CHECK(grad_in[i] == 0.0);
    for (const ParamRef& p : layer->params()) {
        for (std::size_t i = 0; i < p.grad->size(); ++i) CHECK((*p.grad)[i] == 0.0);
    }
}

TEST_CASE("conv backward product rule in the 1x1x1 case") {
    const double wv = 1.75, xv = -0.6;
    ConvSpec spec{1, 1, 1, 1};
    ConvLayer layer(spec, Tensor::from_values({1, 1, 1, 1}, {wv}), Tensor::from_values({1}, {0.3}));
    layer.forward(Tensor::from_values({1, 1, 1}, {xv}));
    const Tensor grad_in = layer.backward(Tensor::from_values({1, 1, 1}, {1.0}));
    CHECK(grad_in[0] == doctest::Approx(wv).epsilon(1e-15));
    auto prefs = layer.params();
    CHECK((*prefs[0].grad)[0] == doctest::Approx(xv).epsilon(1e-15)); // d/dw = v
    CHECK((*prefs[1].grad)[0] == doctest::Approx(1.0).epsilon(1e-15)); // d/db = 1
}

TEST_CASE("conv gradients match finite differences") {
    Rng rng(77);
    const Tensor input = random_tensor({2, 6, 6}, rng);
    Rng init(8);
    auto make = [&] {
        Rng r = init; // same layer every call
        return ConvLayer::create(ConvSpec{5, 5, 3, 2}, r);
    };
    CHECK(layer_fd_max_rel_error(make, input, rng, 1e-5) < 1e-5);
}

// ---------------------------------------------------------------------------
// relu

TEST_CASE("relu clamps negatives") {
    const Tensor out = relu(Tensor::from_values({3}, {-2, 0, 3}));
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 3.0);
}

TEST_CASE("relu is idempotent") {
    Rng rng(9);
    const Tensor x = random_tensor({64}, rng, -4, 4);
    const Tensor once = relu(x);
    const Tensor twice = relu(once);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(once[i] == twice[i]);
}

TEST_CASE("relu backward masks where input <= 0") {
    ReluLayer layer;
    layer.forward(Tensor::from_values({2}, {-1, 2}));
    const Tensor grad = layer.backward(Tensor::from_values({2}, {5, 7}));
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 7.0);

    // exact zero input routes no gradient
    ReluLayer at_zero;
    at_zero.forward(Tensor::from_values({1}, {0.0}));
    CHECK(at_zero.backward(Tensor::from_values({1}, {3.0}))[0] == 0.0);
}

// ---------------------------------------------------------------------------
// max pooling

TEST_CASE("maxpool picks the window max") {
    MaxPoolLayer layer(PoolSpec{2, 2});
    const Tensor out = layer.apply(Tensor::from_values({1, 2, 2}, {1, 2, 3, 4}));
    CHECK(out.shape() == Shape{1, 1, 1});
    CHECK(out[0] == 4.0);
}

TEST_CASE("maxpool drops trailing rows and cols") {
    MaxPoolLayer layer(PoolSpec{2, 2});
    Rng rng(4);
    const Tensor out = layer.apply(random_tensor({1, 5, 5}, rng));
    CHECK(out.shape() == Shape{1, 2, 2});
}

TEST_CASE("maxpool tie-break routes to the window top-left") {
    MaxPoolLayer layer(PoolSpec{2, 2});
    const Tensor out = layer.forward(Tensor::full({1, 4, 4}, 2.5));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 2.5);
    const Tensor grad_in = layer.backward(Tensor::full({1, 2, 2}, 1.0));
    // first-in-row-major wins: (0,0), (0,2), (2,0), (2,2)
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x) {
            CHECK(grad_in[y * 4 + x] == ((y % 2 == 0 && x % 2 == 0) ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("maxpool backward routes only to the argmax") {
    MaxPoolLayer layer(PoolSpec{2, 2});
    layer.forward(Tensor::from_values({1, 2, 2}, {1, 2, 3, 4}));
    const Tensor grad_in = layer.backward(Tensor::from_values({1, 1, 1}, {5.0}));
    CHECK(grad_in[0] == 0.0);
    CHECK(grad_in[1] == 0.0);
    CHECK(grad_in[2] == 0.0);
    CHECK(grad_in[3] == 5.0);
}

TEST_CASE("maxpool conserves the gradient sum") {
    Rng rng(12);
    MaxPoolLayer layer(PoolSpec{2, 3});
    const Tensor input = random_tensor({3, 8, 9}, rng);
    const Tensor out = layer.forward(input);
    const Tensor grad_out = random_tensor(out.shape(), rng);
    const Tensor grad_in = layer.backward(grad_out);
    double sum_out = 0.0, sum_in = 0.0;
    for (std::size_t i = 0; i < grad_out.size(); ++i) sum_out += grad_out[i];
    for (std::size_t i = 0; i < grad_in.size(); ++i) sum_in += grad_in[i];
    CHECK(sum_in == doctest::Approx(sum_out).epsilon(1e-12));
}

TEST_CASE("maxpool gradient matches finite differences away from ties") {
    Rng rng(31);
    const Tensor input = random_tensor({3, 8, 8}, rng); // continuous draws: ties have measure zero
    auto make = [] { return std::make_unique<MaxPoolLayer>(PoolSpec{2, 2}); };
    CHECK(layer_fd_max_rel_error(make, input, rng, 1e-5) < 1e-5);
}

TEST_CASE("maxpool errors") {
    MaxPoolLayer layer(PoolSpec{4, 4});
    CHECK_THROWS_AS(layer.apply(Tensor({1, 3, 8})), ShapeError);
    MaxPoolLayer fresh(PoolSpec{2, 2});
    CHECK_THROWS_AS(fresh.backward(Tensor({1, 1, 1})), StateError);
}

// ---------------------------------------------------------------------------
// fully connected

TEST_CASE("fc identity weights pass the input through") {
    Tensor eye = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    FcLayer layer(FcSpec{3, 3}, eye, Tensor::zeros({3}));
    const Tensor out = layer.apply(Tensor::from_values({3}, {0.5, -1.5, 2.0}));
    CHECK(out[0] == 0.5);
    CHECK(out[1] == -1.5);
    CHECK(out[2] == 2.0);
}

TEST_CASE("fc matrix-vector example") {
    FcLayer layer(FcSpec{2, 2}, Tensor::from_values({2, 2}, {1, 2, 3, 4}), Tensor::zeros({2}));
    const Tensor out = layer.apply(Tensor::from_values({2}, {1, 1}));
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 7.0);
}

TEST_CASE("fc accepts flattened multi-axis input") {
    Rng rng(3);
    auto layer = FcLayer::create(FcSpec{4, 12}, rng);
    const Tensor x = random_tensor({3, 2, 2}, rng);
    const Tensor out = layer->apply(x);
    CHECK(out.shape() == Shape{4});
    CHECK_THROWS_AS(layer->apply(Tensor({13})), ShapeError);
}

TEST_CASE("fc gradients match finite differences") {
    Rng rng(41);
    const Tensor input = random_tensor({10}, rng);
    Rng init(21);
    auto make = [&] {
        Rng r = init;
        return FcLayer::create(FcSpec{5, 10}, r);
    };
    CHECK(layer_fd_max_rel_error(make, input, rng, 1e-5) < 1e-6);
}

// ---------------------------------------------------------------------------
// logistic + loss

TEST_CASE("logistic fixed points and identity") {
    CHECK(logistic_scalar(0.0) == 0.5);
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-30, 30);
        CHECK(logistic_scalar(x) + logistic_scalar(-x) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(logistic_scalar(x) > 0.0);
        CHECK(logistic_scalar(x) < 1.0);
    }
}

TEST_CASE("logistic saturates without overflow") {
    const double v = logistic_scalar(-1000.0);
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
    CHECK(v <= 1e-300);
    CHECK(std::isfinite(logistic_scalar(1000.0)));
}

TEST_CASE("cross entropy at the target is almost zero") {
    const Tensor probs = Tensor::from_values({2}, {1.0 - 1e-13, 1e-13});
    const Tensor target = Tensor::from_values({2}, {1, 0});
    CHECK(cross_entropy_loss(probs, target).loss < 1e-10);
}

TEST_CASE("cross entropy of the uniform coin is log 2") {
    const auto res = cross_entropy_loss(Tensor::from_values({2}, {0.5, 0.5}), Tensor::from_values({2}, {1, 0}));
    CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(res.grad_preactivation[0] == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(res.grad_preactivation[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects malformed targets") {
    const Tensor probs = Tensor::from_values({2}, {0.5, 0.5});
    CHECK_THROWS_AS(cross_entropy_loss(probs, Tensor::from_values({2}, {1, 1})), ValidationError);
    CHECK_THROWS_AS(cross_entropy_loss(probs, Tensor::from_values({2}, {0, 0})), ValidationError);
    CHECK_THROWS_AS(cross_entropy_loss(probs, Tensor::from_values({2}, {0.4, 0.6})), ValidationError);
}

TEST_CASE("fused gradient matches finite differences through logistic + loss") {
    Rng rng(55);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor pre({2});
        pre[0] = rng.uniform(-3, 3);
        pre[1] = rng.uniform(-3, 3);
        const Tensor target = Tensor::from_values({2}, {1, 0});
        const auto res = cross_entropy_loss(logistic(pre), target);
        for (std::size_t j = 0; j < 2; ++j) {
            const double eps = 1e-6;
            Tensor hi = pre, lo = pre;
            hi[j] += eps;
            lo[j] -= eps;
            const double numeric = (cross_entropy_loss(logistic(hi), target).loss -
                                    cross_entropy_loss(logistic(lo), target).loss) /
                                   (2 * eps);
            CHECK(res.grad_preactivation[j] == doctest::Approx(numeric).epsilon(1e-7));
        }
    }
}

TEST_CASE("forward passes are pure") {
    Rng rng(13);
    auto conv = ConvLayer::create(ConvSpec{3, 3, 4, 2}, rng);
    const Tensor x = random_tensor({2, 7, 7}, rng);
    const Tensor a = conv->apply(x);
    const Tensor b = conv->apply(x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
