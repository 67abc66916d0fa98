#include "gfagru/autodiff.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace gfagru;

namespace {

using Build = std::function<Var(Tape&, std::vector<Var>&)>;

Tensor random_tensor(Shape shape, std::mt19937_64& eng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) v = u(eng);
    return t;
}

// Checks d sum(build(...)) / d inputs against central differences.
void check(const Build& build, std::vector<Tensor> inputs, double tol = 1e-6) {
    auto eval = [&](const std::vector<Tensor>& in) {
        Tape t;
        std::vector<Var> vs;
        for (const auto& x : in) vs.push_back(t.leaf(x));
        double s = 0.0;
        for (double v : build(t, vs).value().values()) s += v;
        return s;
    };
    Tape t;
    std::vector<Var> vs;
    for (const auto& x : inputs) vs.push_back(t.leaf(x));
    Var out = build(t, vs);
    t.backward(out, Tensor(out.value().shape(), 1.0));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor g = t.grad(vs[k]);
        ASSERT_TRUE(g.same_shape(inputs[k]));
        std::vector<double> flat(inputs[k].values().begin(), inputs[k].values().end());
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) {
                auto in = inputs;
                std::copy(x.begin(), x.end(), in[k].values().begin());
                return eval(in);
            },
            flat);
        for (std::size_t i = 0; i < fd.size(); ++i) {
            EXPECT_NEAR(g[i], fd[i], tol * std::max(1.0, std::abs(fd[i]))) << "input " << k << " element " << i;
        }
    }
}

}  // namespace

TEST(Autodiff, ElementwiseGradients) {
    std::mt19937_64 eng(1);
    const auto a = random_tensor({3, 4}, eng), b = random_tensor({3, 4}, eng, 0.5, 2.0);
    check([](Tape&, std::vector<Var>& v) { return v[0] + v[1]; }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return v[0] - v[1]; }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return v[0] * v[1]; }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return v[0] / v[1]; }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return -ad::scale(v[0], 3.0); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::add_scalar(ad::square(v[0]), 2.0); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::exp(v[0]); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::log(v[0]); }, {b});
    check([](Tape&, std::vector<Var>& v) { return ad::tanh(v[0]); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::sigmoid(v[0]); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::softplus(v[0]); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::pow(v[1], v[0]); }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return ad::maximum(v[0], ad::scale(v[1], 0.3)); }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return ad::minimum(v[0], ad::scale(v[1], 0.3)); }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return ad::clamp(v[0], -0.5, 0.5); }, {a});
}

TEST(Autodiff, BroadcastingGradients) {
    std::mt19937_64 eng(2);
    const auto m = random_tensor({4, 3}, eng), row = random_tensor({1, 3}, eng), col = random_tensor({4, 1}, eng);
    const auto s = Tensor::scalar(0.7), vec = random_tensor({3}, eng);
    check([](Tape&, std::vector<Var>& v) { return v[0] * v[1]; }, {m, row});
    check([](Tape&, std::vector<Var>& v) { return v[0] + v[1]; }, {m, col});
    check([](Tape&, std::vector<Var>& v) { return v[0] / ad::add_scalar(ad::square(v[1]), 1.0); }, {m, s});
    check([](Tape&, std::vector<Var>& v) { return v[0] - v[1]; }, {m, vec});
}

TEST(Autodiff, MatrixGradients) {
    std::mt19937_64 eng(3);
    const auto a = random_tensor({3, 4}, eng), b = random_tensor({4, 2}, eng);
    check([](Tape&, std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }, {a, b});
    check([](Tape&, std::vector<Var>& v) { return ad::square(ad::softmax_rows(v[0])); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::sum(ad::tanh(v[0])); }, {a});
    check([](Tape&, std::vector<Var>& v) { return ad::square(ad::slice_cols(v[0], 1, 2)); }, {a});
    check(
        [](Tape&, std::vector<Var>& v) {
            const std::vector<Var> parts{v[0], ad::exp(v[1])};
            return ad::square(ad::concat_cols(parts));
        },
        {random_tensor({2, 3}, eng), random_tensor({2, 2}, eng)});
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0));
    Var y = x * x + x;  // dy/dx = 2x + 1
    t.backward(y, Tensor::scalar(1.0));
    EXPECT_DOUBLE_EQ(t.grad(x)[0], 7.0);
}

TEST(Autodiff, ConstantsGetNoGradient) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(2.0));
    Var c = t.constant(Tensor::scalar(5.0));
    Var y = x * c;
    EXPECT_FALSE(t.requires_grad(c));
    t.backward(y, Tensor::scalar(1.0));
    EXPECT_DOUBLE_EQ(t.grad(x)[0], 5.0);
    EXPECT_DOUBLE_EQ(t.grad(c)[0], 0.0);
}

TEST(Autodiff, BackwardRunsOnce) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(1.0));
    Var y = ad::exp(x);
    t.backward(y, Tensor::scalar(1.0));
    EXPECT_THROW(t.backward(y, Tensor::scalar(1.0)), std::logic_error);
}

TEST(Autodiff, NonFiniteValuesAreReported) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(-1.0));
    EXPECT_THROW(ad::log(x), NumericError);
    Var big = t.leaf(Tensor::scalar(1000.0));
    EXPECT_THROW(ad::exp(big), NumericError);
}

TEST(Autodiff, ShapeMismatchIsRejected) {
    Tape t;
    Var a = t.leaf(Tensor::matrix(2, 3));
    Var b = t.leaf(Tensor::matrix(3, 2));
    EXPECT_THROW(a + b, std::invalid_argument);
    EXPECT_THROW(ad::matmul(a, a), std::invalid_argument);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
    std::mt19937_64 eng(4);
    Tape t;
    Var s = ad::softmax_rows(t.constant(random_tensor({5, 7}, eng, -30, 30)));
    for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 7; ++c) sum += s.value().at(r, c);
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(RmsProp, HandComputedStep) {
    std::vector<Tensor> p{Tensor::scalar(1.0)};
    const std::vector<Tensor> g{Tensor::scalar(0.5)};
    OptimizerState st(RmsPropConfig{0.1, 0.2, 0.9, 1e-8}, p);
    rmsprop_step(p, g, st);
    const double v1 = 0.1 * 0.25;
    const double b1 = 0.5 / (std::sqrt(v1) + 1e-8);
    EXPECT_NEAR(p[0][0], 1.0 - 0.1 * b1, 1e-14);
    rmsprop_step(p, g, st);
    const double v2 = 0.9 * v1 + 0.1 * 0.25;
    const double b2 = 0.2 * b1 + 0.5 / (std::sqrt(v2) + 1e-8);
    EXPECT_NEAR(p[0][0], 1.0 - 0.1 * b1 - 0.1 * b2, 1e-14);
}

TEST(RmsProp, NonFiniteGradientLeavesStateUntouched) {
    std::vector<Tensor> p{Tensor::scalar(1.0), Tensor::scalar(2.0)};
    OptimizerState st(RmsPropConfig{}, p);
    const std::vector<Tensor> g{Tensor::scalar(0.1), Tensor::scalar(std::nan(""))};
    EXPECT_THROW(rmsprop_step(p, g, st), NumericError);
    EXPECT_EQ(p[0][0], 1.0);
    EXPECT_EQ(st.square_avg[0][0], 0.0);
}

TEST(RmsProp, MinimizesQuadratic) {
    std::vector<Tensor> p{Tensor::column({3.0, -2.0})};
    OptimizerState st(RmsPropConfig{0.01, 0.2, 0.99, 1e-8}, p);
    for (int i = 0; i < 3000; ++i) {
        Tape t;
        Var x = t.leaf(p[0]);
        Var loss = ad::sum(ad::square(ad::add_scalar(x, -0.5)));
        t.backward(loss, Tensor::scalar(1.0));
        const std::vector<Tensor> g{t.grad(x)};
        rmsprop_step(p, g, st);
    }
    EXPECT_NEAR(p[0][0], 0.5, 1e-2);
    EXPECT_NEAR(p[0][1], 0.5, 1e-2);
}

TEST(Snapshot, BitExactRoundTrip) {
    std::mt19937_64 eng(5);
    std::vector<NamedTensor> ts{{"w", random_tensor({3, 4}, eng)}, {"b", random_tensor({4}, eng)},
                                {"s", Tensor::scalar(1.0 / 3.0)}};
    std::stringstream buf;
    write_snapshot(buf, ts);
    const auto back = read_snapshot(buf);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(back[k].name, ts[k].name);
        EXPECT_EQ(back[k].value.shape(), ts[k].value.shape());
        for (std::size_t i = 0; i < ts[k].value.size(); ++i) EXPECT_EQ(back[k].value[i], ts[k].value[i]);
    }
}

TEST(Snapshot, TruncatedInputFails) {
    std::stringstream buf;
    std::vector<NamedTensor> ts{{"w", Tensor::matrix(2, 2, 1.0)}};
    write_snapshot(buf, ts);
    std::string text = buf.str();
    std::istringstream cut(text.substr(0, text.size() / 2));
    EXPECT_THROW(read_snapshot(cut), std::runtime_error);
}
