#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "test_util.hpp"
#include "wellqc/gradcheck.hpp"
#include "wellqc/layers.hpp"

using namespace wellqc;
using wellqc::test::naive_conv;
using wellqc::test::random_tensor;

namespace {

// Scalarized loss L(out) = sum(r * out) so dL/dout = r.
double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Max relative error between an analytic gradient and central differences
// of `loss` with respect to every coordinate of `x`.
double fd_max_rel(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& loss) {
    GradCheckOptions opt;
    return check_gradient("x", x.data(), analytic.data(), loss, opt).max_rel_error;
}

} // namespace

TEST(Conv2DTest, IdentityKernelCopiesInterior) {
    Rng rng(1);
    auto in = random_tensor<float>({5, 5, 1}, rng);
    Tensor<float> w({3, 3, 1, 1});
    w[4] = 1.0f;  // center tap
    Tensor<float> b({1});
    auto out = conv2d_forward(in, w, b, 1);
    ASSERT_EQ(out.shape(), (Shape{3, 3, 1}));
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x) EXPECT_EQ(out.at(y, x, 0), in.at(y + 1, x + 1, 0));
}

TEST(Conv2DTest, ConstantFieldTimesAllOnesKernel) {
    const float v = 0.75f;
    for (std::size_t k : {1u, 2u, 3u, 5u}) {
        Tensor<float> in({7, 7, 1}, v);
        Tensor<float> w({k, k, 1, 1}, 1.0f);
        auto out = conv2d_forward(in, w, Tensor<float>({1}), 1);
        for (auto o : out.data()) EXPECT_FLOAT_EQ(o, v * static_cast<float>(k * k));
    }
}

TEST(Conv2DTest, MatchesNaiveOracleOnRandomInput) {
    Rng rng(2);
    auto in = random_tensor<float>({6, 6, 2}, rng);
    auto w = random_tensor<float>({3, 3, 2, 2}, rng);
    auto b = random_tensor<float>({2}, rng);
    auto out = conv2d_forward(in, w, b, 1);
    std::size_t oh = 0, ow = 0;
    auto ref = naive_conv(in, w, b, 1, oh, ow);
    ASSERT_EQ(out.shape(), (Shape{oh, ow, 2}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-6);
}

TEST(Conv2DTest, StrideAndChannelMismatch) {
    Rng rng(3);
    auto in = random_tensor<float>({7, 7, 1}, rng);
    auto w = random_tensor<float>({3, 3, 1, 4}, rng);
    EXPECT_EQ(conv2d_forward(in, w, Tensor<float>({4}), 2).shape(), (Shape{3, 3, 4}));
    auto w2 = random_tensor<float>({3, 3, 2, 4}, rng);
    EXPECT_THROW(conv2d_forward(in, w2, Tensor<float>({4}), 1), ShapeError);
    auto big = random_tensor<float>({9, 9, 1, 1}, rng);
    EXPECT_THROW(conv2d_forward(in, big, Tensor<float>({1}), 1), ShapeError);
}

TEST(Conv2DTest, BackwardOfZeroGradientIsZero) {
    Rng rng(4);
    auto in = random_tensor<float>({5, 5, 2}, rng);
    auto w = random_tensor<float>({3, 3, 2, 3}, rng);
    auto g = conv2d_backward(Tensor<float>({3, 3, 3}), in, w, 1);
    for (const auto* t : {&g.input, &g.weights, &g.bias})
        for (auto v : t->data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2DTest, ScalarCaseProductRule) {
    Tensor<double> x({1, 1, 1}, 3.0), w({1, 1, 1, 1}, 0.5), gout({1, 1, 1}, 2.0);
    auto g = conv2d_backward(gout, x, w, 1);
    EXPECT_DOUBLE_EQ(g.weights[0], 2.0 * 3.0);
    EXPECT_DOUBLE_EQ(g.input[0], 2.0 * 0.5);
    EXPECT_DOUBLE_EQ(g.bias[0], 2.0);
}

TEST(Conv2DTest, BackwardMatchesFiniteDifferences) {
    Rng rng(5);
    for (std::size_t stride : {1u, 2u}) {
        auto in = random_tensor<double>({7, 6, 2}, rng);
        auto w = random_tensor<double>({3, 3, 2, 3}, rng);
        auto b = random_tensor<double>({3}, rng);
        const auto out_shape = conv2d_forward(in, w, b, stride).shape();
        auto r = random_tensor<double>(out_shape, rng);
        auto loss = [&] { return dot(conv2d_forward(in, w, b, stride), r); };
        auto g = conv2d_backward(r, in, w, stride);
        EXPECT_LT(fd_max_rel(in, g.input, loss), 1e-6);
        EXPECT_LT(fd_max_rel(w, g.weights, loss), 1e-6);
        EXPECT_LT(fd_max_rel(b, g.bias, loss), 1e-6);
    }
}

TEST(MaxPoolTest, ConstantImageStaysConstant) {
    Tensor<float> in({6, 6, 2}, 0.3f);
    auto r = maxpool2d_forward(in, 2, 2);
    EXPECT_EQ(r.output.shape(), (Shape{3, 3, 2}));
    for (auto v : r.output.data()) EXPECT_EQ(v, 0.3f);
}

TEST(MaxPoolTest, TiesRouteToFirstRowMajorIndex) {
    Tensor<float> in({2, 2, 1}, 1.0f);
    auto r = maxpool2d_forward(in, 2, 2);
    EXPECT_EQ(r.argmax[0], 0u);
    auto g = maxpool2d_backward(Tensor<float>({1, 1, 1}, 5.0f), r.argmax, in.shape());
    EXPECT_EQ(g[0], 5.0f);
    EXPECT_EQ(g[1] + g[2] + g[3], 0.0f);
}

TEST(MaxPoolTest, WindowLargerThanInput) {
    EXPECT_THROW(maxpool2d_forward(Tensor<float>({2, 2, 1}), 3, 1), ShapeError);
}

TEST(MaxPoolTest, BackwardMatchesFiniteDifferences) {
    Rng rng(6);
    auto in = random_tensor<double>({7, 7, 3}, rng);
    auto r = random_tensor<double>({3, 3, 3}, rng);
    auto fwd = maxpool2d_forward(in, 3, 2);
    ASSERT_EQ(fwd.output.shape(), r.shape());
    auto g = maxpool2d_backward(r, fwd.argmax, in.shape());
    auto loss = [&] { return dot(maxpool2d_forward(in, 3, 2).output, r); };
    EXPECT_LT(fd_max_rel(in, g, loss), 1e-6);
}

TEST(ReluTest, Definition) {
    Tensor<float> x({3}, {-1.f, 0.f, 2.f});
    auto y = relu_forward(x);
    EXPECT_EQ(y, (Tensor<float>({3}, {0.f, 0.f, 2.f})));
    auto g = relu_backward(Tensor<float>({3}, 1.0f), x);
    EXPECT_EQ(g, (Tensor<float>({3}, {0.f, 0.f, 1.f})));
}

TEST(DenseTest, IdentityWeightsPassThrough) {
    Tensor<float> x({3}, {0.5f, -2.f, 7.f});
    Tensor<float> w({3, 3});
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0f;
    EXPECT_EQ(dense_forward(x, w, Tensor<float>({3})), x);
    EXPECT_THROW(dense_forward(Tensor<float>({4}), w, Tensor<float>({3})), ShapeError);
}

TEST(DenseTest, BackwardMatchesFiniteDifferences) {
    Rng rng(7);
    auto x = random_tensor<double>({10}, rng);
    auto w = random_tensor<double>({4, 10}, rng);
    auto b = random_tensor<double>({4}, rng);
    auto r = random_tensor<double>({4}, rng);
    auto g = dense_backward(r, x, w);
    auto loss = [&] { return dot(dense_forward(x, w, b), r); };
    EXPECT_LT(fd_max_rel(x, g.input, loss), 1e-6);
    EXPECT_LT(fd_max_rel(w, g.weights, loss), 1e-6);
    EXPECT_LT(fd_max_rel(b, g.bias, loss), 1e-6);
}

TEST(DropoutTest, ZeroRateIsIdentityInBothModes) {
    Rng rng(8);
    auto x = random_tensor<float>({50}, rng);
    EXPECT_EQ(dropout_forward(x, 0.0, rng, Mode::Train).output, x);
    EXPECT_EQ(dropout_forward(x, 0.0, rng, Mode::Infer).output, x);
}

TEST(DropoutTest, InferModeIsExactIdentity) {
    Rng rng(9);
    auto x = random_tensor<float>({50}, rng);
    EXPECT_EQ(dropout_forward(x, 0.2, rng, Mode::Infer).output, x);
}

TEST(DropoutTest, TrainModeStatistics) {
    Rng rng(10);
    Tensor<float> x({100000}, 1.0f);
    auto r = dropout_forward(x, 0.2, rng, Mode::Train);
    double sum = 0;
    std::size_t zeros = 0;
    for (auto v : r.output.data()) {
        sum += v;
        zeros += (v == 0.0f);
    }
    EXPECT_NEAR(sum / 1e5, 1.0, 0.02);
    EXPECT_NEAR(static_cast<double>(zeros) / 1e5, 0.2, 0.01);
    auto g = dropout_backward(Tensor<float>({100000}, 1.0f), r.mask);
    EXPECT_EQ(g, r.output);
}

TEST(SoftmaxTest, SymmetryShiftAndClosedForm) {
    auto p = softmax(Tensor<double>({2}, {0.0, 0.0}));
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);

    Tensor<double> z({3}, {0.3, -1.2, 2.5});
    Tensor<double> shifted({3}, {100.3, 98.8, 102.5});
    auto a = softmax(z), b = softmax(shifted);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);

    auto q = softmax(Tensor<double>({2}, {std::log(1.0), std::log(3.0)}));
    EXPECT_NEAR(q[0], 0.25, 1e-12);
    EXPECT_NEAR(q[1], 0.75, 1e-12);
}

TEST(SoftmaxTest, ExtremeLogitsStayFinite) {
    auto p = softmax(Tensor<float>({2}, {1e30f, -1e30f}));
    EXPECT_TRUE(p.all_finite());
    EXPECT_EQ(p[0], 1.0f);
}

TEST(CrossEntropyTest, ClosedForms) {
    EXPECT_DOUBLE_EQ(sparse_ce_loss(Tensor<double>({2}, {0.0, 1.0}), 1), 0.0);
    EXPECT_NEAR(sparse_ce_loss(Tensor<double>({2}, {0.5, 0.5}), 0), std::log(2.0), 1e-12);
    EXPECT_NEAR(sparse_ce_from_logits(Tensor<double>({2}, {1.0, 1.0}), 1).loss, 0.6931471805599453, 1e-12);
    EXPECT_THROW(sparse_ce_loss(Tensor<double>({2}, {0.5, 0.5}), 2), LabelError);
    EXPECT_THROW(sparse_ce_from_logits(Tensor<double>({2}), 5), LabelError);
}

TEST(CrossEntropyTest, GradientIsSoftmaxMinusOneHot) {
    Rng rng(11);
    for (std::size_t label = 0; label < 4; ++label) {
        auto z = random_tensor<double>({4}, rng, -3, 3);
        auto lg = sparse_ce_from_logits(z, label);
        auto loss = [&] { return sparse_ce_from_logits(z, label).loss; };
        EXPECT_LT(fd_max_rel(z, lg.grad_logits, loss), 1e-6);
    }
}
