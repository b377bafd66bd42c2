#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_util.hpp"
#include "wellqc/architecture.hpp"
#include "wellqc/gradcheck.hpp"
#include "wellqc/model.hpp"

using namespace wellqc;
using wellqc::test::random_tensor;

TEST(InferShapesTest, ValidConvThenPool) {
    ArchitectureSpec spec;
    spec.input_shape = {111, 111, 1};
    spec.layers = {LayerSpec::conv2d(8, 3, 1), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2)};
    auto shapes = infer_shapes(spec);
    ASSERT_EQ(shapes.size(), 3u);
    EXPECT_EQ(shapes[0], (Shape{109, 109, 8}));
    EXPECT_EQ(shapes[1], (Shape{109, 109, 8}));
    EXPECT_EQ(shapes[2], (Shape{54, 54, 8}));
}

TEST(InferShapesTest, FlattenDenseSoftmax) {
    ArchitectureSpec spec;
    spec.input_shape = {4, 4, 1};
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(2), LayerSpec::softmax()};
    auto shapes = infer_shapes(spec);
    EXPECT_EQ(shapes, (std::vector<Shape>{{16}, {2}, {2}}));
}

TEST(InferShapesTest, PoolWindowExceedingInputNamesLayer) {
    ArchitectureSpec spec;
    spec.input_shape = {2, 2, 1};
    spec.layers = {LayerSpec::maxpool2d(3, 1)};
    try {
        infer_shapes(spec);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0 (maxpool2d)"), std::string::npos) << e.what();
    }
}

TEST(InferShapesTest, DenseWithoutFlattenAndMisplacedSoftmax) {
    ArchitectureSpec spec;
    spec.input_shape = {4, 4, 1};
    spec.layers = {LayerSpec::dense(2)};
    EXPECT_THROW(infer_shapes(spec), ShapeError);
    spec.layers = {LayerSpec::flatten(), LayerSpec::softmax(), LayerSpec::dense(2)};
    EXPECT_THROW(infer_shapes(spec), ShapeError);
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(3), LayerSpec::softmax()};
    EXPECT_THROW(validate(spec), ShapeError);  // 3 outputs, 2 classes
}

TEST(ArchitectureTest, DefaultSpecStructure) {
    const auto spec = default_cnn_spec();
    validate(spec);
    EXPECT_EQ(spec.layer_count(), 11u);
    EXPECT_EQ(counted_layers(spec), 9u);
    const auto shapes = infer_shapes(spec);
    EXPECT_EQ(shapes[5], (Shape{26, 26, 16}));
    EXPECT_EQ(shapes[6], (Shape{10816}));
    EXPECT_EQ(shapes[7], (Shape{48}));
    EXPECT_EQ(shapes.back(), (Shape{2}));
}

TEST(ArchitectureTest, TextRoundTrip) {
    for (const auto& spec : {default_cnn_spec(), logistic_spec(), toy_spec()}) {
        const auto text = to_text(spec);
        EXPECT_EQ(parse_architecture(text), spec) << text;
    }
}

TEST(ArchitectureTest, ParserRejectsBadInput) {
    EXPECT_THROW(parse_architecture("num_classes = 2\nlayer = flatten\n"), ConfigError);
    EXPECT_THROW(parse_architecture("input = 4 4 1\nlayer = conv3d\n"), ConfigError);
    EXPECT_THROW(parse_architecture("input = 4 4 1\npadding = same\n"), ConfigError);
    EXPECT_THROW(parse_architecture("input = 4 4 1\nlayer = dense units=2 kernel=3\n"), ConfigError);
    EXPECT_THROW(parse_architecture("input = 4 4 1\nlayer = flatten\nlayer = dense units=2\n"), ShapeError);
    const auto spec = parse_architecture("input = 4 4 1\nlayer = maxpool2d window=2\nlayer = flatten\n"
                                         "layer = dense units=2\nlayer = softmax\n");
    EXPECT_EQ(spec.layers[0].stride, 2u);
}

TEST(ModelTest, ParameterNamesAndCounts) {
    Model<float> m(default_cnn_spec(), 1);
    ASSERT_EQ(m.params().size(), 8u);
    EXPECT_EQ(m.params()[0].name, "layer0.W");
    EXPECT_TRUE(m.params()[0].is_weight);
    EXPECT_FALSE(m.params()[1].is_weight);
    EXPECT_EQ(m.params()[0].value.shape(), (Shape{3, 3, 1, 8}));
    EXPECT_EQ(m.param_count(), 80u + 1168u + 10816u * 48u + 48u + 98u);
    Model<float> lr(logistic_spec(), 1);
    EXPECT_EQ(lr.param_count(), 24644u);
}

TEST(ModelTest, HeUniformInitBoundsAndZeroBias) {
    Model<double> m(default_cnn_spec(), 3);
    const double limit = std::sqrt(6.0 / 9.0);
    for (auto v : m.params()[0].value.data()) EXPECT_LE(std::abs(v), limit);
    for (auto v : m.params()[1].value.data()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(Model<double>(default_cnn_spec(), 3).params(), m.params());
}

TEST(ModelTest, SingleImageProbabilitiesSumToOne) {
    Rng rng(4);
    Model<float> m(default_cnn_spec(), 4);
    auto img = random_tensor<float>({111, 111, 1}, rng, 0, 1);
    auto p = m.predict_proba(img);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-6);
    EXPECT_GE(p[0], 0.0f);
    EXPECT_LE(p[0], 1.0f);
}

TEST(ModelTest, BatchIndependenceAndPermutation) {
    Rng rng(5);
    Model<float> m(toy_spec(), 5);
    std::vector<Tensor<float>> samples;
    for (int i = 0; i < 6; ++i) samples.push_back(random_tensor<float>({12, 12, 1}, rng, 0, 1));
    samples.push_back(samples[2]);
    const auto out = model_forward(m, stack<float>(samples)).probabilities;
    EXPECT_EQ(out[2 * 2], out[6 * 2]);
    EXPECT_EQ(out[2 * 2 + 1], out[6 * 2 + 1]);

    std::vector<std::size_t> perm(samples.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<Tensor<float>> permuted;
    for (auto i : perm) permuted.push_back(samples[i]);
    const auto out_p = model_forward(m, stack<float>(permuted), 3).probabilities;
    for (std::size_t r = 0; r < perm.size(); ++r)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out_p[r * 2 + c], out[perm[r] * 2 + c]);
}

TEST(ModelTest, InferModeIsBitDeterministic) {
    Rng rng(6);
    Model<float> m(default_cnn_spec(), 6);
    auto img = random_tensor<float>({111, 111, 1}, rng, 0, 1);
    EXPECT_EQ(m.predict_proba(img), m.predict_proba(img));
}

TEST(ModelTest, ShapeMismatchRejected) {
    Model<float> m(toy_spec(), 1);
    EXPECT_THROW(m.predict_proba(Tensor<float>({11, 12, 1})), ShapeError);
}

TEST(ModelTest, CastRoundTripPreservesShapes) {
    Model<float> m(toy_spec(), 2);
    auto d = m.cast<double>();
    ASSERT_EQ(d.params().size(), m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i)
        EXPECT_EQ(d.params()[i].value.shape(), m.params()[i].value.shape());
    EXPECT_THROW(Model<float>(default_cnn_spec(), m.params()), ShapeError);
}

TEST(ModelTest, WholeModelGradientCheckThreeLayerToy) {
    ArchitectureSpec spec;
    spec.input_shape = {12, 12, 1};
    spec.layers = {LayerSpec::conv2d(2, 3), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
                   LayerSpec::flatten(),    LayerSpec::dense(2), LayerSpec::softmax()};
    Rng rng(7);
    Model<double> m(spec, 7);
    std::vector<Tensor<double>> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_tensor<double>({12, 12, 1}, rng, 0, 1));
    const std::vector<int> labels{0, 1, 1};
    auto report = run_grad_check(m, std::span<const Tensor<double>>(batch), labels);
    EXPECT_TRUE(report.passed) << report.to_text();
    EXPECT_LT(report.max_rel_error, 1e-6);
}

// Shape safety: any spec accepted by infer_shapes runs forward on a
// conforming input.
TEST(ModelProperty, AcceptedSpecsAlwaysRunForward) {
    Rng rng(8);
    int accepted = 0;
    for (int trial = 0; trial < 200; ++trial) {
        ArchitectureSpec spec;
        const auto side = 4 + rng.index(12);
        spec.input_shape = {side, 4 + rng.index(12), 1 + rng.index(3)};
        const auto n_feature = rng.index(4);
        for (std::size_t i = 0; i < n_feature; ++i) {
            switch (rng.index(4)) {
            case 0: spec.layers.push_back(LayerSpec::conv2d(1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(2))); break;
            case 1: spec.layers.push_back(LayerSpec::maxpool2d(1 + rng.index(3), 1 + rng.index(3))); break;
            case 2: spec.layers.push_back(LayerSpec::relu()); break;
            default: spec.layers.push_back(LayerSpec::dropout(0.3)); break;
            }
        }
        spec.layers.push_back(LayerSpec::flatten());
        if (rng.bernoulli(0.5)) spec.layers.push_back(LayerSpec::dense(1 + rng.index(6)));
        spec.layers.push_back(LayerSpec::dense(2));
        spec.layers.push_back(LayerSpec::softmax());
        try {
            validate(spec);
        } catch (const ShapeError&) {
            continue;
        }
        ++accepted;
        Model<float> m(spec, trial);
        auto x = random_tensor<float>(spec.input(), rng);
        Rng drop(trial);
        auto pass = m.forward(x, Mode::Train, &drop);
        EXPECT_NEAR(pass.probabilities[0] + pass.probabilities[1], 1.0, 1e-6);
    }
    EXPECT_GT(accepted, 50);
}
