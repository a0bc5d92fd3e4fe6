#include <gtest/gtest.h>

#include <filesystem>

#include "oracle.hpp"
#include "test_util.hpp"

using namespace xtest;

namespace {

double relative_gap(double total, double expected) { return std::abs(total - expected) / std::abs(expected); }

std::vector<Rule> uniform_rules(const ModelGraph& m, Rule r) { return std::vector<Rule>(m.layers.size(), r); }

// Flatten, Dense(1 -> 3), ReLU, Dense(3 -> 1) with pre-activations (-1, 1, 1) at a white 1x1 pixel and
// upstream gradients (+1, +1, -1) at the ReLU.
ModelGraph hand_relu_model() {
    ModelGraph m;
    m.input = {1, 1, 1};
    m.normalization = unit_normalization(1);
    m.num_classes = 1;
    auto d1 = fixtures::dense(1, 3);
    d1.weights = {1.0f, 1.0f, 1.0f};
    d1.bias = {-2.0f, 0.0f, 0.0f};
    auto d2 = fixtures::dense(3, 1);
    d2.weights = {1.0f, 1.0f, -1.0f};
    m.layers = {Flatten{}, d1, ReLU{}, d2};
    m.validate();
    return m;
}

Tensor white_pixel() { return Tensor({1, 1, 1}, 1.0f); }

// Conv, AvgPool, GlobalAvgPool and Dense with no ReLU anywhere.
ModelGraph relu_free_model(std::uint64_t seed) {
    ModelGraph m;
    m.input = {3, 16, 16};
    m.normalization = fixtures::default_normalization();
    m.num_classes = 4;
    m.layers = {fixtures::conv(3, 5, 3, 1, 1), AvgPool2D{2, 2}, fixtures::conv(5, 6, 3), GlobalAvgPool{},
                fixtures::dense(6, 4)};
    fixtures::randomize(m, seed, 0.1f);
    return m;
}

} // namespace

TEST(Gradients, SingleDenseLayerGivesWeightRow) {
    const auto m = linear_model(3, 3, 3, 4, 1);
    const auto& d = std::get<Dense>(m.layers[1]);
    const auto e = explain_gradients(m, preprocess(m, random_image(3, 3, 2)), 2);
    for (std::size_t i = 0; i < 27; ++i) EXPECT_EQ(e.per_channel[i], d.weights[2 * 27 + i]);
}

TEST(Gradients, DeadReluGivesZero) {
    ModelGraph m;
    m.input = {3, 8, 8};
    m.normalization = fixtures::default_normalization();
    m.num_classes = 2;
    auto c = fixtures::conv(3, 4, 3, 1, 1);
    for (auto& w : c.weights) w = 0.01f;
    for (auto& b : c.bias) b = -1000.0f;
    auto d = fixtures::dense(4, 2);
    d.weights.assign(8, 1.0f);
    m.layers = {c, ReLU{}, GlobalAvgPool{}, d};
    m.validate();
    const auto e = explain_gradients(m, preprocess(m, random_image(8, 8, 1)), 0);
    for (float v : e.per_channel.values()) EXPECT_EQ(v, 0.0f);
}

TEST(InputXGradients, IsGradientTimesInputExactly) {
    const auto m = fixtures::tiny_cnn(3);
    const Tensor x = preprocess(m, random_image(16, 16, 4));
    const auto g = explain_gradients(m, x, 3);
    const auto ixg = explain_input_x_gradients(m, x, 3);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(ixg.per_channel[i], g.per_channel[i] * x[i]);
}

TEST(InputXGradients, ZeroInputGivesZero) {
    const auto m = linear_model(3, 4, 4, 3, 5);
    const auto e = explain_input_x_gradients(m, Tensor({3, 4, 4}), 1);
    for (float v : e.per_channel.values()) EXPECT_EQ(v, 0.0f);
}

TEST(IntegratedGradients, LinearModelEqualsInputTimesGradient) {
    const auto m = linear_model(3, 4, 4, 3, 6);
    const Tensor x = preprocess(m, random_image(4, 4, 7));
    for (std::size_t steps : {2u, 7u, 64u}) {
        const auto ig = explain_integrated_gradients(m, x, 1, steps);
        const auto ixg = explain_input_x_gradients(m, x, 1);
        EXPECT_TRUE(bit_identical(ig.per_channel, ixg.per_channel)) << steps;
    }
}

TEST(IntegratedGradients, BaselineEqualToInputGivesZero) {
    const auto m = fixtures::tiny_cnn(8);
    const Tensor x = preprocess(m, random_image(16, 16, 8));
    const auto e = explain_integrated_gradients(m, x, 0, 16, x);
    for (float v : e.per_channel.values()) EXPECT_EQ(v, 0.0f);
}

TEST(IntegratedGradients, CompletenessGapShrinksWithSteps) {
    // ReLU and max-pool kinks along the path make the midpoint error O(1 / steps) on random weights.
    const auto m = fixtures::random_cnn5(9);
    double coarse_total = 0.0, fine_total = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Tensor x = preprocess(m, random_image(16, 16, 100 + s));
        const double delta = forward_logits(m, x)[2] - forward_logits(m, black_baseline(m))[2];
        const auto coarse = explain_integrated_gradients(m, x, 2, 64);
        const auto fine = explain_integrated_gradients(m, x, 2, 512);
        EXPECT_LE(std::abs(fine.per_channel.sum() - delta), 0.01 * std::abs(delta) + 1e-4);
        ASSERT_TRUE(fine.completeness_gap.has_value());
        EXPECT_NEAR(*fine.completeness_gap, std::abs(fine.per_channel.sum() - delta), 1e-5);
        coarse_total += *coarse.completeness_gap;
        fine_total += *fine.completeness_gap;
    }
    EXPECT_LT(fine_total, coarse_total);
}

TEST(IntegratedGradients, RejectsSingleStep) {
    const auto m = fixtures::tiny_cnn(1);
    EXPECT_THROW(explain_integrated_gradients(m, preprocess(m, random_image(16, 16, 1)), 0, 1), ConfigError);
}

TEST(GuidedBackprop, HandTrace) {
    const auto m = hand_relu_model();
    // Gradient: unit 0 is gated by its forward pre-activation, units 1 and 2 cancel.
    EXPECT_EQ(explain_gradients(m, white_pixel(), 0).per_channel[0], 0.0f);
    // Guided: unit 0 (pre-act -1, upstream +1) is zeroed, unit 2 (upstream -1) is zeroed.
    EXPECT_EQ(explain_guided_backprop(m, white_pixel(), 0).per_channel[0], 1.0f);
    // Deconvolution ignores the forward gate: units 0 and 1 pass.
    EXPECT_EQ(explain_deconvolution(m, white_pixel(), 0).per_channel[0], 2.0f);
}

TEST(GuidedBackprop, NoReluNetworkEqualsGradients) {
    for (const auto& m : {relu_free_model(3), linear_model(3, 4, 4, 2, 3)}) {
        const Tensor x = preprocess(m, random_image(m.input.height, m.input.width, 3));
        const auto g = explain_gradients(m, x, 1);
        EXPECT_TRUE(bit_identical(explain_guided_backprop(m, x, 1).per_channel, g.per_channel));
        EXPECT_TRUE(bit_identical(explain_deconvolution(m, x, 1).per_channel, g.per_channel));
    }
}

TEST(GuidedBackprop, ReluGatesAgainstPlainGradient) {
    const Tensor pre = random_tensor({4, 5, 5}, 1);
    const Tensor up = random_tensor({4, 5, 5}, 2);
    const Tensor plain = layer_backward(ReLU{}, pre, up, ReluBackward::Gradient);
    const Tensor guided = layer_backward(ReLU{}, pre, up, ReluBackward::Guided);
    const Tensor deconv = layer_backward(ReLU{}, pre, up, ReluBackward::Deconv);
    for (std::size_t i = 0; i < pre.size(); ++i) {
        const bool fwd = pre[i] > 0.0f, bwd = up[i] > 0.0f;
        // Where both gates pass, guided equals the plain gradient; elsewhere it is zero.
        EXPECT_EQ(guided[i], fwd && bwd ? plain[i] : 0.0f);
        // Deconvolution differs from guided exactly on negative pre-activation with positive upstream.
        EXPECT_EQ(deconv[i] != guided[i], !fwd && bwd);
        EXPECT_EQ(deconv[i], bwd ? up[i] : 0.0f);
    }
}

TEST(Lrp, DenseZPlusConserves) {
    const auto m = linear_model(3, 4, 4, 3, 10, true);
    const Tensor x = preprocess(m, random_image(4, 4, 11));
    const Tensor r = lrp_relevance(m, x, 1, uniform_rules(m, Rule::ZPlus), {});
    EXPECT_LE(relative_gap(r.sum(), forward_logits(m, x)[1]), 1e-4);
}

TEST(Lrp, FlatRuleSpreadsUniformlyOnDense) {
    Dense d = fixtures::dense(6, 2);
    std::mt19937_64 rng(1);
    for (auto& w : d.weights) w = static_cast<float>(static_cast<int>(rng() % 7) - 3);
    const detail::LinearView lin{nullptr, &d, {6}};
    const Tensor x = random_tensor({6}, 3);
    const Tensor out = detail::lrp_linear(lin, x, Tensor({2}, std::vector<float>{1.0f, 0.0f}), Rule::Flat,
                                          RuleParams{}, {}, {});
    for (float v : out.values()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-6);
}

TEST(Lrp, AlphaOneBetaZeroEqualsZPlus) {
    const auto m = fixtures::random_deep_cnn(12, 0.1f);
    const Tensor x = preprocess(m, random_image(16, 16, 12));
    RuleParams ab;
    ab.alpha = 1.0;
    ab.beta = 0.0;
    const Tensor a = lrp_relevance(m, x, 0, uniform_rules(m, Rule::AlphaBeta), ab);
    const Tensor z = lrp_relevance(m, x, 0, uniform_rules(m, Rule::ZPlus), {});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], z[i], 1e-6);
}

TEST(Lrp, ConservationOnZeroBiasNetworks) {
    RuleParams eps;
    eps.epsilon = 1e-9;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto m = fixtures::random_deep_cnn(200 + s, 0.0f);
        const Tensor x = preprocess(m, random_image(16, 16, 300 + s));
        const auto logits = forward_logits(m, x);
        const std::size_t target = s % m.num_classes;
        for (Rule r : {Rule::Epsilon, Rule::ZPlus, Rule::AlphaBeta}) {
            const Tensor rel = lrp_relevance(m, x, target, uniform_rules(m, r), eps);
            EXPECT_LE(relative_gap(rel.sum(), logits[target]), 1e-3) << rule_name(r) << " seed " << s;
        }
    }
}

TEST(Lrp, ZPlusKeepsRelevanceNonnegative) {
    auto m = fixtures::random_deep_cnn(20, 0.0f);
    m.normalization = unit_normalization();
    const Tensor x = preprocess(m, random_image(16, 16, 21));
    const auto logits = forward_logits(m, x);
    const std::size_t target = argmax(softmax(logits));
    ASSERT_GT(logits[target], 0.0f);
    const Tensor r = lrp_relevance(m, x, target, uniform_rules(m, Rule::ZPlus), {});
    for (float v : r.values()) EXPECT_GE(v, 0.0f);
    // Per layer as well: nonnegative input and relevance stay nonnegative.
    const auto d = std::get<Dense>(m.layers[7]);
    const detail::LinearView lin{nullptr, &d, {128}};
    const Tensor out = detail::lrp_linear(lin, random_tensor({128}, 3, 0.0f, 1.0f), random_tensor({16}, 4, 0.0f, 1.0f),
                                          Rule::ZPlus, RuleParams{}, {}, {});
    for (float v : out.values()) EXPECT_GE(v, 0.0f);
}

TEST(Lrp, LinearModelCollapse) {
    const auto m = linear_model(3, 5, 5, 4, 13);
    const Tensor x = preprocess(m, random_image(5, 5, 14));
    RuleParams eps;
    eps.epsilon = 1e-9;
    const Tensor ixg = explain_input_x_gradients(m, x, 2).per_channel;
    const Tensor ig = explain_integrated_gradients(m, x, 2, 9).per_channel;
    const Tensor lrp = lrp_relevance(m, x, 2, uniform_rules(m, Rule::Epsilon), eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(ixg[i], ig[i], 1e-4);
        EXPECT_NEAR(ixg[i], lrp[i], 1e-4);
    }
}

TEST(Lrp, EpsilonGammaBoxOnBiasedCnnIsFiniteAndNearlyConserving) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto m = fixtures::random_cnn5(400 + s, 0.01f);
        const Tensor x = preprocess(m, random_image(16, 16, 500 + s));
        const auto logits = forward_logits(m, x);
        const std::size_t target = argmax(softmax(logits));
        const auto e = explain_lrp(m, x, target, composite_epsilon_gamma_box());
        EXPECT_TRUE(e.per_channel.all_finite());
        EXPECT_LE(relative_gap(e.per_channel.sum(), logits[target]), 0.05) << "seed " << s;
    }
}

TEST(Composites, PerLayerKindAssignments) {
    const auto a = composite_epsilon_plus_flat();
    EXPECT_EQ(a.dense_rule, Rule::Epsilon);
    EXPECT_EQ(a.conv_rule, Rule::ZPlus);
    EXPECT_EQ(a.first_layer_rule, Rule::Flat);
    const auto b = composite_epsilon_gamma_box();
    EXPECT_EQ(b.dense_rule, Rule::Epsilon);
    EXPECT_EQ(b.conv_rule, Rule::Gamma);
    EXPECT_EQ(b.first_layer_rule, Rule::ZBox);
    const auto c = composite_epsilon_alpha2beta1_flat();
    EXPECT_EQ(c.dense_rule, Rule::Epsilon);
    EXPECT_EQ(c.conv_rule, Rule::AlphaBeta);
    EXPECT_EQ(c.first_layer_rule, Rule::Flat);
    EXPECT_EQ(RuleParams{}.gamma, 0.25);
    EXPECT_EQ(RuleParams{}.alpha, 2.0);
    EXPECT_EQ(RuleParams{}.beta, 1.0);
}

TEST(Composites, DispatchCoversEveryParameterizedLayer) {
    const auto m = fixtures::random_deep_cnn(1);
    // Conv ReLU MaxPool Conv ReLU MaxPool Flatten Dense ReLU Dense
    const auto rules = layer_rules(m, composite_epsilon_gamma_box());
    EXPECT_EQ(rules[0], Rule::ZBox);
    EXPECT_EQ(rules[3], Rule::Gamma);
    EXPECT_EQ(rules[7], Rule::Epsilon);
    EXPECT_EQ(rules[9], Rule::Epsilon);
    // A leading Dense layer takes the first-layer rule, not the dense rule.
    const auto lin = linear_model(1, 2, 2, 2, 1);
    EXPECT_EQ(layer_rules(lin, composite_epsilon_plus_flat())[1], Rule::Flat);
    EXPECT_THROW(layer_rules(m, Composite{Rule::Epsilon, Rule::ZPlus, Rule::Epsilon}), ConfigError);
}

TEST(RuleParamsValidation, RejectsInvalid) {
    RuleParams p;
    p.epsilon = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = {};
    p.alpha = 3.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = {};
    p.gamma = -1.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = {};
    p.box_low = {1.0f};
    p.box_high = {0.0f};
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Explain, HeatmapIsChannelSumAndOutputsAreDeterministic) {
    const auto m = fixtures::tiny_cnn(15);
    const Image img = random_image(16, 16, 15);
    for (Method method : all_methods) {
        const auto e = explain(m, img, 4, method);
        EXPECT_EQ(e.method, method);
        EXPECT_EQ(e.target_class, 4u);
        EXPECT_TRUE(e.per_channel.all_finite()) << method_key(method);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                double s = 0.0;
                for (std::size_t c = 0; c < 3; ++c) s += e.per_channel.at(c, y, x);
                EXPECT_NEAR(e.heatmap.at(y, x), s, 1e-5);
            }
        EXPECT_TRUE(bit_identical(explain(m, img, 4, method).per_channel, e.per_channel));
    }
    EXPECT_THROW(explain(m, img, 10, Method::Gradients), ConfigError);
}

TEST(Explain, MethodKeysRoundTrip) {
    for (Method m : all_methods) EXPECT_EQ(parse_method(method_key(m)), m);
    EXPECT_THROW(parse_method("smoothgrad"), ConfigError);
    EXPECT_EQ(method_label(Method::LrpEpsilonAlpha2Beta1Flat), "LRP: EpsilonAlpha2Beta1Flat");
}

TEST(ReduceHeatmap, Cases) {
    EXPECT_EQ(reduce_heatmap(Tensor({3, 2, 2})).values(), std::vector<float>(4, 0.0f));
    Tensor one_hot({3, 2, 2});
    const Tensor plane = random_tensor({2, 2}, 1);
    for (std::size_t i = 0; i < 4; ++i) one_hot[4 + i] = plane[i];
    EXPECT_EQ(reduce_heatmap(one_hot).values(), plane.values());
    const Tensor t = random_tensor({4, 3, 5}, 2);
    const Tensor h = reduce_heatmap(t);
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
            double s = 0;
            for (std::size_t c = 0; c < 4; ++c) s += t.at(c, y, x);
            EXPECT_NEAR(h.at(y, x), s, 1e-6);
        }
}

TEST(ExplanationFile, BinaryRoundTripAndHeader) {
    const auto m = fixtures::tiny_cnn(16);
    const auto e = explain(m, random_image(16, 16, 16), 1, Method::GuidedBackprop);
    const auto path = std::filesystem::temp_directory_path() / "xbench_expl.bin";
    write_explanation_bin(path, e);
    EXPECT_EQ(std::filesystem::file_size(path), 16u + 4u * 3 * 16 * 16);
    const auto back = read_explanation_bin(path);
    EXPECT_EQ(back.method, Method::GuidedBackprop);
    EXPECT_TRUE(bit_identical(back.per_channel, e.per_channel));
    std::ifstream in(path, std::ios::binary);
    unsigned char head[16];
    in.read(reinterpret_cast<char*>(head), 16);
    EXPECT_EQ(head[0], 3);
    EXPECT_EQ(head[4], 3);
    EXPECT_EQ(head[8], 16);
    EXPECT_EQ(head[12], 16);
}
