#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "test_util.hpp"

using namespace xtest;

namespace {

ValidityMask random_mask(std::size_t h, std::size_t w, std::uint64_t seed, double keep = 0.7) {
    std::mt19937_64 rng(seed);
    ValidityMask m(h, w, false);
    for (auto& v : m.valid) v = std::uniform_real_distribution<double>(0, 1)(rng) < keep ? 1 : 0;
    return m;
}

long double reference_pearson(const Tensor& a, const Tensor& b, const ValidityMask& mask) {
    long double sa = 0, sb = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (mask.valid[i]) sa += a[i], sb += b[i], n += 1;
    const long double ma = sa / n, mb = sb / n;
    long double c = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (mask.valid[i]) {
            c += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma) * (a[i] - ma);
            vb += (b[i] - mb) * (b[i] - mb);
        }
    return c / std::sqrt(va * vb);
}

std::set<std::size_t> reference_top(const Tensor& m, const ValidityMask& mask, std::size_t k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (mask.valid[i]) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return m[x] != m[y] ? m[x] > m[y] : x < y; });
    idx.resize(std::min(k, idx.size()));
    return {idx.begin(), idx.end()};
}

ResponseCurve make_curve(std::vector<double> params, std::vector<double> values, std::size_t identity) {
    ResponseCurve c;
    c.params = std::move(params);
    c.values = std::move(values);
    c.identity_index = identity;
    return c;
}

// Flatten + Dense with zero weights: the prediction ignores the image.
ModelGraph constant_model(std::size_t side) {
    ModelGraph m;
    m.input = {3, side, side};
    m.normalization = unit_normalization();
    m.num_classes = 2;
    auto d = fixtures::dense(3 * side * side, 2);
    d.bias = {1.0f, 0.0f};
    m.layers = {Flatten{}, d};
    m.validate();
    return m;
}

} // namespace

TEST(Pearson, MatchesReferenceOnRandomMasks) {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const Tensor a = random_tensor({17, 23}, 2 * s), b = random_tensor({17, 23}, 2 * s + 1);
        Tensor c = a;
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.3f * a[i] + 0.7f * b[i];
        const auto mask = random_mask(17, 23, s + 1000);
        EXPECT_NEAR(pearson(a, b, mask), static_cast<double>(reference_pearson(a, b, mask)), 1e-10);
        EXPECT_NEAR(pearson(a, c, mask), static_cast<double>(reference_pearson(a, c, mask)), 1e-10);
    }
}

TEST(Pearson, SelfAndNegation) {
    const Tensor a = random_tensor({8, 8}, 1);
    Tensor neg = a;
    for (auto& v : neg.values()) v = -2.0f * v + 3.0f;
    const ValidityMask all(8, 8);
    EXPECT_NEAR(pearson(a, a, all), 1.0, 1e-12);
    EXPECT_NEAR(pearson(a, neg, all), -1.0, 1e-12);
}

TEST(Pearson, ConstantMaps) {
    const ValidityMask all(4, 4);
    const Tensor flat({4, 4}, 2.0f);
    EXPECT_THROW(pearson(flat, flat, all), NumericError);
    EXPECT_EQ(pearson(flat, random_tensor({4, 4}, 1), all), 0.0);
    EXPECT_EQ(pearson(random_tensor({4, 4}, 1), flat, all), 0.0);
    EXPECT_THROW(pearson(random_tensor({4, 4}, 1), random_tensor({4, 4}, 2), ValidityMask(4, 4, false)),
                 ConfigError);
}

TEST(Pearson, IgnoresMaskedOutPixels) {
    const Tensor a = random_tensor({6, 6}, 3);
    Tensor b = a;
    auto mask = random_mask(6, 6, 4);
    for (std::size_t i = 0; i < b.size(); ++i)
        if (!mask.valid[i]) b[i] = 1000.0f;
    EXPECT_NEAR(pearson(a, b, mask), 1.0, 1e-12);
}

TEST(TopK, MatchesBruteForce) {
    for (std::uint64_t s = 0; s < 200; ++s) {
        Tensor a = random_tensor({20, 20}, 3 * s), b = random_tensor({20, 20}, 3 * s + 1);
        if (s % 2) // coarse quantization forces ties
            for (auto* t : {&a, &b})
                for (auto& v : t->values()) v = std::round(v * 4.0f);
        const auto mask = random_mask(20, 20, 3 * s + 2);
        for (std::size_t k : {1u, 7u, 50u, 1000u}) {
            const auto ta = reference_top(a, mask, k), tb = reference_top(b, mask, k);
            std::size_t shared = 0;
            for (auto i : tb) shared += ta.count(i);
            EXPECT_EQ(topk_intersection(a, b, mask, k), static_cast<double>(shared) / static_cast<double>(ta.size()));
        }
    }
}

TEST(TopK, IdenticalAndDisjoint) {
    const ValidityMask all(10, 10);
    const Tensor a = random_tensor({10, 10}, 7);
    EXPECT_EQ(topk_intersection(a, a, all, 10), 1.0);
    Tensor lo({10, 10}), hi({10, 10});
    for (std::size_t i = 0; i < 100; ++i) {
        lo[i] = static_cast<float>(i);
        hi[i] = static_cast<float>(100 - i);
    }
    EXPECT_EQ(topk_intersection(lo, hi, all, 10), 0.0);
    EXPECT_EQ(topk_intersection(lo, hi, all, 1000), 1.0); // k clipped to the mask size
    EXPECT_THROW(topk_intersection(lo, hi, all, 0), ConfigError);
}

TEST(CurveScore, ConstantAtIdentityIsOne) {
    EXPECT_DOUBLE_EQ(curve_score(make_curve({-2, -1, 0, 1, 2}, {0.7, 0.7, 0.7, 0.7, 0.7}, 2), -2, 2), 1.0);
}

TEST(CurveScore, TentIsOneHalf) {
    EXPECT_DOUBLE_EQ(curve_score(make_curve({-1, 0, 1}, {0, 1, 0}, 1), -1, 1), 0.5);
    // The shift aligns the identity sample with 1 first.
    EXPECT_DOUBLE_EQ(curve_score(make_curve({-1, 0, 1}, {-0.4, 0.6, -0.4}, 1), -1, 1), 0.5);
}

TEST(CurveScore, ClampsToUnitRange) {
    EXPECT_DOUBLE_EQ(curve_score(make_curve({-1, 0, 1}, {0.9, 0.5, 0.9}, 1), -1, 1), 1.0);
    EXPECT_DOUBLE_EQ(curve_score(make_curve({-1, 0, 1}, {-5, 1, -5}, 1), -1, 1), 0.5);
}

TEST(CurveScore, ClipsToInterval) {
    // Only the half [0, 1] of the tent: mean of a line from 1 to 0.
    EXPECT_DOUBLE_EQ(curve_score(make_curve({-1, 0, 1}, {0, 1, 0}, 1), 0, 1), 0.5);
    EXPECT_DOUBLE_EQ(curve_score(make_curve({-1, 0, 1}, {0, 1, 0}, 1), -0.5, 0.5), 0.75);
}

TEST(CurveScore, RequiresCoverage) {
    EXPECT_THROW(curve_score(make_curve({-1, 0, 1}, {0, 1, 0}, 1), -2, 1), ConfigError);
    EXPECT_THROW(curve_score(make_curve({-1, 0, 1}, {0, 1, 0}, 1), 1, 1), ConfigError);
    EXPECT_THROW(curve_score(make_curve({-1, 1, 0}, {0, 1, 0}, 1), -1, 1), ConfigError);
}

TEST(CurveScore, MonotoneInValues) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-0.5, 1.5);
    for (int n = 0; n < 500; ++n) {
        std::vector<double> xs(9), ys(9), zs(9);
        for (int i = 0; i < 9; ++i) {
            xs[i] = i - 4;
            ys[i] = d(rng);
            zs[i] = ys[i] + std::abs(d(rng));
        }
        ys[4] = zs[4] = 0.8;
        const double a = curve_score(make_curve(xs, ys, 4), -4, 4);
        const double b = curve_score(make_curve(xs, zs, 4), -4, 4);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(b, 1.0);
        EXPECT_LE(a, b + 1e-15);
    }
}

TEST(SRatio, Basics) {
    EXPECT_DOUBLE_EQ(s_ratio(0.4, 0.8), 0.5);
    EXPECT_DOUBLE_EQ(s_ratio(0.8, 0.8), 1.0);
    EXPECT_THROW(s_ratio(0.4, 0.0), NumericError);
}

TEST(PixelFlip, ScoreAnalytics) {
    MetricConfig cfg;
    std::vector<double> xs, flat, drop, line;
    for (std::size_t s = 0; s <= 20; ++s) {
        xs.push_back(0.2 * s / 20.0);
        flat.push_back(1.0);
        drop.push_back(s == 0 ? 1.0 : 0.0);
        line.push_back(1.0 - s / 20.0);
    }
    EXPECT_DOUBLE_EQ(pixel_flip_score(make_curve(xs, flat, 0), cfg), 0.0);
    EXPECT_NEAR(pixel_flip_score(make_curve(xs, drop, 0), cfg), 1.0 - 0.5 / 20.0, 1e-12);
    EXPECT_NEAR(pixel_flip_score(make_curve(xs, line, 0), cfg), 0.5, 1e-12);
}

TEST(PixelFlip, FlipCounts) {
    MetricConfig cfg;
    const auto counts = flip_counts(1000, cfg);
    ASSERT_EQ(counts.size(), 20u);
    EXPECT_EQ(counts.front(), 10u);
    EXPECT_EQ(counts.back(), 200u);
    cfg.pixel_flip_fraction = 1.0;
    EXPECT_EQ(flip_counts(37, cfg).back(), 37u);
}

TEST(PixelFlip, MatchesIndependentImplementation) {
    const auto m = fixtures::tiny_cnn(4);
    const Image img = random_image(16, 16, 5);
    const Tensor heat = random_tensor({16, 16}, 6);
    const std::size_t target = predict(m, img);
    const MetricConfig cfg;
    const auto curve = pixel_flip_curve(m, img, heat, target, cfg);
    ASSERT_EQ(curve.values.size(), 21u);
    EXPECT_EQ(curve.values[0], 1.0);

    std::vector<std::size_t> order(256);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return heat[a] != heat[b] ? heat[a] > heat[b] : a < b; });
    const double p0 = target_probability(m, img, target);
    for (std::size_t s = 1; s <= 20; ++s) {
        Image work = img;
        const auto n = static_cast<std::size_t>(std::llround(0.2 * s / 20.0 * 256.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 3; ++c) work.at(order[i] / 16, order[i] % 16, c) = 0;
        EXPECT_DOUBLE_EQ(curve.values[s], target_probability(m, work, target) / p0) << s;
        EXPECT_DOUBLE_EQ(curve.params[s], 0.2 * s / 20.0);
    }
}

TEST(PixelFlip, BlackImageStaysAtOne) {
    const auto m = fixtures::tiny_cnn(4);
    const auto curve = pixel_flip_curve(m, Image(16, 16), random_tensor({16, 16}, 1), 3, MetricConfig{});
    for (double v : curve.values) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(pixel_flip_score(curve, MetricConfig{}), 0.0);
}

TEST(PixelFlip, RandomOrderIsSeededPermutation) {
    const auto a = random_order(100, 7), b = random_order(100, 7), c = random_order(100, 8);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Curves, IdentitySampleIsExact) {
    const auto m = fixtures::tiny_cnn(2);
    const Image img = random_image(16, 16, 3);
    const std::size_t target = predict(m, img);
    for (auto kind : all_aug_kinds) {
        const auto set = build_curves(m, img, target, Method::Gradients, default_interval(kind, 7));
        ASSERT_EQ(set.samples.size(), 7u);
        const auto& id = set.samples[set.identity_index];
        EXPECT_TRUE(id.spec.is_identity());
        EXPECT_EQ(id.probability, target_probability(m, img, target));
        EXPECT_EQ(*id.correlation, 1.0);
        EXPECT_EQ(*id.topk, 1.0);
        for (const auto& s : set.samples) {
            EXPECT_GT(s.probability, 0.0);
            EXPECT_LT(s.probability, 1.0);
            if (s.correlation) {
                EXPECT_LE(std::abs(*s.correlation), 1.0);
            }
        }
        const double score = curve_score(set.probability(), default_interval(kind));
        EXPECT_GE(score, 0.0);
        EXPECT_LE(score, 1.0);
    }
}

TEST(Curves, BrightnessRaisesPositiveEvidence) {
    // Class 0 sums every input value, class 1 is constant: p(class 0) grows with brightness.
    ModelGraph m;
    m.input = {3, 8, 8};
    m.normalization = unit_normalization();
    m.num_classes = 2;
    auto d = fixtures::dense(192, 2);
    std::fill(d.weights.begin(), d.weights.begin() + 192, 0.02f);
    m.layers = {Flatten{}, d};
    m.validate();
    const auto set =
        build_curves(m, random_image(8, 8, 4), 0, Method::InputXGradients, {AugKind::Brightness, -90, 90, 9});
    for (std::size_t i = 1; i < set.samples.size(); ++i)
        EXPECT_GE(set.samples[i].probability, set.samples[i - 1].probability);
}

TEST(Curves, ConstantIdentityHeatmapIsRejected) {
    // Zero weights give an all-zero gradient.
    const auto m = constant_model(8);
    EXPECT_THROW(build_curves(m, random_image(8, 8, 1), 0, Method::Gradients, default_interval(AugKind::Hue, 5)),
                 NumericError);
}

TEST(Calibration, GridShape) {
    for (auto kind : all_aug_kinds) {
        const auto grid = calibration_grid(kind);
        ASSERT_EQ(grid.size(), calibration_grid_size);
        const double mx = calibration_max_magnitude(kind);
        if (kind == AugKind::Scale) {
            EXPECT_NEAR(grid.back().high, 1.5, 1e-12);
            EXPECT_NEAR(grid.back().low, 1.0 / 1.5, 1e-12);
            EXPECT_NEAR(std::log(grid.front().high), std::log(1.5) / 50.0, 1e-12);
        } else {
            EXPECT_NEAR(grid.back().high, mx, 1e-12);
            EXPECT_NEAR(grid.front().high, mx / 50.0, 1e-12);
            EXPECT_DOUBLE_EQ(grid.front().low, -grid.front().high);
        }
        for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_GT(grid[i].high, grid[i - 1].high);
        for (const auto& iv : grid) EXPECT_NO_THROW(iv.validate());
    }
}

TEST(Calibration, InsensitiveModelFallsBackWithWarning) {
    const auto m = constant_model(16);
    const auto corpus = self_labelled_corpus(m, 4, 1);
    const auto r = calibrate_interval(m, corpus.entries, AugKind::Rotate, MetricConfig{});
    EXPECT_TRUE(r.warning);
    EXPECT_DOUBLE_EQ(r.interval.high, calibration_grid(AugKind::Rotate).back().high);
    EXPECT_NEAR(r.drop_low, 0.0, 1e-12);
}

TEST(Calibration, ChosenIntervalSatisfiesThePredicate) {
    const auto m = fixtures::tiny_cnn(9);
    const auto corpus = self_labelled_corpus(m, 6, 2);
    const MetricConfig cfg;
    for (auto kind : all_aug_kinds) {
        const auto r = calibrate_interval(m, corpus.entries, kind, cfg);
        auto drop = [&](double t) {
            double total = 0.0;
            for (const auto& e : corpus.entries) {
                const double p = target_probability(m, e.image, e.label);
                total += (p - target_probability(m, apply_augmentation(e.image, {kind, t}), e.label)) / p;
            }
            return total / static_cast<double>(corpus.size());
        };
        const auto grid = calibration_grid(kind);
        bool reached = false;
        for (const auto& g : grid) {
            const bool hit = std::max(drop(g.low), drop(g.high)) >= cfg.calibration_drop;
            if (hit) {
                EXPECT_FALSE(r.warning);
                EXPECT_EQ(r.interval.high, g.high) << aug_name(kind);
                reached = true;
                break;
            }
        }
        if (!reached) {
            EXPECT_TRUE(r.warning) << aug_name(kind);
        }
    }
}

TEST(Stats, MeanAndStandardError) {
    const std::vector<double> v{1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(mean(v), 2.5);
    EXPECT_NEAR(standard_error(v), std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
    EXPECT_EQ(standard_error(std::vector<double>{3.0}), 0.0);
}

TEST(Stats, SignTest) {
    EXPECT_NEAR(sign_test_p_value(10, 10), 1.0 / 1024.0, 1e-15);
    EXPECT_NEAR(sign_test_p_value(5, 10), 638.0 / 1024.0, 1e-12);
    EXPECT_DOUBLE_EQ(sign_test_p_value(0, 10), 1.0);
}

TEST(MetricConfig, Validation) {
    MetricConfig c;
    EXPECT_NO_THROW(c.validate());
    c.k = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.pixel_flip_fraction = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.calibration_drop = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}
