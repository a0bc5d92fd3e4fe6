#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "xbench/attribution.hpp"
#include "xbench/augment.hpp"
#include "xbench/corpus.hpp"
#include "xbench/engine.hpp"
#include "xbench/log.hpp"

namespace xbench {

struct MetricConfig {
    std::size_t k = 1000;
    double pixel_flip_fraction = 0.2;
    std::size_t pixel_flip_steps = 20;
    double calibration_drop = 0.10;

    void validate() const {
        if (k < 1) throw ConfigError("top-k size must be >= 1");
        if (!(pixel_flip_fraction > 0.0 && pixel_flip_fraction <= 1.0))
            throw ConfigError("pixel_flip_fraction must be in (0, 1]");
        if (pixel_flip_steps < 1) throw ConfigError("pixel_flip_steps must be >= 1");
        if (!(calibration_drop > 0.0 && calibration_drop < 1.0))
            throw ConfigError("calibration_drop must be in (0, 1)");
    }
};

// ---------------------------------------------------------------------------------------------
// Comparison kernels

/// Sample Pearson coefficient over the masked pixels. Throws NumericError when both maps are
/// constant over the mask; returns 0 when exactly one is.
inline double pearson(const Tensor& a, const Tensor& b, const ValidityMask& mask) {
    if (a.shape() != b.shape() || a.size() != mask.valid.size())
        throw ConfigError("pearson: map and mask shapes differ");
    std::size_t n = 0;
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!mask.valid[i]) continue;
        ++n;
        sa += a[i];
        sb += b[i];
    }
    if (n < 2) throw ConfigError("pearson: fewer than two masked pixels");
    const double ma = sa / static_cast<double>(n), mb = sb / static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!mask.valid[i]) continue;
        const double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 && vb == 0.0) throw NumericError("pearson: both maps are constant over the mask");
    if (va == 0.0 || vb == 0.0) return 0.0;
    return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

namespace detail {

/// Flat indices of the k largest masked values (descending value, then ascending index).
inline std::vector<std::size_t> top_indices(const Tensor& m, const std::vector<std::size_t>& candidates,
                                            std::size_t k) {
    std::vector<std::size_t> idx = candidates;
    auto before = [&](std::size_t x, std::size_t y) {
        return m[x] != m[y] ? m[x] > m[y] : x < y;
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), before);
    idx.resize(k);
    return idx;
}

} // namespace detail

/// Fraction of shared pixels between the min(k, |mask|) most relevant masked pixels of each map.
inline double topk_intersection(const Tensor& a, const Tensor& b, const ValidityMask& mask, std::size_t k) {
    if (a.shape() != b.shape() || a.size() != mask.valid.size())
        throw ConfigError("topk_intersection: map and mask shapes differ");
    if (k == 0) throw ConfigError("topk_intersection: k must be >= 1");
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < mask.valid.size(); ++i)
        if (mask.valid[i]) candidates.push_back(i);
    if (candidates.empty()) throw ConfigError("topk_intersection: empty mask");
    const std::size_t k_eff = std::min(k, candidates.size());
    const auto ta = detail::top_indices(a, candidates, k_eff);
    const auto tb = detail::top_indices(b, candidates, k_eff);
    std::vector<std::uint8_t> in_a(a.size(), 0);
    for (auto i : ta) in_a[i] = 1;
    std::size_t shared = 0;
    for (auto i : tb) shared += in_a[i];
    return static_cast<double>(shared) / static_cast<double>(k_eff);
}

// ---------------------------------------------------------------------------------------------
// Response curves and their scores

enum class CurveKind { Probability, Correlation, TopK, PixelFlip };

inline std::string_view curve_kind_name(CurveKind k) {
    switch (k) {
    case CurveKind::Probability: return "probability";
    case CurveKind::Correlation: return "correlation";
    case CurveKind::TopK: return "top1000";
    case CurveKind::PixelFlip: return "pixel_flip";
    }
    return "unknown";
}

struct ResponseCurve {
    std::vector<double> params;
    std::vector<double> values;
    std::size_t identity_index = 0;
    CurveKind kind = CurveKind::Probability;

    void validate() const {
        if (params.size() != values.size()) throw ConfigError("curve: params/values length mismatch");
        if (params.empty()) throw ConfigError("curve: no samples");
        if (identity_index >= params.size()) throw ConfigError("curve: identity index out of range");
        for (std::size_t i = 1; i < params.size(); ++i)
            if (!(params[i] > params[i - 1])) throw ConfigError("curve: params must be strictly increasing");
    }
};

namespace detail {

/// Trapezoidal area of the piecewise-linear curve (xs, ys) restricted to [lo, hi].
inline double clipped_trapezoid(const std::vector<double>& xs, const std::vector<double>& ys,
                                double lo, double hi) {
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        const double x0 = xs[i], x1 = xs[i + 1];
        const double a = std::max(x0, lo), b = std::min(x1, hi);
        if (!(b > a)) continue;
        auto interp = [&](double x) { return ys[i] + (ys[i + 1] - ys[i]) * (x - x0) / (x1 - x0); };
        area += 0.5 * (interp(a) + interp(b)) * (b - a);
    }
    return area;
}

inline void check_coverage(const ResponseCurve& curve, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("curve score: empty interval");
    const double tol = 1e-9 * (hi - lo);
    if (curve.params.front() > lo + tol || curve.params.back() < hi - tol)
        throw ConfigError(fmt::format("curve score: samples [{}, {}] do not cover interval [{}, {}]",
                                      curve.params.front(), curve.params.back(), lo, hi));
}

} // namespace detail

/// Values shifted so the identity sample equals 1, then clamped to [0, 1].
inline std::vector<double> shifted_clamped(const ResponseCurve& curve) {
    const double shift = 1.0 - curve.values[curve.identity_index];
    std::vector<double> out(curve.values.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = i == curve.identity_index ? 1.0 : std::clamp(curve.values[i] + shift, 0.0, 1.0);
    return out;
}

/// Normalized area under the shifted, clamped curve over [lo, hi]; always in [0, 1].
inline double curve_score(const ResponseCurve& curve, double lo, double hi) {
    curve.validate();
    detail::check_coverage(curve, lo, hi);
    const double area = detail::clipped_trapezoid(curve.params, shifted_clamped(curve), lo, hi);
    return std::clamp(area / (hi - lo), 0.0, 1.0);
}

inline double curve_score(const ResponseCurve& curve, const AugmentationInterval& interval) {
    return curve_score(curve, interval.low, interval.high);
}

/// Explanation-curve score over prediction-curve score; below 1 means the explanation is less stable.
inline double s_ratio(double explanation_score, double probability_score) {
    if (!(probability_score > 0.0)) throw NumericError("S ratio: probability score is zero");
    if (explanation_score < 0.0) throw ConfigError("S ratio: negative explanation score");
    return explanation_score / probability_score;
}

// ---------------------------------------------------------------------------------------------
// Pixel flipping

/// Pixel indices by descending heatmap value, ties by ascending row-major index.
inline std::vector<std::size_t> relevance_order(const Tensor& heatmap) {
    std::vector<std::size_t> order(heatmap.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return heatmap[a] > heatmap[b]; });
    return order;
}

/// Number of pixels flipped at each step: round(fraction * step / steps * pixels).
inline std::vector<std::size_t> flip_counts(std::size_t pixels, const MetricConfig& config) {
    std::vector<std::size_t> counts(config.pixel_flip_steps);
    for (std::size_t s = 0; s < counts.size(); ++s) {
        const double f = config.pixel_flip_fraction * static_cast<double>(s + 1) /
                         static_cast<double>(config.pixel_flip_steps);
        counts[s] = std::min(pixels, static_cast<std::size_t>(std::llround(f * static_cast<double>(pixels))));
    }
    return counts;
}

/// Blackens pixels in `order`, most relevant first, and tracks p(flipped) / p(original).
inline ResponseCurve pixel_flip_curve_ordered(const ModelGraph& model, const Image& image,
                                              const std::vector<std::size_t>& order, std::size_t target,
                                              const MetricConfig& config) {
    config.validate();
    if (order.size() != image.pixel_count()) throw ConfigError("pixel order does not cover the image");
    const double p0 = target_probability(model, image, target);
    if (!(p0 > 0.0)) throw NumericError("pixel flipping: original probability is zero");

    ResponseCurve curve;
    curve.kind = CurveKind::PixelFlip;
    curve.params.push_back(0.0);
    curve.values.push_back(1.0);
    Image work = image;
    std::size_t flipped = 0;
    const auto counts = flip_counts(image.pixel_count(), config);
    for (std::size_t s = 0; s < counts.size(); ++s) {
        for (; flipped < counts[s]; ++flipped)
            for (std::size_t c = 0; c < 3; ++c) work.pixels[order[flipped] * 3 + c] = 0;
        curve.params.push_back(config.pixel_flip_fraction * static_cast<double>(s + 1) /
                               static_cast<double>(config.pixel_flip_steps));
        curve.values.push_back(target_probability(model, work, target) / p0);
    }
    return curve;
}

inline ResponseCurve pixel_flip_curve(const ModelGraph& model, const Image& image, const Tensor& heatmap,
                                      std::size_t target, const MetricConfig& config) {
    if (heatmap.rank() != 2 || heatmap.dim(0) != image.height || heatmap.dim(1) != image.width)
        throw ConfigError("pixel flipping: heatmap does not match the image");
    return pixel_flip_curve_ordered(model, image, relevance_order(heatmap), target, config);
}

/// Baseline ordering: a uniformly random permutation drawn from `seed`.
inline std::vector<std::size_t> random_order(std::size_t pixels, std::uint64_t seed) {
    std::vector<std::size_t> order(pixels);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/// Normalized area between 1 and the clamped curve over [0, fraction]; higher means faster collapse.
inline double pixel_flip_score(const ResponseCurve& curve, const MetricConfig& config) {
    curve.validate();
    detail::check_coverage(curve, 0.0, config.pixel_flip_fraction);
    std::vector<double> clamped(curve.values.size());
    for (std::size_t i = 0; i < clamped.size(); ++i) clamped[i] = std::clamp(curve.values[i], 0.0, 1.0);
    const double area = detail::clipped_trapezoid(curve.params, clamped, 0.0, config.pixel_flip_fraction);
    return std::clamp(1.0 - area / config.pixel_flip_fraction, 0.0, 1.0);
}

// ---------------------------------------------------------------------------------------------
// Curves over an augmentation interval

struct CurveSample {
    AugmentationSpec spec;
    double probability = 0.0;
    std::optional<double> correlation; // empty when skipped
    std::optional<double> topk;
};

struct CurveSet {
    std::vector<CurveSample> samples;
    std::size_t identity_index = 0;
    std::size_t skipped = 0; // samples with an undefined correlation or top-k value

    ResponseCurve probability() const { return extract(CurveKind::Probability); }
    ResponseCurve correlation() const { return extract(CurveKind::Correlation); }
    ResponseCurve topk() const { return extract(CurveKind::TopK); }

    ResponseCurve extract(CurveKind kind) const {
        ResponseCurve c;
        c.kind = kind;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            std::optional<double> v;
            switch (kind) {
            case CurveKind::Probability: v = samples[i].probability; break;
            case CurveKind::Correlation: v = samples[i].correlation; break;
            case CurveKind::TopK: v = samples[i].topk; break;
            case CurveKind::PixelFlip: break;
            }
            if (!v) continue;
            if (i == identity_index) c.identity_index = c.params.size();
            c.params.push_back(samples[i].spec.t);
            c.values.push_back(*v);
        }
        return c;
    }
};

/// Score of a curve that may have lost samples: the trapezoid spans the surviving samples.
inline double surviving_curve_score(const ResponseCurve& curve) {
    curve.validate();
    if (curve.params.size() < 2) throw NumericError("curve has fewer than two usable samples");
    return curve_score(curve, curve.params.front(), curve.params.back());
}

/// Probability, correlation and top-k curves of one (image, method, augmentation kind) cell.
/// Invariant kinds compare against the identity explanation, equivariant kinds against the identity
/// explanation warped like the image, over the validity mask.
inline CurveSet build_curves(const ModelGraph& model, const Image& image, std::size_t target,
                             Method method, const AugmentationInterval& interval,
                             const MetricConfig& config = {}, const ExplainOptions& opts = {}) {
    config.validate();
    const auto specs = sample_interval(interval);
    const Explanation base = explain(model, image, target, method, opts);
    {
        const ValidityMask full(image.height, image.width, true);
        pearson(base.heatmap, base.heatmap, full); // throws if the identity map is constant
    }

    CurveSet set;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& spec = specs[i];
        CurveSample s;
        s.spec = spec;
        if (spec.is_identity()) {
            set.identity_index = i;
            s.probability = target_probability(model, image, target);
            s.correlation = 1.0;
            s.topk = 1.0;
            set.samples.push_back(s);
            continue;
        }
        const Image augmented = apply_augmentation(image, spec);
        s.probability = target_probability(model, augmented, target);
        const Explanation e = explain(model, augmented, target, method, opts);
        const Tensor reference = is_equivariant(spec.kind) ? warp_explanation(base.heatmap, spec) : base.heatmap;
        const ValidityMask mask = validity_mask(spec, image.height, image.width);
        try {
            s.correlation = pearson(e.heatmap, reference, mask);
            s.topk = topk_intersection(e.heatmap, reference, mask, config.k);
        } catch (const Error& err) {
            log().debug("{} sample {}: {}", method_key(method), spec.to_string(), err.what());
            if (!s.topk) {
                try {
                    s.topk = topk_intersection(e.heatmap, reference, mask, config.k);
                } catch (const Error&) {
                }
            }
            ++set.skipped;
        }
        set.samples.push_back(s);
    }
    return set;
}

// ---------------------------------------------------------------------------------------------
// Interval calibration

/// Largest magnitude of each kind's calibration grid.
inline double calibration_max_magnitude(AugKind kind) {
    switch (kind) {
    case AugKind::Brightness: return 128.0;
    case AugKind::Hue: return 90.0;
    case AugKind::Saturation: return 128.0;
    case AugKind::Rotate: return 45.0;
    case AugKind::Scale: return 1.5;
    case AugKind::Translate: return 0.25;
    }
    return 0.0;
}

inline constexpr std::size_t calibration_grid_size = 20;
inline constexpr double calibration_grid_span = 50.0; // smallest magnitude = largest / 50

/// Symmetric candidate intervals in increasing order: 20 magnitudes log-spaced from max/50 to max
/// ([-m, m]); for Scale the exponent e is log-spaced the same way and the interval is [1/s, s] with
/// s = max^e.
inline std::vector<AugmentationInterval> calibration_grid(AugKind kind, std::size_t samples = 21) {
    std::vector<AugmentationInterval> grid;
    const double mx = calibration_max_magnitude(kind);
    for (std::size_t i = 0; i < calibration_grid_size; ++i) {
        const double frac = std::pow(1.0 / calibration_grid_span,
                                     static_cast<double>(calibration_grid_size - 1 - i) /
                                         static_cast<double>(calibration_grid_size - 1));
        if (kind == AugKind::Scale) {
            const double s = std::pow(mx, frac);
            grid.push_back({kind, 1.0 / s, s, samples});
        } else {
            grid.push_back({kind, -mx * frac, mx * frac, samples});
        }
    }
    return grid;
}

/// Mean over `corpus` of (p(x) - p(aug(x))) / p(x) for the target class.
inline double mean_relative_drop(const ModelGraph& model, const std::vector<CorpusEntry>& corpus,
                                 const std::vector<double>& base_probability, const AugmentationSpec& spec) {
    double total = 0.0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const double p = target_probability(model, apply_augmentation(corpus[i].image, spec), corpus[i].label);
        total += (base_probability[i] - p) / base_probability[i];
    }
    return total / static_cast<double>(corpus.size());
}

struct CalibrationResult {
    AugmentationInterval interval;
    double drop_low = 0.0;  // mean relative drop at the lower endpoint
    double drop_high = 0.0; // ... and at the upper endpoint
    bool warning = false;   // no grid interval reached the target drop
};

/// Smallest grid interval whose mean relative probability drop reaches `calibration_drop` at
/// either endpoint; the widest interval with `warning` set when none does.
inline CalibrationResult calibrate_interval(const ModelGraph& model, const std::vector<CorpusEntry>& corpus,
                                            AugKind kind, const MetricConfig& config,
                                            std::size_t samples = 21) {
    config.validate();
    if (corpus.empty()) throw ConfigError("calibration corpus is empty");
    std::vector<double> base(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        base[i] = target_probability(model, corpus[i].image, corpus[i].label);
        if (!(base[i] > 0.0)) throw NumericError(fmt::format("image '{}' has zero target probability", corpus[i].id));
    }
    CalibrationResult result;
    for (const auto& candidate : calibration_grid(kind, samples)) {
        result.interval = candidate;
        result.drop_low = mean_relative_drop(model, corpus, base, {kind, candidate.low});
        result.drop_high = mean_relative_drop(model, corpus, base, {kind, candidate.high});
        log().debug("calibrate {} [{}, {}]: drops {:.4f} / {:.4f}", aug_name(kind), candidate.low,
                    candidate.high, result.drop_low, result.drop_high);
        if (std::max(result.drop_low, result.drop_high) >= config.calibration_drop) return result;
    }
    result.warning = true;
    log().warn("calibration of {} never reached a {:.0f}% drop; using the widest interval", aug_name(kind),
               100.0 * config.calibration_drop);
    return result;
}

// ---------------------------------------------------------------------------------------------
// Small statistics helpers

inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Standard error of the mean: sample standard deviation / sqrt(n); 0 for n < 2.
inline double standard_error(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
inline double sign_test_p_value(std::size_t wins, std::size_t n) {
    double p = 0.0;
    for (std::size_t k = wins; k <= n; ++k)
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                      static_cast<double>(n) * std::log(2.0));
    return std::min(p, 1.0);
}

} // namespace xbench
