#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xbench/engine.hpp"

namespace xbench {

/// The eight explanation methods, in report row order. The numeric value is the on-disk method id.
enum class Method : std::uint32_t {
    Gradients = 0,
    InputXGradients = 1,
    IntegratedGradients = 2,
    GuidedBackprop = 3,
    Deconvolution = 4,
    LrpEpsilonPlusFlat = 5,
    LrpEpsilonGammaBox = 6,
    LrpEpsilonAlpha2Beta1Flat = 7,
};

inline constexpr std::array<Method, 8> all_methods{
    Method::Gradients,          Method::InputXGradients,     Method::IntegratedGradients,
    Method::GuidedBackprop,     Method::Deconvolution,       Method::LrpEpsilonPlusFlat,
    Method::LrpEpsilonGammaBox, Method::LrpEpsilonAlpha2Beta1Flat,
};

/// CLI / file identifier.
inline std::string_view method_key(Method m) {
    switch (m) {
    case Method::Gradients: return "gradients";
    case Method::InputXGradients: return "input_x_gradients";
    case Method::IntegratedGradients: return "integrated_gradients";
    case Method::GuidedBackprop: return "guided_backprop";
    case Method::Deconvolution: return "deconvolution";
    case Method::LrpEpsilonPlusFlat: return "lrp_epsilon_plus_flat";
    case Method::LrpEpsilonGammaBox: return "lrp_epsilon_gamma_box";
    case Method::LrpEpsilonAlpha2Beta1Flat: return "lrp_epsilon_alpha2_beta1_flat";
    }
    return "unknown";
}

/// Human-readable label used in report tables.
inline std::string_view method_label(Method m) {
    switch (m) {
    case Method::Gradients: return "Gradients";
    case Method::InputXGradients: return "Input x Gradients";
    case Method::IntegratedGradients: return "Integrated Gradients";
    case Method::GuidedBackprop: return "Guided Backprop";
    case Method::Deconvolution: return "Deconvolution";
    case Method::LrpEpsilonPlusFlat: return "LRP: EpsilonPlusFlat";
    case Method::LrpEpsilonGammaBox: return "LRP: EpsilonGammaBox";
    case Method::LrpEpsilonAlpha2Beta1Flat: return "LRP: EpsilonAlpha2Beta1Flat";
    }
    return "unknown";
}

inline Method parse_method(std::string_view key) {
    for (auto m : all_methods)
        if (method_key(m) == key) return m;
    throw ConfigError(fmt::format("unknown method '{}'", key));
}

struct Explanation {
    Tensor per_channel; // C x H x W
    Tensor heatmap;     // H x W, channel sum
    Method method = Method::Gradients;
    std::size_t target_class = 0;
    std::optional<double> completeness_gap; // integrated gradients only
};

/// Channel sum of a C x H x W relevance tensor.
inline Tensor reduce_heatmap(const Tensor& per_channel) {
    if (per_channel.rank() != 3) throw ConfigError("reduce_heatmap expects C x H x W");
    const std::size_t c_n = per_channel.dim(0), h = per_channel.dim(1), w = per_channel.dim(2);
    Tensor out({h, w});
    for (std::size_t k = 0; k < h * w; ++k) {
        double acc = 0.0;
        for (std::size_t c = 0; c < c_n; ++c) acc += per_channel[c * h * w + k];
        out[k] = static_cast<float>(acc);
    }
    return out;
}

inline Explanation make_explanation(Tensor per_channel, Method method, std::size_t target) {
    Explanation e;
    e.heatmap = reduce_heatmap(per_channel);
    e.per_channel = std::move(per_channel);
    e.method = method;
    e.target_class = target;
    return e;
}

// ---------------------------------------------------------------------------------------------
// Gradient family

inline Explanation explain_gradients(const ModelGraph& model, const Tensor& input, std::size_t target) {
    return make_explanation(logit_gradient(model, input, target), Method::Gradients, target);
}

inline Explanation explain_input_x_gradients(const ModelGraph& model, const Tensor& input,
                                             std::size_t target) {
    Tensor g = logit_gradient(model, input, target);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] *= input[k];
    return make_explanation(std::move(g), Method::InputXGradients, target);
}

/// Normalized all-black image.
inline Tensor black_baseline(const ModelGraph& model) {
    Tensor t(model.input.shape());
    const std::size_t plane = model.input.height * model.input.width;
    for (std::size_t c = 0; c < model.input.channels; ++c) {
        const float v = normalized_pixel(model, c, 0.0);
        std::fill_n(t.values().begin() + static_cast<std::ptrdiff_t>(c * plane), plane, v);
    }
    return t;
}

/// Midpoint Riemann sum of the path integral from `baseline` (default: black) to `input`.
inline Explanation explain_integrated_gradients(const ModelGraph& model, const Tensor& input,
                                                std::size_t target, std::size_t steps = 64,
                                                const std::optional<Tensor>& baseline = std::nullopt) {
    if (steps < 2) throw ConfigError("integrated gradients needs steps >= 2");
    check_class(model, target);
    const Tensor base = baseline ? *baseline : black_baseline(model);
    if (base.shape() != input.shape()) throw ConfigError("baseline shape does not match input");

    std::vector<double> acc(input.size(), 0.0);
    Tensor point(input.shape());
    for (std::size_t k = 0; k < steps; ++k) {
        const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
        for (std::size_t i = 0; i < input.size(); ++i)
            point[i] = static_cast<float>(base[i] + alpha * (static_cast<double>(input[i]) - base[i]));
        const Tensor g = logit_gradient(model, point, target);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
    Tensor attr(input.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        attr[i] = static_cast<float>(acc[i] / static_cast<double>(steps) *
                                     (static_cast<double>(input[i]) - base[i]));
        total += attr[i];
    }
    const double delta = static_cast<double>(forward_logits(model, input)[target]) -
                         forward_logits(model, base)[target];
    auto e = make_explanation(std::move(attr), Method::IntegratedGradients, target);
    e.completeness_gap = std::abs(total - delta);
    return e;
}

inline Explanation explain_guided_backprop(const ModelGraph& model, const Tensor& input,
                                           std::size_t target) {
    return make_explanation(logit_gradient(model, input, target, ReluBackward::Guided),
                            Method::GuidedBackprop, target);
}

inline Explanation explain_deconvolution(const ModelGraph& model, const Tensor& input,
                                         std::size_t target) {
    return make_explanation(logit_gradient(model, input, target, ReluBackward::Deconv),
                            Method::Deconvolution, target);
}

// ---------------------------------------------------------------------------------------------
// Layer-wise relevance propagation

enum class Rule { Epsilon, ZPlus, AlphaBeta, Gamma, Flat, ZBox };

inline std::string_view rule_name(Rule r) {
    switch (r) {
    case Rule::Epsilon: return "epsilon";
    case Rule::ZPlus: return "zplus";
    case Rule::AlphaBeta: return "alphabeta";
    case Rule::Gamma: return "gamma";
    case Rule::Flat: return "flat";
    case Rule::ZBox: return "zbox";
    }
    return "unknown";
}

struct RuleParams {
    double epsilon = 1e-6;
    double alpha = 2.0;
    double beta = 1.0;
    double gamma = 0.25;
    // Per-channel bounds of the normalized input for the box rule; empty means "normalized 0 and 255".
    std::vector<float> box_low;
    std::vector<float> box_high;

    void validate() const {
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
        if (std::abs(alpha - beta - 1.0) > 1e-12) throw ConfigError("alpha - beta must equal 1");
        if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
        if (box_low.size() != box_high.size()) throw ConfigError("box bounds must have equal length");
        for (std::size_t c = 0; c < box_low.size(); ++c)
            if (!(box_low[c] <= box_high[c]))
                throw ConfigError(fmt::format("box_low > box_high in channel {}", c));
    }
};

/// Rule assignment per layer kind.
struct Composite {
    Rule dense_rule = Rule::Epsilon;
    Rule conv_rule = Rule::ZPlus;
    Rule first_layer_rule = Rule::Flat;

    void validate() const {
        if (first_layer_rule != Rule::Flat && first_layer_rule != Rule::ZBox)
            throw ConfigError("composite first-layer rule must be flat or zbox");
    }
    friend bool operator==(const Composite&, const Composite&) = default;
};

inline Composite composite_epsilon_plus_flat() { return {Rule::Epsilon, Rule::ZPlus, Rule::Flat}; }
inline Composite composite_epsilon_gamma_box() { return {Rule::Epsilon, Rule::Gamma, Rule::ZBox}; }
inline Composite composite_epsilon_alpha2beta1_flat() {
    return {Rule::Epsilon, Rule::AlphaBeta, Rule::Flat};
}

/// Rule for every Conv2D/Dense layer of `model` under `composite` (unused entries for other kinds).
inline std::vector<Rule> layer_rules(const ModelGraph& model, const Composite& composite) {
    composite.validate();
    std::vector<Rule> rules(model.layers.size(), Rule::Epsilon);
    const auto first = model.first_parameterized_layer();
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (i == first) rules[i] = composite.first_layer_rule;
        else if (std::holds_alternative<Conv2D>(model.layers[i])) rules[i] = composite.conv_rule;
        else if (std::holds_alternative<Dense>(model.layers[i])) rules[i] = composite.dense_rule;
    }
    return rules;
}

namespace detail {

// A Conv2D or Dense layer viewed as a linear map with swappable weights.
struct LinearView {
    const Conv2D* conv = nullptr;
    const Dense* dense = nullptr;
    Shape in_shape;

    const std::vector<float>& weights() const { return conv ? conv->weights : dense->weights; }
    const std::vector<float>& bias() const { return conv ? conv->bias : dense->bias; }

    Tensor forward(const Tensor& x, std::span<const float> w, std::span<const float> b = {}) const {
        if (conv) return ops::conv_forward(ops::ConvGeometry(*conv, in_shape), x, w, b);
        return ops::dense_forward(*dense, x, w, b);
    }
    Tensor transpose(const Tensor& s, std::span<const float> w) const {
        if (conv) return ops::conv_backward_input(ops::ConvGeometry(*conv, in_shape), s, w);
        return ops::dense_backward_input(*dense, s, w, in_shape);
    }
};

inline std::vector<float> positive_part(const std::vector<float>& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0f ? v[i] : 0.0f;
    return out;
}
inline std::vector<float> negative_part(const std::vector<float>& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] < 0.0f ? v[i] : 0.0f;
    return out;
}
inline Tensor positive_part(const Tensor& t) { return Tensor(t.shape(), positive_part(t.values())); }
inline Tensor negative_part(const Tensor& t) { return Tensor(t.shape(), negative_part(t.values())); }

/// s_j = R_j / (z_j + eps * sign(z_j)), sign(0) = +1.
inline Tensor stabilized_ratio(const Tensor& relevance, const Tensor& z, double eps) {
    Tensor s(z.shape());
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double zj = z[j];
        const double denom = zj + (zj >= 0.0 ? eps : -eps);
        if (denom == 0.0) throw NumericError("LRP denominator vanished after stabilization");
        s[j] = static_cast<float>(relevance[j] / denom);
    }
    return s;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    Tensor out(b.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline void add_scaled(Tensor& acc, const Tensor& t, double scale) {
    for (std::size_t i = 0; i < acc.size(); ++i)
        acc[i] = static_cast<float>(acc[i] + scale * static_cast<double>(t[i]));
}

// Relevance carried through one side (positive or negative) of the alpha-beta decomposition:
// contributions x+ w_a + x- w_b.
inline Tensor signed_part_relevance(const LinearView& lin, const Tensor& x, const Tensor& relevance,
                                    const std::vector<float>& w_a, const std::vector<float>& w_b,
                                    const std::vector<float>& bias, double eps) {
    const Tensor xp = positive_part(x), xn = negative_part(x);
    Tensor z = lin.forward(xp, w_a, bias);
    add_scaled(z, lin.forward(xn, w_b), 1.0);
    const Tensor s = stabilized_ratio(relevance, z, eps);
    Tensor r = hadamard(xp, lin.transpose(s, w_a));
    add_scaled(r, hadamard(xn, lin.transpose(s, w_b)), 1.0);
    return r;
}

inline Tensor lrp_linear(const LinearView& lin, const Tensor& x, const Tensor& relevance, Rule rule,
                         const RuleParams& p, const std::vector<float>& low,
                         const std::vector<float>& high) {
    const auto& w = lin.weights();
    const auto& b = lin.bias();
    switch (rule) {
    case Rule::Epsilon: {
        const Tensor s = stabilized_ratio(relevance, lin.forward(x, w, b), p.epsilon);
        return hadamard(x, lin.transpose(s, w));
    }
    case Rule::ZPlus:
        return signed_part_relevance(lin, x, relevance, positive_part(w), negative_part(w),
                                     positive_part(b), p.epsilon);
    case Rule::AlphaBeta: {
        Tensor r = signed_part_relevance(lin, x, relevance, positive_part(w), negative_part(w),
                                         positive_part(b), p.epsilon);
        for (auto& v : r.values()) v = static_cast<float>(p.alpha * v);
        if (p.beta != 0.0) {
            const Tensor neg = signed_part_relevance(lin, x, relevance, negative_part(w),
                                                     positive_part(w), negative_part(b), p.epsilon);
            add_scaled(r, neg, -p.beta);
        }
        return r;
    }
    case Rule::Gamma: {
        std::vector<float> wg(w.size()), bg(b.size());
        for (std::size_t i = 0; i < w.size(); ++i)
            wg[i] = static_cast<float>(w[i] + p.gamma * std::max(w[i], 0.0f));
        for (std::size_t i = 0; i < b.size(); ++i)
            bg[i] = static_cast<float>(b[i] + p.gamma * std::max(b[i], 0.0f));
        const Tensor s = stabilized_ratio(relevance, lin.forward(x, wg, bg), p.epsilon);
        return hadamard(x, lin.transpose(s, wg));
    }
    case Rule::Flat: {
        const std::vector<float> ones_w(w.size(), 1.0f);
        const Tensor ones_x(x.shape(), 1.0f);
        const Tensor s = stabilized_ratio(relevance, lin.forward(ones_x, ones_w), p.epsilon);
        return lin.transpose(s, ones_w);
    }
    case Rule::ZBox: {
        // Bounds broadcast per channel of the (C x H x W) model input.
        Tensor l(x.shape()), h(x.shape());
        const std::size_t channels = low.size();
        const std::size_t plane = x.size() / channels;
        for (std::size_t i = 0; i < x.size(); ++i) {
            l[i] = low[i / plane];
            h[i] = high[i / plane];
        }
        const auto wp = positive_part(w), wn = negative_part(w);
        Tensor z = lin.forward(x, w, b);
        add_scaled(z, lin.forward(l, wp), -1.0);
        add_scaled(z, lin.forward(h, wn), -1.0);
        const Tensor s = stabilized_ratio(relevance, z, p.epsilon);
        Tensor r = hadamard(x, lin.transpose(s, w));
        add_scaled(r, hadamard(l, lin.transpose(s, wp)), -1.0);
        add_scaled(r, hadamard(h, lin.transpose(s, wn)), -1.0);
        return r;
    }
    }
    throw ConfigError("unmapped LRP rule");
}

} // namespace detail

/// Relevance at the model input for `target`, applying `rules[i]` at every Conv2D/Dense layer i.
/// ReLU and Flatten pass relevance through, MaxPool2D routes it to the arg-max, AvgPool2D spreads it
/// uniformly and GlobalAvgPool redistributes it in proportion to the pooled activations.
inline Tensor lrp_relevance(const ModelGraph& model, const Tensor& input, std::size_t target,
                            const std::vector<Rule>& rules, RuleParams params) {
    check_class(model, target);
    params.validate();
    if (rules.size() != model.layers.size())
        throw ConfigError("LRP rule plan must cover every layer");
    if (params.box_low.empty()) {
        for (std::size_t c = 0; c < model.input.channels; ++c) {
            params.box_low.push_back(normalized_pixel(model, c, 0.0));
            params.box_high.push_back(normalized_pixel(model, c, 255.0));
        }
    }
    if (params.box_low.size() != model.input.channels)
        throw ConfigError("box bounds must have one entry per input channel");

    const auto trace = forward(model, input);
    Tensor relevance = one_hot_like(trace.outputs.back(), target, trace.logits[target]);
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        const Tensor& x = trace.inputs[i];
        const Layer& layer = model.layers[i];
        if (const auto* c = std::get_if<Conv2D>(&layer)) {
            detail::LinearView lin{c, nullptr, x.shape()};
            relevance = detail::lrp_linear(lin, x, relevance, rules[i], params, params.box_low, params.box_high);
        } else if (const auto* d = std::get_if<Dense>(&layer)) {
            detail::LinearView lin{nullptr, d, x.shape()};
            relevance = detail::lrp_linear(lin, x, relevance, rules[i], params, params.box_low, params.box_high);
        } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
            const std::size_t plane = x.dim(1) * x.dim(2);
            const Tensor& pooled = trace.outputs[i];
            const Tensor s = detail::stabilized_ratio(relevance, pooled, params.epsilon);
            Tensor r(x.shape());
            for (std::size_t k = 0; k < x.size(); ++k)
                r[k] = static_cast<float>(static_cast<double>(x[k]) / static_cast<double>(plane) * s[k / plane]);
            relevance = std::move(r);
        } else if (std::holds_alternative<ReLU>(layer)) {
            // unchanged
        } else {
            // Flatten reshapes, MaxPool2D routes to the arg-max, AvgPool2D spreads uniformly:
            // exactly what their gradient does.
            relevance = layer_backward(layer, x, relevance);
        }
        if (!relevance.all_finite())
            throw NumericError(fmt::format("layer {} ({}): non-finite relevance", i, layer_name(layer)));
    }
    return relevance;
}

inline Explanation explain_lrp(const ModelGraph& model, const Tensor& input, std::size_t target,
                               const Composite& composite, const RuleParams& params = {}) {
    Method method = Method::LrpEpsilonPlusFlat;
    if (composite == composite_epsilon_gamma_box()) method = Method::LrpEpsilonGammaBox;
    else if (composite == composite_epsilon_alpha2beta1_flat()) method = Method::LrpEpsilonAlpha2Beta1Flat;
    return make_explanation(lrp_relevance(model, input, target, layer_rules(model, composite), params),
                            method, target);
}

// ---------------------------------------------------------------------------------------------
// Dispatch

struct ExplainOptions {
    std::size_t ig_steps = 64;
    RuleParams rule_params;
};

inline Explanation explain(const ModelGraph& model, const Tensor& input, std::size_t target,
                           Method method, const ExplainOptions& opts = {}) {
    switch (method) {
    case Method::Gradients: return explain_gradients(model, input, target);
    case Method::InputXGradients: return explain_input_x_gradients(model, input, target);
    case Method::IntegratedGradients:
        return explain_integrated_gradients(model, input, target, opts.ig_steps);
    case Method::GuidedBackprop: return explain_guided_backprop(model, input, target);
    case Method::Deconvolution: return explain_deconvolution(model, input, target);
    case Method::LrpEpsilonPlusFlat:
        return explain_lrp(model, input, target, composite_epsilon_plus_flat(), opts.rule_params);
    case Method::LrpEpsilonGammaBox:
        return explain_lrp(model, input, target, composite_epsilon_gamma_box(), opts.rule_params);
    case Method::LrpEpsilonAlpha2Beta1Flat:
        return explain_lrp(model, input, target, composite_epsilon_alpha2beta1_flat(), opts.rule_params);
    }
    throw ConfigError("unknown method");
}

inline Explanation explain(const ModelGraph& model, const Image& image, std::size_t target,
                           Method method, const ExplainOptions& opts = {}) {
    return explain(model, preprocess(model, image), target, method, opts);
}

// ---------------------------------------------------------------------------------------------
// Binary export: four little-endian uint32 (method id, C, H, W), then C*H*W little-endian float32.

inline void write_explanation_bin(const std::filesystem::path& path, const Explanation& e) {
    std::string bytes;
    auto put_u32 = [&](std::uint32_t v) {
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
    };
    put_u32(static_cast<std::uint32_t>(e.method));
    for (std::size_t d = 0; d < 3; ++d) put_u32(static_cast<std::uint32_t>(e.per_channel.dim(d)));
    for (float v : e.per_channel.values()) put_u32(std::bit_cast<std::uint32_t>(v));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Explanation read_explanation_bin(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw IoError("explanation file: truncated header");
    auto get_u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + b])) << (8 * b);
        return v;
    };
    const auto method = get_u32(0);
    if (method >= all_methods.size()) throw IoError("explanation file: unknown method id");
    const Shape shape{get_u32(4), get_u32(8), get_u32(12)};
    if (bytes.size() != 16 + 4 * shape_size(shape)) throw IoError("explanation file: size mismatch");
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_u32(16 + 4 * i));
    return make_explanation(std::move(t), static_cast<Method>(method), 0);
}

} // namespace xbench
