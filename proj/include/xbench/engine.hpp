#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "xbench/image.hpp"
#include "xbench/model.hpp"
#include "xbench/ops.hpp"
#include "xbench/tensor.hpp"

namespace xbench {

/// Cached activations of one forward pass; the input to every backward rule.
struct ForwardTrace {
    std::vector<Tensor> inputs;  // inputs[i] feeds layers[i]
    std::vector<Tensor> outputs; // outputs[i] = layers[i](inputs[i])
    Tensor logits;
    std::vector<double> probabilities;
};

/// (pixel/255 - mean) / std, laid out C x H x W.
inline Tensor preprocess(const Image& image, const InputSpec& spec, const Normalization& norm) {
    if (image.height != spec.height || image.width != spec.width || spec.channels != 3)
        throw ConfigError(fmt::format("image is {}x{}, model expects {}x{}x{}", image.height,
                                      image.width, spec.channels, spec.height, spec.width));
    Tensor out(spec.shape());
    for (std::size_t c = 0; c < 3; ++c) {
        const float mean = norm.mean[c];
        const float sd = norm.stddev[c];
        for (std::size_t y = 0; y < spec.height; ++y)
            for (std::size_t x = 0; x < spec.width; ++x)
                out.at(c, y, x) = (static_cast<float>(image.at(y, x, c)) / 255.0f - mean) / sd;
    }
    return out;
}

inline Tensor preprocess(const ModelGraph& model, const Image& image) {
    return preprocess(image, model.input, model.normalization);
}

/// Normalized value of raw pixel intensity `pixel` (0..255) in channel `c`.
inline float normalized_pixel(const ModelGraph& model, std::size_t c, double pixel) {
    return static_cast<float>((pixel / 255.0 - model.normalization.mean[c]) /
                              model.normalization.stddev[c]);
}

inline std::vector<double> softmax(const Tensor& logits) {
    const float top = *std::max_element(logits.values().begin(), logits.values().end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = std::exp(static_cast<double>(logits[k]) - top);
        total += p[k];
    }
    for (auto& v : p) v /= total;
    return p;
}

inline Tensor apply_layer(const Layer& layer, const Tensor& in, const Shape& out_shape) {
    return std::visit(
        overloaded{
            [&](const Conv2D& c) {
                return ops::conv_forward(ops::ConvGeometry(c, in.shape()), in, c.weights, c.bias);
            },
            [&](const Dense& d) { return ops::dense_forward(d, in, d.weights, d.bias); },
            [&](const ReLU&) { return ops::relu_forward(in); },
            [&](const MaxPool2D& p) { return ops::maxpool_forward(p, in, out_shape); },
            [&](const AvgPool2D& p) { return ops::avgpool_forward(p, in, out_shape); },
            [&](const Flatten&) { return in.reshaped(out_shape); },
            [&](const GlobalAvgPool&) { return ops::global_avgpool_forward(in); },
        },
        layer);
}

inline ForwardTrace forward(const ModelGraph& model, const Tensor& input) {
    if (input.shape() != model.input.shape())
        throw ConfigError(fmt::format("input shape {} does not match model input {}",
                                      shape_string(input.shape()), shape_string(model.input.shape())));
    ForwardTrace trace;
    trace.inputs.reserve(model.layers.size());
    trace.outputs.reserve(model.layers.size());
    Tensor current = input;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const Shape out_shape = layer_output_shape(model.layers[i], current.shape(), i);
        Tensor next = apply_layer(model.layers[i], current, out_shape);
        trace.inputs.push_back(std::move(current));
        trace.outputs.push_back(next);
        current = std::move(next);
    }
    trace.logits = current.reshaped({current.size()});
    trace.probabilities = softmax(trace.logits);
    return trace;
}

/// Logits only, without caching intermediate activations.
inline Tensor forward_logits(const ModelGraph& model, const Tensor& input) {
    if (input.shape() != model.input.shape())
        throw ConfigError(fmt::format("input shape {} does not match model input {}",
                                      shape_string(input.shape()), shape_string(model.input.shape())));
    Tensor current = input;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const Shape out_shape = layer_output_shape(model.layers[i], current.shape(), i);
        current = apply_layer(model.layers[i], current, out_shape);
    }
    return current.reshaped({current.size()});
}

inline std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline std::size_t predict(const ModelGraph& model, const Image& image) {
    return argmax(softmax(forward_logits(model, preprocess(model, image))));
}

inline void check_class(const ModelGraph& model, std::size_t target) {
    if (target >= model.num_classes)
        throw ConfigError(fmt::format("class {} out of range (num_classes = {})", target,
                                      model.num_classes));
}

inline double target_probability(const ModelGraph& model, const Image& image, std::size_t target) {
    check_class(model, target);
    return softmax(forward_logits(model, preprocess(model, image)))[target];
}

/// How ReLU layers treat the incoming gradient on the way back.
enum class ReluBackward {
    Gradient, // pass where the forward pre-activation was positive
    Guided,   // ... and only positive incoming gradient
    Deconv,   // only positive incoming gradient, forward activation ignored
};

/// Gradient through a single layer, given the layer's forward input.
inline Tensor layer_backward(const Layer& layer, const Tensor& in, const Tensor& grad,
                             ReluBackward relu_mode = ReluBackward::Gradient) {
    return std::visit(
        overloaded{
            [&](const Conv2D& c) {
                return ops::conv_backward_input(ops::ConvGeometry(c, in.shape()), grad, c.weights);
            },
            [&](const Dense& d) { return ops::dense_backward_input(d, grad, d.weights, in.shape()); },
            [&](const ReLU&) {
                Tensor g = grad;
                for (std::size_t k = 0; k < g.size(); ++k) {
                    const bool forward_gate = in[k] > 0.0f;
                    const bool backward_gate = g[k] > 0.0f;
                    bool pass = true;
                    switch (relu_mode) {
                    case ReluBackward::Gradient: pass = forward_gate; break;
                    case ReluBackward::Guided: pass = forward_gate && backward_gate; break;
                    case ReluBackward::Deconv: pass = backward_gate; break;
                    }
                    if (!pass) g[k] = 0.0f;
                }
                return g;
            },
            [&](const MaxPool2D& p) { return ops::maxpool_backward(p, in, grad); },
            [&](const AvgPool2D& p) { return ops::avgpool_backward(p, in.shape(), grad); },
            [&](const Flatten&) { return grad.reshaped(in.shape()); },
            [&](const GlobalAvgPool&) { return ops::global_avgpool_backward(in.shape(), grad); },
        },
        layer);
}

/// Propagates `grad` (shape of the last layer's output) back to the model input.
inline Tensor backward_input(const ModelGraph& model, const ForwardTrace& trace, Tensor grad,
                             ReluBackward relu_mode = ReluBackward::Gradient) {
    for (std::size_t i = model.layers.size(); i-- > 0;)
        grad = layer_backward(model.layers[i], trace.inputs[i], grad, relu_mode);
    return grad;
}

/// One-hot seed on logit `target`, shaped like the final layer output.
inline Tensor one_hot_like(const Tensor& last_output, std::size_t target, float value = 1.0f) {
    Tensor seed(last_output.shape());
    seed[target] = value;
    return seed;
}

/// d logit[target] / d input.
inline Tensor logit_gradient(const ModelGraph& model, const Tensor& input, std::size_t target,
                             ReluBackward relu_mode = ReluBackward::Gradient) {
    check_class(model, target);
    const auto trace = forward(model, input);
    return backward_input(model, trace, one_hot_like(trace.outputs.back(), target), relu_mode);
}

} // namespace xbench
