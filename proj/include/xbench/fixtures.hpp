#pragma once

// Reference architectures used by the CLI fixture exporter and the test suites.

#include <cmath>
#include <cstdint>
#include <random>

#include "xbench/model.hpp"

namespace xbench::fixtures {

inline Normalization default_normalization() { return {{0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f}}; }

inline Conv2D conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                   std::size_t pad = 0) {
    Conv2D c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel_h = c.kernel_w = k;
    c.stride = stride;
    c.padding = pad;
    c.weights.assign(out * in * k * k, 0.0f);
    c.bias.assign(out, 0.0f);
    return c;
}

inline Dense dense(std::size_t in, std::size_t out) {
    Dense d;
    d.in_features = in;
    d.out_features = out;
    d.weights.assign(out * in, 0.0f);
    d.bias.assign(out, 0.0f);
    return d;
}

/// He-normal weights; biases drawn from N(0, bias_scale) (zero when bias_scale == 0).
inline void randomize(ModelGraph& model, std::uint64_t seed, float bias_scale = 0.0f) {
    std::mt19937_64 rng(seed);
    auto init = [&](std::vector<float>& w, std::vector<float>& b, std::size_t fan_in) {
        std::normal_distribution<float> wd(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
        for (auto& v : w) v = wd(rng);
        std::normal_distribution<float> bd(0.0f, bias_scale > 0.0f ? bias_scale : 1.0f);
        for (auto& v : b) v = bias_scale > 0.0f ? bd(rng) : 0.0f;
    };
    for (auto& layer : model.layers) {
        std::visit(overloaded{[&](Conv2D& c) {
                                  init(c.weights, c.bias, c.in_channels * c.kernel_h * c.kernel_w);
                              },
                              [&](Dense& d) { init(d.weights, d.bias, d.in_features); },
                              [](auto&) {}},
                   layer);
    }
}

/// Trainable classifier for the synthetic corpus: two conv blocks and a dense head.
inline ModelGraph classifier_cnn(std::size_t num_classes, std::size_t height, std::size_t width,
                                 std::uint64_t seed) {
    ModelGraph m;
    m.input = {3, height, width};
    m.normalization = default_normalization();
    m.num_classes = num_classes;
    m.layers = {conv(3, 8, 3, 1, 1), ReLU{},    MaxPool2D{2, 2},
                conv(8, 16, 3, 1, 1), ReLU{},   MaxPool2D{2, 2},
                Flatten{},            dense(16 * (height / 4) * (width / 4), num_classes)};
    randomize(m, seed);
    m.validate();
    return m;
}

/// Six-layer, ten-class network on 3 x 16 x 16 inputs.
inline ModelGraph tiny_cnn(std::uint64_t seed) {
    ModelGraph m;
    m.input = {3, 16, 16};
    m.normalization = default_normalization();
    m.num_classes = 10;
    m.layers = {conv(3, 8, 3, 1, 1), ReLU{}, MaxPool2D{2, 2}, conv(8, 12, 3), GlobalAvgPool{},
                dense(12, 10)};
    randomize(m, seed, 0.05f);
    m.validate();
    return m;
}

/// Five-layer network on 3 x 16 x 16 inputs: Conv, ReLU, MaxPool, Flatten, Dense.
inline ModelGraph random_cnn5(std::uint64_t seed, float bias_scale = 0.1f, std::size_t classes = 10) {
    ModelGraph m;
    m.input = {3, 16, 16};
    m.normalization = default_normalization();
    m.num_classes = classes;
    m.layers = {conv(3, 6, 3, 1, 1), ReLU{}, MaxPool2D{2, 2}, Flatten{}, dense(6 * 8 * 8, classes)};
    randomize(m, seed, bias_scale);
    m.validate();
    return m;
}

/// Five-layer network covering the remaining kinds: Conv (strided), ReLU, AvgPool, GlobalAvgPool, Dense.
inline ModelGraph random_pooling_cnn(std::uint64_t seed, float bias_scale = 0.1f) {
    ModelGraph m;
    m.input = {3, 16, 16};
    m.normalization = default_normalization();
    m.num_classes = 5;
    m.layers = {conv(3, 6, 3, 2, 1), ReLU{}, AvgPool2D{2, 2}, GlobalAvgPool{}, dense(6, 5)};
    randomize(m, seed, bias_scale);
    m.validate();
    return m;
}

/// Deeper sequential network (two conv blocks, two dense layers) with zero biases.
inline ModelGraph random_deep_cnn(std::uint64_t seed, float bias_scale = 0.0f) {
    ModelGraph m;
    m.input = {3, 16, 16};
    m.normalization = default_normalization();
    m.num_classes = 6;
    m.layers = {conv(3, 6, 3, 1, 1), ReLU{}, MaxPool2D{2, 2}, conv(6, 8, 3, 1, 1), ReLU{},
                MaxPool2D{2, 2},     Flatten{}, dense(8 * 4 * 4, 16), ReLU{}, dense(16, 6)};
    randomize(m, seed, bias_scale);
    m.validate();
    return m;
}

/// Translation-equivariant feature extractor: unpadded convolutions, global pooling, dense head.
inline ModelGraph fully_convolutional(std::uint64_t seed, std::size_t size = 32) {
    ModelGraph m;
    m.input = {3, size, size};
    m.normalization = default_normalization();
    m.num_classes = 4;
    m.layers = {conv(3, 6, 3), ReLU{}, conv(6, 8, 3), ReLU{}, GlobalAvgPool{}, dense(8, 4)};
    randomize(m, seed, 0.05f);
    m.validate();
    return m;
}

/// Distance over which an input pixel's gradient in `fully_convolutional` depends on other input
/// pixels: the 5x5 receptive field of the output units covering it, plus their own 5x5 fields.
inline constexpr std::size_t fully_convolutional_radius = 4;

} // namespace xbench::fixtures
