#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "xbench/error.hpp"
#include "xbench/tensor.hpp"

namespace xbench {

struct Conv2D {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::vector<float> weights; // out x in x kh x kw
    std::vector<float> bias;    // out

    float weight(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
        return weights[((o * in_channels + i) * kernel_h + ky) * kernel_w + kx];
    }
    friend bool operator==(const Conv2D&, const Conv2D&) = default;
};

struct Dense {
    std::size_t out_features = 0;
    std::size_t in_features = 0;
    std::vector<float> weights; // out x in
    std::vector<float> bias;    // out
    friend bool operator==(const Dense&, const Dense&) = default;
};

struct ReLU {
    friend bool operator==(const ReLU&, const ReLU&) = default;
};

struct MaxPool2D {
    std::size_t window = 2;
    std::size_t stride = 2;
    friend bool operator==(const MaxPool2D&, const MaxPool2D&) = default;
};

struct AvgPool2D {
    std::size_t window = 2;
    std::size_t stride = 2;
    friend bool operator==(const AvgPool2D&, const AvgPool2D&) = default;
};

struct Flatten {
    friend bool operator==(const Flatten&, const Flatten&) = default;
};

struct GlobalAvgPool {
    friend bool operator==(const GlobalAvgPool&, const GlobalAvgPool&) = default;
};

using Layer = std::variant<Conv2D, Dense, ReLU, MaxPool2D, AvgPool2D, Flatten, GlobalAvgPool>;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline std::string_view layer_name(const Layer& layer) {
    return std::visit(overloaded{
                          [](const Conv2D&) { return std::string_view{"Conv2D"}; },
                          [](const Dense&) { return std::string_view{"Dense"}; },
                          [](const ReLU&) { return std::string_view{"ReLU"}; },
                          [](const MaxPool2D&) { return std::string_view{"MaxPool2D"}; },
                          [](const AvgPool2D&) { return std::string_view{"AvgPool2D"}; },
                          [](const Flatten&) { return std::string_view{"Flatten"}; },
                          [](const GlobalAvgPool&) { return std::string_view{"GlobalAvgPool"}; },
                      },
                      layer);
}

inline bool is_parameterized(const Layer& layer) {
    return std::holds_alternative<Conv2D>(layer) || std::holds_alternative<Dense>(layer);
}

struct InputSpec {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;

    Shape shape() const { return {channels, height, width}; }
    friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

struct Normalization {
    std::vector<float> mean;
    std::vector<float> stddev;
    friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Output shape of `layer` for `input`; throws ConfigError naming `index` on mismatch.
inline Shape layer_output_shape(const Layer& layer, const Shape& input, std::size_t index) {
    auto fail = [&](const std::string& why) -> Shape {
        throw ConfigError(fmt::format("layer {} ({}): {} (input shape {})", index, layer_name(layer),
                                      why, shape_string(input)));
    };
    auto spatial = [&](std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
        if (in + 2 * pad < k) fail("window larger than padded input");
        return (in + 2 * pad - k) / stride + 1;
    };
    return std::visit(
        overloaded{
            [&](const Conv2D& c) -> Shape {
                if (input.size() != 3) return fail("expects C x H x W input");
                if (input[0] != c.in_channels)
                    return fail(fmt::format("expects {} input channels", c.in_channels));
                if (c.stride == 0) return fail("stride must be >= 1");
                return {c.out_channels, spatial(input[1], c.kernel_h, c.stride, c.padding),
                        spatial(input[2], c.kernel_w, c.stride, c.padding)};
            },
            [&](const Dense& d) -> Shape {
                if (shape_size(input) != d.in_features)
                    return fail(fmt::format("expects {} input features", d.in_features));
                return {d.out_features};
            },
            [&](const ReLU&) -> Shape { return input; },
            [&](const MaxPool2D& p) -> Shape {
                if (input.size() != 3) return fail("expects C x H x W input");
                if (p.stride == 0 || p.window == 0) return fail("window and stride must be >= 1");
                return {input[0], spatial(input[1], p.window, p.stride, 0),
                        spatial(input[2], p.window, p.stride, 0)};
            },
            [&](const AvgPool2D& p) -> Shape {
                if (input.size() != 3) return fail("expects C x H x W input");
                if (p.stride == 0 || p.window == 0) return fail("window and stride must be >= 1");
                return {input[0], spatial(input[1], p.window, p.stride, 0),
                        spatial(input[2], p.window, p.stride, 0)};
            },
            [&](const Flatten&) -> Shape { return {shape_size(input)}; },
            [&](const GlobalAvgPool&) -> Shape {
                if (input.size() != 3) return fail("expects C x H x W input");
                return {input[0]};
            },
        },
        layer);
}

/// Sequential network with its input contract. Immutable once validated; shared freely across threads.
struct ModelGraph {
    InputSpec input;
    Normalization normalization;
    std::vector<Layer> layers;
    std::size_t num_classes = 0;

    /// Per-layer output shapes; throws on any inconsistency.
    std::vector<Shape> layer_shapes() const {
        std::vector<Shape> shapes;
        shapes.reserve(layers.size());
        Shape current = input.shape();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            current = layer_output_shape(layers[i], current, i);
            shapes.push_back(current);
        }
        return shapes;
    }

    void validate() const {
        if (layers.empty()) throw ConfigError("model has no layers");
        if (input.channels == 0 || input.height == 0 || input.width == 0)
            throw ConfigError("input spec dimensions must be positive");
        if (num_classes == 0) throw ConfigError("num_classes must be positive");
        if (normalization.mean.size() != input.channels ||
            normalization.stddev.size() != input.channels)
            throw ConfigError("normalization must have one mean and stddev per channel");
        for (std::size_t c = 0; c < input.channels; ++c) {
            if (!(normalization.stddev[c] > 0.0f) || !std::isfinite(normalization.stddev[c]))
                throw ConfigError(fmt::format("stddev of channel {} must be > 0", c));
            if (!std::isfinite(normalization.mean[c]))
                throw ConfigError(fmt::format("mean of channel {} is not finite", c));
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            std::visit(overloaded{
                           [&](const Conv2D& c) {
                               if (c.weights.size() != c.out_channels * c.in_channels * c.kernel_h * c.kernel_w ||
                                   c.bias.size() != c.out_channels)
                                   throw ConfigError(fmt::format("layer {} (Conv2D): weight shape mismatch", i));
                               if (c.kernel_h == 0 || c.kernel_w == 0 || c.out_channels == 0)
                                   throw ConfigError(fmt::format("layer {} (Conv2D): zero-sized kernel", i));
                           },
                           [&](const Dense& d) {
                               if (d.weights.size() != d.out_features * d.in_features ||
                                   d.bias.size() != d.out_features)
                                   throw ConfigError(fmt::format("layer {} (Dense): weight shape mismatch", i));
                               if (d.out_features == 0 || d.in_features == 0)
                                   throw ConfigError(fmt::format("layer {} (Dense): zero-sized layer", i));
                           },
                           [](const auto&) {},
                       },
                       layers[i]);
        }
        const auto shapes = layer_shapes();
        if (shape_size(shapes.back()) != num_classes)
            throw ConfigError(fmt::format("final layer produces {} outputs, expected num_classes = {}",
                                          shape_size(shapes.back()), num_classes));
    }

    /// Index of the first Conv2D/Dense layer; the LRP first-layer rule applies there.
    std::size_t first_parameterized_layer() const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (is_parameterized(layers[i])) return i;
        return layers.size();
    }

    friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

} // namespace xbench
