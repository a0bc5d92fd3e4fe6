#pragma once

// Desk-scale stand-in for a natural image corpus: one saturated shape on a gray textured background.
// Shapes stay at least 15% of the side away from the border, so small rotations and translations
// keep the object (and therefore the label) in frame.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "xbench/augment.hpp"
#include "xbench/corpus.hpp"

namespace xbench {

enum class ShapeKind { Circle, Square, Triangle };
enum class ShapeColor { Red, Green, Blue };

inline constexpr std::size_t synthetic_num_classes = 9;

struct SyntheticClass {
    ShapeKind shape;
    ShapeColor color;
};

/// Label = 3 * shape + color.
inline SyntheticClass synthetic_class(std::size_t label) {
    if (label >= synthetic_num_classes) throw ConfigError(fmt::format("synthetic class {} out of range", label));
    return {static_cast<ShapeKind>(label / 3), static_cast<ShapeColor>(label % 3)};
}

inline std::size_t synthetic_label(ShapeKind shape, ShapeColor color) {
    return 3 * static_cast<std::size_t>(shape) + static_cast<std::size_t>(color);
}

inline std::string synthetic_class_name(std::size_t label) {
    static constexpr std::array<std::string_view, 3> shapes{"circle", "square", "triangle"};
    static constexpr std::array<std::string_view, 3> colors{"red", "green", "blue"};
    const auto c = synthetic_class(label);
    return fmt::format("{}_{}", colors[static_cast<std::size_t>(c.color)], shapes[static_cast<std::size_t>(c.shape)]);
}

namespace detail {

/// splitmix64: decorrelates per-image streams derived from one seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Small portable generator; std distributions are implementation-defined.
struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() { return state = splitmix64(state); }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

inline bool inside_shape(ShapeKind shape, double dx, double dy, double half) {
    switch (shape) {
    case ShapeKind::Circle: return dx * dx + dy * dy <= half * half;
    case ShapeKind::Square: return std::abs(dx) <= half && std::abs(dy) <= half;
    case ShapeKind::Triangle: {
        // Apex up, base at dy = +half, width 2*half at the base.
        if (dy < -half || dy > half) return false;
        const double w = (dy + half) / 2.0;
        return std::abs(dx) <= w;
    }
    }
    return false;
}

} // namespace detail

/// `n` images of `height` x `width`, deterministic in `seed`. Classes are balanced round-robin.
inline Corpus generate_synthetic_corpus(std::uint64_t seed, std::size_t n, std::size_t height, std::size_t width) {
    if (n == 0) throw ConfigError("synthetic corpus size must be >= 1");
    if (height < 16 || width < 16) throw ConfigError("synthetic images must be at least 16x16");
    Corpus corpus;
    const double side = static_cast<double>(std::min(height, width));
    for (std::size_t i = 0; i < n; ++i) {
        detail::Rng rng(detail::splitmix64(seed ^ detail::splitmix64(i + 1)));
        const std::size_t label = (i + static_cast<std::size_t>(seed % synthetic_num_classes)) % synthetic_num_classes;
        const auto cls = synthetic_class(label);

        Image img(height, width);
        // Background: gray with stripes and per-pixel noise, low saturation.
        const double base = rng.uniform(70.0, 150.0);
        const double freq = rng.uniform(0.3, 0.9);
        const double phase = rng.uniform(0.0, 6.283185307179586);
        const double angle = rng.uniform(0.0, 3.141592653589793);
        const double ca = std::cos(angle), sa = std::sin(angle);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double u = ca * static_cast<double>(x) + sa * static_cast<double>(y);
                const double g = base + 20.0 * std::sin(freq * u + phase) + rng.uniform(-12.0, 12.0);
                for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = to_byte(g + rng.uniform(-6.0, 6.0));
            }

        // Object: half-size 20..28% of the side, center keeps a 15% margin.
        const double half = side * rng.uniform(0.20, 0.28);
        const double margin = 0.15 * side + half;
        const double cx = rng.uniform(margin, static_cast<double>(width) - 1.0 - margin);
        const double cy = rng.uniform(margin, static_cast<double>(height) - 1.0 - margin);
        const double strong = rng.uniform(190.0, 255.0);
        const double weak = rng.uniform(0.0, 50.0);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                if (!detail::inside_shape(cls.shape, static_cast<double>(x) - cx, static_cast<double>(y) - cy, half))
                    continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double v = c == static_cast<std::size_t>(cls.color) ? strong : weak;
                    img.at(y, x, c) = to_byte(v + rng.uniform(-8.0, 8.0));
                }
            }

        CorpusEntry e;
        e.id = fmt::format("syn{:05d}", i);
        e.image = std::move(img);
        e.label = label;
        corpus.entries.push_back(std::move(e));
    }
    return corpus;
}

/// Rule-based label recovery: saturated pixels form the shape mask, the dominant channel inside
/// the mask gives the color and the fill ratio of its bounding box gives the shape.
inline std::size_t decode_synthetic_label(const Image& image) {
    std::array<double, 3> sums{};
    std::size_t count = 0, x0 = image.width, y0 = image.height, x1 = 0, y1 = 0;
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
            const int r = image.at(y, x, 0), g = image.at(y, x, 1), b = image.at(y, x, 2);
            if (std::max({r, g, b}) - std::min({r, g, b}) < 100) continue;
            sums[0] += r;
            sums[1] += g;
            sums[2] += b;
            ++count;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (count == 0) throw NumericError("no saturated object found");
    const auto color = static_cast<ShapeColor>(std::max_element(sums.begin(), sums.end()) - sums.begin());
    const double box = static_cast<double>((x1 - x0 + 1) * (y1 - y0 + 1));
    const double fill = static_cast<double>(count) / box;
    const ShapeKind shape = fill > 0.9 ? ShapeKind::Square : fill < 0.65 ? ShapeKind::Triangle : ShapeKind::Circle;
    return synthetic_label(shape, color);
}

} // namespace xbench
