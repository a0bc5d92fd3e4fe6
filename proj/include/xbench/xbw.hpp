#pragma once

// .xbw weight files: a text header followed by raw little-endian float32 parameters.
//
//   XBW 1 <num_layers> <C> <H> <W> <num_classes> <mean x C> <std x C>
//   Conv2D <out> <in> <kh> <kw> <stride> <padding>
//   Dense <out> <in>
//   ReLU | Flatten | GlobalAvgPool
//   MaxPool2D <window> <stride> | AvgPool2D <window> <stride>
//   <payload: for each Conv2D/Dense in order, weights then bias>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "xbench/error.hpp"
#include "xbench/model.hpp"

namespace xbench {

namespace detail {

inline void append_f32_le(std::string& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline float read_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    return std::bit_cast<float>(bits);
}

inline std::size_t parse_count(std::istringstream& in, std::size_t line, const char* what) {
    long long v = -1;
    if (!(in >> v) || v < 0)
        throw IoError(fmt::format("xbw header line {}: missing or invalid {}", line, what));
    return static_cast<std::size_t>(v);
}

} // namespace detail

/// Serializes a validated model to the .xbw byte layout.
inline std::string encode_xbw(const ModelGraph& model) {
    model.validate();
    std::string out = fmt::format("XBW 1 {} {} {} {} {}", model.layers.size(), model.input.channels,
                                  model.input.height, model.input.width, model.num_classes);
    for (float m : model.normalization.mean) out += fmt::format(" {}", m);
    for (float s : model.normalization.stddev) out += fmt::format(" {}", s);
    out += '\n';
    for (const auto& layer : model.layers) {
        out += std::visit(
            overloaded{
                [](const Conv2D& c) {
                    return fmt::format("Conv2D {} {} {} {} {} {}", c.out_channels, c.in_channels,
                                       c.kernel_h, c.kernel_w, c.stride, c.padding);
                },
                [](const Dense& d) { return fmt::format("Dense {} {}", d.out_features, d.in_features); },
                [](const MaxPool2D& p) { return fmt::format("MaxPool2D {} {}", p.window, p.stride); },
                [](const AvgPool2D& p) { return fmt::format("AvgPool2D {} {}", p.window, p.stride); },
                [&](const auto&) { return std::string(layer_name(layer)); },
            },
            layer);
        out += '\n';
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto emit = [&](const std::vector<float>& w, const std::vector<float>& b) {
            for (float v : w) {
                if (!std::isfinite(v)) throw ConfigError(fmt::format("layer {}: non-finite weight", i));
                detail::append_f32_le(out, v);
            }
            for (float v : b) {
                if (!std::isfinite(v)) throw ConfigError(fmt::format("layer {}: non-finite bias", i));
                detail::append_f32_le(out, v);
            }
        };
        std::visit(overloaded{[&](const Conv2D& c) { emit(c.weights, c.bias); },
                              [&](const Dense& d) { emit(d.weights, d.bias); }, [](const auto&) {}},
                   model.layers[i]);
    }
    return out;
}

inline ModelGraph decode_xbw(const std::string& bytes) {
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::string {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos)
            throw IoError(fmt::format("xbw: truncated header at line {}", line_no + 1));
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        return line;
    };

    ModelGraph model;
    std::size_t num_layers = 0;
    {
        std::istringstream head(next_line());
        std::string magic;
        int version = 0;
        if (!(head >> magic >> version) || magic != "XBW")
            throw IoError("xbw: malformed header (expected 'XBW 1 ...')");
        if (version != 1) throw IoError(fmt::format("xbw: unsupported version {}", version));
        num_layers = detail::parse_count(head, 1, "layer count");
        model.input.channels = detail::parse_count(head, 1, "channels");
        model.input.height = detail::parse_count(head, 1, "height");
        model.input.width = detail::parse_count(head, 1, "width");
        model.num_classes = detail::parse_count(head, 1, "num_classes");
        auto read_floats = [&](std::vector<float>& dst, const char* what) {
            dst.resize(model.input.channels);
            for (auto& v : dst) {
                std::string tok;
                if (!(head >> tok))
                    throw IoError(fmt::format("xbw: malformed header (missing {})", what));
                char* end = nullptr;
                v = std::strtof(tok.c_str(), &end);
                if (end != tok.c_str() + tok.size())
                    throw IoError(fmt::format("xbw: malformed header ({} '{}')", what, tok));
            }
        };
        read_floats(model.normalization.mean, "mean");
        read_floats(model.normalization.stddev, "std");
        std::string extra;
        if (head >> extra) throw IoError("xbw: malformed header (trailing tokens)");
    }
    if (num_layers == 0) throw ConfigError("model has no layers");

    for (std::size_t i = 0; i < num_layers; ++i) {
        std::istringstream ln(next_line());
        std::string kind;
        ln >> kind;
        const auto at = line_no;
        if (kind == "Conv2D") {
            Conv2D c;
            c.out_channels = detail::parse_count(ln, at, "out channels");
            c.in_channels = detail::parse_count(ln, at, "in channels");
            c.kernel_h = detail::parse_count(ln, at, "kernel height");
            c.kernel_w = detail::parse_count(ln, at, "kernel width");
            c.stride = detail::parse_count(ln, at, "stride");
            c.padding = detail::parse_count(ln, at, "padding");
            if (c.stride == 0) throw IoError(fmt::format("xbw: layer {} (Conv2D): stride must be >= 1", i));
            c.weights.resize(c.out_channels * c.in_channels * c.kernel_h * c.kernel_w);
            c.bias.resize(c.out_channels);
            model.layers.emplace_back(std::move(c));
        } else if (kind == "Dense") {
            Dense d;
            d.out_features = detail::parse_count(ln, at, "out features");
            d.in_features = detail::parse_count(ln, at, "in features");
            d.weights.resize(d.out_features * d.in_features);
            d.bias.resize(d.out_features);
            model.layers.emplace_back(std::move(d));
        } else if (kind == "MaxPool2D" || kind == "AvgPool2D") {
            const auto window = detail::parse_count(ln, at, "window");
            const auto stride = detail::parse_count(ln, at, "stride");
            if (kind == "MaxPool2D") model.layers.emplace_back(MaxPool2D{window, stride});
            else model.layers.emplace_back(AvgPool2D{window, stride});
        } else if (kind == "ReLU") {
            model.layers.emplace_back(ReLU{});
        } else if (kind == "Flatten") {
            model.layers.emplace_back(Flatten{});
        } else if (kind == "GlobalAvgPool") {
            model.layers.emplace_back(GlobalAvgPool{});
        } else {
            throw IoError(fmt::format("xbw: layer {}: unknown layer kind '{}'", i, kind));
        }
        std::string extra;
        if (ln >> extra) throw IoError(fmt::format("xbw: layer {}: trailing tokens in header", i));
    }

    // Payload.
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto fill = [&](std::vector<float>& dst, const char* what) {
            const std::size_t need = dst.size() * 4;
            if (pos + need > bytes.size())
                throw IoError(fmt::format("xbw: layer {}: truncated payload ({} of {} {} bytes present)",
                                          i, bytes.size() - pos, need, what));
            for (auto& v : dst) {
                v = detail::read_f32_le(data + pos);
                pos += 4;
                if (!std::isfinite(v)) throw IoError(fmt::format("xbw: layer {}: non-finite {}", i, what));
            }
        };
        std::visit(overloaded{[&](Conv2D& c) {
                                  fill(c.weights, "weight");
                                  fill(c.bias, "bias");
                              },
                              [&](Dense& d) {
                                  fill(d.weights, "weight");
                                  fill(d.bias, "bias");
                              },
                              [](auto&) {}},
                   model.layers[i]);
    }
    if (pos != bytes.size())
        throw IoError(fmt::format("xbw: {} unexpected trailing payload bytes", bytes.size() - pos));

    model.validate();
    return model;
}

inline void save_model(const ModelGraph& model, const std::filesystem::path& path) {
    const auto bytes = encode_xbw(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

inline ModelGraph load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open model '{}'", path.string()));
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_xbw(bytes);
}

} // namespace xbench
