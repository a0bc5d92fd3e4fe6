#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "xbench/error.hpp"
#include "xbench/tensor.hpp"

namespace xbench {

/// Interleaved 8-bit RGB image, H x W x 3.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::uint8_t fill = 0)
        : height(h), width(w), pixels(h * w * 3, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * width + x) * 3 + c];
    }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * 3 + c];
    }
    std::size_t pixel_count() const { return height * width; }

    friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError(fmt::format("cannot open '{}'", path.string()));
    return f;
}

// libpng reports errors through longjmp by default; route them to exceptions instead.
[[noreturn]] inline void png_error_handler(png_structp, png_const_charp msg) {
    throw IoError(fmt::format("png: {}", msg));
}
inline void png_warning_handler(png_structp, png_const_charp) {}

inline void write_png_rows(const std::filesystem::path& path, std::size_t height, std::size_t width,
                           int color_type, int channels, const std::uint8_t* data) {
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                              png_warning_handler);
    if (!png) throw IoError("png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < height; ++y)
        png_write_row(png, data + y * width * static_cast<std::size_t>(channels));
    png_write_end(png, nullptr);
}

} // namespace detail

inline Image read_png(const std::filesystem::path& path) {
    auto file = detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             detail::png_error_handler, detail::png_warning_handler);
    if (!png) throw IoError("png: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    png_init_io(png, file.get());
    png_read_info(png, info);

    // Normalize every input flavour to 8-bit RGB.
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image img(png_get_image_height(png, info), png_get_image_width(png, info));
    if (png_get_rowbytes(png, info) != img.width * 3)
        throw IoError(fmt::format("png: unexpected row layout in '{}'", path.string()));
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
    detail::write_png_rows(path, img.height, img.width, PNG_COLOR_TYPE_RGB, 3, img.pixels.data());
}

/// Min-max normalized 8-bit grayscale rendering of an H x W map. Visualization only.
inline void write_heatmap_png(const std::filesystem::path& path, const Tensor& heatmap) {
    if (heatmap.rank() != 2) throw ConfigError("heatmap must be H x W");
    const auto [lo, hi] = std::minmax_element(heatmap.values().begin(), heatmap.values().end());
    const double range = static_cast<double>(*hi) - *lo;
    std::vector<std::uint8_t> gray(heatmap.size());
    for (std::size_t i = 0; i < gray.size(); ++i) {
        const double v = range > 0 ? (heatmap[i] - *lo) / range : 0.0;
        gray[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    detail::write_png_rows(path, heatmap.dim(0), heatmap.dim(1), PNG_COLOR_TYPE_GRAY, 1, gray.data());
}

} // namespace xbench
