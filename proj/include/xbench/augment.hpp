#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xbench/image.hpp"
#include "xbench/tensor.hpp"

namespace xbench {

enum class AugKind { Brightness, Hue, Saturation, Rotate, Scale, Translate };

inline constexpr std::array<AugKind, 6> all_aug_kinds{AugKind::Brightness, AugKind::Hue,
                                                      AugKind::Saturation, AugKind::Rotate,
                                                      AugKind::Scale,      AugKind::Translate};

inline std::string_view aug_name(AugKind k) {
    switch (k) {
    case AugKind::Brightness: return "Brightness";
    case AugKind::Hue: return "Hue";
    case AugKind::Saturation: return "Saturation";
    case AugKind::Rotate: return "Rotate";
    case AugKind::Scale: return "Scale";
    case AugKind::Translate: return "Translate";
    }
    return "unknown";
}

/// Case-insensitive parse of an augmentation name.
inline AugKind parse_aug_kind(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (auto k : all_aug_kinds) {
        std::string n(aug_name(k));
        std::transform(n.begin(), n.end(), n.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (n == lower) return k;
    }
    throw ConfigError(fmt::format("unknown augmentation '{}'", name));
}

/// Brightness, hue and saturation should leave explanations unchanged; geometric kinds should move them.
inline bool is_equivariant(AugKind k) {
    return k == AugKind::Rotate || k == AugKind::Scale || k == AugKind::Translate;
}

inline double identity_value(AugKind k) { return k == AugKind::Scale ? 1.0 : 0.0; }

/// One augmentation with its parameter:
///   Brightness / Saturation: added to V / S (0..255 units)
///   Hue: added to H in byte-hue units (1 unit = 2 degrees, period 180)
///   Rotate: degrees, counter-clockwise about the image center
///   Scale: factor about the image center
///   Translate: signed fraction of the image side, applied to both axes
struct AugmentationSpec {
    AugKind kind = AugKind::Brightness;
    double t = 0.0;

    bool is_identity() const { return t == identity_value(kind); }
    std::string to_string() const { return fmt::format("kind={} t={}", aug_name(kind), t); }
    friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

inline void check_spec(const AugmentationSpec& spec) {
    if (!std::isfinite(spec.t)) throw ConfigError("augmentation parameter must be finite");
    if (spec.kind == AugKind::Scale && !(spec.t > 0.0))
        throw ConfigError(fmt::format("scale factor must be > 0 (got {})", spec.t));
}

// ---------------------------------------------------------------------------------------------
// HSV, continuous: h in degrees [0, 360), s and v in [0, 255].

struct Hsv {
    double h, s, v;
};

inline Hsv rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    Hsv out{0.0, mx > 0.0 ? 255.0 * d / mx : 0.0, mx};
    if (d > 0.0) {
        double h;
        if (mx == r) h = 60.0 * (g - b) / d;
        else if (mx == g) h = 60.0 * (b - r) / d + 120.0;
        else h = 60.0 * (r - g) / d + 240.0;
        if (h < 0.0) h += 360.0;
        out.h = h;
    }
    return out;
}

inline std::array<double, 3> hsv_to_rgb(const Hsv& hsv) {
    const double c = hsv.v * hsv.s / 255.0;
    double hp = std::fmod(hsv.h, 360.0);
    if (hp < 0.0) hp += 360.0;
    hp /= 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    const double m = hsv.v - c;
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
    }
    return {r + m, g + m, b + m};
}

/// Round half away from zero, clamp to 0..255.
inline std::uint8_t to_byte(double v) {
    const double r = std::round(v);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

namespace detail {

inline Image apply_color(const Image& src, const AugmentationSpec& spec) {
    Image out = src;
    for (std::size_t p = 0; p < src.pixel_count(); ++p) {
        const std::uint8_t* px = &src.pixels[p * 3];
        Hsv hsv = rgb_to_hsv(px[0], px[1], px[2]);
        switch (spec.kind) {
        case AugKind::Brightness: hsv.v = std::clamp(hsv.v + spec.t, 0.0, 255.0); break;
        case AugKind::Saturation: hsv.s = std::clamp(hsv.s + spec.t, 0.0, 255.0); break;
        case AugKind::Hue: hsv.h = hsv.h + 2.0 * spec.t; break;
        default: break;
        }
        const auto rgb = hsv_to_rgb(hsv);
        for (std::size_t c = 0; c < 3; ++c) out.pixels[p * 3 + c] = to_byte(rgb[c]);
    }
    return out;
}

/// Source coordinate (x, y) of output pixel (px, py) under a geometric spec.
struct InverseMap {
    AugKind kind;
    double cos_t = 1, sin_t = 0, inv_scale = 1, dx = 0, dy = 0, cx = 0, cy = 0;

    InverseMap(const AugmentationSpec& spec, std::size_t height, std::size_t width)
        : kind(spec.kind), cx((static_cast<double>(width) - 1.0) / 2.0),
          cy((static_cast<double>(height) - 1.0) / 2.0) {
        switch (spec.kind) {
        case AugKind::Rotate: {
            const double rad = spec.t * 3.14159265358979323846 / 180.0;
            cos_t = std::cos(rad);
            sin_t = std::sin(rad);
            break;
        }
        case AugKind::Scale: inv_scale = 1.0 / spec.t; break;
        case AugKind::Translate:
            dx = std::round(spec.t * static_cast<double>(width));
            dy = std::round(spec.t * static_cast<double>(height));
            break;
        default: throw ConfigError("not a geometric augmentation");
        }
    }

    void operator()(double px, double py, double& sx, double& sy) const {
        switch (kind) {
        case AugKind::Rotate: {
            // Output = center + R(t)(source - center) with R(t) counter-clockwise on screen (y down).
            const double ux = px - cx, uy = py - cy;
            sx = cx + cos_t * ux - sin_t * uy;
            sy = cy + sin_t * ux + cos_t * uy;
            break;
        }
        case AugKind::Scale:
            sx = cx + (px - cx) * inv_scale;
            sy = cy + (py - cy) * inv_scale;
            break;
        default:
            sx = px - dx;
            sy = py - dy;
            break;
        }
        // Snap round-off (e.g. cos 90deg) so exact grid hits stay exact.
        const double rx = std::round(sx), ry = std::round(sy);
        if (std::abs(sx - rx) < 1e-9) sx = rx;
        if (std::abs(sy - ry) < 1e-9) sy = ry;
    }
};

/// Bilinear sample of a row-major plane, zero outside.
inline double bilinear(const float* plane, std::size_t height, std::size_t width, double x, double y) {
    const double fx0 = std::floor(x), fy0 = std::floor(y);
    const double ax = x - fx0, ay = y - fy0;
    const auto x0 = static_cast<long long>(fx0), y0 = static_cast<long long>(fy0);
    const auto w = static_cast<long long>(width), h = static_cast<long long>(height);
    auto at = [&](long long yy, long long xx) -> double {
        if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
        return plane[yy * w + xx];
    };
    double v = 0.0;
    if ((1 - ax) * (1 - ay) != 0.0) v += (1 - ax) * (1 - ay) * at(y0, x0);
    if (ax * (1 - ay) != 0.0) v += ax * (1 - ay) * at(y0, x0 + 1);
    if ((1 - ax) * ay != 0.0) v += (1 - ax) * ay * at(y0 + 1, x0);
    if (ax * ay != 0.0) v += ax * ay * at(y0 + 1, x0 + 1);
    return v;
}

inline std::vector<double> warp_plane(const float* plane, std::size_t height, std::size_t width,
                                      const AugmentationSpec& spec) {
    const InverseMap map(spec, height, width);
    std::vector<double> out(height * width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            double sx, sy;
            map(static_cast<double>(x), static_cast<double>(y), sx, sy);
            out[y * width + x] = bilinear(plane, height, width, sx, sy);
        }
    return out;
}

} // namespace detail

inline Image apply_augmentation(const Image& image, const AugmentationSpec& spec) {
    check_spec(spec);
    if (spec.is_identity()) return image;
    if (!is_equivariant(spec.kind)) return detail::apply_color(image, spec);

    Image out(image.height, image.width);
    std::vector<float> plane(image.pixel_count());
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = image.pixels[p * 3 + c];
        const auto warped = detail::warp_plane(plane.data(), image.height, image.width, spec);
        for (std::size_t p = 0; p < plane.size(); ++p) out.pixels[p * 3 + c] = to_byte(warped[p]);
    }
    return out;
}

/// Moves an H x W explanation with the same geometric map as `apply_augmentation`.
inline Tensor warp_explanation(const Tensor& heatmap, const AugmentationSpec& spec) {
    check_spec(spec);
    if (!is_equivariant(spec.kind))
        throw ConfigError(fmt::format("warp_explanation needs an equivariant augmentation, got {}",
                                      aug_name(spec.kind)));
    if (heatmap.rank() != 2) throw ConfigError("warp_explanation expects an H x W heatmap");
    if (spec.is_identity()) return heatmap;
    const auto warped = detail::warp_plane(heatmap.values().data(), heatmap.dim(0), heatmap.dim(1), spec);
    Tensor out(heatmap.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(warped[i]);
    return out;
}

/// Pixels of the augmented frame whose content comes entirely from the original frame.
struct ValidityMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> valid;

    ValidityMask() = default;
    ValidityMask(std::size_t h, std::size_t w, bool value = true)
        : height(h), width(w), valid(h * w, value ? 1 : 0) {}

    bool operator()(std::size_t y, std::size_t x) const { return valid[y * width + x] != 0; }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
    }
    bool all() const { return count() == valid.size(); }
};

inline ValidityMask validity_mask(const AugmentationSpec& spec, std::size_t height, std::size_t width) {
    check_spec(spec);
    ValidityMask mask(height, width, true);
    if (!is_equivariant(spec.kind) || spec.is_identity()) return mask;
    const std::vector<float> ones(height * width, 1.0f);
    const auto support = detail::warp_plane(ones.data(), height, width, spec);
    for (std::size_t i = 0; i < support.size(); ++i) mask.valid[i] = support[i] >= 0.999 ? 1 : 0;
    return mask;
}

/// Keeps pixels whose whole (2r+1)-square neighbourhood is valid and inside the frame.
inline ValidityMask erode(const ValidityMask& mask, std::size_t radius) {
    ValidityMask out(mask.height, mask.width, false);
    const auto r = static_cast<long long>(radius);
    const auto h = static_cast<long long>(mask.height), w = static_cast<long long>(mask.width);
    for (long long y = 0; y < h; ++y)
        for (long long x = 0; x < w; ++x) {
            bool ok = y - r >= 0 && x - r >= 0 && y + r < h && x + r < w;
            for (long long yy = y - r; ok && yy <= y + r; ++yy)
                for (long long xx = x - r; ok && xx <= x + r; ++xx)
                    ok = mask(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            out.valid[static_cast<std::size_t>(y * w + x)] = ok ? 1 : 0;
        }
    return out;
}

inline ValidityMask mask_and(const ValidityMask& a, const ValidityMask& b) {
    ValidityMask out(a.height, a.width, false);
    for (std::size_t i = 0; i < out.valid.size(); ++i) out.valid[i] = a.valid[i] && b.valid[i];
    return out;
}

// ---------------------------------------------------------------------------------------------
// Parameter intervals

struct AugmentationInterval {
    AugKind kind = AugKind::Brightness;
    double low = 0.0;
    double high = 0.0;
    std::size_t samples = 21;

    void validate() const {
        const double id = identity_value(kind);
        if (!(low < id && id < high))
            throw ConfigError(fmt::format("{} interval [{}, {}] must contain the identity {} strictly",
                                          aug_name(kind), low, high, id));
        if (samples < 3 || samples % 2 == 0)
            throw ConfigError(fmt::format("sample count must be odd and >= 3 (got {})", samples));
        if (kind == AugKind::Scale && !(low > 0.0)) throw ConfigError("scale interval must be positive");
    }
};

/// Intervals of the reference evaluation (magnitudes at which the target probability drops by 10%).
inline AugmentationInterval default_interval(AugKind kind, std::size_t samples = 21) {
    switch (kind) {
    case AugKind::Brightness: return {kind, -95.0, 95.0, samples};
    case AugKind::Hue: return {kind, -30.0, 30.0, samples};
    case AugKind::Saturation: return {kind, -70.0, 70.0, samples};
    case AugKind::Rotate: return {kind, -18.0, 18.0, samples};
    case AugKind::Scale: return {kind, 0.89, 1.11, samples};
    case AugKind::Translate: return {kind, -0.06, 0.06, samples};
    }
    throw ConfigError("unknown augmentation kind");
}

/// `samples` equidistant parameters from low to high; the identity is always present exactly once.
inline std::vector<AugmentationSpec> sample_interval(const AugmentationInterval& interval) {
    interval.validate();
    const double id = identity_value(interval.kind);
    const double span = interval.high - interval.low;
    std::vector<AugmentationSpec> specs;
    bool has_identity = false;
    for (std::size_t k = 0; k < interval.samples; ++k) {
        double t = k + 1 == interval.samples
                       ? interval.high
                       : interval.low + span * static_cast<double>(k) /
                                            static_cast<double>(interval.samples - 1);
        if (std::abs(t - id) <= 1e-9 * span) t = id;
        has_identity = has_identity || t == id;
        specs.push_back({interval.kind, t});
    }
    if (!has_identity) {
        specs.push_back({interval.kind, id});
        std::sort(specs.begin(), specs.end(),
                  [](const AugmentationSpec& a, const AugmentationSpec& b) { return a.t < b.t; });
    }
    return specs;
}

} // namespace xbench
