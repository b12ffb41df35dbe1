#pragma once

#include "qalam/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

namespace qalam {

/// Eight simple shapes, learnable by construction.
[[nodiscard]] inline const label_map &glyph_labels() {
    static const label_map labels{ { "disk", "ring", "hbar", "vbar", "cross", "diagonal", "square", "x" } };
    return labels;
}

namespace detail {

inline double segment_distance(const double px, const double py, const double ax, const double ay, const double bx, const double by) {
    const double vx = bx - ax;
    const double vy = by - ay;
    const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
    return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

}  // namespace detail

/// Renders one white-on-black glyph of the given class with random centre,
/// size and stroke-width jitter plus Gaussian pixel noise.
template <typename Rng>
[[nodiscard]] image render_glyph(const std::size_t shape_class, Rng &rng, const double noise_sigma = 20.0) {
    std::uniform_real_distribution<double> jitter{ -3.0, 3.0 };
    std::uniform_real_distribution<double> size_dist{ 7.0, 11.0 };
    std::uniform_real_distribution<double> width_dist{ 1.2, 2.2 };
    std::normal_distribution<double> noise{ 0.0, noise_sigma };
    const double cx = 15.5 + jitter(rng);
    const double cy = 15.5 + jitter(rng);
    const double size = size_dist(rng);
    const double half_width = width_dist(rng);
    image img{};
    for (std::size_t r = 0; r < image_side; ++r) {
        for (std::size_t c = 0; c < image_side; ++c) {
            const double x = static_cast<double>(c);
            const double y = static_cast<double>(r);
            const double dx = x - cx;
            const double dy = y - cy;
            double d = 0.0;  // distance outside the ink region
            switch (shape_class) {
                case 0:
                    d = std::hypot(dx, dy) - size;
                    break;
                case 1:
                    d = std::abs(std::hypot(dx, dy) - size) - half_width;
                    break;
                case 2:
                    d = detail::segment_distance(x, y, cx - size, cy, cx + size, cy) - half_width;
                    break;
                case 3:
                    d = detail::segment_distance(x, y, cx, cy - size, cx, cy + size) - half_width;
                    break;
                case 4:
                    d = std::min(detail::segment_distance(x, y, cx - size, cy, cx + size, cy), detail::segment_distance(x, y, cx, cy - size, cx, cy + size)) - half_width;
                    break;
                case 5:
                    d = detail::segment_distance(x, y, cx - size, cy - size, cx + size, cy + size) - half_width;
                    break;
                case 6:
                    d = std::abs(std::max(std::abs(dx), std::abs(dy)) - size) - half_width;
                    break;
                default:
                    d = std::min(detail::segment_distance(x, y, cx - size, cy - size, cx + size, cy + size), detail::segment_distance(x, y, cx - size, cy + size, cx + size, cy - size)) - half_width;
                    break;
            }
            const double ink = std::clamp(0.5 - d, 0.0, 1.0) * 255.0;
            img[r * image_side + c] = static_cast<std::uint8_t>(std::clamp(std::lround(ink + noise(rng)), 0L, 255L));
        }
    }
    return img;
}

/// `per_class` rendered samples of each glyph class, classes interleaved.
[[nodiscard]] inline dataset make_glyph_dataset(const std::size_t per_class, const std::uint64_t seed) {
    std::mt19937_64 rng{ seed };
    dataset ds;
    ds.labels = glyph_labels();
    ds.origin = provenance::synthetic;
    ds.samples.reserve(per_class * ds.labels.size());
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < ds.labels.size(); ++c) {
            ds.samples.push_back({ render_glyph(c, rng), static_cast<std::uint32_t>(c) });
        }
    }
    return ds;
}

/// Like make_glyph_dataset but under an arbitrary label map, cycling through
/// the eight shapes; used to stand in for real character data in tests.
[[nodiscard]] inline dataset make_glyph_dataset(const label_map &labels, const std::size_t per_class, const std::uint64_t seed) {
    std::mt19937_64 rng{ seed };
    dataset ds;
    ds.labels = labels;
    ds.origin = provenance::synthetic;
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < labels.size(); ++c) {
            ds.samples.push_back({ render_glyph(c % 8, rng), static_cast<std::uint32_t>(c) });
        }
    }
    return ds;
}

}  // namespace qalam
