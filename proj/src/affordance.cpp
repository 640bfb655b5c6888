#include "a2a/affordance.hpp"

#include <algorithm>
#include <cmath>

#include "a2a/errors.hpp"

namespace a2a {

void AffordanceMask::validate() const {
    if (height < 1 || width < 1) throw ValidationError("mask dimensions must be positive");
    if (in_support.size() != static_cast<std::size_t>(height) * width)
        throw ValidationError("mask flag buffer does not match dimensions");
    if (support.empty()) throw ValidationError("mask support must be non-empty");
    if (!(source_quantile > 0.0 && source_quantile < 1.0))
        throw ValidationError("source quantile must lie in (0, 1)");
    for (const Pixel& p : support) {
        if (p.x < 0 || p.x >= width || p.y < 0 || p.y >= height)
            throw ValidationError("mask support pixel out of bounds");
    }
}

Heatmap smooth_heatmap(const Heatmap& heatmap, int radius) {
    heatmap.validate();
    if (radius < 0) throw ValidationError("smoothing radius must be >= 0");
    if (radius == 0) return heatmap;

    Heatmap out = heatmap;
    const int h = heatmap.height, w = heatmap.width;
    const double inv = 1.0 / ((2.0 * radius + 1) * (2.0 * radius + 1));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            for (int dy = -radius; dy <= radius; ++dy) {
                const int yy = std::clamp(y + dy, 0, h - 1);
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int xx = std::clamp(x + dx, 0, w - 1);
                    sum += heatmap.at(yy, xx);
                }
            }
            out.at(y, x) = static_cast<float>(std::min(sum * inv, 1.0));
        }
    }
    return out;
}

double quantile_threshold(const Heatmap& heatmap, double q) {
    heatmap.validate();
    if (!(q > 0.0 && q < 1.0)) throw ValidationError("quantile must lie in (0, 1)");
    std::vector<float> sorted = heatmap.values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return sorted[rank - 1];
}

AffordanceMask compute_mask(const Heatmap& heatmap, double q, int smooth_radius) {
    const Heatmap smoothed = smooth_heatmap(heatmap, smooth_radius);
    const double tau = quantile_threshold(smoothed, q);

    AffordanceMask mask;
    mask.height = smoothed.height;
    mask.width = smoothed.width;
    mask.source_quantile = q;
    mask.in_support.assign(smoothed.values.size(), 0);
    for (int y = 0; y < smoothed.height; ++y) {
        for (int x = 0; x < smoothed.width; ++x) {
            if (smoothed.at(y, x) >= tau) {
                mask.in_support[mask.width * static_cast<std::size_t>(y) + x] = 1;
                mask.support.push_back({x, y});
            }
        }
    }
    mask.validate();
    return mask;
}

Rect mask_bbox(const AffordanceMask& mask) {
    mask.validate();
    Rect r{mask.width, mask.height, 0, 0};
    for (const Pixel& p : mask.support) {
        r.x_min = std::min(r.x_min, p.x);
        r.y_min = std::min(r.y_min, p.y);
        r.x_max = std::max(r.x_max, p.x);
        r.y_max = std::max(r.y_max, p.y);
    }
    return r;
}

}  // namespace a2a
