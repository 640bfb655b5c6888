#pragma once

#include <cstdint>
#include <vector>

#include "a2a/feature_io.hpp"
#include "a2a/geometry.hpp"

namespace a2a {

// Binary actionable-region mask: the support of pixels whose smoothed
// heat meets the quantile threshold.
struct AffordanceMask {
    int height = 0;
    int width = 0;
    double source_quantile = 0.0;
    std::vector<std::uint8_t> in_support;  // H*W membership flags
    std::vector<Pixel> support;            // row-major order

    bool contains(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height &&
               in_support[static_cast<std::size_t>(y) * width + x] != 0;
    }
    std::size_t support_size() const { return support.size(); }

    void validate() const;
};

// Box-filter average over (2r+1)^2 windows with edge clamping.
// radius 0 returns the input unchanged.
Heatmap smooth_heatmap(const Heatmap& heatmap, int radius);

// Nearest-rank quantile: the ceil(q*n)-th smallest value.
double quantile_threshold(const Heatmap& heatmap, double q);

// Smooth, threshold at tau_q, keep every pixel with value >= tau.
AffordanceMask compute_mask(const Heatmap& heatmap, double q, int smooth_radius);

// Tightest axis-aligned rectangle containing the support.
Rect mask_bbox(const AffordanceMask& mask);

}  // namespace a2a
