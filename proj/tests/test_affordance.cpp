#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>

#include "a2a/affordance.hpp"
#include "a2a/rng.hpp"
#include "doctest.h"

using namespace a2a;

namespace {

Heatmap random_heatmap(Rng& rng, int h, int w) {
    Heatmap map = Heatmap::zeros(h, w);
    for (float& v : map.values) v = static_cast<float>(rng.uniform());
    map.normalize_and_validate();
    return map;
}

// Independent oracle: brute-force box average with clamped borders.
Heatmap smooth_oracle(const Heatmap& in, int r) {
    Heatmap out = in;
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            double sum = 0.0;
            int count = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = std::clamp(y + dy, 0, in.height - 1);
                    const int xx = std::clamp(x + dx, 0, in.width - 1);
                    sum += in.at(yy, xx);
                    ++count;
                }
            }
            out.at(y, x) = static_cast<float>(sum / count);
        }
    }
    return out;
}

// Independent oracle: sort-based nearest-rank quantile.
double quantile_oracle(const Heatmap& map, double q) {
    std::vector<float> vals = map.values;
    std::sort(vals.begin(), vals.end());
    const std::size_t rank =
        static_cast<std::size_t>(std::ceil(q * static_cast<double>(vals.size())));
    return vals[rank - 1];
}

std::set<std::pair<int, int>> support_set(const AffordanceMask& mask) {
    std::set<std::pair<int, int>> out;
    for (const Pixel& p : mask.support) out.insert({p.x, p.y});
    return out;
}

// Independent oracle: smooth, sort-threshold, collect.
std::set<std::pair<int, int>> mask_oracle(const Heatmap& map, double q, int r) {
    const Heatmap s = smooth_oracle(map, r);
    const double tau = quantile_oracle(s, q);
    std::set<std::pair<int, int>> out;
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            if (s.at(y, x) >= tau) out.insert({x, y});
        }
    }
    return out;
}

}  // namespace

TEST_CASE("smoothing a constant heatmap is the identity") {
    Heatmap map = Heatmap::constant(9, 7, 0.37f);
    for (int r : {0, 1, 2, 5}) {
        Heatmap out = smooth_heatmap(map, r);
        for (float v : out.values) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
    }
}

TEST_CASE("single hot pixel spreads to nine ninths") {
    Heatmap map = Heatmap::zeros(5, 5);
    map.at(2, 2) = 1.0f;
    Heatmap out = smooth_heatmap(map, 1);
    int nine_count = 0;
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) {
            if (std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1) {
                CHECK(out.at(y, x) == doctest::Approx(1.0 / 9.0));
                ++nine_count;
            } else {
                CHECK(out.at(y, x) == 0.0f);
            }
        }
    }
    CHECK(nine_count == 9);
}

TEST_CASE("radius zero returns the input unchanged") {
    Rng rng(3);
    Heatmap map = random_heatmap(rng, 6, 8);
    Heatmap out = smooth_heatmap(map, 0);
    CHECK(out.values == map.values);
}

TEST_CASE("smoothing matches the window-sum oracle and stays in range") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Heatmap map = random_heatmap(rng, 4 + trial % 9, 5 + trial % 7);
        const int r = 1 + trial % 3;
        Heatmap ours = smooth_heatmap(map, r);
        Heatmap oracle = smooth_oracle(map, r);
        for (std::size_t i = 0; i < ours.values.size(); ++i) {
            CHECK(ours.values[i] == doctest::Approx(oracle.values[i]).epsilon(1e-6));
            CHECK(ours.values[i] >= 0.0f);
            CHECK(ours.values[i] <= 1.0f);
        }
    }
}

TEST_CASE("nearest-rank quantile on a staircase") {
    Heatmap map = Heatmap::zeros(2, 5);
    for (int i = 0; i < 10; ++i) map.values[i] = 0.1f * i;
    CHECK(quantile_threshold(map, 0.9) == doctest::Approx(0.8).epsilon(1e-7));
}

TEST_CASE("quantile of constant heatmap is the constant") {
    Heatmap map = Heatmap::constant(4, 4, 0.42f);
    for (double q : {0.1, 0.5, 0.99}) {
        CHECK(quantile_threshold(map, q) == doctest::Approx(0.42f));
    }
}

TEST_CASE("q=0.5 on a 50/50 split picks the lower value") {
    Heatmap map = Heatmap::zeros(2, 2);
    map.values = {0.0f, 0.0f, 1.0f, 1.0f};
    CHECK(quantile_threshold(map, 0.5) == 0.0);
}

TEST_CASE("quantile rejects q outside (0,1)") {
    Heatmap map = Heatmap::constant(2, 2, 0.5f);
    CHECK_THROWS_AS(quantile_threshold(map, 0.0), ValidationError);
    CHECK_THROWS_AS(quantile_threshold(map, 1.0), ValidationError);
    CHECK_THROWS_AS(quantile_threshold(map, -3.0), ValidationError);
}

TEST_CASE("quantile matches sort oracle on random heatmaps") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        Heatmap map = random_heatmap(rng, 3 + trial % 10, 3 + (trial * 7) % 10);
        for (double q : {0.25, 0.5, 0.9, 0.999}) {
            CHECK(quantile_threshold(map, q) == quantile_oracle(map, q));
        }
    }
}

TEST_CASE("constant heatmap masks every pixel") {
    Heatmap map = Heatmap::constant(6, 6, 0.3f);
    AffordanceMask mask = compute_mask(map, 0.9, 1);
    CHECK(mask.support_size() == 36);
}

TEST_CASE("one-hot heatmap with q=0.99 keeps exactly the hot pixel") {
    // 64 pixels: rank ceil(0.99*64)=64, so tau is the hot value itself.
    Heatmap map = Heatmap::zeros(8, 8);
    map.at(4, 7) = 1.0f;
    AffordanceMask mask = compute_mask(map, 0.99, 0);
    REQUIRE(mask.support_size() == 1);
    CHECK(mask.support[0] == Pixel{7, 4});
}

TEST_CASE("gaussian bump mask matches the sort oracle at q=0.9") {
    Heatmap map = Heatmap::zeros(64, 64);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const double dx = x - 31.3, dy = y - 33.7;
            map.at(y, x) = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2.0 * 14.0 * 14.0)));
        }
    }
    map.normalize_and_validate();
    AffordanceMask mask = compute_mask(map, 0.9, 1);
    CHECK(mask.support_size() >= 410);
    CHECK(mask.support_size() <= 420);
    CHECK(support_set(mask) == mask_oracle(map, 0.9, 1));
}

TEST_CASE("random masks equal the oracle and nest monotonically") {
    Rng rng(23);
    for (int trial = 0; trial < 60; ++trial) {
        Heatmap map = random_heatmap(rng, 8 + trial % 24, 8 + (trial * 5) % 24);
        const int r = trial % 2;
        AffordanceMask coarse = compute_mask(map, 0.5, r);
        std::set<std::pair<int, int>> prev = support_set(coarse);
        CHECK(prev == mask_oracle(map, 0.5, r));
        for (double q : {0.7, 0.9, 0.99}) {
            AffordanceMask mask = compute_mask(map, q, r);
            std::set<std::pair<int, int>> cur = support_set(mask);
            CHECK(cur == mask_oracle(map, q, r));
            CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
            prev = std::move(cur);

            // Coverage bound: at least floor((1-q)*n), never empty.
            const std::size_t n = map.values.size();
            const std::size_t lo = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::floor((1.0 - q) * static_cast<double>(n))));
            CHECK(mask.support_size() >= lo);
        }
    }
}

TEST_CASE("compute_mask is pure") {
    Rng rng(31);
    Heatmap map = random_heatmap(rng, 12, 9);
    AffordanceMask a = compute_mask(map, 0.8, 1);
    AffordanceMask b = compute_mask(map, 0.8, 1);
    CHECK(a.support == b.support);
}

TEST_CASE("bbox of single-pixel support") {
    Heatmap map = Heatmap::zeros(8, 8);
    map.at(7, 3) = 1.0f;
    AffordanceMask mask = compute_mask(map, 0.99, 0);
    CHECK(mask_bbox(mask) == Rect{3, 7, 3, 7});
}

TEST_CASE("bbox of full-frame support") {
    Heatmap map = Heatmap::constant(8, 8, 0.5f);
    AffordanceMask mask = compute_mask(map, 0.9, 0);
    CHECK(mask_bbox(mask) == Rect{0, 0, 7, 7});
}

TEST_CASE("bbox of an L-shaped support") {
    // L covering rows 2..5, cols 1..6: vertical bar at cols 1..2, foot at row 5.
    Heatmap map = Heatmap::zeros(8, 8);
    for (int y = 2; y <= 5; ++y)
        for (int x = 1; x <= 2; ++x) map.at(y, x) = 1.0f;
    for (int x = 1; x <= 6; ++x) map.at(5, x) = 1.0f;
    // 12 hot pixels of 64; rank ceil(0.85*64)=55 lands inside the ones.
    AffordanceMask mask = compute_mask(map, 0.85, 0);

    // min/max scan oracle over hot pixels
    int xmin = 99, ymin = 99, xmax = -1, ymax = -1;
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            if (map.at(y, x) == 1.0f) {
                xmin = std::min(xmin, x);
                ymin = std::min(ymin, y);
                xmax = std::max(xmax, x);
                ymax = std::max(ymax, y);
            }
        }
    }
    CHECK(mask_bbox(mask) == Rect{xmin, ymin, xmax, ymax});
    CHECK(mask_bbox(mask) == Rect{1, 2, 6, 5});
}
