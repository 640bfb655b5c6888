#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace a2a {

struct Pixel {
    int x = 0;
    int y = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(const Vec2& o) {
        x += o.x;
        y += o.y;
        return *this;
    }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::hypot(x, y); }
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline Vec2 rotate(const Vec2& v, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Inclusive axis-aligned pixel rectangle.
struct Rect {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;
    int width() const { return x_max - x_min + 1; }
    int height() const { return y_max - y_min + 1; }
    friend bool operator==(const Rect&, const Rect&) = default;
};

using Polygon = std::vector<Vec2>;

// Even-odd rule point-in-polygon test.
inline bool point_in_polygon(const Polygon& poly, const Vec2& p) {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double t = (p.y - a.y) / (b.y - a.y);
            if (p.x < a.x + t * (b.x - a.x)) inside = !inside;
        }
    }
    return inside;
}

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
    const Vec2 ab = b - a;
    const double len2 = ab.dot(ab);
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 proj = a + ab * t;
    return (p - proj).norm();
}

// Distance from a point to a polygon (0 inside).
inline double point_polygon_distance(const Polygon& poly, const Vec2& p) {
    if (point_in_polygon(poly, p)) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        best = std::min(best, point_segment_distance(p, poly[j], poly[i]));
    }
    return best;
}

inline Vec2 polygon_centroid(const Polygon& poly) {
    Vec2 c{0, 0};
    for (const Vec2& v : poly) c += v;
    return c * (1.0 / static_cast<double>(poly.size()));
}

}  // namespace a2a
