#include "a2a/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "a2a/errors.hpp"
#include "a2a/rng.hpp"

namespace a2a {

namespace {

constexpr double kCentroidMergeTol = 1e-9;   // cosine distance below which centroids collapse
constexpr int kMaxLloydIterations = 50;
constexpr double kConvergenceShift = 1e-6;

std::vector<double> normalized(std::span<const float> v) {
    double n2 = 0.0;
    for (float x : v) n2 += static_cast<double>(x) * x;
    const double n = std::sqrt(n2);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    double na = 0.0, nb = 0.0, d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
        d += static_cast<double>(a[i]) * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return -2.0;
    return d / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<int> KeypointSet::all_ids() const {
    std::vector<int> ids;
    ids.reserve(object_points.size() + kEffectorPointCount);
    for (const auto& p : object_points) ids.push_back(p.id);
    for (const auto& p : effector_points) ids.push_back(p.id);
    return ids;
}

std::vector<Vec2> KeypointSet::all_positions() const {
    std::vector<Vec2> pos;
    pos.reserve(object_points.size() + kEffectorPointCount);
    for (const auto& p : object_points)
        pos.push_back({static_cast<double>(p.position.x), static_cast<double>(p.position.y)});
    for (const auto& p : effector_points) pos.push_back(p.position);
    return pos;
}

void KeypointSet::validate() const {
    const int k_obj = static_cast<int>(object_points.size());
    if (k_obj < 1 || k_obj > kMaxObjectKeypoints)
        throw ValidationError("object keypoint count must be in [1, 15]");
    std::set<int> ids;
    for (int id : all_ids()) {
        if (!ids.insert(id).second) throw ValidationError("keypoint ids must be unique");
    }
}

std::vector<Anchor> extract_reference_anchors(const FeatureField& field,
                                              const AffordanceMask& mask, int n,
                                              std::uint64_t seed) {
    field.validate();
    mask.validate();
    if (n < 1) throw ValidationError("anchor count must be >= 1");
    if (field.height != mask.height || field.width != mask.width)
        throw ValidationError("field and mask dimensions must match");

    // Collect unit-normalized features at support pixels; zero-norm
    // pixels cannot participate in cosine clustering.
    std::vector<Pixel> pixels;
    std::vector<std::vector<double>> feats;
    for (const Pixel& p : mask.support) {
        double n2 = 0.0;
        for (float v : field.pixel(p.y, p.x)) n2 += static_cast<double>(v) * v;
        if (n2 > 0.0) {
            pixels.push_back(p);
            feats.push_back(normalized(field.pixel(p.y, p.x)));
        }
    }
    if (pixels.empty())
        throw ValidationError("mask support carries no nonzero-norm features");

    const int k = std::min<int>(n, static_cast<int>(pixels.size()));
    const std::size_t m = pixels.size();
    Rng rng(seed);

    // k-means++ seeding on the unit sphere (squared distance = 2 - 2cos).
    std::vector<std::vector<double>> centroids;
    centroids.push_back(feats[rng.uniform_index(m)]);
    std::vector<double> d2(m, 0.0);
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centroids) best = std::min(best, 2.0 - 2.0 * dot(feats[i], c));
            d2[i] = std::max(best, 0.0);
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            // All points coincide with existing centroids; further seeds
            // would be duplicates and collapse later anyway.
            break;
        }
        centroids.push_back(feats[pick]);
    }

    // Lloyd iterations with spherical renormalization. Clusters that end
    // up empty are dropped.
    std::vector<int> assign(m, 0);
    for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
        for (std::size_t i = 0; i < m; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            int arg = 0;
            for (std::size_t c = 0; c < centroids.size(); ++c) {
                const double s = dot(feats[i], centroids[c]);
                if (s > best) {
                    best = s;
                    arg = static_cast<int>(c);
                }
            }
            assign[i] = arg;
        }
        std::vector<std::vector<double>> next(centroids.size(),
                                              std::vector<double>(field.channels, 0.0));
        std::vector<int> count(centroids.size(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            for (int c = 0; c < field.channels; ++c) next[assign[i]][c] += feats[i][c];
            ++count[assign[i]];
        }
        std::vector<std::vector<double>> updated;
        double shift = 0.0;
        for (std::size_t c = 0; c < centroids.size(); ++c) {
            if (count[c] == 0) continue;
            double n2 = 0.0;
            for (double v : next[c]) n2 += v * v;
            if (n2 <= 0.0) continue;
            const double inv = 1.0 / std::sqrt(n2);
            for (double& v : next[c]) v *= inv;
            double diff = 0.0;
            for (int j = 0; j < field.channels; ++j) {
                const double d = next[c][j] - centroids[c][j];
                diff += d * d;
            }
            shift = std::max(shift, std::sqrt(diff));
            updated.push_back(std::move(next[c]));
        }
        const bool shrank = updated.size() != centroids.size();
        centroids = std::move(updated);
        if (!shrank && shift < kConvergenceShift) break;
    }

    // Merge centroids closer than the cosine collapse tolerance.
    std::vector<std::vector<double>> merged;
    for (const auto& c : centroids) {
        bool dup = false;
        for (const auto& kept : merged) {
            if (1.0 - dot(c, kept) < kCentroidMergeTol) {
                dup = true;
                break;
            }
        }
        if (!dup) merged.push_back(c);
    }

    // Representative pixel per centroid: cosine-nearest support feature,
    // ties broken by smallest (y, x).
    struct Rep {
        Pixel pos;
        std::size_t feat_index;
    };
    std::vector<Rep> reps;
    for (const auto& c : merged) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const double s = dot(feats[i], c);
            if (s > best ||
                (s == best && (pixels[i].y < pixels[arg].y ||
                               (pixels[i].y == pixels[arg].y && pixels[i].x < pixels[arg].x)))) {
                best = s;
                arg = i;
            }
        }
        reps.push_back({pixels[arg], arg});
    }

    // Distinct representatives only (duplicate regions collapse), then
    // canonical (y, x) ordering defines the anchor ids.
    std::vector<Rep> unique_reps;
    for (const Rep& r : reps) {
        bool dup = false;
        for (const Rep& kept : unique_reps) {
            if (kept.pos == r.pos) {
                dup = true;
                break;
            }
        }
        if (!dup) unique_reps.push_back(r);
    }
    std::sort(unique_reps.begin(), unique_reps.end(), [](const Rep& a, const Rep& b) {
        return a.pos.y != b.pos.y ? a.pos.y < b.pos.y : a.pos.x < b.pos.x;
    });

    std::vector<Anchor> anchors;
    anchors.reserve(unique_reps.size());
    for (std::size_t i = 0; i < unique_reps.size(); ++i) {
        Anchor a;
        a.id = static_cast<int>(i);
        a.position = unique_reps[i].pos;
        const auto px = field.pixel(a.position.y, a.position.x);
        a.feature.assign(px.begin(), px.end());
        anchors.push_back(std::move(a));
    }
    return anchors;
}

MatchedKeypoint match_anchor(const Anchor& anchor, const FeatureField& field,
                             const AffordanceMask& mask) {
    field.validate();
    mask.validate();
    if (static_cast<int>(anchor.feature.size()) != field.channels)
        throw ValidationError("anchor feature length must equal field channels");
    if (field.height != mask.height || field.width != mask.width)
        throw ValidationError("field and mask dimensions must match");

    double best = -std::numeric_limits<double>::infinity();
    Pixel arg{-1, -1};
    for (const Pixel& p : mask.support) {
        const double s = cosine_similarity(anchor.feature, field.pixel(p.y, p.x));
        if (s <= -2.0) continue;  // zero-norm target pixel
        // Support is scanned in row-major order, so strict improvement
        // gives the smallest (y, x) winner on ties.
        if (s > best) {
            best = s;
            arg = p;
        }
    }
    if (arg.x < 0) throw NoMatchError("every support pixel has a zero-norm feature");
    return {anchor.id, arg, best};
}

std::vector<MatchedKeypoint> match_keypoint_set(const std::vector<Anchor>& anchors,
                                                const FeatureField& field,
                                                const AffordanceMask& mask,
                                                double min_confidence) {
    if (anchors.empty()) throw ValidationError("anchor list must be non-empty");
    std::vector<MatchedKeypoint> out;
    for (const Anchor& a : anchors) {
        MatchedKeypoint m = match_anchor(a, field, mask);
        if (m.confidence >= min_confidence) out.push_back(m);
    }
    if (out.empty())
        throw NoMatchError("no anchor matched above the confidence threshold");
    return out;
}

std::vector<Pixel> grid_sample_keypoints(const Rect& bbox, int n) {
    if (n < 1) throw ValidationError("grid point count must be >= 1");
    if (bbox.x_max < bbox.x_min || bbox.y_max < bbox.y_min)
        throw ValidationError("bbox must be non-degenerate");

    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    auto coord = [side](int lo, int hi, int j) {
        if (side == 1) return static_cast<int>(std::lround((lo + hi) / 2.0));
        return static_cast<int>(
            std::lround(lo + static_cast<double>(j) * (hi - lo) / (side - 1)));
    };

    std::vector<Pixel> points;
    for (int jy = 0; jy < side; ++jy) {
        for (int jx = 0; jx < side; ++jx) {
            const Pixel p{coord(bbox.x_min, bbox.x_max, jx), coord(bbox.y_min, bbox.y_max, jy)};
            if (std::find(points.begin(), points.end(), p) == points.end()) points.push_back(p);
        }
    }
    if (static_cast<int>(points.size()) > n) points.resize(n);
    return points;
}

KeypointSet re_anchor(const KeypointSet& current, const FeatureField& new_field,
                      const AffordanceMask& new_mask,
                      const std::vector<Anchor>& new_anchors, double fraction,
                      double min_confidence) {
    current.validate();
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ValidationError("re-anchor fraction must lie in (0, 1]");

    const int k_obj = static_cast<int>(current.object_points.size());
    const int replace = static_cast<int>(std::floor(fraction * k_obj));
    if (replace == 0) return current;

    // Sort object indices by ascending confidence; the weakest `replace`
    // points are retired.
    std::vector<int> order(k_obj);
    for (int i = 0; i < k_obj; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return current.object_points[a].confidence < current.object_points[b].confidence;
    });

    std::vector<bool> drop(k_obj, false);
    for (int i = 0; i < replace; ++i) drop[order[i]] = true;

    std::vector<MatchedKeypoint> fresh =
        match_keypoint_set(new_anchors, new_field, new_mask, min_confidence);
    std::stable_sort(fresh.begin(), fresh.end(), [](const MatchedKeypoint& a,
                                                    const MatchedKeypoint& b) {
        return a.confidence > b.confidence;
    });
    if (static_cast<int>(fresh.size()) > replace) fresh.resize(replace);

    int max_id = 0;
    for (int id : current.all_ids()) max_id = std::max(max_id, id);
    const int offset = max_id + 1;

    KeypointSet out;
    out.effector_points = current.effector_points;
    for (int i = 0; i < k_obj; ++i) {
        if (!drop[i]) out.object_points.push_back(current.object_points[i]);
    }
    for (const MatchedKeypoint& m : fresh) {
        MatchedKeypoint withid = m;
        withid.id = offset + m.id;
        out.object_points.push_back(withid);
    }
    out.validate();
    return out;
}

}  // namespace a2a
