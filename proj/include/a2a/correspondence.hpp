#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "a2a/affordance.hpp"
#include "a2a/feature_io.hpp"
#include "a2a/geometry.hpp"

namespace a2a {

inline constexpr int kMaxObjectKeypoints = 15;
inline constexpr int kEffectorPointCount = 4;
inline constexpr int kFirstEffectorId = kMaxObjectKeypoints;  // effector ids 15..18
inline constexpr int kCanonicalKeypointCount = kMaxObjectKeypoints + kEffectorPointCount;

// Semantic reference keypoint: position on the reference frame plus the
// descriptor used to find its counterpart elsewhere.
struct Anchor {
    int id = 0;
    Pixel position;
    std::vector<float> feature;
};

struct MatchedKeypoint {
    int id = 0;
    Pixel position;
    double confidence = 0.0;
};

// Fixed end-effector landmark (simulator-provided, sub-pixel).
struct EffectorPoint {
    int id = 0;
    Vec2 position;
};

struct KeypointSet {
    std::vector<MatchedKeypoint> object_points;          // 1..15, ids unique
    std::array<EffectorPoint, 4> effector_points{};      // exactly 4

    int total() const { return static_cast<int>(object_points.size()) + kEffectorPointCount; }
    std::vector<int> all_ids() const;
    std::vector<Vec2> all_positions() const;

    void validate() const;
};

// k-means over the masked features (k-means++ seeding, spherical
// updates); each anchor sits on the support pixel whose feature is
// cosine-nearest to its cluster centroid. Deterministic given the seed.
std::vector<Anchor> extract_reference_anchors(const FeatureField& field,
                                              const AffordanceMask& mask, int n,
                                              std::uint64_t seed);

// Cosine-similarity argmax restricted to the mask support.
MatchedKeypoint match_anchor(const Anchor& anchor, const FeatureField& field,
                             const AffordanceMask& mask);

// Matches every anchor independently and keeps those with confidence
// >= min_confidence; survivor ids are preserved.
std::vector<MatchedKeypoint> match_keypoint_set(const std::vector<Anchor>& anchors,
                                                const FeatureField& field,
                                                const AffordanceMask& mask,
                                                double min_confidence);

// ceil(sqrt(n)) x ceil(sqrt(n)) lattice over the bbox, deduplicated and
// truncated to n points in row-major order.
std::vector<Pixel> grid_sample_keypoints(const Rect& bbox, int n);

// Replaces the floor(fraction*K_obj) lowest-confidence object keypoints
// with the best fresh matches of new_anchors under the new mask.
// Replacement ids are new_anchor.id offset past the current maximum id.
KeypointSet re_anchor(const KeypointSet& current, const FeatureField& new_field,
                      const AffordanceMask& new_mask,
                      const std::vector<Anchor>& new_anchors, double fraction,
                      double min_confidence = 0.0);

// Cosine similarity with double accumulation; returns -2 when either
// vector has zero norm (sentinel strictly below any real cosine).
double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace a2a
