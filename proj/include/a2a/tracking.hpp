#pragma once

#include <span>
#include <vector>

#include "a2a/feature_io.hpp"
#include "a2a/geometry.hpp"

namespace a2a {

// Per-frame positions of K keypoints over T frames.
struct KeypointTrajectory {
    int num_points = 0;
    int num_frames = 0;
    std::vector<Vec2> positions;          // T*K, frame-major
    std::vector<std::uint8_t> visibility;  // T*K

    const Vec2& at(int t, int i) const {
        return positions[static_cast<std::size_t>(t) * num_points + i];
    }
    Vec2& at(int t, int i) { return positions[static_cast<std::size_t>(t) * num_points + i]; }
    bool visible(int t, int i) const {
        return visibility[static_cast<std::size_t>(t) * num_points + i] != 0;
    }

    void validate(int frame_width, int frame_height) const;
};

struct TrackerConfig {
    int window = 8;                     // search box half-width, pixels
    double visibility_threshold = 0.5;  // cosine below this marks the point lost
    double rigidity_pull = 0.25;        // pull toward the joint best-fit translation
};

// Windowed cosine matching against each point's first-frame descriptor,
// followed by a joint translation correction. Streaming interface so
// frames can be rendered or loaded one at a time.
class CorrelationTracker {
  public:
    CorrelationTracker(const FeatureField& first_frame, std::span<const Vec2> init,
                       TrackerConfig config = {});

    // Advances one frame; returns the corrected positions.
    const std::vector<Vec2>& step(const FeatureField& frame);

    const std::vector<Vec2>& positions() const { return positions_; }
    const std::vector<std::uint8_t>& visibility() const { return visibility_; }

    // Trajectory accumulated so far (frame 0 included).
    KeypointTrajectory trajectory() const;

  private:
    TrackerConfig config_;
    int width_ = 0, height_ = 0, channels_ = 0;
    std::vector<std::vector<float>> templates_;  // frame-0 descriptor per point
    std::vector<Vec2> positions_;
    std::vector<std::uint8_t> visibility_;
    std::vector<Vec2> history_;
    std::vector<std::uint8_t> history_vis_;
    int frames_ = 0;
};

// Batch form over an in-memory frame sequence.
KeypointTrajectory track(std::span<const FeatureField> frames, std::span<const Vec2> init,
                         TrackerConfig config = {});

// Validates an external track document against the expected shape and
// frame bounds.
KeypointTrajectory ingest_tracks(const TrackFile& tracks, int expected_k, int frame_width,
                                 int frame_height);

}  // namespace a2a
