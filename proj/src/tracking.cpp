#include "a2a/tracking.hpp"

#include <algorithm>
#include <cmath>

#include "a2a/correspondence.hpp"
#include "a2a/errors.hpp"

namespace a2a {

void KeypointTrajectory::validate(int frame_width, int frame_height) const {
    if (num_points < 1 || num_frames < 1)
        throw ValidationError("trajectory must contain at least one point and frame");
    const std::size_t expect = static_cast<std::size_t>(num_points) * num_frames;
    if (positions.size() != expect || visibility.size() != expect)
        throw ValidationError("trajectory buffers do not match declared shape");
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Vec2& p = positions[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw ValidationError("trajectory contains a non-finite position");
        if (visibility[i] && (p.x < 0 || p.x > frame_width - 1 || p.y < 0 || p.y > frame_height - 1))
            throw ValidationError("visible trajectory position out of bounds");
    }
}

CorrelationTracker::CorrelationTracker(const FeatureField& first_frame,
                                       std::span<const Vec2> init, TrackerConfig config)
    : config_(config) {
    first_frame.validate();
    if (init.empty()) throw ValidationError("tracker needs at least one point");
    if (config_.window < 1) throw ValidationError("tracker window must be >= 1");
    width_ = first_frame.width;
    height_ = first_frame.height;
    channels_ = first_frame.channels;
    for (const Vec2& p : init) {
        if (p.x < 0 || p.x > width_ - 1 || p.y < 0 || p.y > height_ - 1)
            throw ValidationError("tracker init point out of bounds");
        const int px = static_cast<int>(std::lround(p.x));
        const int py = static_cast<int>(std::lround(p.y));
        const auto feat = first_frame.pixel(py, px);
        templates_.emplace_back(feat.begin(), feat.end());
        positions_.push_back(p);
        visibility_.push_back(1);
    }
    history_ = positions_;
    history_vis_ = visibility_;
    frames_ = 1;
}

const std::vector<Vec2>& CorrelationTracker::step(const FeatureField& frame) {
    if (frame.width != width_ || frame.height != height_ || frame.channels != channels_)
        throw ValidationError("frame dimensions changed mid-track");

    const std::size_t k = positions_.size();
    std::vector<Vec2> matched(k);
    std::vector<std::uint8_t> vis(k, 0);

    for (std::size_t i = 0; i < k; ++i) {
        const int cx = static_cast<int>(std::lround(positions_[i].x));
        const int cy = static_cast<int>(std::lround(positions_[i].y));
        const int x0 = std::max(0, cx - config_.window);
        const int x1 = std::min(width_ - 1, cx + config_.window);
        const int y0 = std::max(0, cy - config_.window);
        const int y1 = std::min(height_ - 1, cy + config_.window);

        // The previous position is the incumbent: a candidate must be
        // strictly more similar to displace it, which pins the
        // static-scene fixpoint.
        double best = cosine_similarity(templates_[i], frame.pixel(cy, cx));
        Pixel arg{cx, cy};
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (x == cx && y == cy) continue;
                const double s = cosine_similarity(templates_[i], frame.pixel(y, x));
                if (s > best) {
                    best = s;
                    arg = {x, y};
                }
            }
        }
        if (best >= config_.visibility_threshold) {
            matched[i] = {static_cast<double>(arg.x), static_cast<double>(arg.y)};
            vis[i] = 1;
        } else {
            matched[i] = positions_[i];  // hold last position
        }
    }

    // Joint correction: pull each matched point toward the position the
    // set's best-fit translation predicts for it.
    Vec2 translation{0, 0};
    int moved = 0;
    for (std::size_t i = 0; i < k; ++i) {
        if (vis[i]) {
            translation += matched[i] - positions_[i];
            ++moved;
        }
    }
    if (moved > 0) translation = translation * (1.0 / moved);

    for (std::size_t i = 0; i < k; ++i) {
        if (vis[i]) {
            const Vec2 predicted = positions_[i] + translation;
            matched[i] = matched[i] + (predicted - matched[i]) * config_.rigidity_pull;
        }
        matched[i].x = std::clamp(matched[i].x, 0.0, static_cast<double>(width_ - 1));
        matched[i].y = std::clamp(matched[i].y, 0.0, static_cast<double>(height_ - 1));
    }

    positions_ = std::move(matched);
    visibility_ = std::move(vis);
    history_.insert(history_.end(), positions_.begin(), positions_.end());
    history_vis_.insert(history_vis_.end(), visibility_.begin(), visibility_.end());
    ++frames_;
    return positions_;
}

KeypointTrajectory CorrelationTracker::trajectory() const {
    KeypointTrajectory out;
    out.num_points = static_cast<int>(positions_.size());
    out.num_frames = frames_;
    out.positions = history_;
    out.visibility = history_vis_;
    out.validate(width_, height_);
    return out;
}

KeypointTrajectory track(std::span<const FeatureField> frames, std::span<const Vec2> init,
                         TrackerConfig config) {
    if (frames.empty()) throw ValidationError("frame sequence must be non-empty");
    CorrelationTracker tracker(frames[0], init, config);
    for (std::size_t t = 1; t < frames.size(); ++t) tracker.step(frames[t]);
    return tracker.trajectory();
}

KeypointTrajectory ingest_tracks(const TrackFile& tracks, int expected_k, int frame_width,
                                 int frame_height) {
    if (tracks.num_points != expected_k)
        throw ValidationError("track file point count does not match expected K");
    if (tracks.num_frames < 1) throw ValidationError("track file must contain frames");
    if (!tracks.ids.empty() && static_cast<int>(tracks.ids.size()) != tracks.num_points)
        throw ValidationError("track file ids length must equal num_points");

    KeypointTrajectory out;
    out.num_points = tracks.num_points;
    out.num_frames = tracks.num_frames;
    out.positions.reserve(tracks.positions.size());
    for (const auto& p : tracks.positions) out.positions.push_back({p[0], p[1]});
    out.visibility = tracks.visibility;
    out.validate(frame_width, frame_height);
    return out;
}

}  // namespace a2a
