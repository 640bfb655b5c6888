#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "a2a/rng.hpp"
#include "a2a/tracking.hpp"
#include "doctest.h"

using namespace a2a;

namespace {

// A blob of distinct smooth features over a constant background.
FeatureField blob_frame(int h, int w, int d, int bx, int by, int bw, int bh,
                        double noise_sigma, std::uint64_t noise_seed) {
    FeatureField f = FeatureField::zeros(h, w, d);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            f.at(y, x, 0) = 0.2f;  // background channel
        }
    }
    for (int y = by; y < by + bh; ++y) {
        for (int x = bx; x < bx + bw; ++x) {
            f.at(y, x, 0) = 0.0f;
            f.at(y, x, 1) = 1.0f;
            // Local coordinates make every blob pixel distinct.
            f.at(y, x, 2) = 0.3f + 0.1f * (x - bx);
            f.at(y, x, 3) = 0.3f + 0.1f * (y - by);
        }
    }
    if (noise_sigma > 0) {
        Rng rng(noise_seed);
        for (float& v : f.values) v += static_cast<float>(rng.normal(0.0, noise_sigma));
    }
    return f;
}

}  // namespace

TEST_CASE("static scene is a tracking fixpoint, even with constant features") {
    FeatureField frame = FeatureField::zeros(12, 12, 3);
    for (float& v : frame.values) v = 0.5f;  // every pixel identical
    std::vector<FeatureField> frames(6, frame);
    std::vector<Vec2> init = {{3, 4}, {7, 2}, {10, 11}};
    KeypointTrajectory traj = track(frames, init);
    REQUIRE(traj.num_frames == 6);
    REQUIRE(traj.num_points == 3);
    for (int t = 0; t < 6; ++t) {
        for (int i = 0; i < 3; ++i) {
            CHECK(traj.at(t, i) == init[i]);
            CHECK(traj.visible(t, i));
        }
    }
}

TEST_CASE("first frame of the trajectory equals the init points exactly") {
    Rng rng(4);
    FeatureField frame = blob_frame(16, 16, 4, 3, 3, 6, 6, 0.0, 0);
    std::vector<Vec2> init = {{3.5, 4.25}, {6, 7}};
    std::vector<FeatureField> frames(3, frame);
    KeypointTrajectory traj = track(frames, init);
    CHECK(traj.at(0, 0) == init[0]);
    CHECK(traj.at(0, 1) == init[1]);
}

TEST_CASE("pure translation is tracked with zero error") {
    const int shift = 2;
    std::vector<FeatureField> frames;
    for (int t = 0; t < 8; ++t) {
        frames.push_back(blob_frame(20, 40, 4, 2 + shift * t, 6, 5, 5, 0.0, 0));
    }
    std::vector<Vec2> init = {{2, 6}, {4, 8}, {6, 10}, {3, 7}};
    KeypointTrajectory traj = track(frames, init);
    for (int t = 0; t < 8; ++t) {
        for (int i = 0; i < 4; ++i) {
            CHECK(traj.visible(t, i));
            CHECK(traj.at(t, i).x == doctest::Approx(init[i].x + shift * t).epsilon(1e-12));
            CHECK(traj.at(t, i).y == doctest::Approx(init[i].y).epsilon(1e-12));
        }
    }
}

TEST_CASE("teleporting blob marks points invisible and holds positions") {
    std::vector<FeatureField> frames;
    frames.push_back(blob_frame(20, 60, 4, 2, 6, 5, 5, 0.0, 0));
    frames.push_back(blob_frame(20, 60, 4, 40, 6, 5, 5, 0.0, 0));  // jump of 38 px
    std::vector<Vec2> init = {{3, 7}, {4, 8}};
    KeypointTrajectory traj = track(frames, init, {.window = 8, .visibility_threshold = 0.6});
    for (int i = 0; i < 2; ++i) {
        CHECK_FALSE(traj.visible(1, i));
        CHECK(traj.at(1, i) == init[i]);
    }
}

TEST_CASE("consecutive visible steps stay within the window") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<FeatureField> frames;
        int bx = 4;
        for (int t = 0; t < 6; ++t) {
            frames.push_back(
                blob_frame(24, 48, 4, bx, 8, 6, 6, 0.02, mix_seed(trial, t)));
            bx += static_cast<int>(rng.uniform_index(4));  // drift 0..3 px
        }
        std::vector<Vec2> init = {{5, 9}, {8, 12}, {6, 11}};
        const int window = 8;
        KeypointTrajectory traj = track(frames, init, {.window = window});
        for (int t = 1; t < traj.num_frames; ++t) {
            for (int i = 0; i < traj.num_points; ++i) {
                if (!traj.visible(t, i) || !traj.visible(t - 1, i)) continue;
                CHECK(std::abs(traj.at(t, i).x - traj.at(t - 1, i).x) <= window + 1e-9);
                CHECK(std::abs(traj.at(t, i).y - traj.at(t - 1, i).y) <= window + 1e-9);
            }
        }
    }
}

TEST_CASE("tracking is deterministic") {
    std::vector<FeatureField> frames;
    for (int t = 0; t < 5; ++t)
        frames.push_back(blob_frame(16, 32, 4, 2 + t, 4, 5, 5, 0.05, 42 + t));
    std::vector<Vec2> init = {{3, 5}, {5, 7}};
    KeypointTrajectory a = track(frames, init);
    KeypointTrajectory b = track(frames, init);
    CHECK(a.positions == b.positions);
    CHECK(a.visibility == b.visibility);
}

TEST_CASE("track ingestion validates shape and values") {
    TrackFile t;
    t.num_points = 19;
    t.num_frames = 50;
    for (int f = 0; f < 50; ++f) {
        for (int i = 0; i < 19; ++i) {
            t.positions.push_back({static_cast<double>(i), static_cast<double>(f % 30)});
            t.visibility.push_back(1);
        }
    }
    KeypointTrajectory traj = ingest_tracks(t, 19, 64, 48);
    CHECK(traj.num_points == 19);
    CHECK(traj.num_frames == 50);

    CHECK_THROWS_AS(ingest_tracks(t, 18, 64, 48), ValidationError);

    TrackFile bad = t;
    bad.positions[5] = {std::nan(""), 3.0};
    CHECK_THROWS_AS(ingest_tracks(bad, 19, 64, 48), ValidationError);

    TrackFile oob = t;
    oob.positions[7] = {900.0, 3.0};
    CHECK_THROWS_AS(ingest_tracks(oob, 19, 64, 48), ValidationError);
}
