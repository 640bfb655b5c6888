#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "a2a/feature_io.hpp"
#include "a2a/rng.hpp"
#include "doctest.h"

using namespace a2a;

namespace {

std::string to_bytes(const FeatureField& f) {
    std::ostringstream out(std::ios::binary);
    write_feature_field(f, out);
    return out.str();
}

std::string to_bytes(const Heatmap& h) {
    std::ostringstream out(std::ios::binary);
    write_heatmap(h, out);
    return out.str();
}

FeatureField random_field(Rng& rng, int h, int w, int d) {
    FeatureField f = FeatureField::zeros(h, w, d);
    for (float& v : f.values) v = static_cast<float>(rng.normal(0.0, 2.0));
    return f;
}

}  // namespace

TEST_CASE("feature field sizes follow the format layout") {
    FeatureField f = FeatureField::zeros(2, 2, 1);
    const std::string bytes = to_bytes(f);
    CHECK(bytes.size() == 20 + 16);  // 5 u32 header fields + 4 float payload

    Heatmap h = Heatmap::zeros(2, 2);
    CHECK(to_bytes(h).size() == 16 + 16);
}

TEST_CASE("feature field round-trip is bitwise exact") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int h = 1 + static_cast<int>(rng.uniform_index(6));
        const int w = 1 + static_cast<int>(rng.uniform_index(6));
        const int d = 1 + static_cast<int>(rng.uniform_index(8));
        FeatureField f = random_field(rng, h, w, d);
        if (trial % 3 == 0) f.values[0] = -0.0f;  // negative zero survives bitwise
        const std::string bytes = to_bytes(f);
        std::istringstream in(bytes, std::ios::binary);
        FeatureField back = read_feature_field(in);
        REQUIRE(back.height == f.height);
        REQUIRE(back.width == f.width);
        REQUIRE(back.channels == f.channels);
        REQUIRE(std::memcmp(back.values.data(), f.values.data(),
                            f.values.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("heatmap round-trip is bitwise exact") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Heatmap h = Heatmap::zeros(1 + static_cast<int>(rng.uniform_index(8)),
                                   1 + static_cast<int>(rng.uniform_index(8)));
        for (float& v : h.values) v = static_cast<float>(rng.uniform());
        h.normalize_and_validate();
        const std::string bytes = to_bytes(h);
        std::istringstream in(bytes, std::ios::binary);
        Heatmap back = read_heatmap(in);
        REQUIRE(back.height == h.height);
        REQUIRE(back.width == h.width);
        REQUIRE(std::memcmp(back.values.data(), h.values.data(),
                            h.values.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("constant heatmap round-trips exactly") {
    Heatmap h = Heatmap::constant(5, 4, 0.5f);
    std::istringstream in(to_bytes(h), std::ios::binary);
    Heatmap back = read_heatmap(in);
    for (std::size_t i = 0; i < h.values.size(); ++i) CHECK(back.values[i] == 0.5f);
}

TEST_CASE("non-finite values are rejected before writing") {
    FeatureField f = FeatureField::zeros(2, 2, 1);
    f.values[1] = std::numeric_limits<float>::quiet_NaN();
    std::ostringstream out(std::ios::binary);
    CHECK_THROWS_AS(write_feature_field(f, out), ValidationError);
    CHECK(out.str().empty());
}

TEST_CASE("bad magic yields a format error") {
    std::string bytes = to_bytes(FeatureField::zeros(2, 2, 1));
    bytes[0] = 'X';
    bytes[1] = 'X';
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_AS(read_feature_field(in), FormatError);
}

TEST_CASE("truncated payload yields a length error") {
    std::string bytes = to_bytes(FeatureField::zeros(3, 3, 2));
    bytes.resize(bytes.size() - 7);
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_AS(read_feature_field(in), FormatError);
}

TEST_CASE("heatmap range is validated on read") {
    // Hand-craft a payload containing 1.0000001.
    Heatmap h = Heatmap::zeros(2, 2);
    std::string bytes = to_bytes(h);
    const float bad = 1.0000001f;
    std::memcpy(bytes.data() + 16, &bad, 4);
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_AS(read_heatmap(in), ValidationError);
}

TEST_CASE("negative zero heat is accepted and normalized") {
    Heatmap h = Heatmap::zeros(2, 2);
    std::string bytes = to_bytes(h);
    const float neg_zero = -0.0f;
    std::memcpy(bytes.data() + 16, &neg_zero, 4);
    std::istringstream in(bytes, std::ios::binary);
    Heatmap back = read_heatmap(in);
    CHECK(std::signbit(back.values[0]) == false);
    CHECK(back.values[0] == 0.0f);
}

TEST_CASE("demonstration manifest round-trips") {
    Demonstration demo;
    demo.id = "demo_000";
    demo.prompt.text = "hold";
    demo.prompt.synonyms = {"pick"};
    demo.prompts = {"hold"};
    demo.frame_files = {"frame_000.a2af", "frame_001.a2af"};
    demo.heatmap_files = {"heat_hold.a2hm"};
    demo.track_file = "track.json";
    Action a;
    a.v = {0.1, -0.2, 0.0, 0.0, 0.0, 0.05, 1.0};
    demo.actions = {a, a};
    EffectorFrame eff;
    eff.points = {{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}, {7.0, 8.0}}};
    demo.effector_points = {eff, eff};

    Demonstration back = demonstration_from_json(demonstration_to_json(demo));
    CHECK(back.id == demo.id);
    CHECK(back.prompt.text == "hold");
    CHECK(back.prompt.synonyms == demo.prompt.synonyms);
    CHECK(back.frame_files == demo.frame_files);
    CHECK(back.heatmap_files == demo.heatmap_files);
    CHECK(back.track_file == demo.track_file);
    REQUIRE(back.actions.size() == 2);
    CHECK(back.actions[0].v == a.v);
    REQUIRE(back.effector_points.size() == 2);
    CHECK(back.effector_points[1].points[3][1] == 8.0);
}

TEST_CASE("demonstration invariants enforced") {
    Demonstration demo;
    demo.id = "x";
    demo.prompt.text = "hold";
    demo.frame_files = {"a", "b", "c"};
    demo.actions.resize(2);
    CHECK_THROWS_AS(demo.validate(), ValidationError);  // frame/action mismatch

    demo.frame_files = {"a"};
    demo.actions.resize(1);
    CHECK_THROWS_AS(demo.validate(), ValidationError);  // fewer than 2 steps

    Demonstration bad = demo;
    bad.frame_files.clear();
    bad.actions.resize(2);
    CHECK_THROWS_AS(bad.validate(), ValidationError);  // no frames and no track
}

TEST_CASE("track file round-trips with ids") {
    TrackFile t;
    t.num_points = 2;
    t.num_frames = 3;
    t.ids = {4, 9};
    for (int f = 0; f < 3; ++f) {
        for (int i = 0; i < 2; ++i) {
            t.positions.push_back({1.5 * f, 2.0 * i});
            t.visibility.push_back(f == 2 && i == 1 ? 0 : 1);
        }
    }
    TrackFile back = track_file_from_json(track_file_to_json(t));
    CHECK(back.num_points == 2);
    CHECK(back.num_frames == 3);
    CHECK(back.ids == t.ids);
    CHECK(back.positions == t.positions);
    CHECK(back.visibility == t.visibility);
}

TEST_CASE("malformed track documents raise format errors") {
    CHECK_THROWS_AS(track_file_from_json("not json"), FormatError);
    CHECK_THROWS_AS(track_file_from_json(R"({"num_points":2,"num_frames":1,"points":[[[0,0,1]]]})"),
                    FormatError);  // row width mismatch
    CHECK_THROWS_AS(track_file_from_json(R"({"num_points":1,"points":[[[0,0,1]]]})"),
                    FormatError);  // missing num_frames
}
