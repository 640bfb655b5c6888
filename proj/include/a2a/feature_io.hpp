#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "a2a/errors.hpp"

namespace a2a {

inline constexpr std::uint32_t kFeatureFieldVersion = 1;
inline constexpr std::uint32_t kHeatmapVersion = 1;

// Dense H×W×D descriptor grid; the stand-in for backbone features.
// Storage is row-major with the channel index fastest.
struct FeatureField {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> values;

    static FeatureField zeros(int height, int width, int channels);

    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float at(int y, int x, int c) const { return values[index(y, x, c)]; }
    float& at(int y, int x, int c) { return values[index(y, x, c)]; }
    std::span<const float> pixel(int y, int x) const {
        return {values.data() + index(y, x, 0), static_cast<std::size_t>(channels)};
    }
    std::span<float> pixel(int y, int x) {
        return {values.data() + index(y, x, 0), static_cast<std::size_t>(channels)};
    }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    // Throws ValidationError unless dimensions are positive, the value
    // buffer matches them, and every value is finite.
    void validate() const;
};

// Prompt-conditioned affordance heatmap, values in [0, 1].
struct Heatmap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    static Heatmap zeros(int height, int width);
    static Heatmap constant(int height, int width, float value);

    std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }
    float at(int y, int x) const { return values[index(y, x)]; }
    float& at(int y, int x) { return values[index(y, x)]; }

    // Canonicalizes -0.0 to +0.0 in place, then validates the [0,1] range.
    void normalize_and_validate();
    void validate() const;
};

struct Prompt {
    std::string text;
    std::vector<std::string> synonyms;

    void validate() const {
        if (text.empty()) throw ValidationError("prompt text must be non-empty");
    }
};

// One control step: 6-DoF pose deltas plus a gripper scalar in [0,1].
struct Action {
    std::array<double, 7> v{};

    static constexpr int kDims = 7;
    double* delta() { return v.data(); }
    const double* delta() const { return v.data(); }
    double gripper() const { return v[6]; }
    void set_gripper(double g) { v[6] = g; }

    void validate() const;
};

// Per-frame ground-truth end-effector landmarks (simulator convention).
struct EffectorFrame {
    std::array<std::array<double, 2>, 4> points{};
};

// One demonstration as recorded on disk: frame files, actions, and the
// optional precomputed artifacts that later pipeline stages attach.
struct Demonstration {
    std::string id;
    Prompt prompt;
    std::vector<std::string> prompts;  // all affordance verbs; first == prompt.text
    std::vector<std::string> frame_files;
    std::vector<std::string> heatmap_files;  // one per prompt, first-frame heat
    std::optional<std::string> track_file;
    std::vector<Action> actions;
    std::vector<EffectorFrame> effector_points;  // per frame, may be empty

    void validate() const;
};

// Raw parsed track document (schema shared with external trackers).
struct TrackFile {
    int num_points = 0;
    int num_frames = 0;
    // positions[t*num_points + i] = {x, y}; visibility matches.
    std::vector<std::array<double, 2>> positions;
    std::vector<std::uint8_t> visibility;
    std::vector<int> ids;  // optional; empty means 0..K-1
};

// ---- A2AF / A2HM binary formats (little-endian, float32 payload) ----

std::size_t write_feature_field(const FeatureField& field, std::ostream& out);
FeatureField read_feature_field(std::istream& in);
std::size_t write_feature_field_file(const FeatureField& field, const std::string& path);
FeatureField read_feature_field_file(const std::string& path);

std::size_t write_heatmap(const Heatmap& map, std::ostream& out);
Heatmap read_heatmap(std::istream& in);
std::size_t write_heatmap_file(const Heatmap& map, const std::string& path);
Heatmap read_heatmap_file(const std::string& path);

// ---- JSON documents: demonstration manifest, track file ----

std::string demonstration_to_json(const Demonstration& demo);
Demonstration demonstration_from_json(const std::string& json_text);
void write_demonstration_manifest(const Demonstration& demo, const std::string& path);
Demonstration read_demonstration_manifest(const std::string& path);

std::string track_file_to_json(const TrackFile& tracks);
TrackFile track_file_from_json(const std::string& json_text);
void write_track_file(const TrackFile& tracks, const std::string& path);
TrackFile read_track_file(const std::string& path);

}  // namespace a2a
