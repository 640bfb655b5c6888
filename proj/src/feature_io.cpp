#include "a2a/feature_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace a2a {

namespace {

using ordered_json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "serialization code assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v, std::size_t& written) {
    out.write(reinterpret_cast<const char*>(&v), 4);
    if (!out) throw IoError("write failed", written);
    written += 4;
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (in.gcount() != 4) throw FormatError(std::string("truncated input reading ") + what);
    return v;
}

void put_f32(std::ostream& out, std::span<const float> data, std::size_t& written) {
    const std::size_t bytes = data.size() * sizeof(float);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!out) throw IoError("write failed", written);
    written += bytes;
}

void get_f32(std::istream& in, std::span<float> data, const char* what) {
    const std::streamsize bytes = static_cast<std::streamsize>(data.size() * sizeof(float));
    in.read(reinterpret_cast<char*>(data.data()), bytes);
    if (in.gcount() != bytes)
        throw FormatError(std::string("payload shorter than header claims in ") + what);
}

std::uint32_t checked_dim(long long v, const char* name) {
    if (v < 1) throw ValidationError(std::string(name) + " must be >= 1");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

FeatureField FeatureField::zeros(int height, int width, int channels) {
    FeatureField f;
    f.height = height;
    f.width = width;
    f.channels = channels;
    f.values.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
    f.validate();
    return f;
}

void FeatureField::validate() const {
    checked_dim(height, "height");
    checked_dim(width, "width");
    checked_dim(channels, "channels");
    const std::size_t expect = static_cast<std::size_t>(height) * width * channels;
    if (values.size() != expect)
        throw ValidationError("feature field value count does not match dimensions");
    for (float v : values) {
        if (!std::isfinite(v)) throw ValidationError("feature field contains a non-finite value");
    }
}

Heatmap Heatmap::zeros(int height, int width) { return constant(height, width, 0.0f); }

Heatmap Heatmap::constant(int height, int width, float value) {
    Heatmap h;
    h.height = height;
    h.width = width;
    h.values.assign(static_cast<std::size_t>(height) * width, value);
    h.normalize_and_validate();
    return h;
}

void Heatmap::normalize_and_validate() {
    for (float& v : values) {
        if (v == 0.0f) v = 0.0f;  // collapses -0.0 to +0.0
    }
    validate();
}

void Heatmap::validate() const {
    checked_dim(height, "height");
    checked_dim(width, "width");
    const std::size_t expect = static_cast<std::size_t>(height) * width;
    if (values.size() != expect)
        throw ValidationError("heatmap value count does not match dimensions");
    for (float v : values) {
        if (!(v >= 0.0f && v <= 1.0f))
            throw ValidationError("heatmap value outside [0, 1]");
    }
}

void Action::validate() const {
    for (double c : v) {
        if (!std::isfinite(c)) throw ValidationError("action contains a non-finite component");
    }
    if (v[6] < 0.0 || v[6] > 1.0) throw ValidationError("gripper command outside [0, 1]");
}

void Demonstration::validate() const {
    if (id.empty()) throw ValidationError("demonstration id must be non-empty");
    prompt.validate();
    const std::size_t steps = actions.size();
    if (steps < 2) throw ValidationError("demonstration must contain at least 2 steps");
    if (!frame_files.empty() && frame_files.size() != steps)
        throw ValidationError("actions length must equal frame count");
    if (frame_files.empty() && !track_file.has_value())
        throw ValidationError("demonstration needs frames or a precomputed track");
    if (!effector_points.empty() && effector_points.size() != steps)
        throw ValidationError("effector point history must cover every step");
    for (const Action& a : actions) a.validate();
}

// ---- A2AF ----

std::size_t write_feature_field(const FeatureField& field, std::ostream& out) {
    field.validate();
    std::size_t written = 0;
    out.write("A2AF", 4);
    if (!out) throw IoError("write failed", written);
    written += 4;
    put_u32(out, kFeatureFieldVersion, written);
    put_u32(out, checked_dim(field.height, "height"), written);
    put_u32(out, checked_dim(field.width, "width"), written);
    put_u32(out, checked_dim(field.channels, "channels"), written);
    put_f32(out, field.values, written);
    return written;
}

FeatureField read_feature_field(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "A2AF", 4) != 0)
        throw FormatError("bad magic: expected A2AF");
    const std::uint32_t version = get_u32(in, "version");
    if (version != kFeatureFieldVersion) throw FormatError("unsupported A2AF version");
    FeatureField f;
    f.height = static_cast<int>(get_u32(in, "height"));
    f.width = static_cast<int>(get_u32(in, "width"));
    f.channels = static_cast<int>(get_u32(in, "channels"));
    if (f.height < 1 || f.width < 1 || f.channels < 1)
        throw FormatError("A2AF header has a zero dimension");
    const std::size_t count = static_cast<std::size_t>(f.height) * f.width * f.channels;
    if (count > (1u << 30)) throw FormatError("A2AF payload implausibly large");
    f.values.resize(count);
    get_f32(in, f.values, "A2AF");
    f.validate();
    return f;
}

std::size_t write_feature_field_file(const FeatureField& field, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    return write_feature_field(field, out);
}

FeatureField read_feature_field_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    return read_feature_field(in);
}

// ---- A2HM ----

std::size_t write_heatmap(const Heatmap& map, std::ostream& out) {
    map.validate();
    std::size_t written = 0;
    out.write("A2HM", 4);
    if (!out) throw IoError("write failed", written);
    written += 4;
    put_u32(out, kHeatmapVersion, written);
    put_u32(out, checked_dim(map.height, "height"), written);
    put_u32(out, checked_dim(map.width, "width"), written);
    put_f32(out, map.values, written);
    return written;
}

Heatmap read_heatmap(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "A2HM", 4) != 0)
        throw FormatError("bad magic: expected A2HM");
    const std::uint32_t version = get_u32(in, "version");
    if (version != kHeatmapVersion) throw FormatError("unsupported A2HM version");
    Heatmap h;
    h.height = static_cast<int>(get_u32(in, "height"));
    h.width = static_cast<int>(get_u32(in, "width"));
    if (h.height < 1 || h.width < 1) throw FormatError("A2HM header has a zero dimension");
    const std::size_t count = static_cast<std::size_t>(h.height) * h.width;
    if (count > (1u << 30)) throw FormatError("A2HM payload implausibly large");
    h.values.resize(count);
    get_f32(in, h.values, "A2HM");
    h.normalize_and_validate();
    return h;
}

std::size_t write_heatmap_file(const Heatmap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    return write_heatmap(map, out);
}

Heatmap read_heatmap_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    return read_heatmap(in);
}

// ---- demonstration manifest ----

std::string demonstration_to_json(const Demonstration& demo) {
    demo.validate();
    ordered_json j;
    j["schema_version"] = 1;
    j["id"] = demo.id;
    j["prompt"] = demo.prompt.text;
    if (!demo.prompt.synonyms.empty()) j["synonyms"] = demo.prompt.synonyms;
    if (!demo.prompts.empty()) j["prompts"] = demo.prompts;
    j["frames"] = demo.frame_files;
    if (!demo.heatmap_files.empty()) j["heatmaps"] = demo.heatmap_files;
    if (demo.track_file) j["track"] = *demo.track_file;
    ordered_json acts = ordered_json::array();
    for (const Action& a : demo.actions) {
        acts.push_back(std::vector<double>(a.v.begin(), a.v.end()));
    }
    j["actions"] = std::move(acts);
    if (!demo.effector_points.empty()) {
        ordered_json eff = ordered_json::array();
        for (const EffectorFrame& frame : demo.effector_points) {
            ordered_json row = ordered_json::array();
            for (const auto& p : frame.points) row.push_back({p[0], p[1]});
            eff.push_back(std::move(row));
        }
        j["effector_points"] = std::move(eff);
    }
    return j.dump(2);
}

Demonstration demonstration_from_json(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }
    Demonstration demo;
    try {
        demo.id = j.at("id").get<std::string>();
        demo.prompt.text = j.at("prompt").get<std::string>();
        if (j.contains("synonyms")) demo.prompt.synonyms = j["synonyms"].get<std::vector<std::string>>();
        if (j.contains("prompts")) demo.prompts = j["prompts"].get<std::vector<std::string>>();
        if (demo.prompts.empty()) demo.prompts = {demo.prompt.text};
        demo.frame_files = j.at("frames").get<std::vector<std::string>>();
        if (j.contains("heatmaps")) demo.heatmap_files = j["heatmaps"].get<std::vector<std::string>>();
        if (j.contains("track") && !j["track"].is_null())
            demo.track_file = j["track"].get<std::string>();
        for (const auto& row : j.at("actions")) {
            auto vals = row.get<std::vector<double>>();
            if (vals.size() != Action::kDims)
                throw FormatError("action row must have exactly 7 components");
            Action a;
            std::copy(vals.begin(), vals.end(), a.v.begin());
            demo.actions.push_back(a);
        }
        if (j.contains("effector_points")) {
            for (const auto& row : j["effector_points"]) {
                if (row.size() != 4) throw FormatError("effector frame must list exactly 4 points");
                EffectorFrame frame;
                for (int i = 0; i < 4; ++i) {
                    auto p = row[i].get<std::vector<double>>();
                    if (p.size() != 2) throw FormatError("effector point must be [x, y]");
                    frame.points[i] = {p[0], p[1]};
                }
                demo.effector_points.push_back(frame);
            }
        }
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("manifest missing or malformed field: ") + e.what());
    }
    demo.validate();
    return demo;
}

void write_demonstration_manifest(const Demonstration& demo, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << demonstration_to_json(demo) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

Demonstration read_demonstration_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return demonstration_from_json(buf.str());
}

// ---- track file ----

std::string track_file_to_json(const TrackFile& tracks) {
    ordered_json j;
    j["schema_version"] = 1;
    j["num_points"] = tracks.num_points;
    j["num_frames"] = tracks.num_frames;
    if (!tracks.ids.empty()) j["ids"] = tracks.ids;
    ordered_json frames = ordered_json::array();
    for (int t = 0; t < tracks.num_frames; ++t) {
        ordered_json row = ordered_json::array();
        for (int i = 0; i < tracks.num_points; ++i) {
            const auto& p = tracks.positions[static_cast<std::size_t>(t) * tracks.num_points + i];
            const int vis = tracks.visibility[static_cast<std::size_t>(t) * tracks.num_points + i];
            row.push_back({p[0], p[1], vis});
        }
        frames.push_back(std::move(row));
    }
    j["points"] = std::move(frames);
    return j.dump();
}

TrackFile track_file_from_json(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw FormatError(std::string("track file is not valid JSON: ") + e.what());
    }
    TrackFile out;
    try {
        out.num_points = j.at("num_points").get<int>();
        out.num_frames = j.at("num_frames").get<int>();
        if (j.contains("ids")) out.ids = j["ids"].get<std::vector<int>>();
        const auto& frames = j.at("points");
        if (static_cast<int>(frames.size()) != out.num_frames)
            throw FormatError("track file frame count does not match num_frames");
        out.positions.reserve(static_cast<std::size_t>(out.num_frames) * out.num_points);
        out.visibility.reserve(out.positions.capacity());
        for (const auto& row : frames) {
            if (static_cast<int>(row.size()) != out.num_points)
                throw FormatError("track file row length does not match num_points");
            for (const auto& entry : row) {
                auto vals = entry.get<std::vector<double>>();
                if (vals.size() != 3) throw FormatError("track entry must be [x, y, visible]");
                out.positions.push_back({vals[0], vals[1]});
                out.visibility.push_back(vals[2] != 0.0 ? 1 : 0);
            }
        }
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("track file missing or malformed field: ") + e.what());
    }
    return out;
}

void write_track_file(const TrackFile& tracks, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << track_file_to_json(tracks) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

TrackFile read_track_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return track_file_from_json(buf.str());
}

}  // namespace a2a
