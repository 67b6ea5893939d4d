#include "motionood/grid_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "motionood/errors.hpp"

namespace motionood {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open " + path.string());
    }
    return is;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot create " + path.string());
    }
    return os;
}

void finish(std::ofstream& os, const fs::path& path) {
    os.flush();
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is, const std::string& what) {
    std::string tok;
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (std::isspace(ch)) {
            ch = is.get();
        } else {
            break;
        }
    }
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(static_cast<char>(ch));
        ch = is.get();
    }
    if (tok.empty()) {
        throw FormatError(what + ": truncated header");
    }
    // the single whitespace byte after the last header field has been consumed
    return tok;
}

std::size_t header_uint(std::istream& is, const std::string& what) {
    const std::string tok = header_token(is, what);
    if (!std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        throw FormatError(what + ": non-numeric header field '" + tok + "'");
    }
    return std::stoul(tok);
}

std::uint8_t quantize(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Grid read_pgm(const fs::path& path) {
    auto is = open_in(path);
    const std::string what = "pgm " + path.string();
    if (header_token(is, what) != "P5") {
        throw FormatError(what + ": not a binary P5 file");
    }
    const std::size_t width = header_uint(is, what);
    const std::size_t height = header_uint(is, what);
    const std::size_t maxval = header_uint(is, what);
    if (width == 0 || height == 0) {
        throw FormatError(what + ": zero dimension");
    }
    if (maxval != 255) {
        throw FormatError(what + ": maxval must be 255");
    }
    std::vector<std::uint8_t> bytes(width * height);
    detail::read_exact(is, bytes.data(), bytes.size(), what);
    std::vector<float> values(bytes.size());
    std::transform(bytes.begin(), bytes.end(), values.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    return Grid(1, height, width, std::move(values));
}

void write_pgm(const fs::path& path, const Grid& grid) {
    if (grid.channels() != 1) {
        throw ShapeError("write_pgm: expected a single-channel grid, got " + grid.shape_string());
    }
    auto os = open_out(path);
    os << "P5\n" << grid.width() << ' ' << grid.height() << "\n255\n";
    std::vector<std::uint8_t> bytes(grid.size());
    std::transform(grid.data().begin(), grid.data().end(), bytes.begin(), quantize);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    finish(os, path);
}

void write_ppm(const fs::path& path, const Grid& rgb) {
    if (rgb.channels() != 3) {
        throw ShapeError("write_ppm: expected a 3-channel grid, got " + rgb.shape_string());
    }
    auto os = open_out(path);
    os << "P6\n" << rgb.width() << ' ' << rgb.height() << "\n255\n";
    std::vector<std::uint8_t> bytes;
    bytes.reserve(rgb.size());
    for (std::size_t y = 0; y < rgb.height(); ++y) {
        for (std::size_t x = 0; x < rgb.width(); ++x) {
            for (std::size_t c = 0; c < 3; ++c) bytes.push_back(quantize(rgb.at(c, y, x)));
        }
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    finish(os, path);
}

Grid read_fgrid(const fs::path& path) {
    auto is = open_in(path);
    const std::string what = "fgrid " + path.string();
    detail::expect_magic(is, "FGRD", what);
    const auto version = detail::read_u32(is, what);
    if (version != kFgridVersion) {
        throw FormatError(what + ": unsupported version " + std::to_string(version));
    }
    const std::size_t c = detail::read_u32(is, what);
    const std::size_t h = detail::read_u32(is, what);
    const std::size_t w = detail::read_u32(is, what);

    const auto file_bytes = fs::file_size(path);
    const std::size_t expected = kFgridHeaderBytes + c * h * w * sizeof(float);
    if (file_bytes != expected) {
        throw FormatError(what + ": header claims " + std::to_string(c) + "x" + std::to_string(h) + "x" +
                          std::to_string(w) + " (" + std::to_string(expected) + " bytes) but file has " +
                          std::to_string(file_bytes) + " bytes");
    }
    std::vector<float> values(c * h * w);
    detail::read_f32s(is, values, what);
    return Grid(c, h, w, std::move(values));
}

void write_fgrid(const fs::path& path, const Grid& grid) {
    auto os = open_out(path);
    detail::write_magic(os, "FGRD");
    detail::write_u32(os, kFgridVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(grid.channels()));
    detail::write_u32(os, static_cast<std::uint32_t>(grid.height()));
    detail::write_u32(os, static_cast<std::uint32_t>(grid.width()));
    detail::write_f32s(os, grid.data());
    finish(os, path);
}

std::string_view to_string(EpisodeLabel label) {
    return label == EpisodeLabel::InDistribution ? "id" : "ood";
}

void EpisodeManifest::validate() const {
    if (id.empty()) {
        throw ValidationError("manifest: empty id");
    }
    if (frame_paths.size() < 2) {
        throw ValidationError("manifest " + id + ": at least 2 frames required");
    }
    if (is_ood() && !onset_frame) {
        throw ValidationError("manifest " + id + ": OOD episode requires onset_frame");
    }
    if (!is_ood() && onset_frame) {
        throw ValidationError("manifest " + id + ": onset_frame is only allowed on OOD episodes");
    }
    if (onset_frame && *onset_frame >= frame_paths.size()) {
        throw ValidationError("manifest " + id + ": onset_frame out of range");
    }
    if (fps && !(std::isfinite(*fps) && *fps > 0.0)) {
        throw ValidationError("manifest " + id + ": fps must be positive");
    }
}

EpisodeManifest parse_manifest(std::string_view json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ValidationError("manifest: top level must be an object");
    }
    auto require = [&](const char* key) -> const json& {
        auto it = doc.find(key);
        if (it == doc.end()) {
            throw ValidationError(std::string("manifest: missing field '") + key + "'");
        }
        return *it;
    };

    EpisodeManifest m;
    const json& id = require("id");
    if (!id.is_string()) throw ValidationError("manifest: 'id' must be a string");
    m.id = id.get<std::string>();

    const json& frames = require("frames");
    if (!frames.is_array()) throw ValidationError("manifest: 'frames' must be an array");
    for (const auto& f : frames) {
        if (!f.is_string()) throw ValidationError("manifest: frame entries must be strings");
        fs::path p = f.get<std::string>();
        m.frame_paths.push_back(p.is_absolute() ? p : base_dir / p);
    }

    const json& label = require("label");
    if (label == "id") {
        m.label = EpisodeLabel::InDistribution;
    } else if (label == "ood") {
        m.label = EpisodeLabel::OutOfDistribution;
    } else {
        throw ValidationError("manifest: 'label' must be \"id\" or \"ood\"");
    }

    if (auto it = doc.find("onset_frame"); it != doc.end() && !it->is_null()) {
        if (!it->is_number_integer()) throw ValidationError("manifest: 'onset_frame' must be an integer");
        const auto v = it->get<long long>();
        if (v < 0) throw ValidationError("manifest: onset_frame out of range");
        m.onset_frame = static_cast<std::size_t>(v);
    }
    if (auto it = doc.find("fps"); it != doc.end() && !it->is_null()) {
        if (!it->is_number()) throw ValidationError("manifest: 'fps' must be a number");
        m.fps = it->get<double>();
    }
    m.validate();
    return m;
}

EpisodeManifest read_manifest(const fs::path& path) {
    auto is = open_in(path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_manifest(buf.str(), path.parent_path());
}

void write_manifest(const fs::path& path, const EpisodeManifest& manifest) {
    manifest.validate();
    const fs::path dir = path.parent_path();
    json doc;
    doc["id"] = manifest.id;
    json frames = json::array();
    for (const auto& p : manifest.frame_paths) {
        const fs::path rel = p.lexically_relative(dir);
        const bool inside = !rel.empty() && *rel.begin() != "..";
        frames.push_back((inside ? rel : p).generic_string());
    }
    doc["frames"] = std::move(frames);
    doc["label"] = std::string(to_string(manifest.label));
    if (manifest.onset_frame) doc["onset_frame"] = *manifest.onset_frame;
    if (manifest.fps) doc["fps"] = *manifest.fps;

    auto os = open_out(path);
    os << doc.dump(2) << '\n';
    finish(os, path);
}

std::vector<Grid> load_frames(const EpisodeManifest& manifest) {
    std::vector<Grid> frames;
    frames.reserve(manifest.frame_paths.size());
    for (const auto& p : manifest.frame_paths) {
        frames.push_back(read_pgm(p));
        if (!frames.front().same_shape(frames.back())) {
            throw ShapeError("episode " + manifest.id + ": frame " + p.string() + " has shape " +
                             frames.back().shape_string() + ", expected " + frames.front().shape_string());
        }
    }
    return frames;
}

}  // namespace motionood
