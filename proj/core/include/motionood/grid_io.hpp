#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "motionood/grid.hpp"

namespace motionood {

/// Reads a binary P5 PGM with maxval 255; values are scaled to [0, 1].
Grid read_pgm(const std::filesystem::path& path);

/// Writes a C=1 grid as P5, maxval 255. Values are clamped to [0, 1] and
/// rounded to the nearest 8-bit level.
void write_pgm(const std::filesystem::path& path, const Grid& grid);

/// Writes a C=3 grid with values in [0, 1] as binary P6, maxval 255.
void write_ppm(const std::filesystem::path& path, const Grid& rgb);

// FGRID: "FGRD", u32 version (1), u32 channels, u32 height, u32 width, then
// channels*height*width little-endian f32 values, channel-major.
inline constexpr std::uint32_t kFgridVersion = 1;
inline constexpr std::size_t kFgridHeaderBytes = 20;

Grid read_fgrid(const std::filesystem::path& path);
void write_fgrid(const std::filesystem::path& path, const Grid& grid);

enum class EpisodeLabel { InDistribution, OutOfDistribution };

std::string_view to_string(EpisodeLabel label);

struct EpisodeManifest {
    std::string id;
    std::vector<std::filesystem::path> frame_paths;
    EpisodeLabel label = EpisodeLabel::InDistribution;
    std::optional<std::size_t> onset_frame;
    std::optional<double> fps;

    /// Throws ValidationError on any broken invariant.
    void validate() const;
    bool is_ood() const { return label == EpisodeLabel::OutOfDistribution; }
};

/// Parses and validates a manifest document. Relative frame paths are
/// resolved against base_dir.
EpisodeManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir);

EpisodeManifest read_manifest(const std::filesystem::path& path);

/// Writes the manifest with frame paths made relative to the manifest's
/// directory when they live under it.
void write_manifest(const std::filesystem::path& path, const EpisodeManifest& manifest);

/// Loads every frame of an episode (C=1 grids, identical dimensions).
std::vector<Grid> load_frames(const EpisodeManifest& manifest);

}  // namespace motionood
