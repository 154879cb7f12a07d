#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scribble/grid.hpp"
#include "scribble/losses.hpp"
#include "scribble/rng.hpp"

namespace scribble::data {

namespace fs = std::filesystem;

// 8-bit raster, interleaved row-major (H x W x C), C in {1, 3}.
struct Raster {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int i, int j, int c = 0) { return pixels[(static_cast<std::size_t>(i) * width + j) * channels + c]; }
    std::uint8_t at(int i, int j, int c = 0) const { return pixels[(static_cast<std::size_t>(i) * width + j) * channels + c]; }

    friend bool operator==(const Raster&, const Raster&) = default;
};

bool png_supported();

// Format chosen from the file's magic bytes: binary PNM (P5/P6) or PNG.
Raster read_raster(const fs::path& path);
// Format chosen from the extension: .png, or .pgm/.ppm/.pnm.
void write_raster(const fs::path& path, const Raster& raster);

// C x H x W grid with values v / 255.
Grid raster_to_grid(const Raster& raster);
// Values in [0,1] rounded to the nearest multiple of 1/255.
Raster grid_to_raster(const Grid& grid);

// 255 -> target, 0 -> background, anything else -> unknown.
losses::ScribbleMap raster_to_scribble(const Raster& raster);
// Unknown is written as 128.
Raster scribble_to_raster(const losses::ScribbleMap& scribble);

// Binary H x W mask: pixels >= 128 are 1.
Grid raster_to_mask(const Raster& raster);
Raster mask_to_raster(const Grid& mask);

struct Sample {
    Grid image;  // C x H x W in [0,1]
    losses::ScribbleMap scribble;
    std::optional<Grid> gt;  // H x W binary
    std::string id;
};

Sample load_sample(const fs::path& image, const fs::path& scribble, const std::optional<fs::path>& gt = std::nullopt, std::string id = {});
void save_sample(const Sample& sample, const fs::path& image, const fs::path& scribble, const std::optional<fs::path>& gt = std::nullopt);

struct ManifestEntry {
    fs::path image;
    fs::path scribble;
    std::optional<fs::path> gt;
    std::string id;
};

// One sample per line: image, scribble, gt ("-" for none), id, tab-separated.
// '#' starts a comment. Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries);
std::vector<Sample> load_dataset(const fs::path& manifest);

struct SynthConfig {
    int size = 32;
    int channels = 3;
    double background_mean = 0.2;
    double blob_mean = 0.8;
    double distractor_mean = 0.5;
    double noise_sigma = 0.05;
    int min_blobs = 1;
    int max_blobs = 3;
    double distractor_probability = 0.5;
    double min_blob_fraction = 0.05;
    double max_blob_fraction = 0.35;

    void validate() const;
};

// One scene, fully determined by the rng state.
Sample generate_scene(const SynthConfig& config, RngState& rng, std::string id);

// Writes count scenes under out_dir (images/, scribbles/, gt/) plus
// out_dir/manifest.tsv and returns the manifest entries.
std::vector<ManifestEntry> generate_synthetic(int count, const SynthConfig& config, RngState rng, const fs::path& out_dir);

struct CropWindow {
    int top = 0;
    int left = 0;
};
CropWindow draw_crop(int height, int width, int crop, RngState& rng);
Sample crop_sample(const Sample& sample, CropWindow window, int crop);
Sample random_crop(const Sample& sample, int crop, RngState& rng);

}  // namespace scribble::data
