#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "skipdet/boxes.hpp"
#include "skipdet/image_io.hpp"
#include "skipdet/rng.hpp"

namespace skipdet::data {

// Shapes-on-texture scene generator: discs (class 1) and filled rectangles
// (class 2) on a noisy gradient background. Box coordinates are in pixels.
struct SceneSpec {
    int height = 96;
    int width = 128;
    int num_classes = 2;  // foreground classes, ids 1..num_classes
    int min_objects = 1;
    int max_objects = 3;
    float empty_fraction = 0.4f;
    int min_object_px = 8;  // smallest rendered extent
    int max_object_px = 0;  // 0 = min(height, width) / 3
    float noise_stddev = 5.0f;

    void validate() const;  // throws std::invalid_argument
    int resolved_max_object_px() const;
};

struct AnnotatedImage {
    Image image;
    std::vector<GroundTruthBox> boxes;  // pixel coords; empty = blank frame
};

struct Dataset {
    SceneSpec spec;
    std::uint64_t seed = 0;
    std::vector<AnnotatedImage> items;
};

// Exactly round(n_images * empty_fraction) frames carry zero boxes; each
// frame is rendered from its own stream (seed XOR index) so any subset can
// be regenerated independently.
Dataset generate_dataset(const SceneSpec& spec, int n_images, std::uint64_t seed);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct Crop {
    Box rect;     // region in source-image pixel coords
    Image image;  // the cropped pixels
    std::vector<GroundTruthBox> boxes;  // remapped into crop coords
};

// Object-free crop covering 40-70% of the image area with zero overlap with
// every box; rejection-sampled, nullopt after 100 failed attempts.
std::optional<Crop> sample_negative_crop(const Image& image,
                                         const std::vector<GroundTruthBox>& boxes, Rng& rng);

// Crop randomly placed around one object, guaranteed to contain it fully.
// Other boxes are clipped; clipped boxes keeping < min_retention of their
// area are dropped.
Crop sample_positive_crop(const Image& image, const std::vector<GroundTruthBox>& boxes, Rng& rng,
                          float min_retention = 0.25f);

struct Letterboxed {
    Image image;
    float scale = 1.0f;
    float pad_x = 0.0f;  // left pad in target pixels
    float pad_y = 0.0f;

    Box to_target(const Box& b) const;    // source coords -> letterboxed coords
    Box to_source(const Box& b) const;    // inverse
};

// Aspect-preserving resize onto a mid-gray canvas with symmetric padding.
Letterboxed letterbox(const Image& image, int target_h, int target_w);

struct Tile {
    int row = 0, col = 0;
    Image image;
    std::vector<GroundTruthBox> boxes;  // tile-local pixel coords
};

// Exact partition into (H/tile_h) x (W/tile_w) tiles; boxes are clipped into
// each tile they touch and dropped when the clipped area falls below
// min_retention of the original. Throws when dimensions do not divide.
std::vector<Tile> tile_image(const Image& image, const std::vector<GroundTruthBox>& boxes,
                             int tile_h, int tile_w, float min_retention = 0.25f);

}  // namespace skipdet::data
