#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maskboot/image.hpp"

namespace maskboot::scenegen {

enum class ShapeKind : int { rectangle = 0, ellipse = 1, triangle = 2 };

const char* shape_name(ShapeKind kind);

struct SceneConfig {
    int image_size = 64;
    int min_objects = 2;
    int max_objects = 8;
    int num_classes = 12;  // non-background classes, ids 1..num_classes
    double noise_sigma = 0.05;
    double background_texture = 0.10;  // amplitude of the low-frequency background field
    double color_jitter = 0.06;        // per-object offset around the class color family
    int min_half_extent = 5;
    int max_half_extent = 16;

    void validate() const;
};

// Class id (1-based) → shape kind and color family. Class 0 is background.
struct ClassInfo {
    int class_id = 0;
    ShapeKind shape = ShapeKind::rectangle;
    int color_family = 0;
};
ClassInfo class_info(int class_id);
std::array<double, 3> family_color(int color_family);

// Geometry is snapped so every inside-test evaluates exactly in double
// precision: centers sit on pixel centers, radii are integers and triangle
// vertices lie on a quarter-pixel lattice.
struct ObjectSpec {
    int class_id = 0;
    ShapeKind shape = ShapeKind::rectangle;
    double cx = 0, cy = 0;  // pixel units, (0,0) is the top-left corner of the image
    double rx = 0, ry = 0;
    std::array<std::array<double, 2>, 3> vertices{};  // triangles only, (x, y)
    std::array<double, 3> color{};
};

// Pixel (r, c) is covered when its center (c + 0.5, r + 0.5) lies inside the shape
// (boundary inclusive).
bool covers(const ObjectSpec& object, int r, int c);

struct Scene {
    RgbImage image;
    LabelGrid gt_mask;
    int object_count = 0;
    std::uint64_t seed = 0;
    std::vector<ObjectSpec> objects;  // draw order; empty for scenes loaded from disk

    MaskSet gt_masks() const { return MaskSet(gt_mask); }
};

// Objects are painted in the order of Scene::objects; later objects occlude earlier ones.
Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

std::vector<std::uint64_t> scene_seeds(std::uint64_t dataset_seed, int count);
std::vector<Scene> generate_dataset(std::uint64_t dataset_seed, int count, const SceneConfig& cfg);

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    int scene_count = 0;
    int image_size = 0;
    SceneConfig config;
    std::vector<ClassInfo> shape_vocabulary;
    std::vector<std::uint64_t> seeds;
    std::vector<std::uint32_t> image_crc;
    std::vector<std::uint32_t> mask_crc;
};

// Layout: images/{id}.png, masks/{id}.png (8-bit indexed labels), manifest.json.
DatasetManifest write_dataset(std::span<const Scene> scenes, const SceneConfig& cfg,
                              const std::filesystem::path& dir);
// Throws FormatError on version or checksum mismatch and IoError on unreadable files;
// never returns a partial dataset.
std::vector<Scene> load_dataset(const std::filesystem::path& dir, DatasetManifest* manifest = nullptr);
DatasetManifest read_manifest(const std::filesystem::path& dir);

std::string scene_file_id(int index);

}  // namespace maskboot::scenegen
