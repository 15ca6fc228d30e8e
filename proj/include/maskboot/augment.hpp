#pragma once

#include <filesystem>
#include <utility>

#include "maskboot/image.hpp"
#include "maskboot/rng.hpp"

namespace maskboot::augment {

// Parameter ranges of one augmentation pipeline. Defaults follow a scaled-down
// BYOL recipe; view_a()/view_b() differ only in blur probability.
struct PipelineSpec {
    double crop_scale_min = 0.3;
    double crop_scale_max = 1.0;
    double aspect_min = 3.0 / 4.0;
    double aspect_max = 4.0 / 3.0;
    double flip_p = 0.5;
    double jitter_p = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.2;
    double grayscale_p = 0.2;
    double blur_p = 1.0;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 1.0;
    int output_size = 64;

    void validate() const;

    static PipelineSpec view_a() { return {}; }
    static PipelineSpec view_b() {
        PipelineSpec s;
        s.blur_p = 0.1;
        return s;
    }
    // Full-frame crop, no flip, no photometrics.
    static PipelineSpec identity(int output_size);
};

struct Transform {
    // Crop rectangle in normalized image coordinates, inside [0,1]².
    double crop_x = 0.0, crop_y = 0.0, crop_w = 1.0, crop_h = 1.0;
    bool flip = false;
    double brightness = 1.0;  // multiplicative factors, 1 = unchanged
    double contrast = 1.0;
    double saturation = 1.0;
    bool grayscale = false;
    double blur_sigma = 0.0;  // 0 = no blur
    int out_height = 64;
    int out_width = 64;

    bool has_photometric() const {
        return brightness != 1.0 || contrast != 1.0 || saturation != 1.0 || grayscale || blur_sigma > 0.0;
    }
    Transform geometric_only() const;
    bool operator==(const Transform&) const = default;
};

// Throws ConfigError when a range is empty (min > max) or out of domain.
Transform sample_transform(Rng& rng, const PipelineSpec& spec);

// Source pixel feeding output pixel (r, c) under nearest-neighbour resampling.
// Output pixel centres map through the (optionally flipped) crop into source
// pixel space; a centre landing exactly on a pixel boundary resolves to the
// top/left neighbour.
std::pair<int, int> source_pixel(const Transform& tf, int in_height, int in_width, int r, int c);

struct View {
    FeatureMap image;  // 3×H×W, values in [0,1]
    MaskSet masks;
};

// Geometric ops act identically on image (bilinear) and masks (nearest
// neighbour); photometric ops touch only the image. Labels absent from the
// view simply do not appear in the output MaskSet.
View apply(const Transform& tf, const FeatureMap& image, const MaskSet& masks);
FeatureMap apply_image(const Transform& tf, const FeatureMap& image);
MaskSet apply_masks(const Transform& tf, const MaskSet& masks);

struct ViewPair {
    View first;
    View second;
    Transform first_tf;
    Transform second_tf;
};

// With shared_geometry the second view reuses the first's crop and flip and
// samples only its own photometrics.
ViewPair make_view_pair(Rng& rng, const PipelineSpec& a, const PipelineSpec& b, const FeatureMap& image,
                        const MaskSet& masks, bool shared_geometry);

RgbImage to_rgb(const FeatureMap& image);
// Writes {stem}_image.png and {stem}_mask.png.
void dump_view(const View& view, const std::filesystem::path& dir, const std::string& stem);

}  // namespace maskboot::augment
