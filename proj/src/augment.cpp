#include "maskboot/augment.hpp"

#include <algorithm>
#include <cmath>

#include "maskboot/errors.hpp"
#include "maskboot/png_io.hpp"

namespace maskboot::augment {
namespace {

void check_range(double lo, double hi, const char* name) {
    if (!(lo <= hi)) throw ConfigError(std::string("augment.") + name + ": empty range (min > max)");
}

void check_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment.") + name + " must lie in [0,1]");
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

// Separable Gaussian blur with edge clamping, radius ceil(3σ).
void gaussian_blur(FeatureMap& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (auto& w : kernel) w /= total;
    const int h = img.height, w = img.width;
    FeatureMap tmp(img.channels, h, w);
    for (int ch = 0; ch < img.channels; ++ch) {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(ch, r, std::clamp(c + k, 0, w - 1));
                tmp.at(ch, r, c) = acc;
            }
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(ch, std::clamp(r + k, 0, h - 1), c);
                img.at(ch, r, c) = acc;
            }
    }
}

// Continuous source coordinates (pixel units, pixel k spans [k, k+1)) of the
// centre of output pixel (r, c).
std::pair<double, double> source_coord(const Transform& tf, int in_h, int in_w, int r, int c) {
    const int col = tf.flip ? tf.out_width - 1 - c : c;
    const double u = tf.crop_x + (col + 0.5) / tf.out_width * tf.crop_w;
    const double v = tf.crop_y + (r + 0.5) / tf.out_height * tf.crop_h;
    return {v * in_h, u * in_w};
}

int nearest_index(double coord, int extent) {
    return std::clamp(static_cast<int>(std::ceil(coord)) - 1, 0, extent - 1);
}

}  // namespace

void PipelineSpec::validate() const {
    check_range(crop_scale_min, crop_scale_max, "crop_scale");
    if (crop_scale_min <= 0.0 || crop_scale_max > 1.0) throw ConfigError("augment.crop_scale must lie in (0,1]");
    check_range(aspect_min, aspect_max, "aspect");
    if (aspect_min <= 0.0) throw ConfigError("augment.aspect_min must be positive");
    check_probability(flip_p, "flip_p");
    check_probability(jitter_p, "jitter_p");
    check_probability(grayscale_p, "grayscale_p");
    check_probability(blur_p, "blur_p");
    if (brightness < 0 || brightness >= 1 || contrast < 0 || contrast >= 1 || saturation < 0 || saturation >= 1)
        throw ConfigError("augment jitter strengths must lie in [0,1)");
    check_range(blur_sigma_min, blur_sigma_max, "blur_sigma");
    if (blur_sigma_min <= 0.0) throw ConfigError("augment.blur_sigma_min must be positive");
    if (output_size < 8) throw ConfigError("augment.output_size must be >= 8");
}

PipelineSpec PipelineSpec::identity(int output_size) {
    PipelineSpec s;
    s.crop_scale_min = s.crop_scale_max = 1.0;
    s.aspect_min = s.aspect_max = 1.0;
    s.flip_p = s.jitter_p = s.grayscale_p = s.blur_p = 0.0;
    s.output_size = output_size;
    return s;
}

Transform Transform::geometric_only() const {
    Transform t = *this;
    t.brightness = t.contrast = t.saturation = 1.0;
    t.grayscale = false;
    t.blur_sigma = 0.0;
    return t;
}

Transform sample_transform(Rng& rng, const PipelineSpec& spec) {
    spec.validate();
    Transform tf;
    tf.out_height = tf.out_width = spec.output_size;

    bool placed = false;
    for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
        const double area = rng.uniform(spec.crop_scale_min, spec.crop_scale_max);
        const double log_ar = rng.uniform(std::log(spec.aspect_min), std::log(spec.aspect_max));
        const double ar = std::exp(log_ar);
        const double w = std::sqrt(area * ar);
        const double h = std::sqrt(area / ar);
        if (w <= 1.0 && h <= 1.0) {
            tf.crop_w = w;
            tf.crop_h = h;
            tf.crop_x = rng.uniform(0.0, 1.0 - w);
            tf.crop_y = rng.uniform(0.0, 1.0 - h);
            placed = true;
        }
    }
    if (!placed) {  // full frame always satisfies the minimum area
        tf.crop_x = tf.crop_y = 0.0;
        tf.crop_w = tf.crop_h = 1.0;
    }

    tf.flip = rng.bernoulli(spec.flip_p);
    if (rng.bernoulli(spec.jitter_p)) {
        tf.brightness = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
        tf.contrast = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
        tf.saturation = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation);
    }
    tf.grayscale = rng.bernoulli(spec.grayscale_p);
    if (rng.bernoulli(spec.blur_p)) tf.blur_sigma = rng.uniform(spec.blur_sigma_min, spec.blur_sigma_max);
    return tf;
}

std::pair<int, int> source_pixel(const Transform& tf, int in_h, int in_w, int r, int c) {
    const auto [sy, sx] = source_coord(tf, in_h, in_w, r, c);
    return {nearest_index(sy, in_h), nearest_index(sx, in_w)};
}

FeatureMap apply_image(const Transform& tf, const FeatureMap& image) {
    MASKBOOT_REQUIRE(image.channels == 3, "augment::apply: image must have 3 channels");
    FeatureMap out(3, tf.out_height, tf.out_width);
    const int h = image.height, w = image.width;
    for (int r = 0; r < tf.out_height; ++r) {
        for (int c = 0; c < tf.out_width; ++c) {
            auto [sy, sx] = source_coord(tf, h, w, r, c);
            const double fy = std::clamp(sy - 0.5, 0.0, h - 1.0);
            const double fx = std::clamp(sx - 0.5, 0.0, w - 1.0);
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double wy = fy - y0, wx = fx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const double top = (1 - wx) * image.at(ch, y0, x0) + wx * image.at(ch, y0, x1);
                const double bot = (1 - wx) * image.at(ch, y1, x0) + wx * image.at(ch, y1, x1);
                out.at(ch, r, c) = (1 - wy) * top + wy * bot;
            }
        }
    }
    if (!tf.has_photometric()) return out;

    const int n = out.cells();
    if (tf.brightness != 1.0) out.data *= tf.brightness;
    if (tf.contrast != 1.0) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += luma(out.data(0, i), out.data(1, i), out.data(2, i));
        mean /= n;
        out.data = (out.data.array() - mean) * tf.contrast + mean;
    }
    if (tf.saturation != 1.0) {
        for (int i = 0; i < n; ++i) {
            const double g = luma(out.data(0, i), out.data(1, i), out.data(2, i));
            for (int ch = 0; ch < 3; ++ch) out.data(ch, i) = g + tf.saturation * (out.data(ch, i) - g);
        }
    }
    if (tf.grayscale) {
        for (int i = 0; i < n; ++i) {
            const double g = luma(out.data(0, i), out.data(1, i), out.data(2, i));
            for (int ch = 0; ch < 3; ++ch) out.data(ch, i) = g;
        }
    }
    out.data = out.data.cwiseMax(0.0).cwiseMin(1.0);
    if (tf.blur_sigma > 0.0) gaussian_blur(out, tf.blur_sigma);
    return out;
}

MaskSet apply_masks(const Transform& tf, const MaskSet& masks) {
    LabelGrid out(tf.out_height, tf.out_width);
    for (int r = 0; r < tf.out_height; ++r)
        for (int c = 0; c < tf.out_width; ++c) {
            const auto [sr, sc] = source_pixel(tf, masks.height(), masks.width(), r, c);
            out(r, c) = masks.labels()(sr, sc);
        }
    return MaskSet(std::move(out));
}

View apply(const Transform& tf, const FeatureMap& image, const MaskSet& masks) {
    MASKBOOT_REQUIRE(image.height == masks.height() && image.width == masks.width(),
                     "augment::apply: image and masks differ in size");
    return {apply_image(tf, image), apply_masks(tf, masks)};
}

ViewPair make_view_pair(Rng& rng, const PipelineSpec& a, const PipelineSpec& b, const FeatureMap& image,
                        const MaskSet& masks, bool shared_geometry) {
    ViewPair p;
    p.first_tf = sample_transform(rng, a);
    p.second_tf = sample_transform(rng, b);
    if (shared_geometry) {
        p.second_tf.crop_x = p.first_tf.crop_x;
        p.second_tf.crop_y = p.first_tf.crop_y;
        p.second_tf.crop_w = p.first_tf.crop_w;
        p.second_tf.crop_h = p.first_tf.crop_h;
        p.second_tf.flip = p.first_tf.flip;
        p.second_tf.out_height = p.first_tf.out_height;
        p.second_tf.out_width = p.first_tf.out_width;
    }
    p.first = apply(p.first_tf, image, masks);
    p.second = apply(p.second_tf, image, masks);
    return p;
}

RgbImage to_rgb(const FeatureMap& image) {
    RgbImage out(image.height, image.width);
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c)
            for (int ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(image.at(ch, r, c), 0.0, 1.0) * 255.0));
    return out;
}

void dump_view(const View& view, const std::filesystem::path& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_png(dir / (stem + "_image.png"), to_rgb(view.image));
    write_png(dir / (stem + "_mask.png"), view.masks.labels());
}

}  // namespace maskboot::augment
