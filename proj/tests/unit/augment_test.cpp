#include <doctest.h>

#include <cmath>

#include "maskboot/augment.hpp"
#include "maskboot/errors.hpp"
#include "run_fixtures.hpp"

using namespace maskboot;
using namespace maskboot::augment;

namespace {

// Pre-image of output pixel (r, c): centre mapped through the flipped crop,
// pixel k owning (k-1, k] after the shift so boundary ties go top/left.
std::pair<int, int> oracle_source(const Transform& t, int h, int w, int r, int c) {
    const int cc = t.flip ? t.out_width - 1 - c : c;
    const double y = (t.crop_y + t.crop_h * (r + 0.5) / t.out_height) * h;
    const double x = (t.crop_x + t.crop_w * (cc + 0.5) / t.out_width) * w;
    auto idx = [](double v, int n) {
        int k = static_cast<int>(std::floor(v));
        if (k == v) --k;
        return std::clamp(k, 0, n - 1);
    };
    return {idx(y, h), idx(x, w)};
}

// Channel 0 encodes the label so geometric alignment of image and masks can be read back.
FeatureMap label_image(const LabelGrid& g) {
    FeatureMap img(3, g.height, g.width);
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) img.at(0, r, c) = g(r, c) / 16.0;
    return img;
}

}  // namespace

TEST_CASE("degenerate specs give degenerate transforms") {
    Rng rng(1);
    auto spec = PipelineSpec::view_a();
    spec.flip_p = 0.0;
    for (int i = 0; i < 200; ++i) CHECK_FALSE(sample_transform(rng, spec).flip);
    const auto id = sample_transform(rng, PipelineSpec::identity(32));
    CHECK(id.crop_x == 0.0);
    CHECK(id.crop_w == 1.0);
    CHECK(id.crop_h == 1.0);
    CHECK_FALSE(id.flip);
    CHECK_FALSE(id.has_photometric());
}

TEST_CASE("flip frequency matches its probability") {
    Rng rng(2);
    auto spec = PipelineSpec::view_a();
    const int n = 10000;
    int flips = 0;
    for (int i = 0; i < n; ++i) flips += sample_transform(rng, spec).flip;
    const double sd = std::sqrt(n * spec.flip_p * (1 - spec.flip_p));
    CHECK(std::abs(flips - n * spec.flip_p) < 3 * sd);
}

TEST_CASE("sampled parameters stay in range") {
    Rng rng(3);
    const auto spec = PipelineSpec::view_b();
    for (int i = 0; i < 2000; ++i) {
        const auto t = sample_transform(rng, spec);
        CHECK(t.crop_x >= 0.0);
        CHECK(t.crop_y >= 0.0);
        CHECK(t.crop_x + t.crop_w <= 1.0 + 1e-12);
        CHECK(t.crop_y + t.crop_h <= 1.0 + 1e-12);
        CHECK(t.crop_w * t.crop_h >= spec.crop_scale_min - 1e-12);
        CHECK(t.brightness >= 1 - spec.brightness);
        CHECK(t.brightness <= 1 + spec.brightness);
        CHECK((t.blur_sigma == 0.0 || (t.blur_sigma >= spec.blur_sigma_min && t.blur_sigma <= spec.blur_sigma_max)));
    }
}

TEST_CASE("empty ranges are configuration errors") {
    Rng rng(4);
    auto spec = PipelineSpec::view_a();
    spec.crop_scale_min = 0.9;
    spec.crop_scale_max = 0.5;
    CHECK_THROWS_AS(sample_transform(rng, spec), ConfigError);
    spec = PipelineSpec::view_a();
    spec.blur_sigma_min = 2.0;
    CHECK_THROWS_AS(sample_transform(rng, spec), ConfigError);
}

TEST_CASE("identity transform returns its input") {
    Rng rng(5);
    const auto img = fixtures::random_image(rng, 24);
    const MaskSet m(fixtures::blocky_labels(rng, 24, 5, 4));
    Transform id;
    id.out_height = id.out_width = 24;
    const auto v = apply(id, img, m);
    CHECK(v.image.data.isApprox(img.data, 1e-15));
    CHECK(v.masks == m);
}

TEST_CASE("flip applied twice is the identity") {
    Rng rng(6);
    const auto img = fixtures::random_image(rng, 20);
    const MaskSet m(fixtures::blocky_labels(rng, 20, 3, 6));
    Transform f;
    f.flip = true;
    f.out_height = f.out_width = 20;
    const auto once = apply(f, img, m);
    CHECK_FALSE(once.masks == m);
    const auto twice = apply(f, once.image, once.masks);
    CHECK(twice.masks == m);
    CHECK((twice.image.data - img.data).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("pixel-aligned crop equals an array slice") {
    Rng rng(7);
    const LabelGrid g = fixtures::blocky_labels(rng, 64, 3, 7);
    const MaskSet m(g);
    Transform t;
    t.crop_x = 16.0 / 64;
    t.crop_y = 8.0 / 64;
    t.crop_w = t.crop_h = 32.0 / 64;
    t.out_height = t.out_width = 32;
    const auto out = apply_masks(t, m);
    for (std::uint8_t label : m.present_labels()) {
        const auto want = m.mask_for(label);
        bool any = false;
        for (int r = 0; r < 32; ++r)
            for (int c = 0; c < 32; ++c) {
                const bool in = want(8 + r, 16 + c) != 0;
                any |= in;
                CHECK((out.labels()(r, c) == label) == in);
            }
        const auto present = out.present_labels();
        CHECK((std::find(present.begin(), present.end(), label) != present.end()) == any);
    }
}

TEST_CASE("alignment and partition hold on random transforms") {
    Rng rng(8);
    const auto spec = PipelineSpec::view_a();
    for (int trial = 0; trial < 1000; ++trial) {
        const int size = 16 + 8 * static_cast<int>(rng.uniform_int(0, 3));
        const LabelGrid g = fixtures::blocky_labels(rng, size, static_cast<int>(rng.uniform_int(2, 6)), 8);
        const MaskSet m(g);
        auto s = spec;
        s.output_size = 16;
        const auto t = sample_transform(rng, s);
        const auto img = label_image(g);
        const auto view = apply(t.geometric_only(), img, m);
        REQUIRE(is_partition(view.masks));
        for (int probe = 0; probe < 8; ++probe) {
            const int r = static_cast<int>(rng.uniform_int(0, 15)), c = static_cast<int>(rng.uniform_int(0, 15));
            const auto [sr, sc] = oracle_source(t, size, size, r, c);
            REQUIRE(view.masks.labels()(r, c) == g(sr, sc));
            // Where the bilinear footprint sits inside one label block, the image agrees too.
            bool flat = true;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = std::clamp(sr + dr, 0, size - 1), cc = std::clamp(sc + dc, 0, size - 1);
                    flat &= g(rr, cc) == g(sr, sc);
                }
            if (flat) REQUIRE(std::abs(view.image.at(0, r, c) - g(sr, sc) / 16.0) < 1e-12);
        }
        // Photometric settings never touch the masks.
        CHECK(apply_masks(t, m) == view.masks);
    }
}

TEST_CASE("shared geometry pairs reuse crop and flip") {
    Rng rng(9);
    const auto img = fixtures::random_image(rng, 32);
    const MaskSet m(fixtures::blocky_labels(rng, 32, 4, 5));
    auto a = PipelineSpec::view_a(), b = PipelineSpec::view_b();
    a.output_size = b.output_size = 16;
    const auto p = make_view_pair(rng, a, b, img, m, true);
    CHECK(p.first_tf.geometric_only().crop_x == p.second_tf.crop_x);
    CHECK(p.first_tf.flip == p.second_tf.flip);
    CHECK(p.first.masks == p.second.masks);
}
