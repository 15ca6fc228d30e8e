#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "maskboot/errors.hpp"

namespace maskboot {

// Row-major H×W grid.
template <class T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    T& operator()(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    const T& operator()(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return values.size(); }

    bool operator==(const Grid&) const = default;
};

using LabelGrid = Grid<std::uint8_t>;
using BinaryMask = Grid<std::uint8_t>;  // values 0/1

// 8-bit RGB, interleaved.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

    std::uint8_t& at(int r, int c, int ch) { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
    std::uint8_t at(int r, int c, int ch) const { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }

    bool operator==(const RgbImage&) const = default;
};

// D×H×W activations stored as a D × (H·W) matrix; column index r·W + c.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    Eigen::MatrixXd data;

    FeatureMap() = default;
    FeatureMap(int d, int h, int w) : channels(d), height(h), width(w), data(Eigen::MatrixXd::Zero(d, h * w)) {}

    double& at(int ch, int r, int c) { return data(ch, r * width + c); }
    double at(int ch, int r, int c) const { return data(ch, r * width + c); }
    int cells() const { return height * width; }
    bool same_shape(const FeatureMap& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Converts an 8-bit image to a 3×H×W map with values in [0, 1].
FeatureMap to_feature_map(const RgbImage& image);

struct LabeledMask {
    std::uint8_t label = 0;
    BinaryMask mask;
};

// A partition of the grid, stored as one label per pixel. Every present label
// corresponds to exactly one non-empty binary mask.
class MaskSet {
public:
    MaskSet() = default;
    explicit MaskSet(LabelGrid labels) : labels_(std::move(labels)) {}

    // Builds from explicit binary masks; throws ContractError unless they are
    // pairwise disjoint, cover the grid and carry distinct labels.
    static MaskSet from_masks(std::span<const LabeledMask> masks, int height, int width);

    const LabelGrid& labels() const { return labels_; }
    int height() const { return labels_.height; }
    int width() const { return labels_.width; }

    // Sorted ascending.
    std::vector<std::uint8_t> present_labels() const;
    std::vector<LabeledMask> masks() const;
    BinaryMask mask_for(std::uint8_t label) const;

    bool operator==(const MaskSet&) const = default;

private:
    LabelGrid labels_;
};

// True iff the masks are pairwise disjoint, non-empty, cover every pixel of an
// h×w grid and carry distinct labels.
bool is_partition(std::span<const LabeledMask> masks, int height, int width);
bool is_partition(const MaskSet& set);

}  // namespace maskboot
