#include "maskboot/image.hpp"

#include <array>

namespace maskboot {

FeatureMap to_feature_map(const RgbImage& image) {
    FeatureMap out(3, image.height, image.width);
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c)
            for (int ch = 0; ch < 3; ++ch) out.at(ch, r, c) = image.at(r, c, ch) / 255.0;
    return out;
}

MaskSet MaskSet::from_masks(std::span<const LabeledMask> masks, int height, int width) {
    MASKBOOT_REQUIRE(is_partition(masks, height, width), "MaskSet::from_masks: masks do not form a partition");
    LabelGrid labels(height, width);
    for (const auto& m : masks)
        for (std::size_t i = 0; i < m.mask.size(); ++i)
            if (m.mask.values[i]) labels.values[i] = m.label;
    return MaskSet(std::move(labels));
}

std::vector<std::uint8_t> MaskSet::present_labels() const {
    std::array<bool, 256> seen{};
    for (auto v : labels_.values) seen[v] = true;
    std::vector<std::uint8_t> out;
    for (int l = 0; l < 256; ++l)
        if (seen[l]) out.push_back(static_cast<std::uint8_t>(l));
    return out;
}

BinaryMask MaskSet::mask_for(std::uint8_t label) const {
    BinaryMask m(labels_.height, labels_.width);
    for (std::size_t i = 0; i < labels_.size(); ++i) m.values[i] = labels_.values[i] == label ? 1 : 0;
    return m;
}

std::vector<LabeledMask> MaskSet::masks() const {
    std::vector<LabeledMask> out;
    for (auto l : present_labels()) out.push_back({l, mask_for(l)});
    return out;
}

bool is_partition(std::span<const LabeledMask> masks, int height, int width) {
    if (height <= 0 || width <= 0) return false;
    std::vector<int> cover(static_cast<std::size_t>(height) * width, 0);
    std::array<bool, 256> used{};
    for (const auto& m : masks) {
        if (m.mask.height != height || m.mask.width != width) return false;
        if (used[m.label]) return false;
        used[m.label] = true;
        bool any = false;
        for (std::size_t i = 0; i < cover.size(); ++i) {
            if (m.mask.values[i] > 1) return false;
            if (m.mask.values[i]) {
                ++cover[i];
                any = true;
            }
        }
        if (!any) return false;
    }
    for (int c : cover)
        if (c != 1) return false;
    return true;
}

bool is_partition(const MaskSet& set) {
    const auto masks = set.masks();
    return is_partition(masks, set.height(), set.width());
}

}  // namespace maskboot
