#include "maskboot/maskcontrast.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "maskboot/errors.hpp"

namespace maskboot::contrast {

LabelGrid downsample_labels(const LabelGrid& labels, int th, int tw) {
    const int H = labels.height, W = labels.width;
    MASKBOOT_REQUIRE(th >= 1 && tw >= 1 && th <= H && tw <= W, "downsample_labels: target must not exceed the source");
    LabelGrid out(th, tw);
    std::array<std::int64_t, 256> votes{};
    // Work in units where source pixel y spans [y·th, (y+1)·th) and target
    // cell i spans [i·H, (i+1)·H): overlaps are exact integers.
    for (int i = 0; i < th; ++i) {
        const std::int64_t cy0 = static_cast<std::int64_t>(i) * H, cy1 = cy0 + H;
        const int y_begin = static_cast<int>(cy0 / th), y_end = static_cast<int>((cy1 + th - 1) / th);
        for (int j = 0; j < tw; ++j) {
            const std::int64_t cx0 = static_cast<std::int64_t>(j) * W, cx1 = cx0 + W;
            const int x_begin = static_cast<int>(cx0 / tw), x_end = static_cast<int>((cx1 + tw - 1) / tw);
            votes.fill(0);
            for (int y = y_begin; y < std::min(y_end, H); ++y) {
                const std::int64_t oy = std::min<std::int64_t>(cy1, (y + 1LL) * th) - std::max<std::int64_t>(cy0, 1LL * y * th);
                if (oy <= 0) continue;
                for (int x = x_begin; x < std::min(x_end, W); ++x) {
                    const std::int64_t ox =
                        std::min<std::int64_t>(cx1, (x + 1LL) * tw) - std::max<std::int64_t>(cx0, 1LL * x * tw);
                    if (ox > 0) votes[labels(y, x)] += oy * ox;
                }
            }
            int best = 0;
            for (int l = 1; l < 256; ++l)
                if (votes[l] > votes[best]) best = l;
            out(i, j) = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

DownsampledMask downsample_mask(const LabelGrid& labels, std::uint8_t label, int th, int tw) {
    const LabelGrid small = downsample_labels(labels, th, tw);
    DownsampledMask out{BinaryMask(th, tw), true};
    for (std::size_t i = 0; i < small.size(); ++i) {
        out.mask.values[i] = small.values[i] == label ? 1 : 0;
        if (out.mask.values[i]) out.empty = false;
    }
    return out;
}

DownsampledMask downsample_mask(const BinaryMask& mask, int th, int tw) {
    LabelGrid labels(mask.height, mask.width);
    for (std::size_t i = 0; i < mask.size(); ++i) labels.values[i] = mask.values[i] ? 1 : 0;
    return downsample_mask(labels, 1, th, tw);
}

VectorXd mask_pool(const FeatureMap& features, const BinaryMask& mask) {
    MASKBOOT_REQUIRE(mask.height == features.height && mask.width == features.width,
                     "mask_pool: mask and feature map differ in size");
    VectorXd acc = VectorXd::Zero(features.channels);
    double count = 0.0;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask(r, c)) {
                acc += features.data.col(r * features.width + c);
                count += 1.0;
            }
    if (count == 0.0) throw EmptyMaskError("mask_pool: mask has no active cell");
    return acc / count;
}

void mask_pool_backward(const BinaryMask& mask, const VectorXd& grad_pooled, FeatureMap& grad_features) {
    double count = 0.0;
    for (auto v : mask.values) count += v ? 1.0 : 0.0;
    MASKBOOT_REQUIRE(count > 0.0, "mask_pool_backward: empty mask");
    const VectorXd share = grad_pooled / count;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask(r, c)) grad_features.data.col(r * grad_features.width + c) += share;
}

std::vector<PooledFeature> pool_all(const FeatureMap& features, const LabelGrid& labels, int image_id) {
    const LabelGrid small = (labels.height == features.height && labels.width == features.width)
                                ? labels
                                : downsample_labels(labels, features.height, features.width);
    std::array<bool, 256> present{};
    for (auto v : small.values) present[v] = true;
    std::vector<PooledFeature> out;
    for (int l = 0; l < 256; ++l) {
        if (!present[l]) continue;
        PooledFeature p;
        p.label = static_cast<std::uint8_t>(l);
        p.image = image_id;
        p.mask = BinaryMask(small.height, small.width);
        for (std::size_t i = 0; i < small.size(); ++i) p.mask.values[i] = small.values[i] == l ? 1 : 0;
        p.h = mask_pool(features, p.mask);
        out.push_back(std::move(p));
    }
    return out;
}

std::optional<ContrastBatch> build_contrast_batch(MatrixXd online, std::vector<std::pair<int, int>> online_keys,
                                                  MatrixXd target, std::vector<std::pair<int, int>> target_keys,
                                                  Rng& rng, int n_neg) {
    MASKBOOT_REQUIRE(online.cols() == static_cast<Eigen::Index>(online_keys.size()) &&
                         target.cols() == static_cast<Eigen::Index>(target_keys.size()),
                     "build_contrast_batch: key count does not match embedding count");
    MASKBOOT_REQUIRE(n_neg >= 0, "build_contrast_batch: n_neg must be non-negative");
    std::map<std::pair<int, int>, int> target_index;
    for (std::size_t j = 0; j < target_keys.size(); ++j)
        MASKBOOT_REQUIRE(target_index.emplace(target_keys[j], static_cast<int>(j)).second,
                         "build_contrast_batch: duplicate target key");

    ContrastBatch batch;
    std::vector<int> candidates;
    for (std::size_t i = 0; i < online_keys.size(); ++i) {
        const auto it = target_index.find(online_keys[i]);
        if (it == target_index.end()) continue;
        Anchor a;
        a.online = static_cast<int>(i);
        a.positive = it->second;
        candidates.clear();
        for (std::size_t k = 0; k < online_keys.size(); ++k)
            if (online_keys[k] != online_keys[i]) candidates.push_back(static_cast<int>(k));
        const int take = std::min<int>(n_neg, static_cast<int>(candidates.size()));
        for (int k = 0; k < take; ++k) {
            const auto pick = rng.uniform_int(k, static_cast<std::int64_t>(candidates.size()) - 1);
            std::swap(candidates[k], candidates[static_cast<std::size_t>(pick)]);
        }
        a.negatives.assign(candidates.begin(), candidates.begin() + take);
        batch.anchors.push_back(std::move(a));
    }
    if (batch.anchors.empty()) return std::nullopt;
    batch.online = std::move(online);
    batch.target = std::move(target);
    batch.online_keys = std::move(online_keys);
    batch.target_keys = std::move(target_keys);
    return batch;
}

ContrastResult contrastive_loss(const ContrastBatch& batch, double temperature) {
    MASKBOOT_REQUIRE(temperature > 0.0, "contrastive_loss: temperature must be positive");
    MASKBOOT_REQUIRE(batch.online.rows() == batch.target.rows(), "contrastive_loss: embedding dimension mismatch");
    ContrastResult res;
    res.grad_online = MatrixXd::Zero(batch.online.rows(), batch.online.cols());
    res.grad_target = MatrixXd::Zero(batch.target.rows(), batch.target.cols());
    if (batch.anchors.empty()) return res;
    const double inv_t = 1.0 / temperature;
    const double scale = 1.0 / static_cast<double>(batch.anchors.size());

    std::vector<double> logits;
    for (const auto& a : batch.anchors) {
        const auto q = batch.online.col(a.online);
        logits.assign(1 + a.negatives.size(), 0.0);
        logits[0] = q.dot(batch.target.col(a.positive)) * inv_t;
        for (std::size_t n = 0; n < a.negatives.size(); ++n) logits[n + 1] = q.dot(batch.online.col(a.negatives[n])) * inv_t;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        const double log_z = mx + std::log(z);
        res.loss += scale * (log_z - logits[0]);

        // d loss / d logit_k = softmax_k − [k == 0]
        const double g0 = (std::exp(logits[0] - log_z) - 1.0) * scale * inv_t;
        res.grad_online.col(a.online) += g0 * batch.target.col(a.positive);
        res.grad_target.col(a.positive) += g0 * q;
        for (std::size_t n = 0; n < a.negatives.size(); ++n) {
            const double gn = std::exp(logits[n + 1] - log_z) * scale * inv_t;
            res.grad_online.col(a.online) += gn * batch.online.col(a.negatives[n]);
            res.grad_online.col(a.negatives[n]) += gn * q;
        }
    }
    return res;
}

}  // namespace maskboot::contrast
