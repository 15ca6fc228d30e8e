#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "maskboot/image.hpp"
#include "maskboot/nn.hpp"
#include "maskboot/rng.hpp"

namespace maskboot::contrast {

using nn::MatrixXd;
using nn::VectorXd;

// Plurality vote of labels over each target cell's source footprint, weighted
// by exact area overlap. Ties go to the lower label.
LabelGrid downsample_labels(const LabelGrid& labels, int target_h, int target_w);

struct DownsampledMask {
    BinaryMask mask;
    bool empty = true;
};
// Cell active iff `label` wins the plurality vote over the cell's footprint.
DownsampledMask downsample_mask(const LabelGrid& labels, std::uint8_t label, int target_h, int target_w);
// Binary-grid form: inactive cells count as label 0, active cells as label 1.
DownsampledMask downsample_mask(const BinaryMask& mask, int target_h, int target_w);

// h = Σ m[i,j] F[:,i,j] / Σ m[i,j]. Throws EmptyMaskError for an empty mask.
VectorXd mask_pool(const FeatureMap& features, const BinaryMask& mask);
// Scatters d h back onto the map: dF[:,i,j] += m[i,j] · dh / Σ m.
void mask_pool_backward(const BinaryMask& mask, const VectorXd& grad_pooled, FeatureMap& grad_features);

struct PooledFeature {
    VectorXd h;
    std::uint8_t label = 0;
    int image = 0;
    BinaryMask mask;  // at feature resolution, kept for the backward pass
};

// Pools every label that survives downsampling of `labels` to the map's grid.
std::vector<PooledFeature> pool_all(const FeatureMap& features, const LabelGrid& labels, int image_id);

struct Anchor {
    int online = 0;              // column into ContrastBatch::online
    int positive = 0;            // column into ContrastBatch::target
    std::vector<int> negatives;  // columns into ContrastBatch::online
};

// Embeddings are stored column-wise; keys identify the (image, label) source of each column.
struct ContrastBatch {
    MatrixXd online;
    MatrixXd target;
    std::vector<std::pair<int, int>> online_keys;  // (image, label)
    std::vector<std::pair<int, int>> target_keys;
    std::vector<Anchor> anchors;
};

// One positive pair per (image, label) present in both key lists; `n_neg`
// negatives per anchor sampled without replacement from online columns with a
// different (image, label) (all of them when fewer exist). Returns nullopt for
// a batch without any positive pair.
std::optional<ContrastBatch> build_contrast_batch(MatrixXd online, std::vector<std::pair<int, int>> online_keys,
                                                  MatrixXd target, std::vector<std::pair<int, int>> target_keys,
                                                  Rng& rng, int n_neg);

struct ContrastResult {
    double loss = 0.0;
    MatrixXd grad_online;  // same shape as batch.online
    MatrixXd grad_target;
};

// Mean over anchors of −log softmax of the positive logit against its
// negatives, all logits divided by the temperature.
ContrastResult contrastive_loss(const ContrastBatch& batch, double temperature);

}  // namespace maskboot::contrast
