#pragma once

#include <functional>
#include <span>
#include <vector>

#include "maskboot/encoder.hpp"
#include "maskboot/image.hpp"
#include "maskboot/nn.hpp"
#include "maskboot/rng.hpp"

namespace maskboot::bootstrap {

using nn::MatrixXd;
using nn::VectorXd;
using encoder::Stage;

struct PrototypeBank {
    MatrixXd prototypes;  // K × D, unit-norm rows
    Stage stage = Stage::s2_b2;
    int epoch = 0;

    int k() const { return static_cast<int>(prototypes.rows()); }
    int dim() const { return static_cast<int>(prototypes.cols()); }
};

struct BootstrapConfig {
    int k_min = 2;
    int k_max = 32;
    Stage stage = Stage::s2_b2;
    int kmeans_iters = 50;
    int batch_images = 16;
    bool mini_batch = false;  // approximate mode; objective monotonicity not guaranteed
    int mini_batch_size = 1024;

    void validate() const;
};

// K uniform on [k_min, k_max], inclusive.
int sample_cluster_count(Rng& rng, int k_min, int k_max);

// Unit-normalizes a feature; vectors with norm below 1e-12 become
// normalize(x + 1e-6·𝟙) (the uniform direction for x = 0) and set *replaced.
VectorXd normalize_feature(const VectorXd& x, bool* replaced = nullptr);

struct ClusterFeatures {
    MatrixXd rows;  // (B·H·W) × D, row order (image, row, col)
    int height = 0;
    int width = 0;
    int replaced_rows = 0;
};
ClusterFeatures flatten_normalized(std::span<const FeatureMap> maps);
ClusterFeatures extract_cluster_features(const encoder::Encoder& enc, const nn::ParamSet& params,
                                         std::span<const FeatureMap> images, Stage stage);

struct KMeansOptions {
    int max_iter = 50;
    bool mini_batch = false;
    int mini_batch_size = 1024;
};

struct KMeansResult {
    PrototypeBank bank;
    std::vector<int> assignment;
    std::vector<double> objective;  // mean cosine to the assigned prototype, one entry per assignment pass
    int iterations = 0;             // prototype updates performed
    int reseeds = 0;
    bool converged = false;
};

// Spherical k-means on unit rows: k-means++ seeding with D² = 2(1 − cos)
// weights, then full-batch Lloyd iterations (argmax-cosine assignment,
// normalized-mean update) until the assignment repeats or max_iter updates.
// Empty clusters are reseeded to the row least similar to its current
// prototype. Throws InfeasibleClusteringError when K exceeds the row count.
KMeansResult spherical_kmeans(const MatrixXd& rows, int k, Rng& rng, const KMeansOptions& opts = {});

// Per-cell argmin Euclidean distance between the normalized cell feature and
// the prototypes; ties go to the lowest index.
LabelGrid assign_labels(const FeatureMap& features, const PrototypeBank& bank);
// argmax dot-product variant; equal to assign_labels for unit vectors up to ties.
LabelGrid assign_labels_cosine(const FeatureMap& features, const PrototypeBank& bank);

// Nearest-neighbour upsampling with half-pixel centres (boundary ties to the
// top/left source cell).
LabelGrid upsample_label_grid(const LabelGrid& labels, int height, int width);
MaskSet upsample_labels(const LabelGrid& labels, int height, int width);

struct BatchProvenance {
    int first_scene = 0;
    int scene_count = 0;
    int k = 0;
    double objective = 0.0;
    int iterations = 0;
    int replaced_rows = 0;
    bool k_resampled = false;
};

struct BootstrapResult {
    std::vector<MaskSet> masks;  // one per input image, in input order
    std::vector<BatchProvenance> batches;
};

// Clusters consecutive groups of cfg.batch_images images jointly; labels are
// local to each clustering batch.
BootstrapResult bootstrap_masks(const encoder::Encoder& enc, const nn::ParamSet& params,
                                std::span<const FeatureMap> images, const BootstrapConfig& cfg, Rng& rng);
// Same procedure over an arbitrary per-image feature extractor.
using FeatureExtractor = std::function<FeatureMap(const FeatureMap&)>;
BootstrapResult bootstrap_masks(const FeatureExtractor& extract, std::span<const FeatureMap> images,
                                const BootstrapConfig& cfg, Rng& rng);

}  // namespace maskboot::bootstrap
