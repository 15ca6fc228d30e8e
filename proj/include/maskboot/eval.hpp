#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maskboot/encoder.hpp"
#include "maskboot/image.hpp"
#include "maskboot/rng.hpp"
#include "maskboot/scenegen.hpp"

namespace maskboot::eval {

// Minimum-cost assignment for an n × m cost matrix with n ≤ m; returns the
// column chosen for each row.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

struct Matching {
    std::vector<std::uint8_t> gt_labels;    // present ground-truth labels, ascending
    std::vector<int> matched_pred;           // predicted label per gt label, -1 when unmatched
    std::vector<double> iou;                 // per gt label
    double miou = 0.0;
};

// One-to-one matching maximizing total intersection between ground-truth
// classes and predicted labels; mIoU averages IoU over the ground-truth
// classes present, unmatched classes scoring 0.
Matching hungarian_match(const MaskSet& pred, const MaskSet& gt);
double hungarian_miou(const MaskSet& pred, const MaskSet& gt);

struct MaskQualityReport {
    int epoch = 0;
    std::vector<double> per_scene;
    double mean_miou = 0.0;
    double mean_labels = 0.0;  // mean number of predicted labels per scene
    int min_labels = 0;
    int max_labels = 0;
};
MaskQualityReport mask_quality(std::span<const MaskSet> pred, std::span<const MaskSet> gt, int epoch);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

enum class MaskKind { bootstrap, random_crop, grid, ground_truth };
const char* mask_kind_name(MaskKind k);
MaskKind parse_mask_kind(const std::string& name);  // ConfigError when unknown

// random_crop: one mask over the whole image; grid: fixed 5×5 tiling;
// ground_truth: the scene's own labels. `bootstrap` is not a baseline.
MaskSet baseline_masks(MaskKind kind, const MaskSet& gt);
MaskSet grid_masks(int height, int width, int cells = 5);

struct ProbeConfig {
    encoder::Stage stage = encoder::Stage::s2_b2;
    int train_scenes = 256;
    int test_scenes = 128;
    int pixels_per_scene = 256;  // sampled training pixels per train scene
    int steps = 300;             // full-batch Adam steps
    double lr = 0.05;
    double weight_decay = 1e-4;

    void validate() const;
};

struct ProbeData {
    std::vector<FeatureMap> train_images, test_images;
    std::vector<LabelGrid> train_labels, test_labels;
    int num_classes = 0;
};
// Held-out scenes drawn from their own seed stream, independent of the training set.
ProbeData make_probe_data(std::uint64_t seed, const scenegen::SceneConfig& scene_cfg, const ProbeConfig& cfg);

struct ProbeReport {
    int epoch = 0;
    double accuracy = 0.0;
    double miou = 0.0;
    double train_loss = 0.0;
};

// Upsamples frozen stage features bilinearly to image size and fits a
// per-pixel softmax classifier on standardized features.
ProbeReport linear_probe(const encoder::Encoder& enc, const nn::ParamSet& params, const ProbeData& data,
                         const ProbeConfig& cfg, Rng& rng);

struct ReportSummary {
    int runs = 0;
    int eval_rows = 0;
    int bootstrap_rows = 0;
    int plots = 0;
    std::vector<double> probe_plot_x, mask_plot_x;  // x ticks of each plot, empty when not drawn
    std::vector<std::string> warnings;
};

// Reads metrics.jsonl from `runs_dir` itself or from each immediate
// subdirectory; writes CSV tables and PNG plots into `out_dir`. Throws
// FormatError naming file and line for a malformed record.
ReportSummary emit_report(const std::filesystem::path& runs_dir, const std::filesystem::path& out_dir);

}  // namespace maskboot::eval
