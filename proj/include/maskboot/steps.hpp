#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "maskboot/augment.hpp"
#include "maskboot/encoder.hpp"
#include "maskboot/maskcontrast.hpp"
#include "maskboot/optim.hpp"
#include "maskboot/rng.hpp"
#include "maskboot/vmf.hpp"

// One optimization step of either objective, split into a plan (everything
// random or discrete: views, negatives, cluster assignments) and a smooth
// objective of the parameters given that plan.
namespace maskboot::steps {

using encoder::Model;
using encoder::OnlineParams;
using encoder::Stage;
using encoder::TargetParams;
using nn::MatrixXd;

struct ViewBatch {
    std::vector<FeatureMap> first, second;
    std::vector<LabelGrid> first_labels, second_labels;  // empty when no masks were supplied
    std::vector<augment::Transform> first_tf, second_tf;

    int size() const { return static_cast<int>(first.size()); }
};

struct AugmentSetup {
    augment::PipelineSpec first = augment::PipelineSpec::view_a();
    augment::PipelineSpec second = augment::PipelineSpec::view_b();
};

// `masks` is either empty or parallel to `images`.
ViewBatch make_views(std::span<const FeatureMap> images, std::span<const MaskSet> masks, const AugmentSetup& aug,
                     bool shared_geometry, Rng& rng);

// ---- mask contrast ----

struct ContrastPlan {
    // Direction 0 embeds the first views online and the second views with
    // the target network; direction 1 swaps the roles. Embedding matrices are
    // filled in by the objective.
    std::array<std::optional<contrast::ContrastBatch>, 2> directions;
    std::array<std::vector<LabelGrid>, 2> labels;  // per view, at fusion resolution
    int pairs = 0;
    bool empty() const { return pairs == 0; }
};

ContrastPlan plan_contrast(const ViewBatch& views, int fusion_size, int negatives, Rng& rng);

struct ContrastOutcome {
    double loss = 0.0;
    int pairs = 0;
    bool skipped = false;
};

// Symmetrized mask-contrastive loss (mean over both directions). When `grad`
// is given, gradients w.r.t. the online parameters are accumulated into it.
ContrastOutcome contrastive_objective(const Model& model, const OnlineParams& online, const TargetParams& target,
                                      const ViewBatch& views, const ContrastPlan& plan, double temperature,
                                      OnlineParams* grad, double scale = 1.0);

// ---- clustering consistency ----

struct ConsistencyPlan {
    MatrixXd bank, bank_target;  // K × D
    std::vector<int> assign, assign_target;
    int k = 0;
};

// Clusters the online cells (first views) and target cells (second views)
// separately with K prototypes each and fixes both assignments.
ConsistencyPlan plan_consistency(const Model& model, const OnlineParams& online, const TargetParams& target,
                                 const ViewBatch& views, Stage stage, int k, int kmeans_iters, Rng& rng);

struct ConsistencyOutcome {
    double loss = 0.0;
    vmf::Terms terms;
    int k = 0;
};

ConsistencyOutcome consistency_objective(const Model& model, const OnlineParams& online, const TargetParams& target,
                                         const ViewBatch& views, const ConsistencyPlan& plan, Stage stage,
                                         double kappa, OnlineParams* grad, double scale = 1.0);

// ---- full steps ----

struct UpdateRule {
    optim::SgdConfig sgd;
    double lr = 0.05;           // learning rate of this step
    double ema_momentum = 0.99;
};

struct ContrastStepConfig {
    double temperature = 0.2;
    int negatives = 16;
};

ContrastOutcome run_contrastive_step(const Model& model, OnlineParams& online, TargetParams& target,
                                     optim::State& opt, const UpdateRule& rule, const ViewBatch& views,
                                     const ContrastStepConfig& cfg, Rng& negative_rng);

struct ConsistencyStepConfig {
    Stage stage = Stage::s2_b2;
    int k = 5;
    double lambda = 0.1;
    double kappa = 10.0;
    int kmeans_iters = 50;
    bool independent_geometry = false;  // views do not share crop and flip
};

// Augments both views, clusters, takes one optimizer step on λ·L (skipped
// for λ = 0) and EMA-updates the target.
ConsistencyOutcome run_consistency_step(const Model& model, OnlineParams& online, TargetParams& target,
                                        optim::State& opt, const UpdateRule& rule, std::span<const FeatureMap> images,
                                        const AugmentSetup& aug, const ConsistencyStepConfig& cfg, Rng& augment_rng,
                                        Rng& kmeans_rng);

OnlineParams zero_grads(const OnlineParams& like);

}  // namespace maskboot::steps
