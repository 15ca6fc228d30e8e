#include "maskboot/steps.hpp"

#include <algorithm>

#include "maskboot/bootstrap.hpp"
#include "maskboot/errors.hpp"

namespace maskboot::steps {

OnlineParams zero_grads(const OnlineParams& like) {
    return {like.encoder.zeros_like(), like.projector.zeros_like(), like.predictor.zeros_like()};
}

ViewBatch make_views(std::span<const FeatureMap> images, std::span<const MaskSet> masks, const AugmentSetup& aug,
                     bool shared_geometry, Rng& rng) {
    MASKBOOT_REQUIRE(masks.empty() || masks.size() == images.size(), "make_views: masks must parallel images");
    ViewBatch out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const MaskSet blank(LabelGrid(images[i].height, images[i].width, 0));
        const MaskSet& m = masks.empty() ? blank : masks[i];
        auto pair = augment::make_view_pair(rng, aug.first, aug.second, images[i], m, shared_geometry);
        out.first.push_back(std::move(pair.first.image));
        out.second.push_back(std::move(pair.second.image));
        out.first_tf.push_back(pair.first_tf);
        out.second_tf.push_back(pair.second_tf);
        if (!masks.empty()) {
            out.first_labels.push_back(pair.first.masks.labels());
            out.second_labels.push_back(pair.second.masks.labels());
        }
    }
    return out;
}

namespace {

using Key = std::pair<int, int>;

std::vector<Key> keys_of(const std::vector<LabelGrid>& small) {
    std::vector<Key> keys;
    for (std::size_t b = 0; b < small.size(); ++b) {
        std::array<bool, 256> present{};
        for (auto v : small[b].values) present[v] = true;
        for (int l = 0; l < 256; ++l)
            if (present[l]) keys.emplace_back(static_cast<int>(b), l);
    }
    return keys;
}

Stage deepest(const std::vector<Stage>& layers) {
    return *std::max_element(layers.begin(), layers.end(),
                             [](Stage a, Stage b) { return static_cast<int>(a) < static_cast<int>(b); });
}

// Fused maps and mask-pooled columns of one view set under one parameter set.
struct PooledSide {
    std::vector<encoder::EncoderCache> caches;
    std::vector<encoder::StageFeatures> features;
    std::vector<FeatureMap> fused;
    MatrixXd pooled;                              // D × columns
    std::vector<std::pair<int, BinaryMask>> src;  // (image, mask) per column
};

PooledSide pool_side(const Model& model, const nn::ParamSet& enc_params, const std::vector<FeatureMap>& views,
                     const std::vector<LabelGrid>& small, bool keep_cache) {
    PooledSide side;
    const Stage stop = deepest(model.fusion_layers);
    const int n = static_cast<int>(views.size());
    if (keep_cache) side.caches.resize(static_cast<std::size_t>(n));
    std::vector<Eigen::VectorXd> cols;
    for (int b = 0; b < n; ++b) {
        auto feats = model.encoder.forward(enc_params, views[b], keep_cache ? &side.caches[b] : nullptr, stop);
        FeatureMap fused = encoder::fuse_layers(feats, model.fusion_layers, model.fusion_size, model.fusion_size);
        for (auto& p : contrast::pool_all(fused, small[b], b)) {
            cols.push_back(std::move(p.h));
            side.src.emplace_back(b, std::move(p.mask));
        }
        if (keep_cache) {
            side.features.push_back(std::move(feats));
            side.fused.push_back(std::move(fused));
        }
    }
    const int d = encoder::fused_channels(model.encoder.config(), model.fusion_layers);
    side.pooled.resize(d, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) side.pooled.col(static_cast<Eigen::Index>(j)) = cols[j];
    return side;
}

void backprop_side(const Model& model, const nn::ParamSet& enc_params, const PooledSide& side,
                   const MatrixXd& grad_pooled, nn::ParamSet& grad_encoder) {
    std::vector<FeatureMap> grad_fused;
    for (const auto& f : side.fused) grad_fused.emplace_back(f.channels, f.height, f.width);
    for (std::size_t j = 0; j < side.src.size(); ++j) {
        const auto& [b, mask] = side.src[j];
        contrast::mask_pool_backward(mask, grad_pooled.col(static_cast<Eigen::Index>(j)), grad_fused[b]);
    }
    for (std::size_t b = 0; b < side.fused.size(); ++b) {
        const auto grads = encoder::fuse_layers_backward(side.features[b], model.fusion_layers, grad_fused[b]);
        model.encoder.backward(enc_params, side.caches[b], grads, grad_encoder);
    }
}

}  // namespace

ContrastPlan plan_contrast(const ViewBatch& views, int fusion_size, int negatives, Rng& rng) {
    MASKBOOT_REQUIRE(views.first_labels.size() == views.first.size() &&
                         views.second_labels.size() == views.second.size(),
                     "plan_contrast: views carry no masks");
    ContrastPlan plan;
    for (std::size_t b = 0; b < views.first.size(); ++b) {
        plan.labels[0].push_back(contrast::downsample_labels(views.first_labels[b], fusion_size, fusion_size));
        plan.labels[1].push_back(contrast::downsample_labels(views.second_labels[b], fusion_size, fusion_size));
    }
    const std::array<std::vector<Key>, 2> keys = {keys_of(plan.labels[0]), keys_of(plan.labels[1])};
    for (int d = 0; d < 2; ++d) {
        const auto& on = keys[d];
        const auto& tg = keys[1 - d];
        plan.directions[d] = contrast::build_contrast_batch(MatrixXd(0, static_cast<Eigen::Index>(on.size())), on,
                                                            MatrixXd(0, static_cast<Eigen::Index>(tg.size())), tg, rng,
                                                            negatives);
        if (plan.directions[d]) plan.pairs += static_cast<int>(plan.directions[d]->anchors.size());
    }
    return plan;
}

ContrastOutcome contrastive_objective(const Model& model, const OnlineParams& online, const TargetParams& target,
                                      const ViewBatch& views, const ContrastPlan& plan, double temperature,
                                      OnlineParams* grad, double scale) {
    ContrastOutcome out;
    out.pairs = plan.pairs;
    if (plan.empty()) {
        out.skipped = true;
        return out;
    }
    const std::array<const std::vector<FeatureMap>*, 2> view_sets = {&views.first, &views.second};
    std::array<PooledSide, 2> on, tg;
    for (int v = 0; v < 2; ++v) {
        on[v] = pool_side(model, online.encoder, *view_sets[v], plan.labels[v], grad != nullptr);
        tg[v] = pool_side(model, target.encoder, *view_sets[v], plan.labels[v], false);
    }
    int used = 0;
    std::array<encoder::ProjectCache, 2> caches;
    std::array<MatrixXd, 2> grad_embedded;
    for (int d = 0; d < 2; ++d) {
        if (!plan.directions[d]) continue;
        contrast::ContrastBatch batch = *plan.directions[d];
        batch.online = encoder::project_predict(model.heads, on[d].pooled, online.projector, &online.predictor,
                                                encoder::Role::online, &caches[d]);
        batch.target = encoder::project_predict(model.heads, tg[1 - d].pooled, target.projector, nullptr,
                                                encoder::Role::target);
        auto r = contrast::contrastive_loss(batch, temperature);
        out.loss += r.loss;
        grad_embedded[d] = std::move(r.grad_online);
        ++used;
    }
    out.loss /= used;
    if (grad) {
        for (int d = 0; d < 2; ++d) {
            if (!plan.directions[d]) continue;
            const MatrixXd g = grad_embedded[d] * (scale / used);
            const MatrixXd gp = encoder::project_predict_backward(model.heads, caches[d], online.projector,
                                                                  online.predictor, g, grad->projector,
                                                                  grad->predictor);
            backprop_side(model, online.encoder, on[d], gp, grad->encoder);
        }
    }
    return out;
}

namespace {

struct EncodedCells {
    std::vector<encoder::EncoderCache> caches;
    MatrixXd raw;   // D × (B·cells)
    MatrixXd unit;  // column-normalized raw
    Eigen::VectorXd norms;
    int height = 0, width = 0;
};

EncodedCells encode_cells(const encoder::Encoder& enc, const nn::ParamSet& params, const std::vector<FeatureMap>& views,
                          Stage stage, bool keep_cache) {
    EncodedCells out;
    const int n = static_cast<int>(views.size());
    if (keep_cache) out.caches.resize(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
        const auto feats = enc.forward(params, views[b], keep_cache ? &out.caches[b] : nullptr, stage);
        const FeatureMap& m = feats[stage];
        if (b == 0) {
            out.height = m.height;
            out.width = m.width;
            out.raw.resize(m.channels, static_cast<Eigen::Index>(n) * m.cells());
        }
        out.raw.middleCols(static_cast<Eigen::Index>(b) * m.cells(), m.cells()) = m.data;
    }
    out.unit = nn::l2_normalize_columns(out.raw, &out.norms);
    return out;
}

MatrixXd cluster_rows(const MatrixXd& raw) {
    MatrixXd rows(raw.cols(), raw.rows());
    for (Eigen::Index i = 0; i < raw.cols(); ++i) rows.row(i) = bootstrap::normalize_feature(raw.col(i)).transpose();
    return rows;
}

ConsistencyPlan cluster_pair(const EncodedCells& on, const EncodedCells& tg, int k, int iters, Rng& rng) {
    ConsistencyPlan plan;
    plan.k = k;
    const bootstrap::KMeansOptions opts{iters, false, 1024};
    plan.bank = bootstrap::spherical_kmeans(cluster_rows(on.raw), k, rng, opts).bank.prototypes;
    plan.bank_target = bootstrap::spherical_kmeans(cluster_rows(tg.raw), k, rng, opts).bank.prototypes;
    plan.assign = vmf::nearest_prototypes(on.unit, plan.bank);
    plan.assign_target = vmf::nearest_prototypes(tg.unit, plan.bank_target);
    return plan;
}

vmf::LossResult consistency_loss(const EncodedCells& on, const EncodedCells& tg, const ConsistencyPlan& plan,
                                 double kappa) {
    vmf::Context ctx;
    ctx.y = on.unit;
    ctx.y_target = tg.unit;
    ctx.bank = plan.bank;
    ctx.bank_target = plan.bank_target;
    ctx.assign = plan.assign;
    ctx.assign_target = plan.assign_target;
    ctx.kappa = kappa;
    return vmf::cluster_consistency_loss(ctx);
}

void backprop_cells(const encoder::Encoder& enc, const nn::ParamSet& params, const EncodedCells& on,
                    const MatrixXd& grad_unit, Stage stage, nn::ParamSet& grad_encoder) {
    const MatrixXd graw = nn::l2_normalize_columns_backward(on.unit, on.norms, grad_unit);
    const int cells = on.height * on.width;
    for (std::size_t b = 0; b < on.caches.size(); ++b) {
        std::array<std::optional<FeatureMap>, encoder::kStageCount> grads;
        FeatureMap g(static_cast<int>(graw.rows()), on.height, on.width);
        g.data = graw.middleCols(static_cast<Eigen::Index>(b) * cells, cells);
        grads[static_cast<int>(stage)] = std::move(g);
        enc.backward(params, on.caches[b], grads, grad_encoder);
    }
}

}  // namespace

ConsistencyPlan plan_consistency(const Model& model, const OnlineParams& online, const TargetParams& target,
                                 const ViewBatch& views, Stage stage, int k, int kmeans_iters, Rng& rng) {
    const auto on = encode_cells(model.encoder, online.encoder, views.first, stage, false);
    const auto tg = encode_cells(model.encoder, target.encoder, views.second, stage, false);
    return cluster_pair(on, tg, k, kmeans_iters, rng);
}

ConsistencyOutcome consistency_objective(const Model& model, const OnlineParams& online, const TargetParams& target,
                                         const ViewBatch& views, const ConsistencyPlan& plan, Stage stage,
                                         double kappa, OnlineParams* grad, double scale) {
    const auto on = encode_cells(model.encoder, online.encoder, views.first, stage, grad != nullptr);
    const auto tg = encode_cells(model.encoder, target.encoder, views.second, stage, false);
    const auto r = consistency_loss(on, tg, plan, kappa);
    if (grad) backprop_cells(model.encoder, online.encoder, on, r.grad_y * scale, stage, grad->encoder);
    return {r.loss, r.terms, plan.k};
}

ContrastOutcome run_contrastive_step(const Model& model, OnlineParams& online, TargetParams& target,
                                     optim::State& opt, const UpdateRule& rule, const ViewBatch& views,
                                     const ContrastStepConfig& cfg, Rng& negative_rng) {
    const ContrastPlan plan = plan_contrast(views, model.fusion_size, cfg.negatives, negative_rng);
    if (plan.empty()) return {0.0, 0, true};
    OnlineParams grad = zero_grads(online);
    const auto out = contrastive_objective(model, online, target, views, plan, cfg.temperature, &grad);
    optim::sgd_step(online, grad, opt, rule.sgd, rule.lr);
    encoder::ema_update(online, target, rule.ema_momentum);
    return out;
}

ConsistencyOutcome run_consistency_step(const Model& model, OnlineParams& online, TargetParams& target,
                                        optim::State& opt, const UpdateRule& rule, std::span<const FeatureMap> images,
                                        const AugmentSetup& aug, const ConsistencyStepConfig& cfg, Rng& augment_rng,
                                        Rng& kmeans_rng) {
    MASKBOOT_REQUIRE(cfg.k >= 1, "consistency step: K must be >= 1");
    MASKBOOT_REQUIRE(cfg.lambda >= 0.0, "consistency step: lambda must be non-negative");
    const ViewBatch views = make_views(images, {}, aug, !cfg.independent_geometry, augment_rng);
    const bool update = cfg.lambda > 0.0;
    const auto on = encode_cells(model.encoder, online.encoder, views.first, cfg.stage, update);
    const auto tg = encode_cells(model.encoder, target.encoder, views.second, cfg.stage, false);
    const ConsistencyPlan plan = cluster_pair(on, tg, cfg.k, cfg.kmeans_iters, kmeans_rng);
    const auto r = consistency_loss(on, tg, plan, cfg.kappa);
    if (update) {
        OnlineParams grad = zero_grads(online);
        backprop_cells(model.encoder, online.encoder, on, r.grad_y * cfg.lambda, cfg.stage, grad.encoder);
        optim::sgd_step(online, grad, opt, rule.sgd, rule.lr, optim::encoder_group);
    }
    encoder::ema_update(online, target, rule.ema_momentum);
    return {r.loss, r.terms, plan.k};
}

}  // namespace maskboot::steps
