#include "maskboot/encoder.hpp"

#include <algorithm>

#include "maskboot/errors.hpp"

namespace maskboot::encoder {

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::s2_b2: return "s2.b2";
        case Stage::s2: return "s2";
        case Stage::s3: return "s3";
        case Stage::s4: return "s4";
    }
    return "?";
}

Stage parse_stage(const std::string& name) {
    for (auto s : kAllStages)
        if (name == stage_name(s)) return s;
    throw ConfigError("unknown encoder stage '" + name + "' (expected one of s2.b2, s2, s3, s4)");
}

std::vector<Stage> parse_stages(const std::vector<std::string>& names) {
    std::vector<Stage> out;
    for (const auto& n : names) out.push_back(parse_stage(n));
    return out;
}

void EncoderConfig::validate() const {
    if (input_size < 16 || input_size % 16 != 0) throw ConfigError("encoder.input_size must be a positive multiple of 16");
    for (int c : channels)
        if (c < 1) throw ConfigError("encoder.channels must be positive");
    if (blocks[0] < 2) throw ConfigError("encoder.blocks[0] must be >= 2 so that stage s2.b2 exists");
    if (blocks[1] < 1 || blocks[2] < 1) throw ConfigError("encoder.blocks must be >= 1 per stage");
    if (input_std <= 0.0) throw ConfigError("encoder.input_std must be positive");
}

int EncoderConfig::stage_channels(Stage s) const {
    switch (s) {
        case Stage::s2_b2:
        case Stage::s2: return channels[1];
        case Stage::s3: return channels[2];
        case Stage::s4: return channels[3];
    }
    return 0;
}

int EncoderConfig::stage_size(Stage s) const {
    switch (s) {
        case Stage::s2_b2:
        case Stage::s2: return input_size / 4;
        case Stage::s3: return input_size / 8;
        case Stage::s4: return input_size / 16;
    }
    return 0;
}

const FeatureMap& StageFeatures::operator[](Stage s) const {
    const auto& m = maps[static_cast<int>(s)];
    MASKBOOT_REQUIRE(m.has_value(), std::string("stage ") + stage_name(s) + " was not computed");
    return *m;
}

FeatureMap& StageFeatures::operator[](Stage s) {
    auto& m = maps[static_cast<int>(s)];
    MASKBOOT_REQUIRE(m.has_value(), std::string("stage ") + stage_name(s) + " was not computed");
    return *m;
}

Encoder::Encoder(EncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    int next = 0;
    stem_w_ = next++;
    stem_b_ = next++;
    int in_ch = cfg_.channels[0];
    for (int stage = 0; stage < 3; ++stage) {
        const int out_ch = cfg_.channels[stage + 1];
        for (int b = 0; b < cfg_.blocks[stage]; ++b) {
            BlockLayout L{};
            L.in_ch = in_ch;
            L.out_ch = out_ch;
            L.stride = (stage > 0 && b == 0) ? 2 : 1;
            L.w1 = next++;
            L.b1 = next++;
            L.w2 = next++;
            L.b2 = next++;
            if (L.stride != 1 || L.in_ch != L.out_ch) {
                L.wp = next++;
                L.bp = next++;
            }
            blocks_.push_back(L);
            in_ch = out_ch;
        }
    }
    tensor_count_ = next;
}

int Encoder::stage_block(Stage s) const {
    const auto& b = cfg_.blocks;
    switch (s) {
        case Stage::s2_b2: return 1;
        case Stage::s2: return b[0] - 1;
        case Stage::s3: return b[0] + b[1] - 1;
        case Stage::s4: return b[0] + b[1] + b[2] - 1;
    }
    return -1;
}

ParamSet Encoder::init(Rng& rng) const {
    ParamSet p;
    const int c0 = cfg_.channels[0];
    p.add("stem.w", nn::fan_in_uniform(rng, c0, 27, 27));
    p.add("stem.b", MatrixXd::Zero(c0, 1));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& L = blocks_[i];
        const std::string pre = "block" + std::to_string(i) + ".";
        p.add(pre + "conv1.w", nn::fan_in_uniform(rng, L.out_ch, L.in_ch * 9, L.in_ch * 9));
        p.add(pre + "conv1.b", MatrixXd::Zero(L.out_ch, 1));
        p.add(pre + "conv2.w", nn::fan_in_uniform(rng, L.out_ch, L.out_ch * 9, L.out_ch * 9, cfg_.residual_init_gain));
        p.add(pre + "conv2.b", MatrixXd::Zero(L.out_ch, 1));
        if (L.wp >= 0) {
            p.add(pre + "proj.w", nn::fan_in_uniform(rng, L.out_ch, L.in_ch, L.in_ch));
            p.add(pre + "proj.b", MatrixXd::Zero(L.out_ch, 1));
        }
    }
    return p;
}

ParamSet Encoder::zeros() const {
    Rng rng(0);
    ParamSet p = init(rng);
    p.set_zero();
    return p;
}

StageFeatures Encoder::forward(const ParamSet& params, const FeatureMap& image, EncoderCache* cache,
                               Stage stop_after) const {
    MASKBOOT_REQUIRE(static_cast<int>(params.size()) == tensor_count_, "encoder forward: parameter structure mismatch");
    MASKBOOT_REQUIRE(image.channels == 3 && image.height == cfg_.input_size && image.width == cfg_.input_size,
                     "encoder forward: input must be 3x" + std::to_string(cfg_.input_size) + "x" +
                         std::to_string(cfg_.input_size));
    const int last = stage_block(stop_after);

    FeatureMap x(3, image.height, image.width);
    x.data = (image.data.array() - cfg_.input_mean) / cfg_.input_std;
    FeatureMap stem_pre = nn::conv_forward(params[stem_w_], params[stem_b_], x, {3, 2});
    FeatureMap act(stem_pre.channels, stem_pre.height, stem_pre.width);
    act.data = nn::silu(stem_pre.data);
    FeatureMap cur = nn::avgpool2_forward(act);

    if (cache) {
        cache->input = std::move(x);
        cache->stem_pre = stem_pre;
        cache->stem_pool = cur;
        cache->blocks.clear();
        cache->last_block = last;
    }

    StageFeatures out;
    for (int i = 0; i <= last; ++i) {
        const auto& L = blocks_[i];
        FeatureMap z1 = nn::conv_forward(params[L.w1], params[L.b1], cur, {3, L.stride});
        FeatureMap a1(z1.channels, z1.height, z1.width);
        a1.data = nn::silu(z1.data);
        FeatureMap sum = nn::conv_forward(params[L.w2], params[L.b2], a1, {3, 1});
        if (L.wp >= 0)
            sum.data += nn::conv_forward(params[L.wp], params[L.bp], cur, {1, L.stride}).data;
        else
            sum.data += cur.data;
        FeatureMap y(sum.channels, sum.height, sum.width);
        y.data = nn::silu(sum.data);
        if (cache) cache->blocks.push_back({std::move(cur), std::move(z1), std::move(a1), std::move(sum)});
        for (auto s : kAllStages)
            if (stage_block(s) == i) out.maps[static_cast<int>(s)] = y;
        cur = std::move(y);
    }
    return out;
}

void Encoder::backward(const ParamSet& params, const EncoderCache& cache,
                       const std::array<std::optional<FeatureMap>, kStageCount>& grads, ParamSet& g) const {
    MASKBOOT_REQUIRE(g.same_structure(params), "encoder backward: gradient structure mismatch");
    const int last = cache.last_block;
    FeatureMap grad;
    for (int i = last; i >= 0; --i) {
        const auto& L = blocks_[i];
        const auto& bc = cache.blocks[static_cast<std::size_t>(i)];
        if (grad.channels == 0) grad = FeatureMap(bc.sum.channels, bc.sum.height, bc.sum.width);
        for (auto s : kAllStages)
            if (stage_block(s) == i && grads[static_cast<int>(s)]) grad.data += grads[static_cast<int>(s)]->data;

        FeatureMap dsum(bc.sum.channels, bc.sum.height, bc.sum.width);
        dsum.data = nn::silu_backward(bc.sum.data, grad.data);
        FeatureMap da1 = nn::conv_backward(params[L.w2], bc.a1, dsum, {3, 1}, g[L.w2], g[L.b2]);
        FeatureMap dz1(da1.channels, da1.height, da1.width);
        dz1.data = nn::silu_backward(bc.z1.data, da1.data);
        FeatureMap dx = nn::conv_backward(params[L.w1], bc.in, dz1, {3, L.stride}, g[L.w1], g[L.b1]);
        if (L.wp >= 0)
            dx.data += nn::conv_backward(params[L.wp], bc.in, dsum, {1, L.stride}, g[L.wp], g[L.bp]).data;
        else
            dx.data += dsum.data;
        grad = std::move(dx);
    }
    FeatureMap dact = nn::avgpool2_backward(grad, cache.stem_pre.height, cache.stem_pre.width);
    FeatureMap dstem(dact.channels, dact.height, dact.width);
    dstem.data = nn::silu_backward(cache.stem_pre.data, dact.data);
    nn::conv_backward(params[stem_w_], cache.input, dstem, {3, 2}, g[stem_w_], g[stem_b_]);
}

namespace {

std::vector<Stage> canonical(std::span<const Stage> layers) {
    std::vector<Stage> v(layers.begin(), layers.end());
    std::sort(v.begin(), v.end());
    if (std::adjacent_find(v.begin(), v.end()) != v.end()) throw ConfigError("fusion layers contain a duplicate stage");
    if (v.empty()) throw ConfigError("fusion layer set is empty");
    return v;
}

}  // namespace

FeatureMap fuse_layers(const StageFeatures& features, std::span<const Stage> layers, int target_h, int target_w) {
    MASKBOOT_REQUIRE(target_h > 0 && target_w > 0, "fuse_layers: target size must be positive");
    const auto order = canonical(layers);
    int total = 0;
    for (auto s : order) total += features[s].channels;
    FeatureMap out(total, target_h, target_w);
    int row = 0;
    for (auto s : order) {
        const FeatureMap r = nn::bilinear_resize(features[s], target_h, target_w);
        out.data.middleRows(row, r.channels) = r.data;
        row += r.channels;
    }
    return out;
}

std::array<std::optional<FeatureMap>, kStageCount> fuse_layers_backward(const StageFeatures& features,
                                                                        std::span<const Stage> layers,
                                                                        const FeatureMap& grad_fused) {
    std::array<std::optional<FeatureMap>, kStageCount> out;
    int row = 0;
    for (auto s : canonical(layers)) {
        const FeatureMap& f = features[s];
        FeatureMap slice(f.channels, grad_fused.height, grad_fused.width);
        slice.data = grad_fused.data.middleRows(row, f.channels);
        out[static_cast<int>(s)] = nn::bilinear_resize_backward(slice, f.height, f.width);
        row += f.channels;
    }
    return out;
}

int fused_channels(const EncoderConfig& cfg, std::span<const Stage> layers) {
    int total = 0;
    for (auto s : canonical(layers)) total += cfg.stage_channels(s);
    return total;
}

ParamSet Mlp::init(Rng& rng) const {
    ParamSet p;
    p.add("fc1.w", nn::fan_in_uniform(rng, hidden_, in_, in_));
    p.add("fc1.b", MatrixXd::Zero(hidden_, 1));
    p.add("norm.gain", MatrixXd::Ones(hidden_, 1));
    p.add("norm.bias", MatrixXd::Zero(hidden_, 1));
    p.add("fc2.w", nn::fan_in_uniform(rng, out_, hidden_, hidden_, 0.5));
    p.add("fc2.b", MatrixXd::Zero(out_, 1));
    return p;
}

MatrixXd Mlp::forward(const ParamSet& p, const MatrixXd& x, Cache* cache) const {
    MASKBOOT_REQUIRE(p.size() == 6 && p[0].cols() == x.rows(), "Mlp forward: input dimension mismatch");
    MatrixXd pre_norm = p[0] * x;
    pre_norm.colwise() += p[1].col(0);
    nn::LayerNormCache norm;
    MatrixXd pre_act = nn::layernorm_forward(pre_norm, p[2], p[3], norm);
    MatrixXd act = nn::silu(pre_act);
    MatrixXd out = p[4] * act;
    out.colwise() += p[5].col(0);
    if (cache) *cache = {x, std::move(pre_norm), std::move(pre_act), std::move(act), std::move(norm)};
    return out;
}

MatrixXd Mlp::backward(const ParamSet& p, const Cache& c, const MatrixXd& grad_out, ParamSet& g) const {
    g[4].noalias() += grad_out * c.act.transpose();
    g[5].col(0) += grad_out.rowwise().sum();
    const MatrixXd dact = p[4].transpose() * grad_out;
    const MatrixXd dpre_act = nn::silu_backward(c.pre_act, dact);
    const MatrixXd dpre_norm = nn::layernorm_backward(dpre_act, p[2], c.norm, g[2], g[3]);
    g[0].noalias() += dpre_norm * c.input.transpose();
    g[1].col(0) += dpre_norm.rowwise().sum();
    return p[0].transpose() * dpre_norm;
}

MatrixXd project_predict(const Heads& heads, const MatrixXd& pooled, const ParamSet& projector,
                         const ParamSet* predictor, Role role, ProjectCache* cache) {
    MASKBOOT_REQUIRE(pooled.rows() == heads.projector.in(), "project_predict: pooled dimension mismatch");
    ProjectCache local;
    ProjectCache& c = cache ? *cache : local;
    c.role = role;
    MatrixXd raw = heads.projector.forward(projector, pooled, &c.projector);
    if (role == Role::online) {
        MASKBOOT_REQUIRE(predictor != nullptr, "project_predict: online role needs predictor parameters");
        raw = heads.predictor.forward(*predictor, raw, &c.predictor);
    }
    c.embedded = nn::l2_normalize_columns(raw, &c.norms);
    c.raw = std::move(raw);
    return c.embedded;
}

MatrixXd project_predict_backward(const Heads& heads, const ProjectCache& cache, const ParamSet& projector,
                                  const ParamSet& predictor, const MatrixXd& grad_embedded, ParamSet& grad_projector,
                                  ParamSet& grad_predictor) {
    MASKBOOT_REQUIRE(cache.role == Role::online, "project_predict_backward: target path carries no gradient");
    const MatrixXd draw = nn::l2_normalize_columns_backward(cache.embedded, cache.norms, grad_embedded);
    const MatrixXd dproj = heads.predictor.backward(predictor, cache.predictor, draw, grad_predictor);
    return heads.projector.backward(projector, cache.projector, dproj, grad_projector);
}

void ema_update(const ParamSet& online, ParamSet& target, double momentum) {
    MASKBOOT_REQUIRE(online.same_structure(target), "ema_update: online/target structure mismatch");
    MASKBOOT_REQUIRE(momentum >= 0.0 && momentum <= 1.0, "ema_update: momentum must lie in [0,1]");
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = momentum * target[i] + (1.0 - momentum) * online[i];
}

void ema_update(const OnlineParams& online, TargetParams& target, double momentum) {
    ema_update(online.encoder, target.encoder, momentum);
    ema_update(online.projector, target.projector, momentum);
}

Model::Model(const EncoderConfig& enc, const HeadConfig& head, std::vector<Stage> layers, int fusion_hw)
    : encoder(enc), heads(fused_channels(enc, layers), head), fusion_layers(std::move(layers)), fusion_size(fusion_hw) {
    if (fusion_hw < 1) throw ConfigError("encoder.fusion_size must be >= 1");
    if (head.hidden < 1 || head.out < 1) throw ConfigError("head sizes must be positive");
}

OnlineParams Model::init(Rng& rng) const {
    OnlineParams p;
    p.encoder = encoder.init(rng);
    p.projector = heads.projector.init(rng);
    p.predictor = heads.predictor.init(rng);
    return p;
}

}  // namespace maskboot::encoder
