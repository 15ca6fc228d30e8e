#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskboot/image.hpp"
#include "maskboot/nn.hpp"
#include "maskboot/rng.hpp"

namespace maskboot::encoder {

using nn::MatrixXd;
using nn::ParamSet;
using nn::VectorXd;

// Named encoder stages, in canonical (concatenation) order.
enum class Stage : int { s2_b2 = 0, s2 = 1, s3 = 2, s4 = 3 };
inline constexpr int kStageCount = 4;
inline constexpr std::array<Stage, kStageCount> kAllStages = {Stage::s2_b2, Stage::s2, Stage::s3, Stage::s4};

const char* stage_name(Stage s);
// Throws ConfigError for unknown names.
Stage parse_stage(const std::string& name);
std::vector<Stage> parse_stages(const std::vector<std::string>& names);

// Residual mini-network: stem conv (stride 2) + 2×2 average pool, then three
// residual stages s2 / s3 / s4; s3 and s4 open with a stride-2 block. A 64×64
// input yields s2 at 16×16, s3 at 8×8 and s4 at 4×4.
struct EncoderConfig {
    int input_size = 64;
    std::array<int, 4> channels = {32, 32, 64, 128};  // stem, s2, s3, s4
    std::array<int, 3> blocks = {2, 1, 1};             // residual blocks in s2, s3, s4
    double residual_init_gain = 0.25;                  // init scale of each block's second conv
    double input_mean = 0.5;
    double input_std = 0.25;

    void validate() const;
    int stage_channels(Stage s) const;
    int stage_size(Stage s) const;  // spatial side length
};

struct HeadConfig {
    int hidden = 256;
    int out = 64;
};

struct StageFeatures {
    std::array<std::optional<FeatureMap>, kStageCount> maps;

    bool has(Stage s) const { return maps[static_cast<int>(s)].has_value(); }
    const FeatureMap& operator[](Stage s) const;
    FeatureMap& operator[](Stage s);
};

// Forward cache for one image; consumed by Encoder::backward.
struct EncoderCache {
    FeatureMap input;       // normalized image
    FeatureMap stem_pre;    // stem conv output before activation
    FeatureMap stem_pool;   // after activation + pool: input of the first block
    struct Block {
        FeatureMap in, z1, a1, sum;
    };
    std::vector<Block> blocks;
    int last_block = -1;
};

class Encoder {
public:
    explicit Encoder(EncoderConfig cfg);

    const EncoderConfig& config() const { return cfg_; }
    ParamSet init(Rng& rng) const;
    ParamSet zeros() const;

    // Runs up to (and including) the block that produces `stop_after`.
    // Throws ContractError on input shape mismatch or a mis-shaped ParamSet.
    StageFeatures forward(const ParamSet& params, const FeatureMap& image, EncoderCache* cache = nullptr,
                          Stage stop_after = Stage::s4) const;

    // `grads` holds one optional upstream gradient per stage; accumulates
    // into `grad_params`.
    void backward(const ParamSet& params, const EncoderCache& cache,
                  const std::array<std::optional<FeatureMap>, kStageCount>& grads, ParamSet& grad_params) const;

    int block_count() const { return static_cast<int>(blocks_.size()); }
    int stage_block(Stage s) const;

private:
    struct BlockLayout {
        int in_ch, out_ch, stride;
        int w1, b1, w2, b2;
        int wp = -1, bp = -1;  // projection shortcut, absent when shapes match
    };
    EncoderConfig cfg_;
    std::vector<BlockLayout> blocks_;
    int stem_w_ = 0, stem_b_ = 0;
    int tensor_count_ = 0;
};

// Bilinearly resamples each selected stage to target_hw and concatenates the
// channels in canonical stage order.
FeatureMap fuse_layers(const StageFeatures& features, std::span<const Stage> layers, int target_h, int target_w);
std::array<std::optional<FeatureMap>, kStageCount> fuse_layers_backward(const StageFeatures& features,
                                                                        std::span<const Stage> layers,
                                                                        const FeatureMap& grad_fused);
int fused_channels(const EncoderConfig& cfg, std::span<const Stage> layers);

// Linear → LayerNorm → SiLU → Linear on a D × N batch of column vectors.
class Mlp {
public:
    Mlp(int in, int hidden, int out) : in_(in), hidden_(hidden), out_(out) {}
    ParamSet init(Rng& rng) const;

    struct Cache {
        MatrixXd input, pre_norm, pre_act, act;
        nn::LayerNormCache norm;
    };
    MatrixXd forward(const ParamSet& p, const MatrixXd& x, Cache* cache = nullptr) const;
    MatrixXd backward(const ParamSet& p, const Cache& cache, const MatrixXd& grad_out, ParamSet& grad) const;

    int in() const { return in_; }
    int out() const { return out_; }

private:
    int in_, hidden_, out_;
};

struct OnlineParams {
    ParamSet encoder, projector, predictor;
    bool operator==(const OnlineParams&) const = default;
};
struct TargetParams {
    ParamSet encoder, projector;
    bool operator==(const TargetParams&) const = default;
};

enum class Role { online, target };

// Projection heads shared by every model instance with the same config.
struct Heads {
    Mlp projector;
    Mlp predictor;
    Heads(int fused_dim, const HeadConfig& cfg)
        : projector(fused_dim, cfg.hidden, cfg.out), predictor(cfg.out, cfg.hidden, cfg.out) {}
};

struct ProjectCache {
    Mlp::Cache projector, predictor;
    MatrixXd raw;       // pre-normalization output
    MatrixXd embedded;  // ℓ2-normalized output
    VectorXd norms;
    Role role = Role::online;
};

// Online: normalize(q(g(h))); target: normalize(g(h)). `pooled` is D × N.
// For the target role only `projector` is read.
MatrixXd project_predict(const Heads& heads, const MatrixXd& pooled, const ParamSet& projector,
                         const ParamSet* predictor, Role role, ProjectCache* cache = nullptr);
// Online role only: returns d/d pooled, accumulating head gradients.
MatrixXd project_predict_backward(const Heads& heads, const ProjectCache& cache, const ParamSet& projector,
                                  const ParamSet& predictor, const MatrixXd& grad_embedded, ParamSet& grad_projector,
                                  ParamSet& grad_predictor);

// ξ ← m·ξ + (1 − m)·θ for every tensor. Throws ContractError on structure mismatch.
void ema_update(const ParamSet& online, ParamSet& target, double momentum);
void ema_update(const OnlineParams& online, TargetParams& target, double momentum);

// Builds fresh online/target parameters (target starts as a copy of online).
struct Model {
    Encoder encoder;
    Heads heads;
    std::vector<Stage> fusion_layers;
    int fusion_size;

    Model(const EncoderConfig& enc, const HeadConfig& head, std::vector<Stage> layers, int fusion_hw);
    OnlineParams init(Rng& rng) const;
    static TargetParams target_from(const OnlineParams& online) { return {online.encoder, online.projector}; }
};

}  // namespace maskboot::encoder
