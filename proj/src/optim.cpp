#include "maskboot/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maskboot/errors.hpp"

namespace maskboot::optim {

void SgdConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.sgd_momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
}

double cosine_lr(double base, long step, long total) {
    if (total <= 0) return base;
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

State State::zeros_like(const encoder::OnlineParams& params) {
    return {{params.encoder.zeros_like(), params.projector.zeros_like(), params.predictor.zeros_like()}, 0};
}

namespace {

void step_set(nn::ParamSet& p, const nn::ParamSet& g, nn::ParamSet& v, const SgdConfig& cfg, double lr) {
    MASKBOOT_REQUIRE(p.same_structure(g) && p.same_structure(v), "sgd_step: parameter structure mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
        p[i] -= lr * v[i];
    }
}

}  // namespace

void sgd_step(encoder::OnlineParams& params, const encoder::OnlineParams& grads, State& state, const SgdConfig& cfg,
              double lr, unsigned groups) {
    if (groups & encoder_group) step_set(params.encoder, grads.encoder, state.velocity.encoder, cfg, lr);
    if (groups & projector_group) step_set(params.projector, grads.projector, state.velocity.projector, cfg, lr);
    if (groups & predictor_group) step_set(params.predictor, grads.predictor, state.velocity.predictor, cfg, lr);
    ++state.updates;
}

}  // namespace maskboot::optim
