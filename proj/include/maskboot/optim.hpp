#pragma once

#include "maskboot/encoder.hpp"

namespace maskboot::optim {

struct SgdConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1.5e-6;

    void validate() const;
};

// Cosine decay from `base` to 0 over `total` steps; `step` counts from 0.
double cosine_lr(double base, long step, long total);

// Velocity buffers mirroring OnlineParams.
struct State {
    encoder::OnlineParams velocity;
    long updates = 0;

    static State zeros_like(const encoder::OnlineParams& params);
    bool operator==(const State&) const = default;
};

enum Group : unsigned { encoder_group = 1u, projector_group = 2u, predictor_group = 4u, all_groups = 7u };

// v ← μ·v + g + wd·θ;  θ ← θ − lr·v, applied to the groups in `groups` only.
void sgd_step(encoder::OnlineParams& params, const encoder::OnlineParams& grads, State& state, const SgdConfig& cfg,
              double lr, unsigned groups = all_groups);

}  // namespace maskboot::optim
