#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "maskboot/encoder.hpp"
#include "maskboot/image.hpp"
#include "maskboot/nn.hpp"
#include "maskboot/rng.hpp"

namespace fixtures {

using namespace maskboot;

// ~1.6k parameters: small enough for exhaustive central differences.
inline encoder::Model tiny_model() {
    encoder::EncoderConfig cfg;
    cfg.input_size = 16;
    cfg.channels = {4, 4, 4, 4};
    return encoder::Model(cfg, {8, 4}, {encoder::Stage::s2, encoder::Stage::s3, encoder::Stage::s4}, 2);
}

inline FeatureMap random_image(Rng& rng, int size) {
    FeatureMap m(3, size, size);
    for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = rng.uniform();
    return m;
}

inline FeatureMap random_map(Rng& rng, int d, int h, int w) {
    FeatureMap m(d, h, w);
    for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = rng.normal();
    return m;
}

// Labels constant on square blocks of side `block`.
inline LabelGrid blocky_labels(Rng& rng, int size, int block, int labels) {
    LabelGrid g(size, size);
    const int nb = (size + block - 1) / block;
    std::vector<std::uint8_t> pick(static_cast<std::size_t>(nb * nb));
    for (auto& p : pick) p = static_cast<std::uint8_t>(rng.uniform_int(0, labels - 1));
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) g(r, c) = pick[static_cast<std::size_t>((r / block) * nb + c / block)];
    return g;
}

inline Eigen::MatrixXd random_unit_rows(Rng& rng, int n, int d) {
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    for (int i = 0; i < n; ++i) m.row(i).normalize();
    return m;
}

inline std::vector<nn::ParamSet*> sets(encoder::OnlineParams& p) { return {&p.encoder, &p.projector, &p.predictor}; }

inline Eigen::VectorXd flatten(const std::vector<const nn::ParamSet*>& ps) {
    std::size_t n = 0;
    for (auto* p : ps) n += p->scalar_count();
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (auto* p : ps)
        for (std::size_t i = 0; i < p->scalar_count(); ++i) v(k++) = p->scalar(i);
    return v;
}

inline Eigen::VectorXd flatten(const encoder::OnlineParams& p) {
    return flatten({&p.encoder, &p.projector, &p.predictor});
}

// Central differences of f over every scalar of `params`.
inline Eigen::VectorXd central_differences(encoder::OnlineParams& params, const std::function<double()>& f,
                                           double eps = 1e-6) {
    std::vector<double> out;
    for (auto* ps : sets(params))
        for (std::size_t i = 0; i < ps->scalar_count(); ++i) {
            const double keep = ps->scalar(i);
            ps->scalar(i) = keep + eps;
            const double up = f();
            ps->scalar(i) = keep - eps;
            const double down = f();
            ps->scalar(i) = keep;
            out.push_back((up - down) / (2.0 * eps));
        }
    return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double denom = std::max(a.norm() + b.norm(), 1e-30);
    return (a - b).norm() / denom;
}

}  // namespace fixtures
