#include <doctest.h>

#include <cmath>

#include "maskboot/nn.hpp"
#include "run_fixtures.hpp"

using namespace maskboot;
using namespace maskboot::nn;

namespace {

// Direct-loop convolution used as an oracle.
FeatureMap conv_oracle(const MatrixXd& w, const MatrixXd& b, const FeatureMap& in, int k, int stride) {
    const int pad = k / 2;
    const int ho = (in.height + 2 * pad - k) / stride + 1, wo = (in.width + 2 * pad - k) / stride + 1;
    FeatureMap out(static_cast<int>(w.rows()), ho, wo);
    for (int co = 0; co < out.channels; ++co)
        for (int r = 0; r < ho; ++r)
            for (int c = 0; c < wo; ++c) {
                double acc = b(co, 0);
                for (int ci = 0; ci < in.channels; ++ci)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int y = r * stride + ky - pad, x = c * stride + kx - pad;
                            if (y < 0 || x < 0 || y >= in.height || x >= in.width) continue;
                            acc += w(co, (ci * k + ky) * k + kx) * in.at(ci, y, x);
                        }
                out.at(co, r, c) = acc;
            }
    return out;
}

double weighted(const FeatureMap& m, const FeatureMap& probe) { return (m.data.array() * probe.data.array()).sum(); }

}  // namespace

TEST_CASE("convolution matches direct loops") {
    Rng rng(1);
    for (auto [k, s] : {std::pair{3, 1}, {3, 2}, {1, 1}, {1, 2}}) {
        const auto in = fixtures::random_map(rng, 3, 7, 6);
        MatrixXd w = fan_in_uniform(rng, 4, 3 * k * k, 3 * k * k), b = MatrixXd::Random(4, 1);
        const auto got = conv_forward(w, b, in, {k, s});
        const auto want = conv_oracle(w, b, in, k, s);
        REQUIRE(got.same_shape(want));
        CHECK((got.data - want.data).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("convolution backward matches finite differences") {
    Rng rng(2);
    for (auto [k, s] : {std::pair{3, 1}, {3, 2}, {1, 2}}) {
        auto in = fixtures::random_map(rng, 2, 5, 5);
        MatrixXd w = MatrixXd::Random(3, 2 * k * k), b = MatrixXd::Random(3, 1);
        const auto out = conv_forward(w, b, in, {k, s});
        const auto probe = fixtures::random_map(rng, out.channels, out.height, out.width);
        MatrixXd gw = MatrixXd::Zero(w.rows(), w.cols()), gb = MatrixXd::Zero(3, 1);
        const auto gin = conv_backward(w, in, probe, {k, s}, gw, gb);
        const double eps = 1e-6;
        auto f = [&] { return weighted(conv_forward(w, b, in, {k, s}), probe); };
        for (MatrixXd* m : {&w, &b, &in.data}) {
            const MatrixXd& g = m == &w ? gw : m == &b ? gb : gin.data;
            Eigen::VectorXd num(m->size()), ana(m->size());
            for (Eigen::Index i = 0; i < m->size(); ++i) {
                const double keep = m->data()[i];
                m->data()[i] = keep + eps;
                const double up = f();
                m->data()[i] = keep - eps;
                const double dn = f();
                m->data()[i] = keep;
                num(i) = (up - dn) / (2 * eps);
                ana(i) = g.data()[i];
            }
            CHECK(fixtures::relative_error(num, ana) < 1e-8);
        }
    }
}

TEST_CASE("bilinear resize: identity at equal size, constants preserved, adjoint backward") {
    Rng rng(3);
    const auto m = fixtures::random_map(rng, 2, 5, 7);
    CHECK(bilinear_resize(m, 5, 7).data == m.data);
    FeatureMap c(1, 4, 4);
    c.data.setConstant(2.5);
    for (auto [h, w] : {std::pair{2, 2}, {7, 3}, {9, 9}})
        CHECK((bilinear_resize(c, h, w).data.array() - 2.5).abs().maxCoeff() < 1e-14);
    const auto up = fixtures::random_map(rng, 2, 9, 4);
    // <R x, y> == <x, R^T y>
    const double lhs = weighted(bilinear_resize(m, 9, 4), up);
    const double rhs = weighted(m, bilinear_resize_backward(up, 5, 7));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("avg pool backward is the adjoint of the forward") {
    Rng rng(4);
    const auto x = fixtures::random_map(rng, 3, 6, 6);
    const auto y = fixtures::random_map(rng, 3, 3, 3);
    CHECK(weighted(avgpool2_forward(x), y) == doctest::Approx(weighted(x, avgpool2_backward(y, 6, 6))).epsilon(1e-12));
    CHECK(avgpool2_forward(x).at(1, 1, 2) ==
          doctest::Approx((x.at(1, 2, 4) + x.at(1, 2, 5) + x.at(1, 3, 4) + x.at(1, 3, 5)) / 4));
}

TEST_CASE("layernorm, silu and l2 normalization gradients") {
    Rng rng(5);
    MatrixXd x = MatrixXd::Random(5, 3), gain = MatrixXd::Random(5, 1), bias = MatrixXd::Random(5, 1);
    const MatrixXd probe = MatrixXd::Random(5, 3);
    LayerNormCache cache;
    const MatrixXd y = layernorm_forward(x, MatrixXd::Ones(5, 1), MatrixXd::Zero(5, 1), cache);
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(y.col(c).mean()) < 1e-12);
        CHECK(y.col(c).squaredNorm() / 5 == doctest::Approx(1.0).epsilon(1e-3));
    }
    MatrixXd gg = MatrixXd::Zero(5, 1), gb = MatrixXd::Zero(5, 1);
    layernorm_forward(x, gain, bias, cache);
    const MatrixXd gx = layernorm_backward(probe, gain, cache, gg, gb);
    auto f = [&] {
        LayerNormCache c2;
        return (layernorm_forward(x, gain, bias, c2).array() * probe.array()).sum();
    };
    const double eps = 1e-6;
    for (MatrixXd* m : {&x, &gain, &bias}) {
        const MatrixXd& g = m == &x ? gx : m == &gain ? gg : gb;
        for (Eigen::Index i = 0; i < m->size(); ++i) {
            const double keep = m->data()[i];
            m->data()[i] = keep + eps;
            const double up = f();
            m->data()[i] = keep - eps;
            const double dn = f();
            m->data()[i] = keep;
            CHECK((up - dn) / (2 * eps) == doctest::Approx(g.data()[i]).epsilon(1e-6));
        }
    }
    CHECK(silu(MatrixXd::Zero(2, 2)).isZero());
    const MatrixXd z = MatrixXd::Random(3, 3);
    const MatrixXd ds = silu_backward(z, MatrixXd::Ones(3, 3));
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        MatrixXd a = z, b = z;
        a.data()[i] += 1e-6;
        b.data()[i] -= 1e-6;
        CHECK((silu(a).sum() - silu(b).sum()) / 2e-6 == doctest::Approx(ds.data()[i]).epsilon(1e-6));
    }
    VectorXd norms;
    const MatrixXd n = l2_normalize_columns(x, &norms);
    for (int c = 0; c < 3; ++c) CHECK(n.col(c).norm() == doctest::Approx(1.0).epsilon(1e-14));
    const MatrixXd gn = l2_normalize_columns_backward(n, norms, probe);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        MatrixXd a = x, b = x;
        a.data()[i] += 1e-6;
        b.data()[i] -= 1e-6;
        const double num = ((l2_normalize_columns(a) - l2_normalize_columns(b)).array() * probe.array()).sum() / 2e-6;
        CHECK(num == doctest::Approx(gn.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("param sets: flat indexing, structure and hashing") {
    ParamSet p;
    p.add("a", MatrixXd::Constant(2, 2, 1.0));
    p.add("b", MatrixXd::Constant(3, 1, 2.0));
    CHECK(p.scalar_count() == 7u);
    CHECK(p.scalar(4) == 2.0);
    const auto z = p.zeros_like();
    CHECK(z.same_structure(p));
    CHECK(z[0].isZero());
    const auto h = hash_params(p);
    p.scalar(6) = 2.0000001;
    CHECK(hash_params(p) != h);
    Rng r(1);
    CHECK(fan_in_uniform(r, 4, 4, 9).cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 9));
}
