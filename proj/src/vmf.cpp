#include "maskboot/vmf.hpp"

#include <cmath>

#include "maskboot/errors.hpp"

namespace maskboot::vmf {

namespace {

// Accumulates value and gradients of one term, scaled by `w`.
double nll_accumulate(const MatrixXd& bank, const Eigen::Ref<const VectorXd>& y, int c, double kappa, double w,
                      Eigen::Ref<VectorXd> grad_y, MatrixXd& grad_bank) {
    const VectorXd logits = kappa * (bank * y);
    const double mx = logits.maxCoeff();
    const VectorXd e = (logits.array() - mx).exp();
    const double log_z = mx + std::log(e.sum());
    // d/d logit_k = p_k − [k == c]; logit_k = κ μ_k·y
    VectorXd g = (e / e.sum()).eval();
    g(c) -= 1.0;
    g *= w * kappa;
    grad_y += bank.transpose() * g;
    grad_bank += g * y.transpose();
    return log_z - logits(c);
}

}  // namespace

NllResult vmf_nll(const VectorXd& y, const MatrixXd& bank, int assigned, double kappa) {
    MASKBOOT_REQUIRE(bank.cols() == y.size(), "vmf_nll: dimension mismatch");
    MASKBOOT_REQUIRE(assigned >= 0 && assigned < bank.rows(), "vmf_nll: assignment out of range");
    NllResult r;
    r.grad_y = VectorXd::Zero(y.size());
    r.grad_bank = MatrixXd::Zero(bank.rows(), bank.cols());
    r.value = nll_accumulate(bank, y, assigned, kappa, 1.0, r.grad_y, r.grad_bank);
    return r;
}

double vmf_nll_value(const VectorXd& y, const MatrixXd& bank, int assigned, double kappa) {
    MASKBOOT_REQUIRE(assigned >= 0 && assigned < bank.rows(), "vmf_nll: assignment out of range");
    const VectorXd logits = kappa * (bank * y);
    const double mx = logits.maxCoeff();
    return mx + std::log((logits.array() - mx).exp().sum()) - logits(assigned);
}

void Context::validate() const {
    MASKBOOT_REQUIRE(bank.rows() == bank_target.rows(), "consistency: prototype banks differ in K");
    MASKBOOT_REQUIRE(bank.rows() >= 1, "consistency: empty prototype bank");
    MASKBOOT_REQUIRE(y.rows() == bank.cols() && y_target.rows() == bank.cols() && bank_target.cols() == bank.cols(),
                     "consistency: feature dimension mismatch");
    MASKBOOT_REQUIRE(y.cols() == y_target.cols(), "consistency: online and target maps are not congruent");
    MASKBOOT_REQUIRE(assign.size() == static_cast<std::size_t>(y.cols()) && assign_target.size() == assign.size(),
                     "consistency: assignment count mismatch");
    for (std::size_t i = 0; i < assign.size(); ++i)
        MASKBOOT_REQUIRE(assign[i] >= 0 && assign[i] < bank.rows() && assign_target[i] >= 0 &&
                             assign_target[i] < bank.rows(),
                         "consistency: assignment out of range");
}

std::vector<int> nearest_prototypes(const MatrixXd& cells, const MatrixXd& bank) {
    MASKBOOT_REQUIRE(cells.rows() == bank.cols(), "nearest_prototypes: dimension mismatch");
    std::vector<int> out(static_cast<std::size_t>(cells.cols()));
    for (Eigen::Index i = 0; i < cells.cols(); ++i) {
        int best = 0;
        double best_d = (bank.row(0).transpose() - cells.col(i)).squaredNorm();
        for (Eigen::Index k = 1; k < bank.rows(); ++k) {
            const double d = (bank.row(k).transpose() - cells.col(i)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        out[i] = best;
    }
    return out;
}

Context make_context(MatrixXd y, MatrixXd y_target, MatrixXd bank, MatrixXd bank_target, double kappa) {
    Context ctx;
    ctx.assign = nearest_prototypes(y, bank);
    ctx.assign_target = nearest_prototypes(y_target, bank_target);
    ctx.y = std::move(y);
    ctx.y_target = std::move(y_target);
    ctx.bank = std::move(bank);
    ctx.bank_target = std::move(bank_target);
    ctx.kappa = kappa;
    ctx.validate();
    return ctx;
}

LossResult cluster_consistency_loss(const Context& ctx) {
    ctx.validate();
    const Eigen::Index n = ctx.y.cols();
    LossResult r;
    r.grad_y = MatrixXd::Zero(ctx.y.rows(), n);
    r.grad_y_target = MatrixXd::Zero(ctx.y.rows(), n);
    r.grad_bank = MatrixXd::Zero(ctx.bank.rows(), ctx.bank.cols());
    r.grad_bank_target = MatrixXd::Zero(ctx.bank.rows(), ctx.bank.cols());
    if (n == 0) return r;
    const double w = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int a = ctx.assign[i], at = ctx.assign_target[i];
        r.terms.intra_online += w * nll_accumulate(ctx.bank, ctx.y.col(i), a, ctx.kappa, w, r.grad_y.col(i), r.grad_bank);
        r.terms.intra_target += w * nll_accumulate(ctx.bank_target, ctx.y_target.col(i), at, ctx.kappa, w,
                                                   r.grad_y_target.col(i), r.grad_bank_target);
        r.terms.inter_online += w * nll_accumulate(ctx.bank_target, ctx.y.col(i), at, ctx.kappa, w, r.grad_y.col(i),
                                                   r.grad_bank_target);
        r.terms.inter_target += w * nll_accumulate(ctx.bank, ctx.y_target.col(i), a, ctx.kappa, w,
                                                   r.grad_y_target.col(i), r.grad_bank);
    }
    r.loss = r.terms.total();
    return r;
}

}  // namespace maskboot::vmf
