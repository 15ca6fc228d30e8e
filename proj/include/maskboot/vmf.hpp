#pragma once

#include <vector>

#include "maskboot/nn.hpp"

namespace maskboot::vmf {

using nn::MatrixXd;
using nn::VectorXd;

struct NllResult {
    double value = 0.0;
    VectorXd grad_y;     // D
    MatrixXd grad_bank;  // K × D
};

// −log softmax_c(κ · bank · y) for a unit vector y and unit-row bank (K × D).
NllResult vmf_nll(const VectorXd& y, const MatrixXd& bank, int assigned, double kappa);
double vmf_nll_value(const VectorXd& y, const MatrixXd& bank, int assigned, double kappa);

// Cells are stored column-wise (D × n). `assign` holds each online cell's
// prototype index in `bank`; `assign_target` each target cell's index in
// `bank_target`. Cell i of the online map pairs with cell i of the target map.
struct Context {
    MatrixXd y;
    MatrixXd y_target;
    MatrixXd bank;
    MatrixXd bank_target;
    std::vector<int> assign;
    std::vector<int> assign_target;
    double kappa = 10.0;

    void validate() const;
};

// Argmin-Euclidean assignment of each column of `cells` to a row of `bank`,
// ties to the lowest index.
std::vector<int> nearest_prototypes(const MatrixXd& cells, const MatrixXd& bank);

// Builds a context from unit cells and banks, assigning each map under its own bank.
Context make_context(MatrixXd y, MatrixXd y_target, MatrixXd bank, MatrixXd bank_target, double kappa);

struct Terms {
    double intra_online = 0.0;  // y under bank with its own assignment
    double intra_target = 0.0;  // y' under bank' with its own assignment
    double inter_online = 0.0;  // y under bank' with the target assignment
    double inter_target = 0.0;  // y' under bank with the online assignment
    double total() const { return intra_online + intra_target + inter_online + inter_target; }
};

struct LossResult {
    double loss = 0.0;  // mean over cells of the four-term sum
    Terms terms;        // each term's mean over cells
    MatrixXd grad_y, grad_y_target, grad_bank, grad_bank_target;
};

// Assignments are constants: no gradient flows through them.
LossResult cluster_consistency_loss(const Context& ctx);

}  // namespace maskboot::vmf
