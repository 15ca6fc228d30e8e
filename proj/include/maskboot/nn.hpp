#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "maskboot/image.hpp"
#include "maskboot/rng.hpp"

// Small hand-differentiated building blocks: every forward has an explicit
// backward taking the cached forward inputs.
namespace maskboot::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Named list of parameter tensors. Gradients and optimizer state use the same
// structure (zeros_like).
class ParamSet {
public:
    int add(std::string name, MatrixXd value);

    std::size_t size() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    MatrixXd& operator[](std::size_t i) { return tensors_[i]; }
    const MatrixXd& operator[](std::size_t i) const { return tensors_[i]; }

    ParamSet zeros_like() const;
    void set_zero();
    bool same_structure(const ParamSet& other) const;
    std::size_t scalar_count() const;

    // Flat indexing across all tensors, column-major within each tensor.
    double& scalar(std::size_t flat_index);
    double scalar(std::size_t flat_index) const;

    bool operator==(const ParamSet& other) const;

private:
    std::vector<std::string> names_;
    std::vector<MatrixXd> tensors_;
};

// SiLU: zero at zero and smooth everywhere.
MatrixXd silu(const MatrixXd& z);
MatrixXd silu_backward(const MatrixXd& z, const MatrixXd& grad_out);

// 3×3 (pad 1) or 1×1 (pad 0) convolution with stride 1 or 2.
// weight: Cout × (Cin·k·k), rows of the patch matrix ordered (ci, ky, kx).
struct ConvShape {
    int kernel = 3;
    int stride = 1;
};
FeatureMap conv_forward(const MatrixXd& weight, const MatrixXd& bias, const FeatureMap& in, ConvShape shape);
// Accumulates weight/bias gradients and returns the input gradient.
FeatureMap conv_backward(const MatrixXd& weight, const FeatureMap& in, const FeatureMap& grad_out, ConvShape shape,
                         MatrixXd& grad_weight, MatrixXd& grad_bias);

FeatureMap avgpool2_forward(const FeatureMap& in);
FeatureMap avgpool2_backward(const FeatureMap& grad_out, int in_height, int in_width);

// 1-D bilinear resampling operator (out × in), half-pixel centres, edge clamp.
// in == out gives the identity exactly.
MatrixXd bilinear_matrix(int in_size, int out_size);
// (Ho·Wo) × (H·W) operator acting on row-major flattened grids.
MatrixXd bilinear_operator(int in_h, int in_w, int out_h, int out_w);
FeatureMap bilinear_resize(const FeatureMap& in, int out_h, int out_w);
FeatureMap bilinear_resize_backward(const FeatureMap& grad_out, int in_h, int in_w);

// Column-wise layer normalization of a D × N batch.
struct LayerNormCache {
    MatrixXd normalized;  // x̂
    VectorXd inv_std;     // per column
};
MatrixXd layernorm_forward(const MatrixXd& x, const MatrixXd& gain, const MatrixXd& bias, LayerNormCache& cache,
                           double eps = 1e-5);
MatrixXd layernorm_backward(const MatrixXd& grad_out, const MatrixXd& gain, const LayerNormCache& cache,
                            MatrixXd& grad_gain, MatrixXd& grad_bias);

// Column-wise ℓ2 normalization; columns with norm below `floor` are divided by `floor`.
MatrixXd l2_normalize_columns(const MatrixXd& x, VectorXd* norms = nullptr, double floor = 1e-12);
MatrixXd l2_normalize_columns_backward(const MatrixXd& normalized, const VectorXd& norms, const MatrixXd& grad_out);

// Uniform(-bound, bound) with bound = gain·sqrt(6 / fan_in).
MatrixXd fan_in_uniform(Rng& rng, int rows, int cols, int fan_in, double gain = 1.0);

// FNV-1a over the raw bytes of every tensor; used for "did anything change" checks.
std::uint64_t hash_params(const ParamSet& params);

}  // namespace maskboot::nn
