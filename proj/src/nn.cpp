#include "maskboot/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "maskboot/errors.hpp"

namespace maskboot::nn {

int ParamSet::add(std::string name, MatrixXd value) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return static_cast<int>(tensors_.size()) - 1;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
        out.add(names_[i], MatrixXd::Zero(tensors_[i].rows(), tensors_[i].cols()));
    return out;
}

void ParamSet::set_zero() {
    for (auto& t : tensors_) t.setZero();
}

bool ParamSet::same_structure(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
        if (tensors_[i].rows() != other[i].rows() || tensors_[i].cols() != other[i].cols()) return false;
    return true;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
    return n;
}

double& ParamSet::scalar(std::size_t flat) {
    for (auto& t : tensors_) {
        if (flat < static_cast<std::size_t>(t.size())) return t.data()[flat];
        flat -= static_cast<std::size_t>(t.size());
    }
    throw ContractError("ParamSet::scalar: index out of range");
}

double ParamSet::scalar(std::size_t flat) const { return const_cast<ParamSet*>(this)->scalar(flat); }

bool ParamSet::operator==(const ParamSet& other) const {
    if (!same_structure(other)) return false;
    for (std::size_t i = 0; i < size(); ++i)
        if (std::memcmp(tensors_[i].data(), other[i].data(), sizeof(double) * tensors_[i].size()) != 0) return false;
    return true;
}

MatrixXd silu(const MatrixXd& z) {
    return (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

MatrixXd silu_backward(const MatrixXd& z, const MatrixXd& grad_out) {
    const auto sig = (1.0 / (1.0 + (-z.array()).exp()));
    return (grad_out.array() * sig * (1.0 + z.array() * (1.0 - sig))).matrix();
}

namespace {

int out_extent(int in, ConvShape s) {
    const int pad = s.kernel / 2;
    return (in + 2 * pad - s.kernel) / s.stride + 1;
}

MatrixXd im2col(const FeatureMap& in, ConvShape s, int out_h, int out_w) {
    const int k = s.kernel, pad = k / 2;
    MatrixXd cols(in.channels * k * k, out_h * out_w);
    for (int ci = 0; ci < in.channels; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int row = (ci * k + ky) * k + kx;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * s.stride + ky - pad;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * s.stride + kx - pad;
                        cols(row, oy * out_w + ox) =
                            (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width) ? in.at(ci, iy, ix) : 0.0;
                    }
                }
            }
    return cols;
}

void col2im(const MatrixXd& cols, ConvShape s, int out_h, int out_w, FeatureMap& grad_in) {
    const int k = s.kernel, pad = k / 2;
    for (int ci = 0; ci < grad_in.channels; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int row = (ci * k + ky) * k + kx;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * s.stride + ky - pad;
                    if (iy < 0 || iy >= grad_in.height) continue;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * s.stride + kx - pad;
                        if (ix >= 0 && ix < grad_in.width) grad_in.at(ci, iy, ix) += cols(row, oy * out_w + ox);
                    }
                }
            }
}

}  // namespace

FeatureMap conv_forward(const MatrixXd& weight, const MatrixXd& bias, const FeatureMap& in, ConvShape s) {
    MASKBOOT_REQUIRE(weight.cols() == in.channels * s.kernel * s.kernel, "conv_forward: weight/input channel mismatch");
    const int oh = out_extent(in.height, s), ow = out_extent(in.width, s);
    FeatureMap out(static_cast<int>(weight.rows()), oh, ow);
    if (s.kernel == 1 && s.stride == 1) {
        out.data.noalias() = weight * in.data;
    } else {
        const MatrixXd cols = im2col(in, s, oh, ow);
        out.data.noalias() = weight * cols;
    }
    out.data.colwise() += bias.col(0);
    return out;
}

FeatureMap conv_backward(const MatrixXd& weight, const FeatureMap& in, const FeatureMap& grad_out, ConvShape s,
                         MatrixXd& grad_weight, MatrixXd& grad_bias) {
    FeatureMap grad_in(in.channels, in.height, in.width);
    grad_bias.col(0) += grad_out.data.rowwise().sum();
    if (s.kernel == 1 && s.stride == 1) {
        grad_weight.noalias() += grad_out.data * in.data.transpose();
        grad_in.data.noalias() = weight.transpose() * grad_out.data;
        return grad_in;
    }
    const MatrixXd cols = im2col(in, s, grad_out.height, grad_out.width);
    grad_weight.noalias() += grad_out.data * cols.transpose();
    const MatrixXd grad_cols = weight.transpose() * grad_out.data;
    col2im(grad_cols, s, grad_out.height, grad_out.width, grad_in);
    return grad_in;
}

FeatureMap avgpool2_forward(const FeatureMap& in) {
    FeatureMap out(in.channels, in.height / 2, in.width / 2);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) {
            const int o = r * out.width + c;
            const int i00 = (2 * r) * in.width + 2 * c;
            const int i10 = i00 + in.width;
            out.data.col(o) = 0.25 * (in.data.col(i00) + in.data.col(i00 + 1) + in.data.col(i10) + in.data.col(i10 + 1));
        }
    return out;
}

FeatureMap avgpool2_backward(const FeatureMap& grad_out, int in_height, int in_width) {
    FeatureMap grad_in(grad_out.channels, in_height, in_width);
    for (int r = 0; r < grad_out.height; ++r)
        for (int c = 0; c < grad_out.width; ++c) {
            const auto g = 0.25 * grad_out.data.col(r * grad_out.width + c);
            const int i00 = (2 * r) * in_width + 2 * c;
            const int i10 = i00 + in_width;
            grad_in.data.col(i00) += g;
            grad_in.data.col(i00 + 1) += g;
            grad_in.data.col(i10) += g;
            grad_in.data.col(i10 + 1) += g;
        }
    return grad_in;
}

MatrixXd bilinear_matrix(int in_size, int out_size) {
    MASKBOOT_REQUIRE(in_size > 0 && out_size > 0, "bilinear_matrix: sizes must be positive");
    MatrixXd m = MatrixXd::Zero(out_size, in_size);
    const double scale = static_cast<double>(in_size) / out_size;
    for (int i = 0; i < out_size; ++i) {
        const double src = std::clamp((i + 0.5) * scale - 0.5, 0.0, in_size - 1.0);
        const int i0 = static_cast<int>(src);
        const int i1 = std::min(i0 + 1, in_size - 1);
        const double w = src - i0;
        m(i, i0) += 1.0 - w;
        m(i, i1) += w;
    }
    return m;
}

MatrixXd bilinear_operator(int in_h, int in_w, int out_h, int out_w) {
    const MatrixXd ry = bilinear_matrix(in_h, out_h);
    const MatrixXd rx = bilinear_matrix(in_w, out_w);
    MatrixXd op = MatrixXd::Zero(out_h * out_w, in_h * in_w);
    for (int i = 0; i < out_h; ++i)
        for (int r = 0; r < in_h; ++r) {
            if (ry(i, r) == 0.0) continue;
            for (int j = 0; j < out_w; ++j)
                for (int c = 0; c < in_w; ++c) op(i * out_w + j, r * in_w + c) = ry(i, r) * rx(j, c);
        }
    return op;
}

FeatureMap bilinear_resize(const FeatureMap& in, int out_h, int out_w) {
    FeatureMap out(in.channels, out_h, out_w);
    if (out_h == in.height && out_w == in.width) {
        out.data = in.data;
        return out;
    }
    out.data.noalias() = in.data * bilinear_operator(in.height, in.width, out_h, out_w).transpose();
    return out;
}

FeatureMap bilinear_resize_backward(const FeatureMap& grad_out, int in_h, int in_w) {
    FeatureMap grad_in(grad_out.channels, in_h, in_w);
    if (grad_out.height == in_h && grad_out.width == in_w) {
        grad_in.data = grad_out.data;
        return grad_in;
    }
    grad_in.data.noalias() = grad_out.data * bilinear_operator(in_h, in_w, grad_out.height, grad_out.width);
    return grad_in;
}

MatrixXd layernorm_forward(const MatrixXd& x, const MatrixXd& gain, const MatrixXd& bias, LayerNormCache& cache,
                           double eps) {
    const auto d = static_cast<double>(x.rows());
    cache.normalized.resize(x.rows(), x.cols());
    cache.inv_std.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mean = x.col(j).sum() / d;
        const auto centered = x.col(j).array() - mean;
        const double var = centered.square().sum() / d;
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std(j) = inv;
        cache.normalized.col(j) = (centered * inv).matrix();
    }
    MatrixXd out = (cache.normalized.array().colwise() * gain.col(0).array()).matrix();
    out.colwise() += bias.col(0);
    return out;
}

MatrixXd layernorm_backward(const MatrixXd& grad_out, const MatrixXd& gain, const LayerNormCache& cache,
                            MatrixXd& grad_gain, MatrixXd& grad_bias) {
    const auto d = static_cast<double>(grad_out.rows());
    grad_gain.col(0) += (grad_out.array() * cache.normalized.array()).rowwise().sum().matrix();
    grad_bias.col(0) += grad_out.rowwise().sum();
    const MatrixXd g = (grad_out.array().colwise() * gain.col(0).array()).matrix();
    MatrixXd grad_in(grad_out.rows(), grad_out.cols());
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
        const double sum_g = g.col(j).sum();
        const double sum_gx = g.col(j).dot(cache.normalized.col(j));
        grad_in.col(j) =
            (cache.inv_std(j) / d) * (d * g.col(j).array() - sum_g - cache.normalized.col(j).array() * sum_gx).matrix();
    }
    return grad_in;
}

MatrixXd l2_normalize_columns(const MatrixXd& x, VectorXd* norms, double floor) {
    MatrixXd out(x.rows(), x.cols());
    VectorXd n(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        n(j) = std::max(x.col(j).norm(), floor);
        out.col(j) = x.col(j) / n(j);
    }
    if (norms) *norms = n;
    return out;
}

MatrixXd l2_normalize_columns_backward(const MatrixXd& normalized, const VectorXd& norms, const MatrixXd& grad_out) {
    MatrixXd grad_in(grad_out.rows(), grad_out.cols());
    for (Eigen::Index j = 0; j < grad_out.cols(); ++j) {
        const double proj = normalized.col(j).dot(grad_out.col(j));
        grad_in.col(j) = (grad_out.col(j) - proj * normalized.col(j)) / norms(j);
    }
    return grad_in;
}

MatrixXd fan_in_uniform(Rng& rng, int rows, int cols, int fan_in, double gain) {
    const double bound = gain * std::sqrt(6.0 / fan_in);
    MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
    return m;
}

std::uint64_t hash_params(const ParamSet& params) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t t = 0; t < params.size(); ++t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(params[t].data());
        for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(params[t].size()); ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

}  // namespace maskboot::nn
