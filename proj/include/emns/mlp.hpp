#pragma once

// Dense tanh networks with exact input derivatives.
//
// A network maps x to out = s_out * y where y = W_L h_{L-1} + b_L,
// h_k = tanh(W_k h_{k-1} + b_k) and h_0 = (x - mean) / scale.
// Input derivatives are propagated forward as tangent columns next to the
// primal column, so every layer is a single matrix product; the reverse pass
// runs through primal and tangent columns together, which is what training on
// input gradients (PotentialNet) requires.

#include "emns/errors.hpp"
#include "emns/rng.hpp"
#include "emns/types.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace emns {

struct MlpParams {
    std::vector<Mat> weights;  // weights[k]: sizes[k+1] x sizes[k]
    std::vector<Vec> biases;
    Vec input_mean;
    Vec input_scale;
    Vec output_scale;

    [[nodiscard]] int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
    [[nodiscard]] int output_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }
    [[nodiscard]] std::size_t layer_count() const { return weights.size(); }

    [[nodiscard]] std::vector<int> layer_sizes() const {
        std::vector<int> sizes;
        if (weights.empty()) return sizes;
        sizes.push_back(input_dim());
        for (const auto& w : weights) sizes.push_back(static_cast<int>(w.rows()));
        return sizes;
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t k = 0; k < weights.size(); ++k) n += static_cast<std::size_t>(weights[k].size() + biases[k].size());
        return n;
    }

    void validate() const {
        if (weights.empty() || weights.size() != biases.size()) throw DimensionError("MLP needs matching weight and bias lists");
        for (std::size_t k = 0; k < weights.size(); ++k) {
            if (biases[k].size() != weights[k].rows()) throw DimensionError("MLP bias length mismatch at layer " + std::to_string(k));
            if (k > 0 && weights[k].cols() != weights[k - 1].rows()) {
                throw DimensionError("MLP layer " + std::to_string(k) + " input width mismatch");
            }
        }
        if (input_mean.size() != input_dim() || input_scale.size() != input_dim()) {
            throw DimensionError("MLP input normalization has wrong length");
        }
        if (output_scale.size() != output_dim()) throw DimensionError("MLP output scale has wrong length");
        if ((input_scale.array() <= 0.0).any() || (output_scale.array() <= 0.0).any()) {
            throw DomainError("MLP normalization scales must be positive");
        }
    }

    bool operator==(const MlpParams& o) const {
        if (weights.size() != o.weights.size()) return false;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            if (weights[k].rows() != o.weights[k].rows() || weights[k].cols() != o.weights[k].cols()) return false;
            if (weights[k] != o.weights[k] || biases[k] != o.biases[k]) return false;
        }
        return input_mean == o.input_mean && input_scale == o.input_scale && output_scale == o.output_scale;
    }
};

/// Glorot-uniform weights, zero biases, identity normalization.
inline MlpParams mlp_init(const std::vector<int>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw DimensionError("mlp_init: need at least input and output sizes");
    MlpParams p;
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
        const int fan_in = sizes[k];
        const int fan_out = sizes[k + 1];
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        Mat w(fan_out, fan_in);
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(rng, -limit, limit);
        }
        p.weights.push_back(std::move(w));
        p.biases.push_back(Vec::Zero(fan_out));
    }
    p.input_mean = Vec::Zero(sizes.front());
    p.input_scale = Vec::Ones(sizes.front());
    p.output_scale = Vec::Ones(sizes.back());
    return p;
}

/// Gradient buffers shaped like the network parameters.
struct MlpGrads {
    std::vector<Mat> weights;
    std::vector<Vec> biases;

    explicit MlpGrads(const MlpParams& p) {
        for (std::size_t k = 0; k < p.weights.size(); ++k) {
            weights.push_back(Mat::Zero(p.weights[k].rows(), p.weights[k].cols()));
            biases.push_back(Vec::Zero(p.biases[k].size()));
        }
    }
};

/// Batched forward/backward pass. Tangents are taken along the first
/// `tangents` input coordinates, in physical (un-normalized) units.
class MlpBatch {
public:
    void forward(const MlpParams& p, const Mat& x, int tangents) {
        if (x.rows() != p.input_dim()) throw DimensionError("MLP input has wrong dimension");
        batch_ = x.cols();
        tangents_ = tangents;
        const Eigen::Index cols = batch_ * (1 + tangents_);
        const std::size_t layers = p.layer_count();
        act_.resize(layers);
        pre_.resize(layers);

        Mat& a0 = act_[0];
        a0.setZero(p.input_dim(), cols);
        a0.leftCols(batch_) = (x.colwise() - p.input_mean).array().colwise() / p.input_scale.array();
        for (int c = 0; c < tangents_; ++c) {
            a0.block(c, batch_ * (1 + c), 1, batch_).setConstant(1.0 / p.input_scale(c));
        }
        for (std::size_t k = 0; k < layers; ++k) {
            Mat& z = pre_[k];
            z.noalias() = p.weights[k] * act_[k];
            z.leftCols(batch_).colwise() += p.biases[k];
            if (k + 1 == layers) break;
            Mat& a = act_[k + 1];
            a.resize(z.rows(), cols);
            a.leftCols(batch_) = z.leftCols(batch_).array().tanh();
            const auto d = 1.0 - a.leftCols(batch_).array().square();
            for (int c = 1; c <= tangents_; ++c) {
                a.middleCols(batch_ * c, batch_) = d * z.middleCols(batch_ * c, batch_).array();
            }
        }
        output_scale_ = p.output_scale;
    }

    /// Network outputs (physical units), out x batch.
    [[nodiscard]] Mat output() const {
        return output_scale_.asDiagonal() * pre_.back().leftCols(batch_);
    }

    /// d output / d x_c (physical units), out x batch.
    [[nodiscard]] Mat tangent(int c) const {
        return output_scale_.asDiagonal() * pre_.back().middleCols(batch_ * (1 + c), batch_);
    }

    /// Accumulates parameter gradients of sum(seed_out .* output) + sum_c sum(seed_tan[c] .* tangent(c)).
    /// Either seed may be empty.
    void backward(const MlpParams& p, const Mat& seed_out, const std::vector<Mat>& seed_tan, MlpGrads& grads) const {
        const std::size_t layers = p.layer_count();
        const Eigen::Index cols = batch_ * (1 + tangents_);
        Mat adj_z = Mat::Zero(p.output_dim(), cols);
        if (seed_out.size() > 0) adj_z.leftCols(batch_) = output_scale_.asDiagonal() * seed_out;
        for (int c = 0; c < tangents_ && c < static_cast<int>(seed_tan.size()); ++c) {
            if (seed_tan[static_cast<std::size_t>(c)].size() == 0) continue;
            adj_z.middleCols(batch_ * (1 + c), batch_) = output_scale_.asDiagonal() * seed_tan[static_cast<std::size_t>(c)];
        }
        for (std::size_t kk = layers; kk-- > 0;) {
            grads.weights[kk].noalias() += adj_z * act_[kk].transpose();
            grads.biases[kk] += adj_z.leftCols(batch_).rowwise().sum();
            if (kk == 0) break;
            Mat adj_a = p.weights[kk].transpose() * adj_z;
            // Undo the activation of layer kk: a = [tanh(z), d .* zdot_c], d = 1 - tanh(z)^2.
            const Mat& a = act_[kk];
            const Mat& z = pre_[kk - 1];
            const auto h = a.leftCols(batch_).array();
            const Eigen::ArrayXXd d = 1.0 - h.square();
            Eigen::ArrayXXd adj_d = Eigen::ArrayXXd::Zero(d.rows(), d.cols());
            Mat next(adj_a.rows(), cols);
            for (int c = 1; c <= tangents_; ++c) {
                const auto adj_t = adj_a.middleCols(batch_ * c, batch_).array();
                adj_d += z.middleCols(batch_ * c, batch_).array() * adj_t;
                next.middleCols(batch_ * c, batch_) = d * adj_t;
            }
            next.leftCols(batch_) = d * (adj_a.leftCols(batch_).array() - 2.0 * h * adj_d);
            adj_z = std::move(next);
        }
    }

    [[nodiscard]] Eigen::Index batch() const { return batch_; }

private:
    Eigen::Index batch_ = 0;
    int tangents_ = 0;
    std::vector<Mat> act_;  // act_[k]: input of layer k, [primal | tangents]
    std::vector<Mat> pre_;  // pre_[k]: W_k act_[k] (+ b_k on the primal block)
    Vec output_scale_;
};

/// Value, input Jacobian and (optionally) input Hessians at one point.
struct MlpJet {
    Vec value;
    Mat jacobian;               // out x tangents
    std::vector<Mat> hessians;  // per output, tangents x tangents
};

/// Exact first- and second-order derivatives along the first `tangents` inputs,
/// propagated as [primal | first | second (j <= k)] columns.
inline MlpJet mlp_jet(const MlpParams& p, const Vec& x, int tangents, bool second_order) {
    if (x.size() != p.input_dim()) throw DimensionError("MLP input has wrong dimension");
    if (tangents < 0 || tangents > p.input_dim()) throw DimensionError("MLP tangent count out of range");
    const int nt = tangents;
    const int npairs = second_order ? nt * (nt + 1) / 2 : 0;
    const int cols = 1 + nt + npairs;
    Mat a = Mat::Zero(p.input_dim(), cols);
    a.col(0) = (x - p.input_mean).cwiseQuotient(p.input_scale);
    for (int c = 0; c < nt; ++c) a(c, 1 + c) = 1.0 / p.input_scale(c);
    Mat z;
    for (std::size_t k = 0; k < p.layer_count(); ++k) {
        z.noalias() = p.weights[k] * a;
        z.col(0) += p.biases[k];
        if (k + 1 == p.layer_count()) break;
        a.resize(z.rows(), cols);
        const Eigen::ArrayXd h = z.col(0).array().tanh();
        const Eigen::ArrayXd d = 1.0 - h.square();
        const Eigen::ArrayXd dd = -2.0 * h * d;
        a.col(0) = h.matrix();
        for (int c = 1; c <= nt; ++c) a.col(c) = (d * z.col(c).array()).matrix();
        if (second_order) {
            int col = 1 + nt;
            for (int j = 0; j < nt; ++j) {
                for (int l = j; l < nt; ++l, ++col) {
                    a.col(col) = (d * z.col(col).array() + dd * z.col(1 + j).array() * z.col(1 + l).array()).matrix();
                }
            }
        }
    }
    MlpJet jet;
    jet.value = z.col(0).cwiseProduct(p.output_scale);
    jet.jacobian = p.output_scale.asDiagonal() * z.middleCols(1, nt);
    if (second_order) {
        jet.hessians.assign(static_cast<std::size_t>(p.output_dim()), Mat::Zero(nt, nt));
        int col = 1 + nt;
        for (int j = 0; j < nt; ++j) {
            for (int l = j; l < nt; ++l, ++col) {
                for (int o = 0; o < p.output_dim(); ++o) {
                    const double v = z(o, col) * p.output_scale(o);
                    jet.hessians[static_cast<std::size_t>(o)](j, l) = v;
                    jet.hessians[static_cast<std::size_t>(o)](l, j) = v;
                }
            }
        }
    }
    return jet;
}

inline Vec mlp_forward(const MlpParams& p, const Vec& x) { return mlp_jet(p, x, 0, false).value; }

/// d output / d x in physical units (out x in).
inline Mat mlp_input_jacobian(const MlpParams& p, const Vec& x) { return mlp_jet(p, x, p.input_dim(), false).jacobian; }

/// Adam with bias correction.
class Adam {
public:
    Adam(const MlpParams& p, double lr, double beta1, double beta2, double eps)
        : m_(p), v_(p), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(MlpParams& p, const MlpGrads& g) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
            m.array() = beta1_ * m.array() + (1.0 - beta1_) * grad.array();
            v.array() = beta2_ * v.array() + (1.0 - beta2_) * grad.array().square();
            param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
        };
        for (std::size_t k = 0; k < p.weights.size(); ++k) {
            update(p.weights[k], g.weights[k], m_.weights[k], v_.weights[k]);
            update(p.biases[k], g.biases[k], m_.biases[k], v_.biases[k]);
        }
    }

private:
    MlpGrads m_;
    MlpGrads v_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    int t_ = 0;
};

}  // namespace emns
