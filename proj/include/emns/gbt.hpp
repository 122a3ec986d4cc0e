#pragma once

// DirectGBT: gradient-boosted regression trees whose leaves hold affine
// functions of the full input x = (p, i). One tree structure per round with a
// 3-component affine map in every leaf.

#include "emns/dataset.hpp"
#include "emns/errors.hpp"
#include "emns/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace emns {

struct LinearLeaf {
    Mat weights;  // 3 x D, T per input unit
    Vec3 intercept = Vec3::Zero();

    bool operator==(const LinearLeaf& o) const {
        return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() && weights == o.weights &&
               intercept == o.intercept;
    }
};

/// Internal node when leaf < 0. Inputs with x[feature] < threshold go left.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int leaf = -1;

    bool operator==(const TreeNode&) const = default;
};

struct LinearTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    std::vector<LinearLeaf> leaves;

    [[nodiscard]] int route(const Vec& x) const {
        int n = 0;
        while (nodes[static_cast<std::size_t>(n)].leaf < 0) {
            const auto& node = nodes[static_cast<std::size_t>(n)];
            n = x(node.feature) < node.threshold ? node.left : node.right;
        }
        return nodes[static_cast<std::size_t>(n)].leaf;
    }

    [[nodiscard]] Vec3 predict(const Vec& x) const {
        const auto& l = leaves[static_cast<std::size_t>(route(x))];
        return l.weights * x + l.intercept;
    }

    bool operator==(const LinearTree&) const = default;
};

struct GbtEnsemble {
    Vec3 base = Vec3::Zero();
    std::vector<LinearTree> trees;
    double shrinkage = 0.1;
    int leaf_limit = 32;
    int input_dim = 0;

    bool operator==(const GbtEnsemble&) const = default;
};

inline Vec3 gbt_predict(const GbtEnsemble& ens, const Vec& x) {
    if (x.size() != ens.input_dim) throw DimensionError("gbt_predict: feature dimension mismatch");
    Vec3 sum = Vec3::Zero();
    for (const auto& t : ens.trees) sum += t.predict(x);
    return ens.base + ens.shrinkage * sum;
}

inline Vec3 gbt_predict(const GbtEnsemble& ens, const Vec3& p, const Vec& currents) {
    Vec x(3 + currents.size());
    x << p, currents;
    return gbt_predict(ens, x);
}

/// Piecewise-constant Jacobian d B / d x (3 x D): shrinkage times the sum of active leaf weights.
inline Mat gbt_jacobian(const GbtEnsemble& ens, const Vec& x) {
    if (x.size() != ens.input_dim) throw DimensionError("gbt_jacobian: feature dimension mismatch");
    Mat j = Mat::Zero(3, ens.input_dim);
    for (const auto& t : ens.trees) j += t.leaves[static_cast<std::size_t>(t.route(x))].weights;
    return ens.shrinkage * j;
}

inline Mat gbt_jacobian(const GbtEnsemble& ens, const Vec3& p, const Vec& currents) {
    Vec x(3 + currents.size());
    x << p, currents;
    return gbt_jacobian(ens, x);
}

struct GbtConfig {
    double shrinkage = 0.1;
    int leaf_limit = 32;
    int patience_rounds = 200;
    int max_rounds = 3000;
    double ridge = 1e-6;
    int min_leaf = 8;
};

struct GbtHistoryRow {
    int round = 0;
    double train_rmse_mT = 0.0;
    double val_rmse_mT = 0.0;
    double wall_time_s = 0.0;
};

struct GbtFitResult {
    GbtEnsemble ensemble;
    std::vector<GbtHistoryRow> history;
    int best_round = 0;
    double best_val_rmse_mT = 0.0;
    std::vector<std::string> warnings;
};

namespace detail {

/// Sufficient statistics of a ridge-regularized affine fit on standardized inputs.
struct AffineStats {
    Mat gram;    // (D+1) x (D+1), last coordinate is the constant
    Mat cross;   // (D+1) x 3
    double yy = 0.0;
    Eigen::Index count = 0;

    explicit AffineStats(Eigen::Index d = 0) : gram(Mat::Zero(d + 1, d + 1)), cross(Mat::Zero(d + 1, 3)) {}

    void add(const Vec& a, const Vec3& y) {
        gram.selfadjointView<Eigen::Lower>().rankUpdate(a);
        cross.noalias() += a * y.transpose();
        yy += y.squaredNorm();
        ++count;
    }

    void set_difference(const AffineStats& total, const AffineStats& part) {
        gram = total.gram - part.gram;
        cross = total.cross - part.cross;
        yy = total.yy - part.yy;
        count = total.count - part.count;
    }

    /// Solves the ridge system; returns the penalized objective (residual SSE + ridge term).
    double solve(double ridge, Mat& beta) const {
        const Eigen::Index n = gram.rows();
        Mat g = gram.selfadjointView<Eigen::Lower>();
        for (Eigen::Index k = 0; k + 1 < n; ++k) g(k, k) += ridge;
        g(n - 1, n - 1) += 1e-12;
        Eigen::LLT<Mat> llt(g);
        beta = llt.solve(cross);
        return std::max(0.0, yy - (beta.array() * cross.array()).sum());
    }
};

class TreeBuilder {
public:
    /// `z` holds standardized inputs for the leaf fits; `raw` holds the inputs thresholds are expressed in.
    TreeBuilder(const Mat& z, const Mat& raw, const GbtConfig& cfg) : z_(z), raw_(raw), cfg_(cfg), dim_(z.rows()) {
        sorted_.resize(static_cast<std::size_t>(dim_));
        const auto n = static_cast<std::size_t>(z.cols());
        for (Eigen::Index f = 0; f < dim_; ++f) {
            auto& idx = sorted_[static_cast<std::size_t>(f)];
            idx.resize(n);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return raw(f, a) < raw(f, b); });
        }
        aug_.resize(dim_ + 1, z.cols());
        aug_.topRows(dim_) = z;
        aug_.row(dim_).setOnes();
    }

    /// Grows one tree on the given residual targets; leaves are in standardized space (mT).
    LinearTree build(const Mat& targets, Mat& leaf_beta_out, std::vector<int>& sample_leaf) {
        y_ = &targets;
        struct Open {
            int node;
            std::vector<std::vector<int>> sorted;
            AffineStats stats;
            double objective;
            Split split;
        };
        const Eigen::Index n = z_.cols();
        LinearTree tree;
        tree.nodes.push_back({});
        std::vector<Open> open;
        {
            Open root{0, sorted_, AffineStats(dim_), 0.0, {}};
            for (Eigen::Index k = 0; k < n; ++k) root.stats.add(aug_.col(k), y_->col(k));
            Mat beta;
            root.objective = root.stats.solve(cfg_.ridge, beta);
            root_scale_ = root.stats.yy;
            root.split = best_split(root.sorted, root.stats, root.objective);
            open.push_back(std::move(root));
        }
        int leaves = 1;
        while (leaves < cfg_.leaf_limit) {
            // Leaf-wise growth: split the open leaf with the largest gain.
            int pick = -1;
            double best_gain = 1e-10 * root_scale_;
            for (std::size_t k = 0; k < open.size(); ++k) {
                if (open[k].split.feature >= 0 && open[k].split.gain > best_gain) {
                    best_gain = open[k].split.gain;
                    pick = static_cast<int>(k);
                }
            }
            if (pick < 0) break;
            Open parent = std::move(open[static_cast<std::size_t>(pick)]);
            open.erase(open.begin() + pick);
            const Split& sp = parent.split;
            const int li = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back({});
            tree.nodes.push_back({});
            auto& pn = tree.nodes[static_cast<std::size_t>(parent.node)];
            pn.feature = static_cast<int>(sp.feature);
            pn.threshold = sp.threshold;
            pn.left = li;
            pn.right = li + 1;

            Open left{li, {}, AffineStats(dim_), 0.0, {}};
            Open right{li + 1, {}, AffineStats(dim_), 0.0, {}};
            for (const auto& idx : parent.sorted) {
                std::vector<int> l;
                std::vector<int> r;
                for (int k : idx) (raw_(sp.feature, k) < sp.threshold ? l : r).push_back(k);
                left.sorted.push_back(std::move(l));
                right.sorted.push_back(std::move(r));
            }
            for (int k : left.sorted[0]) left.stats.add(aug_.col(k), y_->col(k));
            right.stats.set_difference(parent.stats, left.stats);
            Mat beta;
            left.objective = left.stats.solve(cfg_.ridge, beta);
            right.objective = right.stats.solve(cfg_.ridge, beta);
            left.split = best_split(left.sorted, left.stats, left.objective);
            right.split = best_split(right.sorted, right.stats, right.objective);
            open.push_back(std::move(left));
            open.push_back(std::move(right));
            ++leaves;
        }

        std::sort(open.begin(), open.end(), [](const Open& a, const Open& b) { return a.node < b.node; });
        leaf_beta_out.resize((dim_ + 1) * 3, static_cast<Eigen::Index>(open.size()));
        sample_leaf.assign(static_cast<std::size_t>(n), -1);
        for (std::size_t k = 0; k < open.size(); ++k) {
            tree.nodes[static_cast<std::size_t>(open[k].node)].leaf = static_cast<int>(k);
            Mat beta;
            open[k].stats.solve(cfg_.ridge, beta);
            leaf_beta_out.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Vec>(beta.data(), beta.size());
            for (int s : open[k].sorted[0]) sample_leaf[static_cast<std::size_t>(s)] = static_cast<int>(k);
        }
        return tree;
    }

private:
    struct Split {
        Eigen::Index feature = -1;
        double threshold = 0.0;
        double gain = 0.0;
    };

    Split best_split(const std::vector<std::vector<int>>& sorted, const AffineStats& total, double parent_obj) const {
        Split best;
        const auto min_leaf = static_cast<std::size_t>(std::max(1, cfg_.min_leaf));
        const std::size_t n = sorted.empty() ? 0 : sorted[0].size();
        if (n < 2 * min_leaf) return best;
        AffineStats left(dim_);
        AffineStats right(dim_);
        Mat beta;
        for (Eigen::Index f = 0; f < dim_; ++f) {
            const auto& idx = sorted[static_cast<std::size_t>(f)];
            left = AffineStats(dim_);
            for (std::size_t k = 0; k + 1 < n; ++k) {
                const int s = idx[k];
                left.add(aug_.col(s), y_->col(s));
                const double v = raw_(f, s);
                const double next = raw_(f, idx[k + 1]);
                if (!(next > v)) continue;
                if (k + 1 < min_leaf || n - (k + 1) < min_leaf) continue;
                right.set_difference(total, left);
                const double gain = parent_obj - left.solve(cfg_.ridge, beta) - right.solve(cfg_.ridge, beta);
                if (gain > best.gain) {
                    best.gain = gain;
                    best.feature = f;
                    const double mid = 0.5 * (v + next);
                    best.threshold = mid > v ? mid : next;
                }
            }
        }
        return best;
    }

    const Mat& z_;
    const Mat& raw_;
    const Mat* y_ = nullptr;
    GbtConfig cfg_;
    Eigen::Index dim_;
    Mat aug_;
    std::vector<std::vector<int>> sorted_;
    double root_scale_ = 0.0;
};

inline Mat gbt_inputs(const Dataset& ds) {
    Mat x(3 + ds.coil_count, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t n = 0; n < ds.size(); ++n) {
        x.col(static_cast<Eigen::Index>(n)) << ds.samples[n].position, ds.samples[n].currents;
    }
    return x;
}

inline Mat gbt_targets(const Dataset& ds) {
    Mat y(3, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t n = 0; n < ds.size(); ++n) y.col(static_cast<Eigen::Index>(n)) = ds.samples[n].field;
    return y;
}

inline double rmse_mT(const Mat& pred, const Mat& target) {
    if (pred.cols() == 0) return 0.0;
    return 1e3 * std::sqrt((pred - target).colwise().squaredNorm().sum() / static_cast<double>(pred.cols()));
}

}  // namespace detail

/// Fits a boosted linear-tree ensemble; stops after `patience_rounds` rounds without
/// validation improvement (or `max_rounds`) and returns the best-validation prefix.
inline GbtFitResult gbt_fit(const Dataset& train, const Dataset& val, const GbtConfig& cfg) {
    if (train.empty()) throw DataError("gbt_fit: empty training set");
    const Mat x = detail::gbt_inputs(train);
    const Mat y = detail::gbt_targets(train);
    const Dataset& vset = val.empty() ? train : val;
    const Mat xv = detail::gbt_inputs(vset);
    const Mat yv = detail::gbt_targets(vset);
    const Eigen::Index dim = x.rows();

    GbtFitResult result;
    GbtEnsemble& ens = result.ensemble;
    ens.shrinkage = cfg.shrinkage;
    ens.leaf_limit = cfg.leaf_limit;
    ens.input_dim = static_cast<int>(dim);
    ens.base = y.rowwise().mean();

    const Vec mean = x.rowwise().mean();
    Vec scale = ((x.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
    bool all_constant = true;
    for (Eigen::Index f = 0; f < dim; ++f) {
        if (x.row(f).maxCoeff() > x.row(f).minCoeff()) {
            all_constant = false;
        } else {
            scale(f) = 1.0;
        }
    }
    Mat fit = ens.base.replicate(1, x.cols());
    Mat fit_val = ens.base.replicate(1, xv.cols());
    const auto t0 = std::chrono::steady_clock::now();
    auto record = [&](int round) {
        GbtHistoryRow row;
        row.round = round;
        row.train_rmse_mT = detail::rmse_mT(fit, y);
        row.val_rmse_mT = detail::rmse_mT(fit_val, yv);
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(row);
        return row.val_rmse_mT;
    };
    double best_val = record(0);
    std::size_t best_trees = 0;
    if (all_constant) {
        result.warnings.emplace_back("all input features are constant; returning the base prediction");
        result.best_val_rmse_mT = best_val;
        return result;
    }
    const Mat z = (x.colwise() - mean).array().colwise() / scale.array();
    detail::TreeBuilder builder(z, x, cfg);

    // Residuals at rounding level of the targets carry no signal.
    const double residual_floor = 1e3 * 1e-13 * y.cwiseAbs().maxCoeff();
    int since = 0;
    for (int round = 1; round <= cfg.max_rounds; ++round) {
        const Mat residual = (y - fit) * 1e3;
        if (residual.cwiseAbs().maxCoeff() <= residual_floor) break;
        Mat beta;
        std::vector<int> sample_leaf;
        LinearTree tree = builder.build(residual, beta, sample_leaf);
        for (Eigen::Index k = 0; k < beta.cols(); ++k) {
            const Eigen::Map<const Mat> b(beta.col(k).data(), dim + 1, 3);
            LinearLeaf leaf;
            // Back to raw inputs and tesla: W_raw = 1e-3 W^T / scale, c_raw = 1e-3 c - W_raw mean.
            leaf.weights = 1e-3 * b.topRows(dim).transpose() * scale.cwiseInverse().asDiagonal();
            leaf.intercept = 1e-3 * b.row(dim).transpose() - leaf.weights * mean;
            tree.leaves.push_back(std::move(leaf));
        }
        for (Eigen::Index n = 0; n < x.cols(); ++n) {
            const auto& leaf = tree.leaves[static_cast<std::size_t>(sample_leaf[static_cast<std::size_t>(n)])];
            fit.col(n) += cfg.shrinkage * (leaf.weights * x.col(n) + leaf.intercept);
        }
        for (Eigen::Index n = 0; n < xv.cols(); ++n) fit_val.col(n) += cfg.shrinkage * tree.predict(xv.col(n));
        ens.trees.push_back(std::move(tree));
        const double v = record(round);
        if (v < best_val) {
            best_val = v;
            best_trees = ens.trees.size();
            since = 0;
        } else if (++since >= cfg.patience_rounds) {
            break;
        }
    }
    ens.trees.resize(best_trees);
    result.best_round = static_cast<int>(best_trees);
    result.best_val_rmse_mT = best_val;
    return result;
}

}  // namespace emns
