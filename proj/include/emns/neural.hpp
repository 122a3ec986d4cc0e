#pragma once

// Field models built on the MLP engine and their training loop.
//
//   ActuationNet: p -> (A_B, B_0), outputs [A_B row-major over (component, coil) | B_0]
//   PotentialNet: p -> (phi_1..phi_S, phi_0), A_B = -d phi / d p, B_0 = -d phi_0 / d p
//   DirectNet:    (p, i) -> B

#include "emns/dataset.hpp"
#include "emns/errors.hpp"
#include "emns/mlp.hpp"
#include "emns/rng.hpp"
#include "emns/types.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace emns {

inline void check_width(const MlpParams& p, int expected_in, int expected_out, const char* what) {
    if (p.input_dim() != expected_in || p.output_dim() != expected_out) {
        throw DimensionError(std::string(what) + ": network is " + std::to_string(p.input_dim()) + " -> " +
                             std::to_string(p.output_dim()) + ", expected " + std::to_string(expected_in) + " -> " +
                             std::to_string(expected_out));
    }
}

namespace detail {

inline AffineFieldEval unpack_actuation(const Vec& y, int coils) {
    AffineFieldEval e;
    e.actuation.resize(3, coils);
    for (int c = 0; c < 3; ++c) {
        for (int s = 0; s < coils; ++s) e.actuation(c, s) = y(c * coils + s);
    }
    e.offset = y.segment<3>(3 * coils);
    return e;
}

}  // namespace detail

inline AffineFieldEval actuationnet_predict(const MlpParams& p, const Vec3& pos, int coils) {
    check_width(p, 3, 3 * coils + 3, "actuationnet_predict");
    return detail::unpack_actuation(mlp_forward(p, pos), coils);
}

inline AffineJet actuationnet_jet(const MlpParams& p, const Vec3& pos, int coils) {
    check_width(p, 3, 3 * coils + 3, "actuationnet_jet");
    const MlpJet j = mlp_jet(p, pos, 3, false);
    AffineJet jet;
    jet.value = detail::unpack_actuation(j.value, coils);
    jet.actuation_gradient.assign(static_cast<std::size_t>(coils), Mat3::Zero());
    for (int c = 0; c < 3; ++c) {
        for (int s = 0; s < coils; ++s) jet.actuation_gradient[static_cast<std::size_t>(s)].row(c) = j.jacobian.row(c * coils + s);
        jet.offset_gradient.row(c) = j.jacobian.row(3 * coils + c);
    }
    return jet;
}

inline AffineFieldEval potentialnet_predict(const MlpParams& p, const Vec3& pos, int coils) {
    check_width(p, 3, coils + 1, "potentialnet_predict");
    const Mat j = mlp_jet(p, pos, 3, false).jacobian;  // (S+1) x 3
    AffineFieldEval e;
    e.actuation = -j.topRows(coils).transpose();
    e.offset = -j.row(coils).transpose();
    return e;
}

/// Field columns and their spatial Jacobians from the exact potential Hessians.
inline AffineJet potentialnet_jet(const MlpParams& p, const Vec3& pos, int coils) {
    check_width(p, 3, coils + 1, "potentialnet_jet");
    const MlpJet j = mlp_jet(p, pos, 3, true);
    AffineJet jet;
    jet.value.actuation = -j.jacobian.topRows(coils).transpose();
    jet.value.offset = -j.jacobian.row(coils).transpose();
    jet.actuation_gradient.resize(static_cast<std::size_t>(coils));
    for (int s = 0; s < coils; ++s) jet.actuation_gradient[static_cast<std::size_t>(s)] = -j.hessians[static_cast<std::size_t>(s)];
    jet.offset_gradient = -j.hessians[static_cast<std::size_t>(coils)];
    return jet;
}

/// Scalar potentials (phi_1..phi_S, phi_0).
inline Vec potentialnet_potentials(const MlpParams& p, const Vec3& pos, int coils) {
    check_width(p, 3, coils + 1, "potentialnet_potentials");
    return mlp_forward(p, pos);
}

inline Vec direct_input(const Vec3& pos, const Vec& currents) {
    Vec x(3 + currents.size());
    x << pos, currents;
    return x;
}

inline Vec3 directnet_predict(const MlpParams& p, const Vec3& pos, const Vec& currents) {
    check_width(p, 3 + static_cast<int>(currents.size()), 3, "directnet_predict");
    return mlp_forward(p, direct_input(pos, currents));
}

/// d B / d p of a DirectNet at fixed currents.
inline Mat3 directnet_spatial_jacobian(const MlpParams& p, const Vec3& pos, const Vec& currents) {
    check_width(p, 3 + static_cast<int>(currents.size()), 3, "directnet_spatial_jacobian");
    return mlp_jet(p, direct_input(pos, currents), 3, false).jacobian;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 1024;
    int max_epochs = 2000;
    int patience = 10;
    double min_improvement_mT = 1e-3;
    std::uint64_t seed = 0;
};

struct TrainHistoryRow {
    int epoch = 0;
    double train_rmse_mT = 0.0;
    double val_rmse_mT = 0.0;
    double wall_time_s = 0.0;
};

struct TrainResult {
    MlpParams params;
    std::vector<TrainHistoryRow> history;
    int best_epoch = 0;
    double best_val_rmse_mT = 0.0;
    int epochs_run = 0;
};

namespace detail {

/// Squared-error objective (mT^2) of one network kind over a dataset.
class FieldObjective {
public:
    FieldObjective(ModelKind kind, const Dataset& ds) : kind_(kind), ds_(ds), table_(ds), coils_(ds.coil_count) {
        if (kind != ModelKind::actuation_net && kind != ModelKind::potential_net && kind != ModelKind::direct_net) {
            throw KindMismatchError("FieldObjective: not a network kind");
        }
    }

    /// Sum of squared errors over `samples`; accumulates d(sse * weight)/d(params) when grads is non-null.
    double evaluate(const MlpParams& p, const std::vector<std::size_t>& samples, double weight, MlpGrads* grads) {
        return kind_ == ModelKind::direct_net ? evaluate_direct(p, samples, weight, grads)
                                              : evaluate_affine(p, samples, weight, grads);
    }

    /// Full-set RMSE in mT, evaluated in chunks.
    double rmse(const MlpParams& p) {
        if (ds_.empty()) return 0.0;
        constexpr std::size_t chunk = 8192;
        double sse = 0.0;
        std::vector<std::size_t> idx;
        for (std::size_t start = 0; start < ds_.size(); start += chunk) {
            idx.clear();
            for (std::size_t n = start; n < std::min(ds_.size(), start + chunk); ++n) idx.push_back(n);
            sse += evaluate(p, idx, 0.0, nullptr);
        }
        return std::sqrt(sse / static_cast<double>(ds_.size()));
    }

private:
    double evaluate_affine(const MlpParams& p, const std::vector<std::size_t>& samples, double weight, MlpGrads* grads) {
        // Evaluate the network once per distinct position in the batch.
        local_.assign(table_.size(), -1);
        order_.clear();
        for (auto n : samples) {
            const auto q = table_.sample_to_position[n];
            if (local_[q] < 0) {
                local_[q] = static_cast<int>(order_.size());
                order_.push_back(q);
            }
        }
        const auto nq = static_cast<Eigen::Index>(order_.size());
        Mat x(3, nq);
        for (Eigen::Index k = 0; k < nq; ++k) x.col(k) = table_.positions[order_[static_cast<std::size_t>(k)]];
        const bool potential = kind_ == ModelKind::potential_net;
        batch_.forward(p, x, potential ? 3 : 0);

        const int s_count = coils_;
        double sse = 0.0;
        Mat seed_out;
        std::vector<Mat> seed_tan;
        if (potential) {
            std::vector<Mat> t;
            for (int c = 0; c < 3; ++c) t.push_back(batch_.tangent(c));
            if (grads != nullptr) seed_tan.assign(3, Mat::Zero(s_count + 1, nq));
            for (auto n : samples) {
                const auto& s = ds_.samples[n];
                const int q = local_[table_.sample_to_position[n]];
                Vec3 pred;
                for (int c = 0; c < 3; ++c) {
                    const auto col = t[static_cast<std::size_t>(c)].col(q);
                    pred(c) = -(col.head(s_count).dot(s.currents) + col(s_count));
                }
                const Vec3 err = (pred - s.field) * 1e3;
                sse += err.squaredNorm();
                if (grads != nullptr) {
                    const Vec3 g = 2.0 * weight * err * 1e3;
                    for (int c = 0; c < 3; ++c) {
                        auto col = seed_tan[static_cast<std::size_t>(c)].col(q);
                        col.head(s_count) -= g(c) * s.currents;
                        col(s_count) -= g(c);
                    }
                }
            }
        } else {
            const Mat y = batch_.output();
            if (grads != nullptr) seed_out = Mat::Zero(y.rows(), nq);
            for (auto n : samples) {
                const auto& s = ds_.samples[n];
                const int q = local_[table_.sample_to_position[n]];
                Vec3 pred;
                for (int c = 0; c < 3; ++c) {
                    pred(c) = y.col(q).segment(c * s_count, s_count).dot(s.currents) + y(3 * s_count + c, q);
                }
                const Vec3 err = (pred - s.field) * 1e3;
                sse += err.squaredNorm();
                if (grads != nullptr) {
                    const Vec3 g = 2.0 * weight * err * 1e3;
                    for (int c = 0; c < 3; ++c) {
                        seed_out.col(q).segment(c * s_count, s_count) += g(c) * s.currents;
                        seed_out(3 * s_count + c, q) += g(c);
                    }
                }
            }
        }
        if (grads != nullptr) batch_.backward(p, seed_out, seed_tan, *grads);
        return sse;
    }

    double evaluate_direct(const MlpParams& p, const std::vector<std::size_t>& samples, double weight, MlpGrads* grads) {
        const auto nb = static_cast<Eigen::Index>(samples.size());
        Mat x(3 + coils_, nb);
        for (Eigen::Index k = 0; k < nb; ++k) {
            const auto& s = ds_.samples[samples[static_cast<std::size_t>(k)]];
            x.col(k) << s.position, s.currents;
        }
        batch_.forward(p, x, 0);
        const Mat y = batch_.output();
        Mat seed = Mat::Zero(3, nb);
        double sse = 0.0;
        for (Eigen::Index k = 0; k < nb; ++k) {
            const auto& s = ds_.samples[samples[static_cast<std::size_t>(k)]];
            const Vec3 err = (y.col(k) - s.field) * 1e3;
            sse += err.squaredNorm();
            seed.col(k) = 2.0 * weight * err * 1e3;
        }
        if (grads != nullptr) batch_.backward(p, seed, {}, *grads);
        return sse;
    }

    ModelKind kind_;
    const Dataset& ds_;
    PositionTable table_;
    int coils_;
    MlpBatch batch_;
    std::vector<int> local_;
    std::vector<std::size_t> order_;
};

inline void fit_normalization(ModelKind kind, const Dataset& train, MlpParams& p) {
    const int dim = kind == ModelKind::direct_net ? 3 + train.coil_count : 3;
    std::vector<Vec> rows;
    if (kind == ModelKind::direct_net) {
        for (const auto& s : train.samples) rows.push_back(direct_input(s.position, s.currents));
    } else {
        const PositionTable table(train);
        for (const auto& q : table.positions) rows.emplace_back(q);
    }
    Vec mean = Vec::Zero(dim);
    for (const auto& r : rows) mean += r;
    mean /= static_cast<double>(rows.size());
    Vec var = Vec::Zero(dim);
    for (const auto& r : rows) var += (r - mean).cwiseAbs2();
    var /= static_cast<double>(rows.size());
    Vec scale = var.cwiseSqrt();
    for (Eigen::Index k = 0; k < dim; ++k) {
        if (!(scale(k) > 0.0)) scale(k) = 1.0;
    }
    p.input_mean = mean;
    p.input_scale = scale;
    const double milli = 1e-3;
    if (kind == ModelKind::potential_net) {
        // Potentials in mT * (typical length) so their input gradients are O(mT).
        p.output_scale = Vec::Constant(p.output_dim(), milli * scale.head(3).mean());
    } else {
        p.output_scale = Vec::Constant(p.output_dim(), milli);
    }
}

}  // namespace detail

inline int network_output_width(ModelKind kind, int coils) {
    switch (kind) {
        case ModelKind::actuation_net: return 3 * coils + 3;
        case ModelKind::potential_net: return coils + 1;
        case ModelKind::direct_net: return 3;
        default: throw KindMismatchError("network_output_width: not a network kind");
    }
}

/// Trains a network with Adam on the mT-scaled MSE and returns the best-validation parameters.
///
/// Stops once the validation RMSE has not improved by at least
/// `min_improvement_mT` for `patience` consecutive epochs.
inline TrainResult train_network(ModelKind kind, const std::vector<int>& hidden, const Dataset& train,
                                 const Dataset& val, const TrainConfig& cfg) {
    if (train.empty()) throw DataError("train_network: empty training set");
    if (val.empty()) throw DataError("train_network: empty validation set");
    if (train.coil_count != val.coil_count) throw DimensionError("train_network: coil counts differ");
    if (cfg.patience < 1 || !(cfg.learning_rate > 0.0)) throw DomainError("train_network: invalid configuration");
    const int coils = train.coil_count;
    std::vector<int> sizes;
    sizes.push_back(kind == ModelKind::direct_net ? 3 + coils : 3);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(network_output_width(kind, coils));

    Rng rng(derive_seed(cfg.seed, 0x1417));
    MlpParams params = mlp_init(sizes, rng);
    detail::fit_normalization(kind, train, params);

    detail::FieldObjective train_obj(kind, train);
    detail::FieldObjective val_obj(kind, val);
    Adam adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    MlpGrads grads(params);

    TrainResult result;
    result.params = params;
    double best_val = std::numeric_limits<double>::infinity();
    double reference = std::numeric_limits<double>::infinity();
    int since = 0;
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5eed));
    const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto perm = random_permutation(train.size(), shuffle_rng);
        std::vector<std::size_t> idx;
        for (std::size_t start = 0; start < perm.size(); start += batch) {
            idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                       perm.begin() + static_cast<std::ptrdiff_t>(std::min(perm.size(), start + batch)));
            for (auto& w : grads.weights) w.setZero();
            for (auto& b : grads.biases) b.setZero();
            const double sse = train_obj.evaluate(params, idx, 1.0 / static_cast<double>(idx.size()), &grads);
            if (!std::isfinite(sse)) {
                throw NumericalError("train_network: non-finite loss at epoch " + std::to_string(epoch));
            }
            adam.step(params, grads);
        }
        TrainHistoryRow row;
        row.epoch = epoch;
        row.train_rmse_mT = train_obj.rmse(params);
        row.val_rmse_mT = val_obj.rmse(params);
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!std::isfinite(row.train_rmse_mT) || !std::isfinite(row.val_rmse_mT)) {
            throw NumericalError("train_network: non-finite RMSE at epoch " + std::to_string(epoch));
        }
        result.history.push_back(row);
        result.epochs_run = epoch;
        if (row.val_rmse_mT < best_val) {
            best_val = row.val_rmse_mT;
            result.params = params;
            result.best_epoch = epoch;
        }
        if (row.val_rmse_mT < reference - cfg.min_improvement_mT) {
            reference = row.val_rmse_mT;
            since = 0;
        } else if (++since >= cfg.patience) {
            break;
        }
    }
    result.best_val_rmse_mT = best_val;
    return result;
}

}  // namespace emns
