#pragma once

// Multipole Expansion Model: azimuthally symmetric multipole sources, their
// closed-form fields and spatial Jacobians, multi-source superposition with
// cross-magnetization and offset sources, and Levenberg-Marquardt calibration.

#include "emns/dataset.hpp"
#include "emns/errors.hpp"
#include "emns/legendre.hpp"
#include "emns/rng.hpp"
#include "emns/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace emns {

struct SourcePose {
    Vec3 location = Vec3::Zero();  // m
    Vec3 zenith = Vec3::UnitZ();   // unit symmetry axis

    bool operator==(const SourcePose&) const = default;
};

/// Axisymmetric source with coefficients B_1..B_N (coeffs(n-1) = B_n, T m^(n+2) / A).
struct MultipoleSource {
    SourcePose pose;
    Vec coeffs;

    [[nodiscard]] int order() const { return static_cast<int>(coeffs.size()); }
    bool operator==(const MultipoleSource& o) const { return pose == o.pose && coeffs == o.coeffs; }
};

namespace detail {

/// Field per unit coefficient (column n-1 is the order-n term) and, optionally,
/// the spatial Jacobian of each column. Caller guarantees p != location.
///
/// With d = p - c, r = |d|, u = z.d/r the order-n term is
///   B = r^-(n+3) a(u) d - r^-(n+2) b(u) z,  a = (n+1) P_n + u P_n',  b = P_n'
/// which is the spherical (B_r, B_theta) form rewritten without 1/sin(theta).
inline void multipole_basis(const SourcePose& pose, int order, const Vec3& p, Mat3X& fields,
                            std::vector<Mat3>* jacobians) {
    const Vec3 d = p - pose.location;
    const double r = d.norm();
    const Vec3 rh = d / r;
    const Vec3& z = pose.zenith;
    const double u = std::clamp(z.dot(rh), -1.0, 1.0);
    const Vec3 grad_u = (z - u * rh) / r;
    const LegendreTable leg(order, u);

    fields.resize(3, order);
    if (jacobians != nullptr) jacobians->assign(static_cast<std::size_t>(order), Mat3::Zero());
    double rn2 = 1.0 / (r * r * r);  // r^-(n+2) for n = 1
    for (int n = 1; n <= order; ++n) {
        const auto nu = static_cast<std::size_t>(n);
        const double rn3 = rn2 / r;
        const double a = (n + 1.0) * leg.p[nu] + u * leg.dp[nu];
        const double b = leg.dp[nu];
        fields.col(n - 1) = a * rn3 * d - b * rn2 * z;
        if (jacobians != nullptr) {
            const double rn4 = rn3 / r;
            const double da = (n + 2.0) * leg.dp[nu] + u * leg.d2p[nu];
            const double db = leg.d2p[nu];
            Mat3& j = (*jacobians)[nu - 1];
            j = rn3 * (a * Mat3::Identity() + da * d * grad_u.transpose());
            j -= (n + 3.0) * a * rn4 * d * rh.transpose();
            j -= rn2 * db * z * grad_u.transpose();
            j += (n + 2.0) * b * rn3 * z * rh.transpose();
        }
        rn2 = rn3;
    }
}

inline void check_exclusion(const SourcePose& pose, const Vec3& p, double exclusion_radius) {
    const double r = (p - pose.location).norm();
    if (!(r > 0.0) || r < exclusion_radius) {
        throw DomainError("multipole source evaluated inside its exclusion ball (r = " + std::to_string(r) + " m)");
    }
}

}  // namespace detail

/// Field of a source per ampere (T/A) at world position p.
inline Vec3 source_unit_field(const MultipoleSource& src, const Vec3& p, double exclusion_radius = 0.0) {
    if (src.coeffs.isZero(0.0)) return Vec3::Zero();  // absent source, no pose constraint
    detail::check_exclusion(src.pose, p, exclusion_radius);
    Mat3X basis;
    detail::multipole_basis(src.pose, src.order(), p, basis, nullptr);
    return basis * src.coeffs;
}

/// Field per ampere and its spatial Jacobian d B / d p.
inline std::pair<Vec3, Mat3> source_unit_field_jacobian(const MultipoleSource& src, const Vec3& p,
                                                        double exclusion_radius = 0.0) {
    if (src.coeffs.isZero(0.0)) return {Vec3::Zero(), Mat3::Zero()};
    detail::check_exclusion(src.pose, p, exclusion_radius);
    Mat3X basis;
    std::vector<Mat3> jac;
    detail::multipole_basis(src.pose, src.order(), p, basis, &jac);
    Mat3 j = Mat3::Zero();
    for (int n = 0; n < src.order(); ++n) j += src.coeffs(n) * jac[static_cast<std::size_t>(n)];
    return {basis * src.coeffs, j};
}

/// Sources attached to one electromagnet.
struct CoilSources {
    MultipoleSource direct;
    std::vector<MultipoleSource> cross;  // induced magnetization of neighbouring cores
    MultipoleSource offset;              // driven by a constant 1 A

    bool operator==(const CoilSources&) const = default;
};

struct MpemParams {
    int order = 1;
    int coil_count = 0;
    int cross_count = 0;
    bool shared_offset_pose = true;
    double exclusion_radius = 1e-3;  // m
    std::vector<CoilSources> coils;

    bool operator==(const MpemParams&) const = default;

    void validate() const {
        if (order < 1) throw DomainError("MPEM order must be >= 1");
        if (coil_count < 1 || static_cast<int>(coils.size()) != coil_count) {
            throw DimensionError("MPEM coil_count does not match the number of coil source blocks");
        }
        auto check = [&](const MultipoleSource& s) {
            if (s.order() != order) throw DimensionError("MPEM source order mismatch");
            if (std::abs(s.pose.zenith.norm() - 1.0) > 1e-12) throw DomainError("MPEM zenith is not unit length");
            if (!s.coeffs.allFinite() || !s.pose.location.allFinite()) throw DomainError("MPEM parameters not finite");
        };
        for (const auto& c : coils) {
            if (static_cast<int>(c.cross.size()) != cross_count) throw DimensionError("MPEM cross source count mismatch");
            check(c.direct);
            for (const auto& x : c.cross) check(x);
            check(c.offset);
            if (shared_offset_pose && !(c.offset.pose == c.direct.pose)) {
                throw DomainError("MPEM offset source must share its coil pose");
            }
        }
    }

    [[nodiscard]] std::size_t source_count() const { return coils.size() * static_cast<std::size_t>(cross_count + 2); }
};

/// A_B(p) and B_0(p) of the multipole model.
inline AffineFieldEval mpem_affine(const MpemParams& params, const Vec3& p) {
    AffineFieldEval out;
    out.actuation.setZero(3, params.coil_count);
    out.offset.setZero();
    for (int s = 0; s < params.coil_count; ++s) {
        const auto& c = params.coils[static_cast<std::size_t>(s)];
        out.actuation.col(s) = source_unit_field(c.direct, p, params.exclusion_radius);
        for (const auto& x : c.cross) out.actuation.col(s) += source_unit_field(x, p, params.exclusion_radius);
        out.offset += source_unit_field(c.offset, p, params.exclusion_radius);
    }
    return out;
}

inline AffineJet mpem_jet(const MpemParams& params, const Vec3& p) {
    AffineJet jet;
    jet.value.actuation.setZero(3, params.coil_count);
    jet.actuation_gradient.assign(static_cast<std::size_t>(params.coil_count), Mat3::Zero());
    for (int s = 0; s < params.coil_count; ++s) {
        const auto su = static_cast<std::size_t>(s);
        const auto& c = params.coils[su];
        auto add = [&](const MultipoleSource& src, bool offset) {
            const auto [b, j] = source_unit_field_jacobian(src, p, params.exclusion_radius);
            if (offset) {
                jet.value.offset += b;
                jet.offset_gradient += j;
            } else {
                jet.value.actuation.col(s) += b;
                jet.actuation_gradient[su] += j;
            }
        };
        add(c.direct, false);
        for (const auto& x : c.cross) add(x, false);
        add(c.offset, true);
    }
    return jet;
}

/// Total field for a current vector.
inline Vec3 mpem_forward(const MpemParams& params, const Vec3& p, const Vec& currents) {
    if (currents.size() != params.coil_count) throw DimensionError("mpem_forward: current vector has wrong length");
    return mpem_affine(params, p).apply(currents);
}

/// Spatial Jacobian d B / d p of the total field.
inline Mat3 mpem_jacobian_spatial(const MpemParams& params, const Vec3& p, const Vec& currents) {
    if (currents.size() != params.coil_count) throw DimensionError("mpem_jacobian_spatial: wrong current count");
    return mpem_jet(params, p).field_jacobian(currents);
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibConfig {
    double lambda_init = 1e-3;
    double lambda_up = 10.0;
    double lambda_down = 10.0;
    int max_iterations = 200;
    double val_stop_mT = 1e-4;
    double fd_step_location = 1e-6;  // m
    double fd_step_angle = 1e-6;     // rad
    int restarts = 1;
    std::uint64_t seed = 0;
    double restart_location_jitter = 5e-3;                        // m, restarts after the first
    double restart_angle_jitter = 5.0 * std::numbers::pi / 180.0;  // rad
    std::vector<SourcePose> nominal_poses;                        // one per coil
    bool shared_offset_pose = true;
    double exclusion_margin = 0.01;   // m, minimum distance from any training position
    double exclusion_weight = 1e3;    // penalty residual per relative violation
    double exclusion_radius = 1e-3;   // stored in the calibrated model
};

struct LmIterationRecord {
    int restart = 0;
    int iteration = 0;
    double train_rmse_mT = 0.0;
    double val_rmse_mT = 0.0;
    double lambda = 0.0;
    bool accepted = false;
};

struct FitReport {
    std::vector<LmIterationRecord> iterations;
    std::vector<double> restart_best_val_mT;
    int best_restart = 0;
    double initial_val_rmse_mT = 0.0;
    double train_rmse_mT = 0.0;
    double val_rmse_mT = 0.0;
    bool diverged = false;
    std::vector<std::string> warnings;
};

struct CalibrationResult {
    MpemParams params;
    FitReport report;
};

namespace detail {

/// Orthonormal frame whose first column is `axis`.
inline Mat3 frame_from_axis(const Vec3& axis) {
    const Vec3 x = axis.normalized();
    const Vec3 helper = std::abs(x.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 y = (helper - helper.dot(x) * x).normalized();
    Mat3 f;
    f.col(0) = x;
    f.col(1) = y;
    f.col(2) = x.cross(y);
    return f;
}

/// Least-squares problem over poses (5 per pose group) and coefficients.
class MpemProblem {
public:
    struct Slot {
        int group = 0;
        int coil = 0;
        bool offset = false;
    };

    MpemProblem(const Dataset& train, int order, int cross, const CalibConfig& cfg)
        : order_(order), cross_(cross), coils_(train.coil_count), cfg_(cfg), train_(train), table_(train) {
        // Pose groups: one per coil, one per cross source, one per offset source if decoupled.
        for (int s = 0; s < coils_; ++s) {
            const int g = group_count_++;
            slots_.push_back({g, s, false});
            for (int f = 0; f < cross_; ++f) slots_.push_back({group_count_++, s, false});
            slots_.push_back({cfg.shared_offset_pose ? g : group_count_++, s, true});
        }
        frames_.resize(static_cast<std::size_t>(group_count_));
    }

    [[nodiscard]] int group_count() const { return group_count_; }
    [[nodiscard]] int pose_param_count() const { return 5 * group_count_; }
    [[nodiscard]] int param_count() const { return pose_param_count() + order_ * static_cast<int>(slots_.size()); }
    [[nodiscard]] const std::vector<Slot>& slots() const { return slots_; }

    /// Parameter vector from explicit poses (coefficients zero); sets the angle frames.
    Vec initial_vector(const std::vector<SourcePose>& group_poses) {
        Vec theta = Vec::Zero(param_count());
        for (int g = 0; g < group_count_; ++g) {
            const auto gu = static_cast<std::size_t>(g);
            frames_[gu] = frame_from_axis(group_poses[gu].zenith);
            theta.segment<3>(5 * g) = group_poses[gu].location;
            theta(5 * g + 3) = 0.0;                        // azimuth
            theta(5 * g + 4) = std::numbers::pi / 2.0;     // inclination
        }
        return theta;
    }

    /// Nominal poses for every group, derived from per-coil nominal poses.
    [[nodiscard]] std::vector<SourcePose> nominal_group_poses(const std::vector<SourcePose>& nominal) const {
        std::vector<SourcePose> poses(static_cast<std::size_t>(group_count_));
        std::size_t k = 0;
        for (int s = 0; s < coils_; ++s) {
            const auto& host = nominal[static_cast<std::size_t>(s)];
            poses[static_cast<std::size_t>(slots_[k++].group)] = host;
            int other = 0;
            for (int f = 0; f < cross_; ++f) {
                if (other == s) ++other;
                const auto& neighbour = nominal[static_cast<std::size_t>(other % coils_)];
                poses[static_cast<std::size_t>(slots_[k++].group)] = SourcePose{neighbour.location, host.zenith};
                ++other;
            }
            poses[static_cast<std::size_t>(slots_[k++].group)] = host;
        }
        return poses;
    }

    [[nodiscard]] SourcePose pose(const Vec& theta, int g) const {
        const double az = theta(5 * g + 3);
        const double inc = theta(5 * g + 4);
        const Vec3 local(std::sin(inc) * std::cos(az), std::sin(inc) * std::sin(az), std::cos(inc));
        return {theta.segment<3>(5 * g), (frames_[static_cast<std::size_t>(g)] * local).normalized()};
    }

    [[nodiscard]] Vec coeffs(const Vec& theta, std::size_t slot) const {
        return theta.segment(pose_param_count() + static_cast<Eigen::Index>(slot) * order_, order_);
    }

    /// Per-position basis fields of every pose group.
    [[nodiscard]] std::vector<std::vector<Mat3X>> bases(const Vec& theta, const std::vector<Vec3>& positions) const {
        std::vector<std::vector<Mat3X>> out(positions.size(), std::vector<Mat3X>(static_cast<std::size_t>(group_count_)));
        for (int g = 0; g < group_count_; ++g) {
            const SourcePose pg = pose(theta, g);
            for (std::size_t q = 0; q < positions.size(); ++q) {
                multipole_basis(pg, order_, positions[q], out[q][static_cast<std::size_t>(g)], nullptr);
            }
        }
        return out;
    }

    /// Affine map columns [A | b] (3 x (S+1)) per position.
    [[nodiscard]] std::vector<Mat3X> affine_maps(const Vec& theta, const std::vector<std::vector<Mat3X>>& basis) const {
        std::vector<Mat3X> maps(basis.size(), Mat3X::Zero(3, coils_ + 1));
        for (std::size_t q = 0; q < basis.size(); ++q) {
            for (std::size_t k = 0; k < slots_.size(); ++k) {
                const auto& sl = slots_[k];
                const Vec3 u = basis[q][static_cast<std::size_t>(sl.group)] * coeffs(theta, k);
                maps[q].col(sl.offset ? coils_ : sl.coil) += u;
            }
        }
        return maps;
    }

    /// Sum of squared field residuals (mT^2) over a dataset.
    [[nodiscard]] double sse_mT(const Vec& theta, const Dataset& ds, const PositionTable& table) const {
        const auto maps = affine_maps(theta, bases(theta, table.positions));
        double sse = 0.0;
        for (std::size_t n = 0; n < ds.samples.size(); ++n) {
            const auto& s = ds.samples[n];
            const Mat3X& m = maps[table.sample_to_position[n]];
            const Vec3 pred = m.leftCols(coils_) * s.currents + m.col(coils_);
            sse += ((pred - s.field) * 1e3).squaredNorm();
        }
        return sse;
    }

    /// Exclusion penalty residuals, one per pose group.
    [[nodiscard]] Vec penalty(const Vec& theta) const {
        Vec pen = Vec::Zero(group_count_);
        for (int g = 0; g < group_count_; ++g) {
            const Vec3 loc = theta.segment<3>(5 * g);
            double dmin = std::numeric_limits<double>::infinity();
            for (const auto& p : table_.positions) dmin = std::min(dmin, (p - loc).norm());
            const double v = std::max(0.0, cfg_.exclusion_margin - dmin);
            pen(g) = cfg_.exclusion_weight * v / cfg_.exclusion_margin;
        }
        return pen;
    }

    [[nodiscard]] double cost(const Vec& theta) const {
        return sse_mT(theta, train_, table_) + penalty(theta).squaredNorm();
    }

    /// Residual vector and Jacobian (data rows then penalty rows).
    void linearize(const Vec& theta, Vec& residual, Mat& jac) const {
        const auto& pos = table_.positions;
        const auto basis = bases(theta, pos);
        const auto maps = affine_maps(theta, basis);
        const int np = param_count();
        const int pp = pose_param_count();

        // d[A|b]/d(pose param) per position by forward differences.
        std::vector<std::vector<Mat3X>> dmaps(pos.size(), std::vector<Mat3X>(static_cast<std::size_t>(pp)));
        for (int g = 0; g < group_count_; ++g) {
            for (int j = 0; j < 5; ++j) {
                const int col = 5 * g + j;
                const double h = j < 3 ? cfg_.fd_step_location : cfg_.fd_step_angle;
                Vec tp = theta;
                tp(col) += h;
                const SourcePose pg = pose(tp, g);
                for (std::size_t q = 0; q < pos.size(); ++q) {
                    Mat3X pert;
                    multipole_basis(pg, order_, pos[q], pert, nullptr);
                    Mat3X delta = Mat3X::Zero(3, coils_ + 1);
                    const Mat3X db = (pert - basis[q][static_cast<std::size_t>(g)]) / h;
                    for (std::size_t k = 0; k < slots_.size(); ++k) {
                        if (slots_[k].group != g) continue;
                        delta.col(slots_[k].offset ? coils_ : slots_[k].coil) += db * coeffs(theta, k);
                    }
                    dmaps[q][static_cast<std::size_t>(col)] = std::move(delta);
                }
            }
        }

        const auto nsamples = static_cast<Eigen::Index>(train_.samples.size());
        residual.resize(3 * nsamples + group_count_);
        jac.setZero(3 * nsamples + group_count_, np);
        for (Eigen::Index n = 0; n < nsamples; ++n) {
            const auto& s = train_.samples[static_cast<std::size_t>(n)];
            const std::size_t q = table_.sample_to_position[static_cast<std::size_t>(n)];
            const Mat3X& m = maps[q];
            residual.segment<3>(3 * n) = (m.leftCols(coils_) * s.currents + m.col(coils_) - s.field) * 1e3;
            for (int c = 0; c < pp; ++c) {
                const Mat3X& d = dmaps[q][static_cast<std::size_t>(c)];
                jac.block<3, 1>(3 * n, c) = (d.leftCols(coils_) * s.currents + d.col(coils_)) * 1e3;
            }
            for (std::size_t k = 0; k < slots_.size(); ++k) {
                const auto& sl = slots_[k];
                const double w = sl.offset ? 1.0 : s.currents(sl.coil);
                jac.block(3 * n, pp + static_cast<Eigen::Index>(k) * order_, 3, order_) =
                    (w * 1e3) * basis[q][static_cast<std::size_t>(sl.group)];
            }
        }
        const Vec pen = penalty(theta);
        residual.tail(group_count_) = pen;
        for (int g = 0; g < group_count_; ++g) {
            for (int j = 0; j < 3; ++j) {
                Vec tp = theta;
                tp(5 * g + j) += cfg_.fd_step_location;
                jac(3 * nsamples + g, 5 * g + j) = (penalty(tp)(g) - pen(g)) / cfg_.fd_step_location;
            }
        }
    }

    /// Solves for all coefficients with the poses in `theta` held fixed.
    void fit_coefficients(Vec& theta) const {
        const auto basis = bases(theta, table_.positions);
        const int pp = pose_param_count();
        const int nc = param_count() - pp;
        const auto nsamples = static_cast<Eigen::Index>(train_.samples.size());
        Mat a = Mat::Zero(3 * nsamples, nc);
        Vec b(3 * nsamples);
        for (Eigen::Index n = 0; n < nsamples; ++n) {
            const auto& s = train_.samples[static_cast<std::size_t>(n)];
            const std::size_t q = table_.sample_to_position[static_cast<std::size_t>(n)];
            b.segment<3>(3 * n) = s.field * 1e3;
            for (std::size_t k = 0; k < slots_.size(); ++k) {
                const auto& sl = slots_[k];
                const double w = sl.offset ? 1.0 : s.currents(sl.coil);
                a.block(3 * n, static_cast<Eigen::Index>(k) * order_, 3, order_) =
                    (w * 1e3) * basis[q][static_cast<std::size_t>(sl.group)];
            }
        }
        // Column scaling keeps the QR rank decision independent of coefficient units.
        Vec scale = a.colwise().norm().transpose();
        for (Eigen::Index c = 0; c < nc; ++c) scale(c) = scale(c) > 0.0 ? scale(c) : 1.0;
        const Mat as = a * scale.cwiseInverse().asDiagonal();
        const Vec x = as.colPivHouseholderQr().solve(b);
        theta.tail(nc) = x.cwiseQuotient(scale);
    }

    [[nodiscard]] MpemParams to_params(const Vec& theta) const {
        MpemParams p;
        p.order = order_;
        p.coil_count = coils_;
        p.cross_count = cross_;
        p.shared_offset_pose = cfg_.shared_offset_pose;
        p.exclusion_radius = cfg_.exclusion_radius;
        p.coils.resize(static_cast<std::size_t>(coils_));
        for (std::size_t k = 0; k < slots_.size(); ++k) {
            const auto& sl = slots_[k];
            MultipoleSource src{pose(theta, sl.group), coeffs(theta, k)};
            auto& c = p.coils[static_cast<std::size_t>(sl.coil)];
            if (sl.offset) {
                c.offset = std::move(src);
            } else if (c.direct.coeffs.size() == 0) {
                c.direct = std::move(src);
            } else {
                c.cross.push_back(std::move(src));
            }
        }
        return p;
    }

    [[nodiscard]] const PositionTable& table() const { return table_; }

private:
    int order_;
    int cross_;
    int coils_;
    CalibConfig cfg_;
    const Dataset& train_;
    PositionTable table_;
    std::vector<Slot> slots_;
    int group_count_ = 0;
    std::vector<Mat3> frames_;
};

inline Vec3 random_unit(Rng& rng) {
    Vec3 v(normal(rng), normal(rng), normal(rng));
    return v.normalized();
}

/// Rotates `axis` by an angle uniform in [0, max_angle] about a random perpendicular direction.
inline Vec3 jitter_direction(const Vec3& axis, double max_angle, Rng& rng) {
    Vec3 perp = random_unit(rng);
    perp = (perp - perp.dot(axis) * axis).normalized();
    const double angle = uniform(rng, 0.0, max_angle);
    return (std::cos(angle) * axis + std::sin(angle) * perp).normalized();
}

}  // namespace detail

/// Calibrates an MPEM of the given order and cross-source count by Levenberg-Marquardt.
///
/// Restart 0 starts from the nominal poses; further restarts jitter them. Within
/// a restart the iterate with the lowest validation RMSE is kept, and the best
/// restart is returned. Coefficients are initialized by linear least squares
/// at the starting poses.
inline CalibrationResult lm_calibrate(const Dataset& train, const Dataset& val, const CalibConfig& cfg, int order,
                                      int cross) {
    if (train.empty()) throw DataError("lm_calibrate: empty training set");
    if (static_cast<int>(cfg.nominal_poses.size()) != train.coil_count) {
        throw DimensionError("lm_calibrate: need one nominal pose per coil");
    }
    if (order < 1) throw DomainError("lm_calibrate: order must be >= 1");
    if (cross < 0 || (cross > 0 && cross > train.coil_count - 1)) {
        throw DomainError("lm_calibrate: cross count must be in [0, S-1]");
    }
    const Dataset& vset = val.empty() ? train : val;
    const PositionTable vtable(vset);
    detail::MpemProblem prob(train, order, cross, cfg);
    const auto nominal = prob.nominal_group_poses(cfg.nominal_poses);
    const double ntrain = static_cast<double>(train.size());
    const double nval = static_cast<double>(vset.size());

    CalibrationResult best;
    double best_val = std::numeric_limits<double>::infinity();
    bool any_accepted = false;
    FitReport report;

    for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
        std::vector<SourcePose> start = nominal;
        if (restart > 0) {
            Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(restart)));
            for (auto& p : start) {
                p.location += detail::random_unit(rng) * uniform(rng, 0.0, cfg.restart_location_jitter);
                p.zenith = detail::jitter_direction(p.zenith, cfg.restart_angle_jitter, rng);
            }
        }
        Vec theta = prob.initial_vector(start);
        prob.fit_coefficients(theta);

        double cost = prob.cost(theta);
        double val_rmse = std::sqrt(prob.sse_mT(theta, vset, vtable) / nval);
        if (restart == 0) report.initial_val_rmse_mT = val_rmse;
        Vec restart_best = theta;
        double restart_best_val = val_rmse;
        double lambda = cfg.lambda_init;
        double prev_val = val_rmse;

        Vec residual;
        Mat jac;
        prob.linearize(theta, residual, jac);
        for (int it = 0; it < cfg.max_iterations; ++it) {
            const Mat jtj = jac.transpose() * jac;
            const Vec grad = jac.transpose() * residual;
            Vec diag = jtj.diagonal();
            const double dmax = diag.maxCoeff();
            for (Eigen::Index k = 0; k < diag.size(); ++k) diag(k) = std::max(diag(k), 1e-12 * dmax);
            Mat damped = jtj;
            damped.diagonal() += lambda * diag;
            const Eigen::LDLT<Mat> ldlt(damped);
            Vec step = ldlt.solve(-grad);
            const Vec trial = theta + step;
            const double trial_cost = (ldlt.info() == Eigen::Success && step.allFinite())
                                          ? prob.cost(trial)
                                          : std::numeric_limits<double>::infinity();
            LmIterationRecord rec;
            rec.restart = restart;
            rec.iteration = it;
            rec.lambda = lambda;
            if (std::isfinite(trial_cost) && trial_cost < cost) {
                any_accepted = true;
                theta = trial;
                cost = trial_cost;
                lambda /= cfg.lambda_down;
                val_rmse = std::sqrt(prob.sse_mT(theta, vset, vtable) / nval);
                rec.accepted = true;
                rec.train_rmse_mT = std::sqrt(prob.sse_mT(theta, train, prob.table()) / ntrain);
                rec.val_rmse_mT = val_rmse;
                report.iterations.push_back(rec);
                if (val_rmse < restart_best_val) {
                    restart_best_val = val_rmse;
                    restart_best = theta;
                }
                if (std::abs(val_rmse - prev_val) < cfg.val_stop_mT) break;
                prev_val = val_rmse;
                prob.linearize(theta, residual, jac);
            } else {
                lambda *= cfg.lambda_up;
                rec.accepted = false;
                rec.train_rmse_mT = std::sqrt(prob.sse_mT(theta, train, prob.table()) / ntrain);
                rec.val_rmse_mT = val_rmse;
                report.iterations.push_back(rec);
                if (lambda > 1e16) break;
            }
        }
        report.restart_best_val_mT.push_back(restart_best_val);
        if (restart_best_val < best_val) {
            best_val = restart_best_val;
            best.params = prob.to_params(restart_best);
            report.best_restart = restart;
            report.train_rmse_mT = std::sqrt(prob.sse_mT(restart_best, train, prob.table()) / ntrain);
            report.val_rmse_mT = restart_best_val;
        }
    }
    if (!any_accepted) {
        report.diverged = true;
        report.warnings.emplace_back("no restart reduced the residual; returning best starting point");
    }
    for (std::size_t r = 0; r < report.restart_best_val_mT.size(); ++r) {
        if (report.restart_best_val_mT[r] > 2.0 * best_val && best_val > 0.0) {
            report.warnings.push_back("restart " + std::to_string(r) + " ended at " +
                                      std::to_string(report.restart_best_val_mT[r]) + " mT validation RMSE");
        }
    }
    best.report = std::move(report);
    return best;
}

}  // namespace emns
