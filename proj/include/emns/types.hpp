#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace emns {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Mat3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;
using Mat8X = Eigen::Matrix<double, 8, Eigen::Dynamic>;
using Vec8 = Eigen::Matrix<double, 8, 1>;

/// One measurement: field at a position under a current vector. SI units.
struct Sample {
    Vec3 position = Vec3::Zero();
    Vec currents;
    Vec3 field = Vec3::Zero();
    int position_id = 0;
};

/// Affine field map at one position: B = actuation * i + offset.
struct AffineFieldEval {
    Mat3X actuation;  // T/A
    Vec3 offset = Vec3::Zero();  // T

    [[nodiscard]] Vec3 apply(const Vec& currents) const { return actuation * currents + offset; }
};

/// Affine map together with the spatial Jacobian of every column.
/// actuation_gradient[s](c, k) = d A_B(c, s) / d p_k.
struct AffineJet {
    AffineFieldEval value;
    std::vector<Mat3> actuation_gradient;
    Mat3 offset_gradient = Mat3::Zero();

    /// Spatial Jacobian of the total field at the given currents.
    [[nodiscard]] Mat3 field_jacobian(const Vec& currents) const {
        Mat3 j = offset_gradient;
        for (std::size_t s = 0; s < actuation_gradient.size(); ++s) {
            j += currents(static_cast<Eigen::Index>(s)) * actuation_gradient[s];
        }
        return j;
    }
};

/// Field stacked over the reduced gradient: rows 0-2 field, rows 3-7 gradient.
struct StackedEval {
    Mat8X actuation;
    Vec8 offset = Vec8::Zero();

    [[nodiscard]] Vec8 apply(const Vec& currents) const { return actuation * currents + offset; }
};

enum class ModelKind { mpem, actuation_net, potential_net, direct_net, direct_gbt };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::mpem: return "mpem";
        case ModelKind::actuation_net: return "actuation_net";
        case ModelKind::potential_net: return "potential_net";
        case ModelKind::direct_net: return "direct_net";
        case ModelKind::direct_gbt: return "direct_gbt";
    }
    return "unknown";
}

/// Accepts both the underscore and the dashed spelling (CLI style).
inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
    std::string t(s);
    for (auto& ch : t) {
        if (ch == '-') ch = '_';
    }
    for (auto k : {ModelKind::mpem, ModelKind::actuation_net, ModelKind::potential_net, ModelKind::direct_net,
                   ModelKind::direct_gbt}) {
        if (to_string(k) == t) return k;
    }
    return std::nullopt;
}

inline bool is_affine_kind(ModelKind k) {
    return k == ModelKind::mpem || k == ModelKind::actuation_net || k == ModelKind::potential_net;
}

/// Capacity ladder shared by all model classes.
enum class ComplexityRank { I = 1, II = 2, III = 3 };

inline std::optional<ComplexityRank> parse_rank(std::string_view s) {
    if (s == "I" || s == "1") return ComplexityRank::I;
    if (s == "II" || s == "2") return ComplexityRank::II;
    if (s == "III" || s == "3") return ComplexityRank::III;
    return std::nullopt;
}

/// Hidden widths of the neural models at a rank.
inline std::vector<int> hidden_widths(ComplexityRank r) {
    switch (r) {
        case ComplexityRank::I: return {256, 256};
        case ComplexityRank::II: return {256, 256, 256};
        case ComplexityRank::III: return {512, 512, 512};
    }
    return {};
}

/// Per-tree leaf limit of the boosted trees at a rank.
inline int gbt_leaf_limit(ComplexityRank r) {
    switch (r) {
        case ComplexityRank::I: return 32;
        case ComplexityRank::II: return 64;
        case ComplexityRank::III: return 128;
    }
    return 0;
}

/// Multipole order at a rank (dipole, quadrupole, octopole).
inline int mpem_order(ComplexityRank r) { return static_cast<int>(r); }

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

}  // namespace emns
