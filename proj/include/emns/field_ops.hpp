#pragma once

// Operations on affine field maps: reduced gradients, stacked field/gradient
// actuation, Maxwell residuals, minimum-norm current inversion and conditioning.

#include "emns/errors.hpp"
#include "emns/model.hpp"
#include "emns/types.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace emns {

using ReducedGradient = Eigen::Matrix<double, 5, 1>;

/// (dBx/dx, dBx/dy, dBx/dz, dBy/dy, dBy/dz) from J(c, k) = dB_c / dp_k.
inline ReducedGradient reduced_gradient(const Mat3& j) {
    ReducedGradient g;
    g << j(0, 0), j(0, 1), j(0, 2), j(1, 1), j(1, 2);
    return g;
}

/// Symmetric, trace-free Jacobian with the given reduced gradient.
inline Mat3 jacobian_from_reduced(const ReducedGradient& g) {
    Mat3 j;
    j << g(0), g(1), g(2), g(1), g(3), g(4), g(2), g(4), -g(0) - g(3);
    return j;
}

/// Field rows over reduced-gradient rows, one column per coil.
inline StackedEval stacked_from_jet(const AffineJet& jet) {
    const auto S = jet.value.actuation.cols();
    StackedEval out;
    out.actuation.resize(8, S);
    out.actuation.topRows<3>() = jet.value.actuation;
    for (Eigen::Index s = 0; s < S; ++s) {
        out.actuation.col(s).tail<5>() = reduced_gradient(jet.actuation_gradient[static_cast<std::size_t>(s)]);
    }
    out.offset.head<3>() = jet.value.offset;
    out.offset.tail<5>() = reduced_gradient(jet.offset_gradient);
    return out;
}

inline StackedEval stacked_map(const ModelArtifact& m, const Vec3& p) { return stacked_from_jet(affine_jet(m, p)); }

struct MaxwellResidual {
    double divergence = 0.0;  // T/m
    double curl_norm = 0.0;   // T/m
};

inline MaxwellResidual maxwell_from_jacobian(const Mat3& j) {
    const Vec3 curl(j(2, 1) - j(1, 2), j(0, 2) - j(2, 0), j(1, 0) - j(0, 1));
    return {j.trace(), curl.norm()};
}

inline MaxwellResidual maxwell_residuals(const ModelArtifact& m, const Vec3& p, const Vec& currents) {
    return maxwell_from_jacobian(spatial_jacobian(m, p, currents));
}

// ---------------------------------------------------------------------------
// Inversion

inline constexpr double kDefaultRcond = 1e-8;

/// Moore-Penrose pseudoinverse with singular values below rcond * sigma_max dropped.
inline Mat pseudo_inverse(const Mat& a, double rcond = kDefaultRcond) {
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? rcond * sv(0) : 0.0;
    Vec inv = Vec::Zero(sv.size());
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
        if (sv(k) > cutoff && sv(k) > 0.0) inv(k) = 1.0 / sv(k);
    }
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

struct InversionResult {
    Vec currents;
    double residual_norm = 0.0;  // |A i + offset - target|
};

/// i* = pinv(A) (target - offset): exact and minimum-norm when consistent, least squares otherwise.
inline InversionResult min_norm_currents(const Mat& a, const Vec& offset, const Vec& target, double rcond = kDefaultRcond) {
    if (a.rows() != 3 && a.rows() != 8) throw DimensionError("min_norm_currents: map must have 3 or 8 rows");
    if (offset.size() != a.rows() || target.size() != a.rows()) {
        throw DimensionError("min_norm_currents: offset/target length does not match the map");
    }
    if (!a.allFinite() || !offset.allFinite() || !target.allFinite()) throw DomainError("min_norm_currents: non-finite input");
    InversionResult r;
    r.currents = pseudo_inverse(a, rcond) * (target - offset);
    r.residual_norm = (a * r.currents + offset - target).norm();
    return r;
}

/// sigma_max / sigma_3; +inf when sigma_3 is numerically zero.
inline double condition_number(const Mat& a) {
    if (a.rows() != 3 || a.cols() < 3) throw DimensionError("condition_number: expects a 3 x S map with S >= 3");
    Eigen::JacobiSVD<Mat> svd(a);
    const Vec& sv = svd.singularValues();
    const double tol = sv(0) * std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(a.rows(), a.cols()));
    if (!(sv(2) > tol)) return std::numeric_limits<double>::infinity();
    return sv(0) / sv(2);
}

// ---------------------------------------------------------------------------
// Workspace grids

/// Axis-aligned lattice; an axis with resolution 1 is held at its `lo` coordinate.
struct WorkspaceGrid {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();
    std::array<int, 3> res{2, 2, 1};

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (res[static_cast<std::size_t>(a)] < 1) throw DomainError("grid resolution must be >= 1");
            if (res[static_cast<std::size_t>(a)] >= 2 && !(hi(a) > lo(a))) throw DomainError("grid axis has empty extent");
        }
        if (!lo.allFinite() || !hi.allFinite()) throw DomainError("grid bounds must be finite");
    }

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(res[0]) * static_cast<std::size_t>(res[1]) * static_cast<std::size_t>(res[2]);
    }

    [[nodiscard]] double coord(int axis, int k) const {
        const int n = res[static_cast<std::size_t>(axis)];
        if (n == 1) return lo(axis);
        return lo(axis) + (hi(axis) - lo(axis)) * static_cast<double>(k) / static_cast<double>(n - 1);
    }

    /// Node `idx` with x fastest, then y, then z.
    [[nodiscard]] Vec3 node(std::size_t idx) const {
        const auto nx = static_cast<std::size_t>(res[0]);
        const auto ny = static_cast<std::size_t>(res[1]);
        return {coord(0, static_cast<int>(idx % nx)), coord(1, static_cast<int>((idx / nx) % ny)),
                coord(2, static_cast<int>(idx / (nx * ny)))};
    }
};

struct GridMap {
    WorkspaceGrid grid;
    std::vector<std::optional<double>> values;  // empty optional marks a failed evaluation
};

/// log10 condition number of A_B at every grid node.
inline GridMap condition_map(const ModelArtifact& m, const WorkspaceGrid& grid) {
    grid.validate();
    if (!is_affine_kind(m.kind)) throw KindMismatchError("condition_map: model has no actuation matrix");
    GridMap out{grid, {}};
    out.values.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        try {
            out.values.emplace_back(std::log10(condition_number(eval_affine(m, grid.node(k)).actuation)));
        } catch (const Error&) {
            out.values.emplace_back(std::nullopt);
        }
    }
    return out;
}

/// Fraction of evaluated cells whose value exceeds `threshold` (infinite counts as above).
inline double fraction_above(const GridMap& map, double threshold) {
    std::size_t n = 0;
    std::size_t above = 0;
    for (const auto& v : map.values) {
        if (!v) continue;
        ++n;
        if (*v > threshold) ++above;
    }
    return n == 0 ? 0.0 : static_cast<double>(above) / static_cast<double>(n);
}

namespace detail {

inline std::string format_cell(const std::optional<double>& v) {
    if (!v) return {};
    if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
    return format_double(*v);
}

}  // namespace detail

/// `# ` metadata lines, then one CSV row per (y, z) line of the grid with nx cells.
inline void write_grid_csv(std::ostream& out, const GridMap& map, const std::string& quantity) {
    const auto& g = map.grid;
    out << "# quantity," << quantity << '\n';
    out << "# xmin,xmax,nx,ymin,ymax,ny,zmin,zmax,nz\n";
    out << "# " << detail::format_double(g.lo.x()) << ',' << detail::format_double(g.hi.x()) << ',' << g.res[0] << ','
        << detail::format_double(g.lo.y()) << ',' << detail::format_double(g.hi.y()) << ',' << g.res[1] << ','
        << detail::format_double(g.lo.z()) << ',' << detail::format_double(g.hi.z()) << ',' << g.res[2] << '\n';
    const auto nx = static_cast<std::size_t>(g.res[0]);
    for (std::size_t row = 0; row * nx < map.values.size(); ++row) {
        for (std::size_t c = 0; c < nx; ++c) {
            if (c > 0) out << ',';
            out << detail::format_cell(map.values[row * nx + c]);
        }
        out << '\n';
    }
}

}  // namespace emns
