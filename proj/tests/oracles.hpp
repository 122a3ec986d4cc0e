#pragma once

// Test-side reference implementations. These avoid the library's own
// recurrences and formulas so that agreement is meaningful.

#include "emns/emns.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

using emns::Mat;
using emns::Mat3;
using emns::Vec;
using emns::Vec3;

/// Multipole source field assembled in spherical components with the standard
/// library's Legendre functions: B_r = sum (n+1) B_n r^-(n+2) P_n, B_theta = sum B_n r^-(n+2) P_n^1.
inline Vec3 multipole_field(const Vec3& location, const Vec3& zenith, const Vec& coeffs, const Vec3& p) {
    const Vec3 d = p - location;
    const double r = d.norm();
    const Vec3 er = d / r;
    const double u = std::clamp(zenith.dot(er), -1.0, 1.0);
    const double s = std::sqrt(1.0 - u * u);
    const Vec3 etheta = (u * er - zenith) / s;
    double br = 0.0;
    double bt = 0.0;
    for (int n = 1; n <= coeffs.size(); ++n) {
        const double scale = coeffs(n - 1) * std::pow(r, -(n + 2));
        br += (n + 1) * scale * std::legendre(static_cast<unsigned>(n), u);
        bt += scale * std::assoc_legendre(static_cast<unsigned>(n), 1u, u);
    }
    return br * er + bt * etheta;
}

/// Scalar potential sum B_n r^-(n+1) P_n(cos theta); the field is its negative gradient.
inline double multipole_potential(const Vec3& location, const Vec3& zenith, const Vec& coeffs, const Vec3& p) {
    const Vec3 d = p - location;
    const double r = d.norm();
    const double u = std::clamp(zenith.dot(d) / r, -1.0, 1.0);
    double phi = 0.0;
    for (int n = 1; n <= coeffs.size(); ++n) {
        phi += coeffs(n - 1) * std::pow(r, -(n + 1)) * std::legendre(static_cast<unsigned>(n), u);
    }
    return phi;
}

/// Point dipole of strength b1 along `zenith`: b1 (3 (z.rhat) rhat - z) / r^3.
inline Vec3 dipole_field(const Vec3& location, const Vec3& zenith, double b1, const Vec3& p) {
    const Vec3 d = p - location;
    const double r = d.norm();
    const Vec3 rh = d / r;
    return b1 * (3.0 * zenith.dot(rh) * rh - zenith) / (r * r * r);
}

/// Fourth-order central-difference Jacobian of f: R^n -> R^m, J(c, k) = d f_c / d x_k.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
    const Vec f0 = f(x);
    Mat j(f0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Vec a = x, b = x, c = x, d = x;
        a(k) += 2 * h;
        b(k) += h;
        c(k) -= h;
        d(k) -= 2 * h;
        j.col(k) = (-f(a) + 8 * f(b) - 8 * f(c) + f(d)) / (12 * h);
    }
    return j;
}

/// Second-order central difference, as used for the stated tolerance checks.
inline Mat fd_jacobian2(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
    const Vec f0 = f(x);
    Mat j(f0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Vec a = x, b = x;
        a(k) += h;
        b(k) -= h;
        j.col(k) = (f(a) - f(b)) / (2 * h);
    }
    return j;
}

inline double rel_err(const Mat& a, const Mat& b) {
    const double scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

inline Vec3 random_unit(emns::Rng& rng) {
    Vec3 v(emns::normal(rng), emns::normal(rng), emns::normal(rng));
    return v.normalized();
}

/// Random point at distance in [rmin, rmax] from `center`, kept away from the axis.
inline Vec3 random_exterior(emns::Rng& rng, const Vec3& center, const Vec3& zenith, double rmin, double rmax) {
    while (true) {
        const Vec3 dir = random_unit(rng);
        if (std::abs(dir.dot(zenith)) > 0.99) continue;
        return center + emns::uniform(rng, rmin, rmax) * dir;
    }
}

/// Small affine-in-current dataset over random positions in a box, from a model.
inline emns::Dataset sample_model(const emns::ModelArtifact& m, std::size_t positions, const std::vector<double>& levels,
                                  std::uint64_t seed, double lo = -0.04, double hi = 0.04) {
    emns::Rng rng(seed);
    emns::Dataset ds;
    ds.coil_count = m.coil_count;
    for (std::size_t k = 0; k < positions; ++k) {
        const Vec3 p(emns::uniform(rng, lo, hi), emns::uniform(rng, lo, hi), emns::uniform(rng, lo, hi));
        for (int c = 0; c < m.coil_count; ++c) {
            for (double level : levels) {
                emns::Sample s;
                s.position = p;
                s.currents = Vec::Zero(m.coil_count);
                s.currents(c) = level;
                s.field = emns::predict_field(m, p, s.currents);
                s.position_id = static_cast<int>(k);
                ds.samples.push_back(s);
            }
        }
    }
    return ds;
}

/// Network whose affine head is a constant: A_B = `actuation`, B_0 = `offset`.
inline emns::ModelArtifact constant_actuation_model(const Mat& actuation, const Vec3& offset) {
    const auto S = actuation.cols();
    emns::MlpParams p;
    p.weights.push_back(Mat::Zero(3 * S + 3, 3));
    Vec b(3 * S + 3);
    for (Eigen::Index c = 0; c < 3; ++c) {
        for (Eigen::Index s = 0; s < S; ++s) b(c * S + s) = actuation(c, s);
    }
    b.tail<3>() = offset;
    p.biases.push_back(b);
    p.input_mean = Vec::Zero(3);
    p.input_scale = Vec::Ones(3);
    p.output_scale = Vec::Ones(3 * S + 3);
    emns::ModelArtifact m;
    m.kind = emns::ModelKind::actuation_net;
    m.coil_count = static_cast<int>(S);
    m.payload = p;
    return m;
}

}  // namespace oracle
