#pragma once

// Metrics, the pose-uncertainty RMSE floor, latency measurement and the
// synthetic multipole oracle.

#include "emns/dataset.hpp"
#include "emns/errors.hpp"
#include "emns/field_ops.hpp"
#include "emns/ingest.hpp"
#include "emns/model.hpp"
#include "emns/mpem.hpp"
#include "emns/rng.hpp"
#include "emns/types.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace emns {

// ---------------------------------------------------------------------------
// Metrics

/// Model predictions for every sample; affine kinds evaluate once per position.
inline Mat predict_dataset(const ModelArtifact& m, const Dataset& ds) {
    Mat out(3, static_cast<Eigen::Index>(ds.size()));
    if (is_affine_kind(m.kind)) {
        const PositionTable table(ds);
        for (std::size_t k = 0; k < table.size(); ++k) {
            const auto eval = eval_affine(m, table.positions[k]);
            for (auto n : table.samples_at[k]) {
                out.col(static_cast<Eigen::Index>(n)) = eval.apply(ds.samples[n].currents);
            }
        }
    } else {
        for (std::size_t n = 0; n < ds.size(); ++n) {
            out.col(static_cast<Eigen::Index>(n)) = predict_field(m, ds.samples[n].position, ds.samples[n].currents);
        }
    }
    return out;
}

/// sqrt(mean |B - B_hat|^2) in mT.
inline double rmse_mT(const ModelArtifact& m, const Dataset& ds) {
    if (ds.empty()) throw DataError("rmse: empty split");
    if (ds.coil_count != m.coil_count) throw DimensionError("rmse: dataset and model coil counts differ");
    const Mat pred = predict_dataset(m, ds);
    double sse = 0.0;
    for (std::size_t n = 0; n < ds.size(); ++n) {
        sse += (pred.col(static_cast<Eigen::Index>(n)) - ds.samples[n].field).squaredNorm();
    }
    return 1e3 * std::sqrt(sse / static_cast<double>(ds.size()));
}

struct MetricsReport {
    double rmse_train_mT = 0.0;
    double rmse_val_mT = 0.0;
    double rmse_test_mT = 0.0;
    double gap_mT = 0.0;  // test minus train, unclamped
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;
};

inline MetricsReport rmse_metrics(const ModelArtifact& m, const Dataset& train, const Dataset& val, const Dataset& test) {
    MetricsReport r;
    r.rmse_train_mT = rmse_mT(m, train);
    r.rmse_val_mT = rmse_mT(m, val);
    r.rmse_test_mT = rmse_mT(m, test);
    r.gap_mT = r.rmse_test_mT - r.rmse_train_mT;
    r.n_train = train.size();
    r.n_val = val.size();
    r.n_test = test.size();
    return r;
}

// ---------------------------------------------------------------------------
// Sensitivity floor

/// Per-sample ingredients of the floor: mean |grad B|_F^2 and mean |B|^2.
struct SensitivityTerms {
    double mean_jacobian_sq = 0.0;  // T^2/m^2
    double mean_field_sq = 0.0;     // T^2

    /// sqrt(mean trace(sp^2 J J^T + st^2 [B]x [B]x^T)) = sqrt(sp^2 <|J|^2> + 2 st^2 <|B|^2>).
    [[nodiscard]] double floor(double sigma_p, double sigma_theta) const {
        if (!(sigma_p >= 0.0) || !(sigma_theta >= 0.0)) throw DomainError("sensitivity: tolerances must be >= 0");
        return std::sqrt(sigma_p * sigma_p * mean_jacobian_sq + 2.0 * sigma_theta * sigma_theta * mean_field_sq);
    }
};

inline SensitivityTerms sensitivity_terms(const std::vector<Vec3>& fields, const std::vector<Mat3>& jacobians) {
    if (fields.size() != jacobians.size() || fields.empty()) throw DimensionError("sensitivity: need matching nonempty inputs");
    SensitivityTerms t;
    for (std::size_t n = 0; n < fields.size(); ++n) {
        t.mean_jacobian_sq += jacobians[n].squaredNorm();
        t.mean_field_sq += fields[n].squaredNorm();
    }
    t.mean_jacobian_sq /= static_cast<double>(fields.size());
    t.mean_field_sq /= static_cast<double>(fields.size());
    return t;
}

/// Recorded fields with model Jacobians evaluated at each sample's position and currents.
inline SensitivityTerms sensitivity_terms(const Dataset& test, const ModelArtifact& gradmodel) {
    if (test.empty()) throw DataError("sensitivity: empty dataset");
    std::vector<Vec3> fields;
    std::vector<Mat3> jacobians;
    fields.reserve(test.size());
    jacobians.reserve(test.size());
    if (is_affine_kind(gradmodel.kind)) {
        const PositionTable table(test);
        std::vector<AffineJet> jets;
        for (const auto& p : table.positions) jets.push_back(affine_jet(gradmodel, p));
        for (std::size_t n = 0; n < test.size(); ++n) {
            if (test.samples[n].currents.size() != gradmodel.coil_count) throw DimensionError("sensitivity: coil count mismatch");
            fields.push_back(test.samples[n].field);
            jacobians.push_back(jets[table.sample_to_position[n]].field_jacobian(test.samples[n].currents));
        }
    } else {
        for (const auto& s : test.samples) {
            fields.push_back(s.field);
            jacobians.push_back(spatial_jacobian(gradmodel, s.position, s.currents));
        }
    }
    return sensitivity_terms(fields, jacobians);
}

inline double sensitivity_floor(const Dataset& test, const ModelArtifact& gradmodel, double sigma_p, double sigma_theta) {
    return sensitivity_terms(test, gradmodel).floor(sigma_p, sigma_theta);
}

struct SensitivityConfig {
    double sigma_p_max = 2e-3;                              // m
    double sigma_theta_max = 2.0 * std::numbers::pi / 180;  // rad
    int sigma_p_steps = 21;
    int sigma_theta_steps = 21;
};

struct SensitivityHeatmap {
    std::vector<double> sigma_p;      // m, columns
    std::vector<double> sigma_theta;  // rad, rows
    Mat floor_t;                      // rows: sigma_theta, cols: sigma_p
};

inline SensitivityHeatmap sensitivity_heatmap(const SensitivityTerms& terms, const SensitivityConfig& cfg) {
    if (cfg.sigma_p_steps < 2 || cfg.sigma_theta_steps < 2 || !(cfg.sigma_p_max >= 0.0) || !(cfg.sigma_theta_max >= 0.0)) {
        throw DomainError("sensitivity_heatmap: invalid configuration");
    }
    SensitivityHeatmap h;
    for (int k = 0; k < cfg.sigma_p_steps; ++k) h.sigma_p.push_back(cfg.sigma_p_max * k / (cfg.sigma_p_steps - 1));
    for (int k = 0; k < cfg.sigma_theta_steps; ++k) {
        h.sigma_theta.push_back(cfg.sigma_theta_max * k / (cfg.sigma_theta_steps - 1));
    }
    h.floor_t.resize(cfg.sigma_theta_steps, cfg.sigma_p_steps);
    for (int r = 0; r < cfg.sigma_theta_steps; ++r) {
        for (int c = 0; c < cfg.sigma_p_steps; ++c) {
            h.floor_t(r, c) = terms.floor(h.sigma_p[static_cast<std::size_t>(c)], h.sigma_theta[static_cast<std::size_t>(r)]);
        }
    }
    return h;
}

inline SensitivityHeatmap sensitivity_heatmap(const Dataset& test, const ModelArtifact& gradmodel,
                                              const SensitivityConfig& cfg) {
    return sensitivity_heatmap(sensitivity_terms(test, gradmodel), cfg);
}

/// Metadata lines, then a header of sigma_p values (mm) and one row per sigma_theta (deg); cells in mT.
inline void write_sensitivity_csv(std::ostream& out, const SensitivityHeatmap& h) {
    out << "# quantity,rmse_floor_mT\n";
    out << "# rows,sigma_theta_deg\n";
    out << "# cols,sigma_p_mm\n";
    out << "sigma_theta_deg";
    for (double sp : h.sigma_p) out << ',' << detail::format_double(sp * 1e3);
    out << '\n';
    for (std::size_t r = 0; r < h.sigma_theta.size(); ++r) {
        out << detail::format_double(h.sigma_theta[r] * 180.0 / std::numbers::pi);
        for (Eigen::Index c = 0; c < h.floor_t.cols(); ++c) {
            out << ',' << detail::format_double(h.floor_t(static_cast<Eigen::Index>(r), c) * 1e3);
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Latency

enum class BenchMode { field, field_gradient };

struct LatencyReport {
    std::size_t queries = 0;
    double mean_s = 0.0;
    double median_s = 0.0;
    double p95_s = 0.0;
    double median_of_means_s = 0.0;  // blocks of 100 queries
};

/// Times `queries` single-position evaluations at pre-generated positions in the box,
/// after `warmup` untimed calls. Field mode evaluates A_B and B_0; field+gradient
/// evaluates the stacked map.
inline LatencyReport latency_bench(const ModelArtifact& m, std::size_t queries, BenchMode mode, const Vec3& lo,
                                   const Vec3& hi, std::uint64_t seed = 0, std::size_t warmup = 200) {
    if (!is_affine_kind(m.kind)) throw KindMismatchError("latency_bench: model has no actuation matrix");
    if (queries == 0) throw DomainError("latency_bench: need at least one query");
    Rng rng(derive_seed(seed, 0xbe7c));
    std::vector<Vec3> pts(queries);
    for (auto& p : pts) p = Vec3(uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()), uniform(rng, lo.z(), hi.z()));
    double sink = 0.0;
    auto run = [&](const Vec3& p) {
        if (mode == BenchMode::field) {
            sink += eval_affine(m, p).offset.x();
        } else {
            sink += stacked_map(m, p).offset(3);
        }
    };
    for (std::size_t k = 0; k < warmup; ++k) run(pts[k % queries]);
    std::vector<double> times(queries);
    using clock = std::chrono::steady_clock;
    for (std::size_t k = 0; k < queries; ++k) {
        const auto t0 = clock::now();
        run(pts[k]);
        times[k] = std::chrono::duration<double>(clock::now() - t0).count();
    }
    volatile double keep = sink;
    (void)keep;
    LatencyReport r;
    r.queries = queries;
    double total = 0.0;
    for (double t : times) total += t;
    r.mean_s = total / static_cast<double>(queries);
    std::vector<double> means;
    for (std::size_t b = 0; b < queries; b += 100) {
        const std::size_t e = std::min(queries, b + 100);
        double s = 0.0;
        for (std::size_t k = b; k < e; ++k) s += times[k];
        means.push_back(s / static_cast<double>(e - b));
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    r.median_s = median(times);
    r.median_of_means_s = median(means);
    std::sort(times.begin(), times.end());
    r.p95_s = times[std::min(queries - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(queries))) - 1)];
    return r;
}

// ---------------------------------------------------------------------------
// Synthetic oracle

/// Exact multipole system sampled with one-coil-at-a-time current sweeps.
struct OracleSpec {
    MpemParams truth;
    Vec3 box_lo = Vec3::Constant(-0.05);  // m
    Vec3 box_hi = Vec3::Constant(0.05);
    std::size_t position_count = 500;     // uniform random positions, unless a lattice is given
    std::optional<std::array<int, 3>> lattice;
    std::vector<double> levels;           // A, applied to each coil in turn
    double noise_sigma_t = 5e-4;          // RMS of the noise vector magnitude

    void validate() const {
        truth.validate();
        if (levels.empty()) throw DomainError("oracle: no current levels");
        if (!(noise_sigma_t >= 0.0)) throw DomainError("oracle: noise must be >= 0");
        if (!(box_hi.array() >= box_lo.array()).all()) throw DomainError("oracle: empty position box");
        auto outside = [&](const Vec3& c) { return (c.array() < box_lo.array()).any() || (c.array() > box_hi.array()).any(); };
        for (const auto& coil : truth.coils) {
            bool ok = outside(coil.direct.pose.location) && outside(coil.offset.pose.location);
            for (const auto& x : coil.cross) ok = ok && outside(x.pose.location);
            if (!ok) throw DomainError("oracle: a source lies inside the position box");
        }
    }
};

inline std::vector<double> current_levels(double from, double to, double step) {
    std::vector<double> out;
    const int n = static_cast<int>(std::floor((to - from) / step + 1e-9));
    for (int k = 0; k <= n; ++k) out.push_back(from + step * k);
    return out;
}

namespace detail {

/// Coil pointing at the origin from the given direction and distance.
inline CoilSources oracle_coil(const Vec3& direction, double distance, const Vec& coeffs, double offset_ratio) {
    CoilSources c;
    c.direct.pose.location = distance * direction.normalized();
    c.direct.pose.zenith = -direction.normalized();
    c.direct.coeffs = coeffs;
    c.offset.pose = c.direct.pose;
    c.offset.coeffs = offset_ratio * coeffs;
    return c;
}

inline MpemParams oracle_truth(const std::vector<Vec3>& directions, double distance, const Vec& coeffs, double offset_ratio) {
    MpemParams p;
    p.order = static_cast<int>(coeffs.size());
    p.coil_count = static_cast<int>(directions.size());
    p.cross_count = 0;
    p.shared_offset_pose = true;
    for (const auto& d : directions) p.coils.push_back(oracle_coil(d, distance, coeffs, offset_ratio));
    return p;
}

/// Coefficients whose on-axis unit-current field is `axis_field_t` per term at `distance`,
/// scaled by `decay` per extra order.
inline Vec oracle_coeffs(int order, double axis_field_t, double distance, double decay) {
    Vec c(order);
    for (int n = 1; n <= order; ++n) {
        c(n - 1) = axis_field_t * std::pow(distance, n + 2) / (n + 1) * std::pow(decay, n - 1);
    }
    return c;
}

}  // namespace detail

/// Three coils around a 10 cm workspace, about 10 mT per ampere at the near face, -4..4 A sweeps.
/// Orders above one add quadrupole and octupole terms to every source.
inline OracleSpec desk_oracle(int order = 1) {
    const double el = 35.0 * std::numbers::pi / 180.0;
    std::vector<Vec3> dirs;
    for (int k = 0; k < 3; ++k) {
        const double az = 2.0 * std::numbers::pi * k / 3.0;
        dirs.emplace_back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    }
    OracleSpec s;
    s.truth = detail::oracle_truth(dirs, 0.3, detail::oracle_coeffs(order, 1.0e-2, 0.25, 0.4), 0.05);
    s.levels = current_levels(-4.0, 4.0, 1.0);
    return s;
}

/// Eight coils in two rings of a hemisphere, -4..4 A in 1 A steps.
inline OracleSpec octomag_like() {
    std::vector<Vec3> dirs;
    for (int k = 0; k < 4; ++k) {
        const double az = std::numbers::pi / 2.0 * k;
        dirs.emplace_back(std::cos(az), std::sin(az), 0.35);
        dirs.emplace_back(0.55 * std::cos(az + std::numbers::pi / 4.0), 0.55 * std::sin(az + std::numbers::pi / 4.0), 1.0);
    }
    OracleSpec s;
    s.truth = detail::oracle_truth(dirs, 0.11, detail::oracle_coeffs(1, 2.0e-3, 0.06, 0.4), 0.05);
    s.box_lo = Vec3::Constant(-0.02);
    s.box_hi = Vec3::Constant(0.02);
    s.levels = current_levels(-4.0, 4.0, 1.0);
    return s;
}

/// Three large coils below the workspace, 0..30 A in 5 A steps.
inline OracleSpec navion_like(int order = 1) {
    std::vector<Vec3> dirs;
    for (int k = 0; k < 3; ++k) {
        const double az = 2.0 * std::numbers::pi * k / 3.0;
        dirs.emplace_back(std::cos(az), std::sin(az), -0.5);
    }
    OracleSpec s;
    s.truth = detail::oracle_truth(dirs, 0.3, detail::oracle_coeffs(order, 1.0e-3, 0.18, 0.4), 0.05);
    s.box_lo = Vec3(-0.1, -0.1, -0.05);
    s.box_hi = Vec3(0.1, 0.1, 0.1);
    s.levels = current_levels(0.0, 30.0, 5.0);
    return s;
}

struct SynthResult {
    Dataset data;
    ModelArtifact truth;
    std::vector<Vec3> positions;
};

/// Oracle positions (seeded) with one sweep per coil at each position and additive
/// isotropic Gaussian noise whose vector magnitude has RMS `noise_sigma_t`.
inline SynthResult synth_generate(const OracleSpec& spec, std::uint64_t seed) {
    spec.validate();
    SynthResult out;
    if (spec.lattice) {
        WorkspaceGrid g{spec.box_lo, spec.box_hi, *spec.lattice};
        g.validate();
        for (std::size_t k = 0; k < g.size(); ++k) out.positions.push_back(g.node(k));
    } else {
        Rng prng(derive_seed(seed, 0x9051));
        for (std::size_t k = 0; k < spec.position_count; ++k) {
            Vec3 p;
            for (int a = 0; a < 3; ++a) p(a) = uniform(prng, spec.box_lo(a), spec.box_hi(a));
            out.positions.push_back(p);
        }
    }
    if (out.positions.empty()) throw DomainError("oracle: no positions");
    const int S = spec.truth.coil_count;
    const double comp_sigma = spec.noise_sigma_t / std::sqrt(3.0);
    Rng nrng(derive_seed(seed, 0x4015e));
    out.data.coil_count = S;
    out.data.source_tag = "oracle";
    for (std::size_t k = 0; k < out.positions.size(); ++k) {
        const Vec3& p = out.positions[k];
        const auto eval = mpem_affine(spec.truth, p);
        for (int c = 0; c < S; ++c) {
            for (double level : spec.levels) {
                Sample s;
                s.position = p;
                s.currents = Vec::Zero(S);
                s.currents(c) = level;
                s.field = eval.apply(s.currents);
                if (comp_sigma > 0.0) {
                    for (int a = 0; a < 3; ++a) s.field(a) += comp_sigma * normal(nrng);
                }
                s.position_id = static_cast<int>(k);
                out.data.samples.push_back(std::move(s));
            }
        }
    }
    out.truth = make_mpem_artifact(spec.truth);
    return out;
}

/// Splits positions into `count` equal-count groups by horizontal distance to the
/// nearest of `sources`, nearest first. Samples keep their rows and position ids.
inline std::vector<Dataset> radial_segments(const Dataset& ds, const std::vector<Vec3>& sources, int count) {
    if (count < 1) throw DomainError("radial_segments: count must be >= 1");
    if (sources.empty()) throw DomainError("radial_segments: no sources");
    const PositionTable table(ds);
    if (table.size() < static_cast<std::size_t>(count)) throw DataError("radial_segments: fewer positions than segments");
    std::vector<std::pair<double, std::size_t>> radius;
    for (std::size_t q = 0; q < table.size(); ++q) {
        double r = std::numeric_limits<double>::infinity();
        for (const auto& c : sources) r = std::min(r, (table.positions[q] - c).head<2>().norm());
        radius.emplace_back(r, q);
    }
    std::sort(radius.begin(), radius.end());
    std::vector<int> segment_of(table.size());
    const auto sizes = apportion(table.size(), std::vector<double>(static_cast<std::size_t>(count), 1.0 / count));
    std::size_t k = 0;
    for (std::size_t seg = 0; seg < sizes.size(); ++seg) {
        for (std::size_t n = 0; n < sizes[seg]; ++n) segment_of[radius[k++].second] = static_cast<int>(seg);
    }
    std::vector<Dataset> out(static_cast<std::size_t>(count), Dataset{{}, ds.coil_count, ds.source_tag});
    for (std::size_t n = 0; n < ds.size(); ++n) {
        out[static_cast<std::size_t>(segment_of[table.sample_to_position[n]])].samples.push_back(ds.samples[n]);
    }
    return out;
}

/// Coil poses displaced by at most `max_offset` and tilted by at most `max_angle`.
inline std::vector<SourcePose> perturbed_poses(const MpemParams& truth, double max_offset, double max_angle,
                                               std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x9e7));
    std::vector<SourcePose> out;
    for (const auto& c : truth.coils) {
        SourcePose p = c.direct.pose;
        const Vec3 dir = detail::random_unit(rng);
        p.location += std::cbrt(uniform01(rng)) * max_offset * dir;
        p.zenith = detail::jitter_direction(p.zenith, max_angle, rng);
        out.push_back(p);
    }
    return out;
}

}  // namespace emns
