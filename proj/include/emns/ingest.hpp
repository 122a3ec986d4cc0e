#pragma once

// Dataset hygiene: per-position linearity audit, RANSAC cleaning of one-coil
// current sweeps, robust field floor, position-level splits and subsampling.

#include "emns/dataset.hpp"
#include "emns/errors.hpp"
#include "emns/rng.hpp"
#include "emns/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace emns {

// ---------------------------------------------------------------------------
// Affine audit

struct AffineAudit {
    int position_id = 0;
    double r_squared = 0.0;
    double offset_norm = 0.0;  // T
    Mat3X slope;               // T/A
};

struct AuditResult {
    std::vector<AffineAudit> positions;
    std::vector<int> skipped;  // underdetermined position ids
};

/// Least-squares fit B = A i + b at every position; R^2 on the stacked components.
inline AuditResult affine_audit(const Dataset& ds) {
    AuditResult out;
    const PositionTable table(ds);
    const int S = ds.coil_count;
    for (std::size_t k = 0; k < table.size(); ++k) {
        const auto& idx = table.samples_at[k];
        const auto n = static_cast<Eigen::Index>(idx.size());
        bool varied = false;
        for (int c = 0; c < S && !varied; ++c) {
            const double first = ds.samples[idx[0]].currents(c);
            for (auto s : idx) varied = varied || ds.samples[s].currents(c) != first;
        }
        if (n < S + 2 || !varied) {
            out.skipped.push_back(table.ids[k]);
            continue;
        }
        Mat design(n, S + 1);
        Mat target(n, 3);
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto& smp = ds.samples[idx[static_cast<std::size_t>(r)]];
            design.row(r).head(S) = smp.currents.transpose();
            design(r, S) = 1.0;
            target.row(r) = smp.field.transpose();
        }
        const Mat coef = design.completeOrthogonalDecomposition().solve(target);  // (S+1) x 3
        const double ss_res = (target - design * coef).squaredNorm();
        const double ss_tot = (target.rowwise() - target.colwise().mean()).squaredNorm();
        AffineAudit a;
        a.position_id = table.ids[k];
        a.slope = coef.topRows(S).transpose();
        const Vec3 b = coef.row(S).transpose();
        a.offset_norm = b.norm();
        if (ss_tot > 0.0) {
            a.r_squared = 1.0 - ss_res / ss_tot;
        } else {
            a.r_squared = ss_res > 0.0 ? -std::numeric_limits<double>::infinity() : 1.0;
        }
        out.positions.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Robust floor

/// Linear interpolation between closest ranks; q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw DataError("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// First quartile of |B| over the dataset, in tesla.
inline double quartile_floor(const Dataset& ds) {
    if (ds.empty()) throw DataError("quartile_floor: empty dataset");
    std::vector<double> mags;
    mags.reserve(ds.size());
    for (const auto& s : ds.samples) mags.push_back(s.field.norm());
    return quantile(std::move(mags), 0.25);
}

// ---------------------------------------------------------------------------
// RANSAC

inline double relative_residual(const Vec3& measured, const Vec3& predicted, double floor_t) {
    return (measured - predicted).norm() / std::max(measured.norm(), floor_t);
}

struct RansacConfig {
    double floor_t = 0.0;
    double inlier_tol = 0.20;
    int iterations = 100;
    std::uint64_t seed = 0;
};

struct RansacRow {
    std::size_t row = 0;
    int position_id = 0;
    int coil = 0;  // 1-based active coil, 0 for all-zero currents, -1 when not one-hot
    std::optional<double> residual;
    bool flagged = false;
};

struct RansacResult {
    Dataset cleaned;
    std::vector<RansacRow> rows;
    std::size_t flagged_count = 0;
    double flagged_fraction = 0.0;
    std::vector<std::string> notes;
};

namespace detail {

struct SweepLine {
    Vec3 slope = Vec3::Zero();
    Vec3 intercept = Vec3::Zero();
    [[nodiscard]] Vec3 operator()(double i) const { return slope * i + intercept; }
};

inline std::optional<SweepLine> fit_sweep(const std::vector<double>& cur, const std::vector<Vec3>& field,
                                          const std::vector<std::size_t>& use) {
    double mean_i = 0.0;
    Vec3 mean_b = Vec3::Zero();
    for (auto k : use) {
        mean_i += cur[k];
        mean_b += field[k];
    }
    const double n = static_cast<double>(use.size());
    mean_i /= n;
    mean_b /= n;
    double sii = 0.0;
    Vec3 sib = Vec3::Zero();
    for (auto k : use) {
        const double di = cur[k] - mean_i;
        sii += di * di;
        sib += di * (field[k] - mean_b);
    }
    if (!(sii > 0.0)) return std::nullopt;
    SweepLine line;
    line.slope = sib / sii;
    line.intercept = mean_b - line.slope * mean_i;
    return line;
}

}  // namespace detail

/// Per (position, active coil) sweep: RANSAC over 2-level minimal samples, refit on
/// the consensus set, flag samples whose scale-aware residual exceeds the tolerance.
inline RansacResult ransac_clean(const Dataset& ds, const RansacConfig& cfg) {
    if (!(cfg.inlier_tol > 0.0) || cfg.iterations < 1 || !(cfg.floor_t >= 0.0)) {
        throw DomainError("ransac_clean: invalid configuration");
    }
    RansacResult out;
    out.rows.resize(ds.size());
    // Group rows by (position, coil); zero-current rows join every coil group at their position.
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    std::map<int, std::vector<std::size_t>> zero_rows;
    std::size_t multi = 0;
    for (std::size_t n = 0; n < ds.size(); ++n) {
        const auto& s = ds.samples[n];
        auto& row = out.rows[n];
        row.row = n;
        row.position_id = s.position_id;
        int active = 0;
        int count = 0;
        for (int c = 0; c < ds.coil_count; ++c) {
            if (s.currents(c) != 0.0) {
                active = c + 1;
                ++count;
            }
        }
        if (count > 1) {
            row.coil = -1;
            ++multi;
        } else if (count == 0) {
            row.coil = 0;
            zero_rows[s.position_id].push_back(n);
        } else {
            row.coil = active;
            groups[{s.position_id, active}].push_back(n);
        }
    }
    if (multi > 0) out.notes.push_back(std::to_string(multi) + " rows drive more than one coil and were not checked");
    for (auto& [key, members] : groups) {
        const auto z = zero_rows.find(key.first);
        if (z != zero_rows.end()) members.insert(members.end(), z->second.begin(), z->second.end());
        std::sort(members.begin(), members.end());
    }

    for (const auto& [key, members] : groups) {
        const auto [pid, coil] = key;
        std::vector<double> cur;
        std::vector<Vec3> field;
        std::set<double> levels;
        for (auto n : members) {
            cur.push_back(ds.samples[n].currents(coil - 1));
            field.push_back(ds.samples[n].field);
            levels.insert(cur.back());
        }
        if (levels.size() < 3) {
            out.notes.push_back("position " + std::to_string(pid) + " coil " + std::to_string(coil) +
                                ": fewer than 3 current levels, left unflagged");
            continue;
        }
        const std::size_t m = members.size();
        auto inliers_of = [&](const detail::SweepLine& line) {
            std::vector<std::size_t> in;
            for (std::size_t k = 0; k < m; ++k) {
                if (relative_residual(field[k], line(cur[k]), cfg.floor_t) <= cfg.inlier_tol) in.push_back(k);
            }
            return in;
        };
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(pid), static_cast<std::uint64_t>(coil)));
        std::optional<detail::SweepLine> best;
        std::size_t best_count = 0;
        for (int t = 0; t < cfg.iterations; ++t) {
            const auto a = static_cast<std::size_t>(uniform_index(rng, m));
            const auto b = static_cast<std::size_t>(uniform_index(rng, m - 1));
            const std::size_t bb = b >= a ? b + 1 : b;
            const auto line = detail::fit_sweep(cur, field, {a, bb});
            if (!line) continue;
            const auto count = inliers_of(*line).size();
            if (count > best_count) {
                best_count = count;
                best = line;
            }
        }
        if (!best) {
            out.notes.push_back("position " + std::to_string(pid) + " coil " + std::to_string(coil) +
                                ": no valid minimal sample, left unflagged");
            continue;
        }
        if (const auto refit = detail::fit_sweep(cur, field, inliers_of(*best))) best = refit;
        for (std::size_t k = 0; k < m; ++k) {
            const double r = relative_residual(field[k], (*best)(cur[k]), cfg.floor_t);
            auto& row = out.rows[members[k]];
            row.residual = std::max(row.residual.value_or(0.0), r);
            row.flagged = row.flagged || r > cfg.inlier_tol;
        }
    }

    out.cleaned.coil_count = ds.coil_count;
    out.cleaned.source_tag = ds.source_tag;
    for (std::size_t n = 0; n < ds.size(); ++n) {
        if (out.rows[n].flagged) {
            ++out.flagged_count;
        } else {
            out.cleaned.samples.push_back(ds.samples[n]);
        }
    }
    out.flagged_fraction = ds.empty() ? 0.0 : static_cast<double>(out.flagged_count) / static_cast<double>(ds.size());
    return out;
}

inline void write_outlier_report(std::ostream& out, const RansacResult& res) {
    out << "row,position_id,coil,residual,flag\n";
    for (const auto& r : res.rows) {
        out << r.row << ',' << r.position_id << ',' << r.coil << ','
            << (r.residual ? detail::format_double(*r.residual) : std::string()) << ',' << (r.flagged ? 1 : 0) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitPart { train = 0, validation = 1, test = 2 };

inline std::string_view to_string(SplitPart p) {
    switch (p) {
        case SplitPart::train: return "train";
        case SplitPart::validation: return "val";
        case SplitPart::test: return "test";
    }
    return "?";
}

using SplitAssignment = std::map<int, SplitPart>;

/// Largest-remainder apportionment of `total` items; ties go to the earlier part.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& fractions) {
    std::vector<std::size_t> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        const double quota = fractions[k] * static_cast<double>(total);
        counts[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
        rem.emplace_back(quota - static_cast<double>(counts[k]), k);
        used += counts[k];
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
    for (std::size_t k = 0; used < total && k < rem.size(); ++k, ++used) ++counts[rem[k].second];
    return counts;
}

/// Random permutation of position ids cut into contiguous train/val/test blocks.
inline SplitAssignment split_positions(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw DomainError("split fractions must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DomainError("split fractions must sum to 1");
    const auto ids = ds.position_ids();
    if (ids.size() < 3) throw DataError("split_positions: need at least 3 positions");
    Rng rng(derive_seed(seed, 0x5b117));
    const auto perm = random_permutation(ids.size(), rng);
    const auto counts = apportion(ids.size(), {fractions[0], fractions[1], fractions[2]});
    SplitAssignment out;
    std::size_t k = 0;
    for (std::size_t part = 0; part < 3; ++part) {
        for (std::size_t c = 0; c < counts[part]; ++c, ++k) out[ids[perm[k]]] = static_cast<SplitPart>(part);
    }
    return out;
}

inline Dataset select_split(const Dataset& ds, const SplitAssignment& a, SplitPart part) {
    std::set<int> ids;
    for (const auto& [id, p] : a) {
        if (p == part) ids.insert(id);
    }
    return ds.restrict_to(ids);
}

/// Keeps ceil(keep_fraction * positions) positions chosen uniformly, with all their samples.
inline Dataset subsample_positions(const Dataset& ds, double keep_fraction, std::uint64_t seed) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw DomainError("keep fraction must lie in (0, 1]");
    const auto ids = ds.position_ids();
    const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(ids.size()) - 1e-9));
    if (keep == 0) throw DataError("subsample_positions: result would be empty");
    Rng rng(derive_seed(seed, 0x5ab5));
    const auto perm = random_permutation(ids.size(), rng);
    std::set<int> chosen;
    for (std::size_t k = 0; k < keep; ++k) chosen.insert(ids[perm[k]]);
    return ds.restrict_to(chosen);
}

}  // namespace emns
