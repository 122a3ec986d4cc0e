#pragma once

// Model artifact: one tagged container for every model kind, with the
// affine evaluation contract and a kind-dispatching trainer.

#include "emns/dataset.hpp"
#include "emns/errors.hpp"
#include "emns/gbt.hpp"
#include "emns/mlp.hpp"
#include "emns/mpem.hpp"
#include "emns/neural.hpp"
#include "emns/types.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace emns {

inline constexpr int kSchemaVersion = 1;

struct TrainingMeta {
    std::uint64_t seed = 0;
    int rank = 0;               // 0 when not produced by a rank preset
    int stopping_epoch = 0;     // best epoch / boosting round / LM iteration
    int epochs_run = 0;
    double final_val_rmse_mT = 0.0;

    bool operator==(const TrainingMeta&) const = default;
};

using ModelPayload = std::variant<MpemParams, MlpParams, GbtEnsemble>;

struct ModelArtifact {
    int schema_version = kSchemaVersion;
    ModelKind kind = ModelKind::mpem;
    int coil_count = 0;
    std::string units = "SI";
    ModelPayload payload;
    TrainingMeta training_meta;

    bool operator==(const ModelArtifact&) const = default;

    [[nodiscard]] const MpemParams& mpem() const { return std::get<MpemParams>(payload); }
    [[nodiscard]] const MlpParams& mlp() const { return std::get<MlpParams>(payload); }
    [[nodiscard]] const GbtEnsemble& gbt() const { return std::get<GbtEnsemble>(payload); }
};

/// Checks that kind, payload and coil count agree.
inline void validate_model(const ModelArtifact& m) {
    if (m.schema_version != kSchemaVersion) throw SchemaError("unsupported schema_version " + std::to_string(m.schema_version));
    if (m.units != "SI") throw SchemaError("unsupported units tag '" + m.units + "'");
    if (m.coil_count < 1) throw DimensionError("model coil_count must be >= 1");
    switch (m.kind) {
        case ModelKind::mpem: {
            if (!std::holds_alternative<MpemParams>(m.payload)) throw SchemaError("mpem model without multipole payload");
            m.mpem().validate();
            if (m.mpem().coil_count != m.coil_count) throw DimensionError("mpem payload coil count mismatch");
            break;
        }
        case ModelKind::actuation_net:
        case ModelKind::potential_net:
        case ModelKind::direct_net: {
            if (!std::holds_alternative<MlpParams>(m.payload)) throw SchemaError("network model without network payload");
            const auto& p = m.mlp();
            p.validate();
            const int in = m.kind == ModelKind::direct_net ? 3 + m.coil_count : 3;
            check_width(p, in, network_output_width(m.kind, m.coil_count), "model");
            break;
        }
        case ModelKind::direct_gbt: {
            if (!std::holds_alternative<GbtEnsemble>(m.payload)) throw SchemaError("direct_gbt model without ensemble payload");
            const auto& e = m.gbt();
            if (e.input_dim != 3 + m.coil_count) throw DimensionError("ensemble input dimension mismatch");
            for (const auto& t : e.trees) {
                if (t.nodes.empty()) throw SchemaError("ensemble tree without nodes");
                for (const auto& n : t.nodes) {
                    const bool leaf = n.leaf >= 0;
                    if (leaf && static_cast<std::size_t>(n.leaf) >= t.leaves.size()) throw SchemaError("leaf index out of range");
                    if (!leaf) {
                        const auto count = static_cast<int>(t.nodes.size());
                        if (n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count) {
                            throw SchemaError("tree child index out of range");
                        }
                        if (n.feature < 0 || n.feature >= e.input_dim || !std::isfinite(n.threshold)) {
                            throw SchemaError("invalid split node");
                        }
                    }
                }
                for (const auto& l : t.leaves) {
                    if (l.weights.rows() != 3 || l.weights.cols() != e.input_dim) throw SchemaError("leaf weight shape mismatch");
                }
            }
            break;
        }
    }
}

namespace detail {

inline void check_position(const Vec3& p) {
    if (!p.allFinite()) throw DomainError("query position is not finite");
}

inline void check_currents(const ModelArtifact& m, const Vec& i) {
    if (i.size() != m.coil_count) {
        throw DimensionError("expected " + std::to_string(m.coil_count) + " currents, got " + std::to_string(i.size()));
    }
}

}  // namespace detail

/// A_B(p) and B_0(p). Direct kinds have no actuation matrix and raise.
inline AffineFieldEval eval_affine(const ModelArtifact& m, const Vec3& p) {
    detail::check_position(p);
    switch (m.kind) {
        case ModelKind::mpem: return mpem_affine(m.mpem(), p);
        case ModelKind::actuation_net: return actuationnet_predict(m.mlp(), p, m.coil_count);
        case ModelKind::potential_net: return potentialnet_predict(m.mlp(), p, m.coil_count);
        default: throw KindMismatchError("eval_affine: " + std::string(to_string(m.kind)) + " does not expose an actuation matrix");
    }
}

/// Affine map plus the spatial Jacobian of each column.
inline AffineJet affine_jet(const ModelArtifact& m, const Vec3& p) {
    detail::check_position(p);
    switch (m.kind) {
        case ModelKind::mpem: return mpem_jet(m.mpem(), p);
        case ModelKind::actuation_net: return actuationnet_jet(m.mlp(), p, m.coil_count);
        case ModelKind::potential_net: return potentialnet_jet(m.mlp(), p, m.coil_count);
        default: throw KindMismatchError("affine_jet: " + std::string(to_string(m.kind)) + " is not an affine model");
    }
}

inline Vec3 predict_field(const ModelArtifact& m, const Vec3& p, const Vec& currents) {
    detail::check_currents(m, currents);
    detail::check_position(p);
    switch (m.kind) {
        case ModelKind::direct_net: return directnet_predict(m.mlp(), p, currents);
        case ModelKind::direct_gbt: return gbt_predict(m.gbt(), p, currents);
        default: return eval_affine(m, p).apply(currents);
    }
}

/// d B / d p of the total field at the given currents.
inline Mat3 spatial_jacobian(const ModelArtifact& m, const Vec3& p, const Vec& currents) {
    detail::check_currents(m, currents);
    detail::check_position(p);
    switch (m.kind) {
        case ModelKind::direct_net: return directnet_spatial_jacobian(m.mlp(), p, currents);
        case ModelKind::direct_gbt: return gbt_jacobian(m.gbt(), p, currents).leftCols<3>();
        default: return affine_jet(m, p).field_jacobian(currents);
    }
}

inline ModelArtifact make_mpem_artifact(MpemParams params) {
    ModelArtifact m;
    m.kind = ModelKind::mpem;
    m.coil_count = params.coil_count;
    m.payload = std::move(params);
    return m;
}

// ---------------------------------------------------------------------------
// Training dispatch

struct FitConfig {
    TrainConfig train;
    GbtConfig gbt;
    CalibConfig calib;
    int cross_count = 0;
};

struct FitOutcome {
    ModelArtifact model;
    std::vector<TrainHistoryRow> history;  // epochs, boosting rounds or LM iterations
    std::vector<std::string> warnings;
    FitReport mpem_report;                 // filled for mpem only
};

/// Trains or calibrates `kind` at complexity `rank`. `cfg.train.seed` seeds
/// every stochastic step, including MPEM restarts.
inline FitOutcome train_model(ModelKind kind, ComplexityRank rank, const Dataset& train, const Dataset& val,
                              const FitConfig& cfg) {
    if (train.empty()) throw DataError("train_model: empty training set");
    if (!val.empty() && val.coil_count != train.coil_count) throw DimensionError("train_model: coil counts differ");
    FitOutcome out;
    ModelArtifact& m = out.model;
    m.kind = kind;
    m.coil_count = train.coil_count;
    m.training_meta.seed = cfg.train.seed;
    m.training_meta.rank = static_cast<int>(rank);
    switch (kind) {
        case ModelKind::mpem: {
            CalibConfig calib = cfg.calib;
            calib.seed = cfg.train.seed;
            auto res = lm_calibrate(train, val, calib, mpem_order(rank), cfg.cross_count);
            int k = 0;
            for (const auto& it : res.report.iterations) {
                if (it.restart != res.report.best_restart || !it.accepted) continue;
                out.history.push_back({++k, it.train_rmse_mT, it.val_rmse_mT, 0.0});
            }
            m.training_meta.stopping_epoch = k;
            m.training_meta.epochs_run = static_cast<int>(res.report.iterations.size());
            m.training_meta.final_val_rmse_mT = res.report.val_rmse_mT;
            out.warnings = res.report.warnings;
            out.mpem_report = std::move(res.report);
            m.payload = std::move(res.params);
            break;
        }
        case ModelKind::actuation_net:
        case ModelKind::potential_net:
        case ModelKind::direct_net: {
            auto res = train_network(kind, hidden_widths(rank), train, val, cfg.train);
            out.history = std::move(res.history);
            m.training_meta.stopping_epoch = res.best_epoch;
            m.training_meta.epochs_run = res.epochs_run;
            m.training_meta.final_val_rmse_mT = res.best_val_rmse_mT;
            m.payload = std::move(res.params);
            break;
        }
        case ModelKind::direct_gbt: {
            GbtConfig g = cfg.gbt;
            g.leaf_limit = gbt_leaf_limit(rank);
            auto res = gbt_fit(train, val, g);
            for (const auto& r : res.history) out.history.push_back({r.round, r.train_rmse_mT, r.val_rmse_mT, r.wall_time_s});
            m.training_meta.stopping_epoch = res.best_round;
            m.training_meta.epochs_run = res.history.empty() ? 0 : res.history.back().round;
            m.training_meta.final_val_rmse_mT = res.best_val_rmse_mT;
            out.warnings = std::move(res.warnings);
            m.payload = std::move(res.ensemble);
            break;
        }
    }
    validate_model(m);
    return out;
}

}  // namespace emns
