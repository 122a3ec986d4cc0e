#pragma once

// JSON container for ModelArtifact. Doubles are written in shortest
// round-trip form, so parameters survive a save/load cycle bit-exactly.

#include "emns/errors.hpp"
#include "emns/model.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace emns {

namespace detail {

using Json = nlohmann::json;

inline Json mat_to_json(const Mat& m) {
    Json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    Json data = Json::array();
    for (Eigen::Index k = 0; k < m.size(); ++k) data.push_back(m.data()[k]);
    j["data"] = std::move(data);
    return j;
}

inline Mat mat_from_json(const Json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw CorruptedPayloadError("matrix block has inconsistent shape");
    }
    Mat m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = data[static_cast<std::size_t>(k)].get<double>();
    return m;
}

inline Json vec_to_json(const Eigen::Ref<const Vec>& v) {
    Json data = Json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) data.push_back(v(k));
    return data;
}

inline Vec vec_from_json(const Json& j) {
    if (!j.is_array()) throw CorruptedPayloadError("expected a numeric array");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = j[static_cast<std::size_t>(k)].get<double>();
    return v;
}

inline Vec3 vec3_from_json(const Json& j) {
    const Vec v = vec_from_json(j);
    if (v.size() != 3) throw CorruptedPayloadError("expected a 3-vector");
    return v;
}

inline Json source_to_json(const MultipoleSource& s) {
    return Json{{"location", vec_to_json(s.pose.location)},
                {"zenith", vec_to_json(s.pose.zenith)},
                {"coeffs", vec_to_json(s.coeffs)}};
}

inline MultipoleSource source_from_json(const Json& j) {
    MultipoleSource s;
    s.pose.location = vec3_from_json(j.at("location"));
    s.pose.zenith = vec3_from_json(j.at("zenith"));
    s.coeffs = vec_from_json(j.at("coeffs"));
    return s;
}

inline Json mpem_to_json(const MpemParams& p) {
    Json coils = Json::array();
    for (const auto& c : p.coils) {
        Json cross = Json::array();
        for (const auto& x : c.cross) cross.push_back(source_to_json(x));
        coils.push_back(Json{{"direct", source_to_json(c.direct)}, {"cross", cross}, {"offset", source_to_json(c.offset)}});
    }
    return Json{{"order", p.order},
                {"coil_count", p.coil_count},
                {"cross_count", p.cross_count},
                {"shared_offset_pose", p.shared_offset_pose},
                {"exclusion_radius", p.exclusion_radius},
                {"coils", coils}};
}

inline MpemParams mpem_from_json(const Json& j) {
    MpemParams p;
    p.order = j.at("order").get<int>();
    p.coil_count = j.at("coil_count").get<int>();
    p.cross_count = j.at("cross_count").get<int>();
    p.shared_offset_pose = j.at("shared_offset_pose").get<bool>();
    p.exclusion_radius = j.at("exclusion_radius").get<double>();
    for (const auto& c : j.at("coils")) {
        CoilSources cs;
        cs.direct = source_from_json(c.at("direct"));
        for (const auto& x : c.at("cross")) cs.cross.push_back(source_from_json(x));
        cs.offset = source_from_json(c.at("offset"));
        p.coils.push_back(std::move(cs));
    }
    return p;
}

inline Json mlp_to_json(const MlpParams& p) {
    Json layers = Json::array();
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
        layers.push_back(Json{{"weight", mat_to_json(p.weights[k])}, {"bias", vec_to_json(p.biases[k])}});
    }
    return Json{{"layers", layers},
                {"normalization",
                 Json{{"input_mean", vec_to_json(p.input_mean)},
                      {"input_scale", vec_to_json(p.input_scale)},
                      {"output_scale", vec_to_json(p.output_scale)}}}};
}

inline MlpParams mlp_from_json(const Json& j) {
    MlpParams p;
    for (const auto& l : j.at("layers")) {
        p.weights.push_back(mat_from_json(l.at("weight")));
        p.biases.push_back(vec_from_json(l.at("bias")));
    }
    const auto& n = j.at("normalization");
    p.input_mean = vec_from_json(n.at("input_mean"));
    p.input_scale = vec_from_json(n.at("input_scale"));
    p.output_scale = vec_from_json(n.at("output_scale"));
    return p;
}

inline Json gbt_to_json(const GbtEnsemble& e) {
    Json trees = Json::array();
    for (const auto& t : e.trees) {
        Json nodes = Json::array();
        for (const auto& n : t.nodes) {
            nodes.push_back(Json::array({n.feature, n.threshold, n.left, n.right, n.leaf}));
        }
        Json leaves = Json::array();
        for (const auto& l : t.leaves) {
            leaves.push_back(Json{{"weights", mat_to_json(l.weights)}, {"intercept", vec_to_json(l.intercept)}});
        }
        trees.push_back(Json{{"nodes", nodes}, {"leaves", leaves}});
    }
    return Json{{"base", vec_to_json(e.base)},
                {"shrinkage", e.shrinkage},
                {"leaf_limit", e.leaf_limit},
                {"input_dim", e.input_dim},
                {"trees", trees}};
}

inline GbtEnsemble gbt_from_json(const Json& j) {
    GbtEnsemble e;
    e.base = vec3_from_json(j.at("base"));
    e.shrinkage = j.at("shrinkage").get<double>();
    e.leaf_limit = j.at("leaf_limit").get<int>();
    e.input_dim = j.at("input_dim").get<int>();
    for (const auto& tj : j.at("trees")) {
        LinearTree t;
        for (const auto& nj : tj.at("nodes")) {
            if (!nj.is_array() || nj.size() != 5) throw CorruptedPayloadError("tree node must have 5 fields");
            t.nodes.push_back({nj[0].get<int>(), nj[1].get<double>(), nj[2].get<int>(), nj[3].get<int>(), nj[4].get<int>()});
        }
        for (const auto& lj : tj.at("leaves")) {
            t.leaves.push_back({mat_from_json(lj.at("weights")), vec3_from_json(lj.at("intercept"))});
        }
        e.trees.push_back(std::move(t));
    }
    return e;
}

}  // namespace detail

inline std::string serialize_model(const ModelArtifact& m) {
    using detail::Json;
    Json payload;
    switch (m.kind) {
        case ModelKind::mpem: payload = detail::mpem_to_json(m.mpem()); break;
        case ModelKind::actuation_net:
        case ModelKind::potential_net:
        case ModelKind::direct_net: payload = detail::mlp_to_json(m.mlp()); break;
        case ModelKind::direct_gbt: payload = detail::gbt_to_json(m.gbt()); break;
    }
    const auto& t = m.training_meta;
    Json j{{"schema_version", m.schema_version},
           {"model_kind", std::string(to_string(m.kind))},
           {"coil_count", m.coil_count},
           {"units", m.units},
           {"training_meta",
            Json{{"seed", t.seed},
                 {"rank", t.rank},
                 {"stopping_epoch", t.stopping_epoch},
                 {"epochs_run", t.epochs_run},
                 {"final_val_rmse_mT", t.final_val_rmse_mT}}},
           {"payload", payload}};
    return j.dump(1) + "\n";
}

/// Parses a model container; throws SchemaError on version or kind problems and
/// CorruptedPayloadError on malformed content.
inline ModelArtifact deserialize_model(const std::string& text) {
    using detail::Json;
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw CorruptedPayloadError(std::string("model file is not valid JSON: ") + e.what());
    }
    ModelArtifact m;
    try {
        if (!j.is_object() || !j.contains("schema_version")) throw SchemaError("model file has no schema_version");
        m.schema_version = j.at("schema_version").get<int>();
        if (m.schema_version != kSchemaVersion) {
            throw SchemaError("unsupported schema_version " + std::to_string(m.schema_version) + " (expected " +
                              std::to_string(kSchemaVersion) + ")");
        }
        const auto kind = parse_model_kind(j.at("model_kind").get<std::string>());
        if (!kind) throw SchemaError("unknown model_kind");
        m.kind = *kind;
        m.coil_count = j.at("coil_count").get<int>();
        m.units = j.at("units").get<std::string>();
        const auto& t = j.at("training_meta");
        m.training_meta.seed = t.at("seed").get<std::uint64_t>();
        m.training_meta.rank = t.at("rank").get<int>();
        m.training_meta.stopping_epoch = t.at("stopping_epoch").get<int>();
        m.training_meta.epochs_run = t.at("epochs_run").get<int>();
        m.training_meta.final_val_rmse_mT = t.at("final_val_rmse_mT").get<double>();
        const auto& p = j.at("payload");
        switch (m.kind) {
            case ModelKind::mpem: m.payload = detail::mpem_from_json(p); break;
            case ModelKind::actuation_net:
            case ModelKind::potential_net:
            case ModelKind::direct_net: m.payload = detail::mlp_from_json(p); break;
            case ModelKind::direct_gbt: m.payload = detail::gbt_from_json(p); break;
        }
    } catch (const Json::exception& e) {
        throw CorruptedPayloadError(std::string("model file payload is malformed: ") + e.what());
    }
    try {
        validate_model(m);
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        throw CorruptedPayloadError(std::string("model file payload is inconsistent: ") + e.what());
    }
    return m;
}

inline void save_model(const ModelArtifact& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << serialize_model(m);
    if (!out) throw DataError("failed writing '" + path + "'");
}

inline ModelArtifact load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_model(ss.str());
}

}  // namespace emns
