#pragma once

// Measurement datasets and their CSV representation:
//   pos_x_m,pos_y_m,pos_z_m,i_1_A,...,i_S_A,b_x_T,b_y_T,b_z_T

#include "emns/errors.hpp"
#include "emns/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace emns {

/// Positions closer than this (max-norm, meters) share a position_id.
inline constexpr double kPositionTolerance = 1e-9;

struct Dataset {
    std::vector<Sample> samples;
    int coil_count = 0;
    std::string source_tag;

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] bool empty() const { return samples.empty(); }

    /// Distinct position ids in ascending order.
    [[nodiscard]] std::vector<int> position_ids() const {
        std::set<int> ids;
        for (const auto& s : samples) ids.insert(s.position_id);
        return {ids.begin(), ids.end()};
    }

    [[nodiscard]] std::size_t position_count() const { return position_ids().size(); }

    /// Samples whose position id is in `ids`, in original order.
    [[nodiscard]] Dataset restrict_to(const std::set<int>& ids) const {
        Dataset out;
        out.coil_count = coil_count;
        out.source_tag = source_tag;
        for (const auto& s : samples) {
            if (ids.count(s.position_id) != 0) out.samples.push_back(s);
        }
        return out;
    }
};

namespace detail {

using GridKey = std::tuple<long long, long long, long long>;

inline GridKey grid_key(const Vec3& p) {
    return {std::llround(p.x() / kPositionTolerance), std::llround(p.y() / kPositionTolerance),
            std::llround(p.z() / kPositionTolerance)};
}

/// Assigns position ids by first appearance, grouping within kPositionTolerance.
class PositionIndexer {
public:
    int id_for(const Vec3& p) {
        const auto [kx, ky, kz] = grid_key(p);
        for (long long dx = -1; dx <= 1; ++dx) {
            for (long long dy = -1; dy <= 1; ++dy) {
                for (long long dz = -1; dz <= 1; ++dz) {
                    auto it = cells_.find({kx + dx, ky + dy, kz + dz});
                    if (it == cells_.end()) continue;
                    for (const auto& [q, id] : it->second) {
                        if ((q - p).cwiseAbs().maxCoeff() <= kPositionTolerance) return id;
                    }
                }
            }
        }
        const int id = next_++;
        cells_[{kx, ky, kz}].emplace_back(p, id);
        return id;
    }

private:
    std::map<GridKey, std::vector<std::pair<Vec3, int>>> cells_;
    int next_ = 0;
};

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    for (auto& c : cells) {
        while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
        while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
    }
    return cells;
}

inline bool parse_double(std::string_view cell, double& out) {
    if (cell.empty()) return false;
    if (cell.front() == '+') cell.remove_prefix(1);
    const auto* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, out);
    return ec == std::errc() && ptr == end;
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, ptr};
}

inline std::vector<std::string> dataset_header(int coil_count) {
    std::vector<std::string> h = {"pos_x_m", "pos_y_m", "pos_z_m"};
    for (int s = 1; s <= coil_count; ++s) h.push_back("i_" + std::to_string(s) + "_A");
    h.insert(h.end(), {"b_x_T", "b_y_T", "b_z_T"});
    return h;
}

}  // namespace detail

/// Reassigns position ids by first appearance (tolerance kPositionTolerance).
inline void assign_position_ids(Dataset& ds) {
    detail::PositionIndexer indexer;
    for (auto& s : ds.samples) s.position_id = indexer.id_for(s.position);
}

/// Parses a dataset from CSV text. `origin` is used in error messages.
inline Dataset parse_dataset(std::istream& in, const std::string& origin = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw DataError(origin + ": empty file, header required");
    const auto header = detail::split_csv_line(line);
    const auto ncols = static_cast<int>(header.size());
    const int coils = ncols - 6;
    if (coils < 1) throw DataError(origin + ": malformed header, expected at least 7 columns");
    const auto expected = detail::dataset_header(coils);
    for (int c = 0; c < ncols; ++c) {
        if (header[static_cast<std::size_t>(c)] != expected[static_cast<std::size_t>(c)]) {
            throw DataError(origin + ": malformed header at column " + std::to_string(c + 1) + ": expected '" +
                            expected[static_cast<std::size_t>(c)] + "', got '" +
                            std::string(header[static_cast<std::size_t>(c)]) + "'");
        }
    }

    Dataset ds;
    ds.coil_count = coils;
    ds.source_tag = origin;
    detail::PositionIndexer indexer;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (static_cast<int>(cells.size()) != ncols) {
            throw DataError(origin + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " columns, header has " + std::to_string(ncols));
        }
        std::vector<double> v(static_cast<std::size_t>(ncols));
        for (int c = 0; c < ncols; ++c) {
            const auto cu = static_cast<std::size_t>(c);
            if (!detail::parse_double(cells[cu], v[cu]) || !std::isfinite(v[cu])) {
                throw DataError(origin + ": row " + std::to_string(row) + ", column '" + expected[cu] +
                                "': invalid value '" + std::string(cells[cu]) + "'");
            }
        }
        Sample s;
        s.position = Vec3(v[0], v[1], v[2]);
        s.currents.resize(coils);
        for (int k = 0; k < coils; ++k) s.currents(k) = v[static_cast<std::size_t>(3 + k)];
        const auto b = static_cast<std::size_t>(3 + coils);
        s.field = Vec3(v[b], v[b + 1], v[b + 2]);
        s.position_id = indexer.id_for(s.position);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset '" + path + "'");
    return parse_dataset(in, path);
}

/// Writes CSV with shortest round-trip float formatting.
inline void write_dataset(std::ostream& out, const Dataset& ds) {
    const auto header = detail::dataset_header(ds.coil_count);
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (const auto& s : ds.samples) {
        if (s.currents.size() != ds.coil_count) throw DimensionError("sample current count differs from coil_count");
        out << detail::format_double(s.position.x()) << ',' << detail::format_double(s.position.y()) << ','
            << detail::format_double(s.position.z());
        for (Eigen::Index k = 0; k < s.currents.size(); ++k) out << ',' << detail::format_double(s.currents(k));
        out << ',' << detail::format_double(s.field.x()) << ',' << detail::format_double(s.field.y()) << ','
            << detail::format_double(s.field.z()) << '\n';
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset '" + path + "'");
    write_dataset(out, ds);
}

/// Distinct positions of a dataset, indexed alongside a per-sample lookup.
struct PositionTable {
    std::vector<Vec3> positions;
    std::vector<int> ids;
    std::vector<std::size_t> sample_to_position;
    std::vector<std::vector<std::size_t>> samples_at;

    explicit PositionTable(const Dataset& ds) {
        std::map<int, std::size_t> slot;
        sample_to_position.reserve(ds.size());
        for (std::size_t n = 0; n < ds.samples.size(); ++n) {
            const auto& s = ds.samples[n];
            auto [it, inserted] = slot.try_emplace(s.position_id, positions.size());
            if (inserted) {
                positions.push_back(s.position);
                ids.push_back(s.position_id);
                samples_at.emplace_back();
            }
            sample_to_position.push_back(it->second);
            samples_at[it->second].push_back(n);
        }
    }

    [[nodiscard]] std::size_t size() const { return positions.size(); }
};

}  // namespace emns
