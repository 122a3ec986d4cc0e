// Command-line front end: synthetic data, cleaning, splits, fitting and analysis.
//
// Files use SI units (m, A, T); human-facing targets and reports use mT.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include "emns/emns.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using emns::Vec;
using emns::Vec3;
using emns::detail::format_double;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        double v = 0.0;
        if (!emns::detail::parse_double(cell, v) || !std::isfinite(v)) {
            throw UsageError(flag + ": invalid number '" + cell + "'");
        }
        out.push_back(v);
    }
    return out;
}

Vec3 parse_vec3(const std::string& text, const std::string& flag) {
    const auto v = parse_list(text, flag);
    if (v.size() != 3) throw UsageError(flag + ": expected three comma-separated values");
    return {v[0], v[1], v[2]};
}

std::array<int, 3> parse_res(const std::string& text, const std::string& flag) {
    const auto v = parse_list(text, flag);
    if (v.size() != 3) throw UsageError(flag + ": expected nx,ny,nz");
    std::array<int, 3> r{};
    for (std::size_t k = 0; k < 3; ++k) {
        if (v[k] < 1 || v[k] != std::floor(v[k])) throw UsageError(flag + ": resolutions must be positive integers");
        r[k] = static_cast<int>(v[k]);
    }
    return r;
}

fs::path prepare_out(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw emns::DataError("cannot create output directory '" + dir + "': " + ec.message());
    return p;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw emns::DataError("cannot write '" + path.string() + "'");
    return out;
}

// Nominal poses: one row per coil.
void write_poses(const fs::path& path, const std::vector<emns::SourcePose>& poses) {
    auto out = open_out(path);
    out << "coil,x_m,y_m,z_m,zenith_x,zenith_y,zenith_z\n";
    for (std::size_t k = 0; k < poses.size(); ++k) {
        out << k + 1;
        for (int a = 0; a < 3; ++a) out << ',' << format_double(poses[k].location(a));
        for (int a = 0; a < 3; ++a) out << ',' << format_double(poses[k].zenith(a));
        out << '\n';
    }
}

std::vector<emns::SourcePose> read_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw emns::DataError("cannot open nominal poses '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("coil,", 0) != 0) throw emns::DataError(path + ": missing pose header");
    std::vector<emns::SourcePose> poses;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = emns::detail::split_csv_line(line);
        if (cells.size() != 7) throw emns::DataError(path + ": pose rows need 7 columns");
        double v[7];
        for (std::size_t c = 0; c < 7; ++c) {
            if (!emns::detail::parse_double(cells[c], v[c]) || !std::isfinite(v[c])) {
                throw emns::DataError(path + ": invalid pose value '" + std::string(cells[c]) + "'");
            }
        }
        emns::SourcePose p;
        p.location = Vec3(v[1], v[2], v[3]);
        p.zenith = Vec3(v[4], v[5], v[6]);
        if (!(p.zenith.norm() > 0.0)) throw emns::DataError(path + ": zero zenith direction");
        p.zenith.normalize();
        poses.push_back(p);
    }
    return poses;
}

void write_history(const fs::path& path, const std::vector<emns::TrainHistoryRow>& rows) {
    auto out = open_out(path);
    out << "epoch,train_rmse_mT,val_rmse_mT,wall_time_s\n";
    for (const auto& r : rows) {
        out << r.epoch << ',' << format_double(r.train_rmse_mT) << ',' << format_double(r.val_rmse_mT) << ','
            << format_double(r.wall_time_s) << '\n';
    }
}

emns::ComplexityRank rank_of(const std::string& s) {
    const auto r = emns::parse_rank(s);
    if (!r) throw UsageError("--rank: expected I, II or III");
    return *r;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
    std::string preset = "desk";
    int order = 1;
    std::size_t positions = 500;
    std::string lattice;
    double noise_mT = 0.5;
    double nominal_offset_mm = 5.0;
    double nominal_angle_deg = 5.0;
    std::uint64_t seed = 0;
    std::string out;
};

int run_synth(const SynthArgs& a) {
    emns::OracleSpec spec;
    if (a.preset == "desk") {
        spec = emns::desk_oracle(a.order);
    } else if (a.preset == "navion") {
        spec = emns::navion_like(a.order);
    } else if (a.preset == "octomag") {
        if (a.order != 1) throw UsageError("--order: the octomag preset is dipole only");
        spec = emns::octomag_like();
    } else {
        throw UsageError("--preset: expected desk, navion or octomag");
    }
    spec.position_count = a.positions;
    if (!a.lattice.empty()) spec.lattice = parse_res(a.lattice, "--lattice");
    spec.noise_sigma_t = a.noise_mT * 1e-3;
    const auto synth = emns::synth_generate(spec, a.seed);
    const auto dir = prepare_out(a.out);
    emns::save_dataset(synth.data, (dir / "data.csv").string());
    emns::save_model(synth.truth, (dir / "truth.json").string());
    write_poses(dir / "nominal.csv",
                emns::perturbed_poses(synth.truth.mpem(), a.nominal_offset_mm * 1e-3, a.nominal_angle_deg * kDeg, a.seed));
    std::cout << "samples " << synth.data.size() << "\npositions " << synth.positions.size() << '\n';
    return 0;
}

struct DataArgs {
    std::string data;
    std::string out;
};

int run_audit(const DataArgs& a) {
    const auto ds = emns::load_dataset(a.data);
    const auto res = emns::affine_audit(ds);
    const auto dir = prepare_out(a.out);
    auto out = open_out(dir / "audit.csv");
    out << "position_id,r_squared,offset_mT\n";
    double min_r2 = 1.0;
    for (const auto& r : res.positions) {
        out << r.position_id << ',' << format_double(r.r_squared) << ',' << format_double(r.offset_norm * 1e3) << '\n';
        min_r2 = std::min(min_r2, r.r_squared);
    }
    std::cout << "positions " << res.positions.size() << "\nskipped " << res.skipped.size() << "\nmin_r_squared "
              << format_double(min_r2) << '\n';
    return 0;
}

struct CleanArgs {
    std::string data;
    std::string floor = "auto";
    double tol = 0.20;
    int iterations = 100;
    std::uint64_t seed = 0;
    std::string out;
};

int run_clean(const CleanArgs& a) {
    const auto ds = emns::load_dataset(a.data);
    emns::RansacConfig cfg;
    if (a.floor == "auto") {
        cfg.floor_t = emns::quartile_floor(ds);
    } else {
        const auto v = parse_list(a.floor, "--floor");
        if (v.size() != 1 || !(v[0] >= 0.0)) throw UsageError("--floor: expected 'auto' or a non-negative value in mT");
        cfg.floor_t = v[0] * 1e-3;
    }
    cfg.inlier_tol = a.tol;
    cfg.iterations = a.iterations;
    cfg.seed = a.seed;
    if (!(cfg.inlier_tol > 0.0)) throw UsageError("--tol must be > 0");
    if (cfg.iterations < 1) throw UsageError("--iterations must be >= 1");
    const auto res = emns::ransac_clean(ds, cfg);
    const auto dir = prepare_out(a.out);
    emns::save_dataset(res.cleaned, (dir / "cleaned.csv").string());
    auto rep = open_out(dir / "outliers.csv");
    emns::write_outlier_report(rep, res);
    for (const auto& n : res.notes) std::cerr << "note: " << n << '\n';
    std::cout << "floor_mT " << format_double(cfg.floor_t * 1e3) << "\nflagged " << res.flagged_count
              << "\nflagged_percent " << format_double(100.0 * res.flagged_fraction) << '\n';
    return 0;
}

struct SplitArgs {
    std::string data;
    std::string fractions = "0.7,0.15,0.15";
    std::uint64_t seed = 0;
    std::string out;
};

int run_split(const SplitArgs& a) {
    const auto f = parse_list(a.fractions, "--fractions");
    if (f.size() != 3) throw UsageError("--fractions: expected train,val,test");
    const auto ds = emns::load_dataset(a.data);
    const auto split = emns::split_positions(ds, {f[0], f[1], f[2]}, a.seed);
    const auto dir = prepare_out(a.out);
    for (auto part : {emns::SplitPart::train, emns::SplitPart::validation, emns::SplitPart::test}) {
        const auto sub = emns::select_split(ds, split, part);
        emns::save_dataset(sub, (dir / (std::string(emns::to_string(part)) + ".csv")).string());
        std::cout << emns::to_string(part) << ' ' << sub.size() << '\n';
    }
    auto out = open_out(dir / "split.csv");
    out << "position_id,part\n";
    for (const auto& [id, part] : split) out << id << ',' << emns::to_string(part) << '\n';
    return 0;
}

struct SubsampleArgs {
    std::string data;
    double fraction = 1.0;
    std::uint64_t seed = 0;
    std::string out;
};

int run_subsample(const SubsampleArgs& a) {
    const auto ds = emns::load_dataset(a.data);
    const auto sub = emns::subsample_positions(ds, a.fraction, a.seed);
    const auto dir = prepare_out(a.out);
    emns::save_dataset(sub, (dir / "subsample.csv").string());
    std::cout << "positions " << sub.position_count() << "\nsamples " << sub.size() << '\n';
    return 0;
}

struct FitArgs {
    std::string kind;
    std::string rank = "I";
    std::string train;
    std::string val;
    std::string test;
    std::string nominal;
    int cross = 0;
    int max_epochs = 2000;
    int batch_size = 1024;
    int patience = 10;
    double lr = 1e-3;
    int max_rounds = 3000;
    int restarts = 1;
    std::uint64_t seed = 0;
    std::string out;
};

int run_fit(const FitArgs& a) {
    const auto kind = emns::parse_model_kind(a.kind);
    if (!kind) throw UsageError("--kind: expected mpem, actuation-net, potential-net, direct-net or direct-gbt");
    const auto rank = rank_of(a.rank);
    if (*kind == emns::ModelKind::mpem && a.nominal.empty()) throw UsageError("--nominal is required for mpem");
    if (a.max_epochs < 1 || a.batch_size < 1 || a.patience < 1 || a.max_rounds < 1 || a.restarts < 1) {
        throw UsageError("epoch, batch, patience, round and restart counts must be >= 1");
    }
    const auto train = emns::load_dataset(a.train);
    const auto val = emns::load_dataset(a.val);
    emns::FitConfig cfg;
    cfg.train.seed = a.seed;
    cfg.train.max_epochs = a.max_epochs;
    cfg.train.batch_size = a.batch_size;
    cfg.train.patience = a.patience;
    cfg.train.learning_rate = a.lr;
    cfg.gbt.max_rounds = a.max_rounds;
    cfg.calib.restarts = a.restarts;
    cfg.cross_count = a.cross;
    if (!a.nominal.empty()) cfg.calib.nominal_poses = read_poses(a.nominal);
    const auto fit = emns::train_model(*kind, rank, train, val, cfg);
    for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
    const auto dir = prepare_out(a.out);
    emns::save_model(fit.model, (dir / "model.json").string());
    write_history(dir / "history.csv", fit.history);
    std::cout << "train_rmse_mT " << format_double(emns::rmse_mT(fit.model, train)) << "\nval_rmse_mT "
              << format_double(emns::rmse_mT(fit.model, val)) << '\n';
    if (!a.test.empty()) {
        std::cout << "test_rmse_mT " << format_double(emns::rmse_mT(fit.model, emns::load_dataset(a.test))) << '\n';
    }
    return 0;
}

struct ModelDataArgs {
    std::string model;
    std::string data;
    std::string out;
};

int run_eval(const ModelDataArgs& a) {
    const auto m = emns::load_model(a.model);
    const auto ds = emns::load_dataset(a.data);
    const double rmse = emns::rmse_mT(m, ds);
    if (!a.out.empty()) {
        const auto pred = emns::predict_dataset(m, ds);
        const auto dir = prepare_out(a.out);
        auto out = open_out(dir / "predictions.csv");
        out << "row,b_x_mT,b_y_mT,b_z_mT\n";
        for (Eigen::Index n = 0; n < pred.cols(); ++n) {
            out << n << ',' << format_double(1e3 * pred(0, n)) << ',' << format_double(1e3 * pred(1, n)) << ','
                << format_double(1e3 * pred(2, n)) << '\n';
        }
    }
    std::cout << "samples " << ds.size() << "\nrmse_mT " << format_double(rmse) << '\n';
    return 0;
}

int run_maxwell(const ModelDataArgs& a) {
    const auto m = emns::load_model(a.model);
    const auto ds = emns::load_dataset(a.data);
    if (ds.coil_count != m.coil_count) throw emns::DimensionError("dataset and model coil counts differ");
    const auto dir = prepare_out(a.out);
    auto out = open_out(dir / "maxwell.csv");
    out << "row,position_id,divergence_mT_per_m,curl_mT_per_m\n";
    std::vector<double> div;
    std::vector<double> curl;
    for (std::size_t n = 0; n < ds.size(); ++n) {
        const auto& s = ds.samples[n];
        const auto r = emns::maxwell_residuals(m, s.position, s.currents);
        div.push_back(std::abs(r.divergence) * 1e3);
        curl.push_back(r.curl_norm * 1e3);
        out << n << ',' << s.position_id << ',' << format_double(r.divergence * 1e3) << ',' << format_double(curl.back())
            << '\n';
    }
    auto median = [](std::vector<double> v) {
        if (v.empty()) return 0.0;
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    std::cout << "median_abs_divergence_mT_per_m " << format_double(median(div)) << "\nmedian_curl_mT_per_m "
              << format_double(median(curl)) << '\n';
    return 0;
}

struct CondmapArgs {
    std::string model;
    std::string lo = "-0.05,-0.05,0";
    std::string hi = "0.05,0.05,0";
    std::string res = "41,41,1";
    double threshold = 1.5;
    std::string out;
};

int run_condmap(const CondmapArgs& a) {
    const auto m = emns::load_model(a.model);
    const emns::WorkspaceGrid grid{parse_vec3(a.lo, "--lo"), parse_vec3(a.hi, "--hi"), parse_res(a.res, "--res")};
    const auto map = emns::condition_map(m, grid);
    const auto dir = prepare_out(a.out);
    auto out = open_out(dir / "condmap.csv");
    emns::write_grid_csv(out, map, "log10_condition");
    std::cout << "cells " << map.values.size() << "\nfraction_above " << format_double(emns::fraction_above(map, a.threshold))
              << '\n';
    return 0;
}

struct SensitivityArgs {
    std::string data;
    std::string model;
    double sigma_p_max_mm = 2.0;
    double sigma_theta_max_deg = 2.0;
    int steps = 21;
    std::string out;
};

int run_sensitivity(const SensitivityArgs& a) {
    const auto m = emns::load_model(a.model);
    const auto ds = emns::load_dataset(a.data);
    emns::SensitivityConfig cfg;
    cfg.sigma_p_max = a.sigma_p_max_mm * 1e-3;
    cfg.sigma_theta_max = a.sigma_theta_max_deg * kDeg;
    cfg.sigma_p_steps = a.steps;
    cfg.sigma_theta_steps = a.steps;
    const auto terms = emns::sensitivity_terms(ds, m);
    const auto h = emns::sensitivity_heatmap(terms, cfg);
    const auto dir = prepare_out(a.out);
    auto out = open_out(dir / "sensitivity.csv");
    emns::write_sensitivity_csv(out, h);
    std::cout << "floor_at_max_mT " << format_double(1e3 * terms.floor(cfg.sigma_p_max, cfg.sigma_theta_max)) << '\n';
    return 0;
}

struct BenchArgs {
    std::string model;
    std::size_t queries = 10000;
    std::string mode = "field-gradient";
    std::string lo = "-0.05,-0.05,-0.05";
    std::string hi = "0.05,0.05,0.05";
    std::uint64_t seed = 0;
    std::string out;
};

int run_bench(const BenchArgs& a) {
    emns::BenchMode mode;
    if (a.mode == "field") {
        mode = emns::BenchMode::field;
    } else if (a.mode == "field-gradient") {
        mode = emns::BenchMode::field_gradient;
    } else {
        throw UsageError("--mode: expected field or field-gradient");
    }
    const auto m = emns::load_model(a.model);
    const auto r = emns::latency_bench(m, a.queries, mode, parse_vec3(a.lo, "--lo"), parse_vec3(a.hi, "--hi"), a.seed);
    const auto dir = prepare_out(a.out);
    auto out = open_out(dir / "bench.csv");
    out << "mode,queries,mean_ms,median_ms,p95_ms,median_of_means_ms\n";
    out << a.mode << ',' << r.queries << ',' << format_double(r.mean_s * 1e3) << ',' << format_double(r.median_s * 1e3)
        << ',' << format_double(r.p95_s * 1e3) << ',' << format_double(r.median_of_means_s * 1e3) << '\n';
    std::cout << "mean_ms " << format_double(r.mean_s * 1e3) << "\np95_ms " << format_double(r.p95_s * 1e3) << '\n';
    return 0;
}

struct InvertArgs {
    std::string model;
    std::string pos;
    std::string target;
    double rcond = emns::kDefaultRcond;
};

int run_invert(const InvertArgs& a) {
    const auto m = emns::load_model(a.model);
    const Vec3 p = parse_vec3(a.pos, "--pos");
    const auto t = parse_list(a.target, "--target");
    if (t.size() != 3 && t.size() != 8) throw UsageError("--target: expected Bx,By,Bz or Bx,By,Bz,g1..g5");
    const Vec target = Eigen::Map<const Vec>(t.data(), static_cast<Eigen::Index>(t.size())) * 1e-3;
    emns::InversionResult r;
    if (t.size() == 3) {
        const auto e = emns::eval_affine(m, p);
        r = emns::min_norm_currents(e.actuation, e.offset, target, a.rcond);
    } else {
        const auto e = emns::stacked_map(m, p);
        r = emns::min_norm_currents(e.actuation, e.offset, target, a.rcond);
    }
    std::cout << "currents_A";
    for (Eigen::Index k = 0; k < r.currents.size(); ++k) std::cout << (k ? "," : " ") << format_double(r.currents(k));
    std::cout << "\nresidual_mT " << format_double(r.residual_norm * 1e3) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Current-affine magnetic field models for electromagnetic navigation systems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "emns 1.0");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic multipole oracle dataset");
    c_synth->add_option("--preset", synth.preset, "desk, navion or octomag")->capture_default_str();
    c_synth->add_option("--order", synth.order, "Multipole order of the ground truth (desk, navion)")->capture_default_str();
    c_synth->add_option("--positions", synth.positions, "Number of random positions")->capture_default_str();
    c_synth->add_option("--lattice", synth.lattice, "Regular lattice nx,ny,nz instead of random positions");
    c_synth->add_option("--noise-mT", synth.noise_mT, "RMS of the noise vector magnitude")->capture_default_str();
    c_synth->add_option("--nominal-offset-mm", synth.nominal_offset_mm, "Max offset of the nominal poses")->capture_default_str();
    c_synth->add_option("--nominal-angle-deg", synth.nominal_angle_deg, "Max tilt of the nominal poses")->capture_default_str();
    c_synth->add_option("--seed", synth.seed)->capture_default_str();
    c_synth->add_option("--out", synth.out, "Output directory")->required();

    DataArgs audit;
    auto* c_audit = app.add_subcommand("audit", "Per-position affine fit and R^2");
    c_audit->add_option("--data", audit.data)->required();
    c_audit->add_option("--out", audit.out)->required();

    CleanArgs clean;
    auto* c_clean = app.add_subcommand("clean", "RANSAC outlier removal on one-hot sweeps");
    c_clean->add_option("--data", clean.data)->required();
    c_clean->add_option("--floor", clean.floor, "'auto' (first quartile of |B|) or a value in mT")->capture_default_str();
    c_clean->add_option("--tol", clean.tol, "Relative residual threshold")->capture_default_str();
    c_clean->add_option("--iterations", clean.iterations)->capture_default_str();
    c_clean->add_option("--seed", clean.seed)->capture_default_str();
    c_clean->add_option("--out", clean.out)->required();

    SplitArgs split;
    auto* c_split = app.add_subcommand("split", "Position-grouped train/val/test split");
    c_split->add_option("--data", split.data)->required();
    c_split->add_option("--fractions", split.fractions)->capture_default_str();
    c_split->add_option("--seed", split.seed)->capture_default_str();
    c_split->add_option("--out", split.out)->required();

    SubsampleArgs sub;
    auto* c_sub = app.add_subcommand("subsample", "Keep a fraction of the positions of a split");
    c_sub->add_option("--data", sub.data)->required();
    c_sub->add_option("--fraction", sub.fraction)->required();
    c_sub->add_option("--seed", sub.seed)->capture_default_str();
    c_sub->add_option("--out", sub.out)->required();

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "Calibrate or train a model");
    c_fit->add_option("--kind", fit.kind, "mpem, actuation-net, potential-net, direct-net or direct-gbt")->required();
    c_fit->add_option("--rank", fit.rank, "I, II or III")->capture_default_str();
    c_fit->add_option("--train", fit.train)->required();
    c_fit->add_option("--val", fit.val)->required();
    c_fit->add_option("--test", fit.test, "Optional test split to report");
    c_fit->add_option("--nominal", fit.nominal, "Nominal coil poses (mpem)");
    c_fit->add_option("--cross", fit.cross, "Cross-magnetization sources per coil (mpem)")->capture_default_str();
    c_fit->add_option("--max-epochs", fit.max_epochs)->capture_default_str();
    c_fit->add_option("--batch-size", fit.batch_size)->capture_default_str();
    c_fit->add_option("--patience", fit.patience)->capture_default_str();
    c_fit->add_option("--lr", fit.lr, "Adam learning rate (networks)")->capture_default_str();
    c_fit->add_option("--max-rounds", fit.max_rounds, "Boosting rounds (direct-gbt)")->capture_default_str();
    c_fit->add_option("--restarts", fit.restarts, "Calibration restarts (mpem)")->capture_default_str();
    c_fit->add_option("--seed", fit.seed)->capture_default_str();
    c_fit->add_option("--out", fit.out)->required();

    ModelDataArgs eval;
    auto* c_eval = app.add_subcommand("eval", "RMSE of a model on a dataset");
    c_eval->add_option("--model", eval.model)->required();
    c_eval->add_option("--data", eval.data)->required();
    c_eval->add_option("--out", eval.out, "Optional directory for predictions.csv");

    ModelDataArgs maxwell;
    auto* c_maxwell = app.add_subcommand("maxwell", "Divergence and curl of the predicted field");
    c_maxwell->add_option("--model", maxwell.model)->required();
    c_maxwell->add_option("--data", maxwell.data)->required();
    c_maxwell->add_option("--out", maxwell.out)->required();

    CondmapArgs cond;
    auto* c_cond = app.add_subcommand("condmap", "log10 condition number of A_B over a grid");
    c_cond->add_option("--model", cond.model)->required();
    c_cond->add_option("--lo", cond.lo, "Grid corner x,y,z in m")->capture_default_str();
    c_cond->add_option("--hi", cond.hi, "Grid corner x,y,z in m")->capture_default_str();
    c_cond->add_option("--res", cond.res, "Nodes per axis nx,ny,nz")->capture_default_str();
    c_cond->add_option("--threshold", cond.threshold, "Reported log10 threshold")->capture_default_str();
    c_cond->add_option("--out", cond.out)->required();

    SensitivityArgs sens;
    auto* c_sens = app.add_subcommand("sensitivity", "RMSE floor from position and orientation uncertainty");
    c_sens->add_option("--data", sens.data, "Test dataset")->required();
    c_sens->add_option("--model", sens.model, "Model supplying spatial gradients")->required();
    c_sens->add_option("--sigma-p-max-mm", sens.sigma_p_max_mm)->capture_default_str();
    c_sens->add_option("--sigma-theta-max-deg", sens.sigma_theta_max_deg)->capture_default_str();
    c_sens->add_option("--steps", sens.steps, "Heatmap nodes per axis")->capture_default_str();
    c_sens->add_option("--out", sens.out)->required();

    BenchArgs bench;
    auto* c_bench = app.add_subcommand("bench", "Single-query evaluation latency");
    c_bench->add_option("--model", bench.model)->required();
    c_bench->add_option("--queries", bench.queries)->capture_default_str();
    c_bench->add_option("--mode", bench.mode, "field or field-gradient")->capture_default_str();
    c_bench->add_option("--lo", bench.lo)->capture_default_str();
    c_bench->add_option("--hi", bench.hi)->capture_default_str();
    c_bench->add_option("--seed", bench.seed)->capture_default_str();
    c_bench->add_option("--out", bench.out)->required();

    InvertArgs inv;
    auto* c_inv = app.add_subcommand("invert", "Minimum-norm currents for a target field");
    c_inv->add_option("--model", inv.model)->required();
    c_inv->add_option("--pos", inv.pos, "Position x,y,z in m")->required();
    c_inv->add_option("--target", inv.target, "Bx,By,Bz in mT, optionally followed by five gradients in mT/m")->required();
    c_inv->add_option("--rcond", inv.rcond, "Relative singular value cutoff")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (c_synth->parsed()) return run_synth(synth);
        if (c_audit->parsed()) return run_audit(audit);
        if (c_clean->parsed()) return run_clean(clean);
        if (c_split->parsed()) return run_split(split);
        if (c_sub->parsed()) return run_subsample(sub);
        if (c_fit->parsed()) return run_fit(fit);
        if (c_eval->parsed()) return run_eval(eval);
        if (c_maxwell->parsed()) return run_maxwell(maxwell);
        if (c_cond->parsed()) return run_condmap(cond);
        if (c_sens->parsed()) return run_sensitivity(sens);
        if (c_bench->parsed()) return run_bench(bench);
        if (c_inv->parsed()) return run_invert(inv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const emns::DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const emns::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const emns::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
