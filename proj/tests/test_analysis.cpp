#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using Catch::Approx;
using emns::Mat;
using emns::Mat3;
using emns::Vec;
using emns::Vec3;

namespace {

emns::Dataset small_oracle(std::size_t positions, double noise, std::uint64_t seed) {
    auto spec = emns::desk_oracle(1);
    spec.position_count = positions;
    spec.noise_sigma_t = noise;
    return emns::synth_generate(spec, seed).data;
}

}  // namespace

TEST_CASE("perfect predictions give zero error and zero gap") {
    const auto spec = [] {
        auto s = emns::desk_oracle(1);
        s.noise_sigma_t = 0.0;
        s.position_count = 20;
        return s;
    }();
    const auto synth = emns::synth_generate(spec, 1);
    const auto r = emns::rmse_metrics(synth.truth, synth.data, synth.data, synth.data);
    CHECK(r.rmse_train_mT < 1e-9);
    CHECK(r.rmse_test_mT < 1e-9);
    CHECK(std::abs(r.gap_mT) < 1e-9);
    CHECK(r.n_train == synth.data.size());
}

TEST_CASE("constant mean predictor error is the field spread") {
    const auto ds = small_oracle(15, 5e-4, 2);
    Vec3 mean = Vec3::Zero();
    for (const auto& s : ds.samples) mean += s.field;
    mean /= static_cast<double>(ds.size());
    double spread = 0.0;
    for (const auto& s : ds.samples) spread += (s.field - mean).squaredNorm();
    spread = std::sqrt(spread / static_cast<double>(ds.size()));
    const auto m = oracle::constant_actuation_model(Mat::Zero(3, 3), mean);
    CHECK(emns::rmse_mT(m, ds) == Approx(1e3 * spread).epsilon(1e-12));

    auto shuffled = ds;
    emns::Rng rng(2);
    const auto perm = emns::random_permutation(ds.size(), rng);
    for (std::size_t n = 0; n < ds.size(); ++n) shuffled.samples[n] = ds.samples[perm[n]];
    CHECK(emns::rmse_mT(m, shuffled) == Approx(emns::rmse_mT(m, ds)).epsilon(1e-12));
}

TEST_CASE("gap is signed") {
    const auto a = small_oracle(10, 5e-4, 3);
    const auto b = small_oracle(10, 5e-3, 4);
    const auto m = emns::synth_generate(emns::desk_oracle(1), 0).truth;
    const auto r = emns::rmse_metrics(m, b, a, a);
    CHECK(r.gap_mT < 0.0);
    CHECK(r.gap_mT == r.rmse_test_mT - r.rmse_train_mT);
    CHECK_THROWS_AS(emns::rmse_metrics(m, a, a, emns::Dataset{{}, 3, ""}), emns::DataError);
}

TEST_CASE("sensitivity floor closed forms") {
    const std::vector<Vec3> unit_x{Vec3(1, 0, 0)};
    const std::vector<Mat3> zero_j{Mat3::Zero()};
    CHECK(emns::sensitivity_terms(unit_x, zero_j).floor(0.0, 1.0) == Approx(std::sqrt(2.0)).epsilon(1e-12));
    const std::vector<Mat3> eye{Mat3::Identity()};
    const std::vector<Vec3> zero_b{Vec3::Zero()};
    CHECK(emns::sensitivity_terms(zero_b, eye).floor(1.0, 0.0) == Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(emns::sensitivity_terms(unit_x, eye).floor(0.0, 0.0) == 0.0);
    CHECK_THROWS_AS(emns::sensitivity_terms(unit_x, eye).floor(-1.0, 0.0), emns::DomainError);
}

TEST_CASE("skew-product trace matches the expanded covariance") {
    emns::Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const Vec3 b = Vec3::Random();
        const Mat3 j = Mat3::Random();
        Mat3 bx;
        bx << 0, -b.z(), b.y(), b.z(), 0, -b.x(), -b.y(), b.x(), 0;
        const double sp = 1e-3;
        const double st = 0.02;
        const Mat3 sigma = sp * sp * j * j.transpose() + st * st * bx * bx.transpose();
        const double floor = emns::sensitivity_terms({b}, {j}).floor(sp, st);
        CHECK(floor == Approx(std::sqrt(sigma.trace())).epsilon(1e-12));
    }
}

TEST_CASE("sensitivity floor scales linearly and the heatmap is monotone") {
    const auto spec = emns::desk_oracle(1);
    const auto synth = emns::synth_generate([&] {
        auto s = spec;
        s.position_count = 30;
        return s;
    }(), 6);
    const double f1 = emns::sensitivity_floor(synth.data, synth.truth, 5e-4, 0.01);
    const double f2 = emns::sensitivity_floor(synth.data, synth.truth, 1e-3, 0.02);
    CHECK(std::abs(f2 - 2.0 * f1) <= 1e-12 * f2);
    CHECK(emns::sensitivity_floor(synth.data, synth.truth, 0.0, 0.0) == 0.0);

    const auto h = emns::sensitivity_heatmap(synth.data, synth.truth, {});
    REQUIRE(h.floor_t.rows() == 21);
    REQUIRE(h.floor_t.cols() == 21);
    CHECK(h.floor_t(0, 0) == 0.0);
    for (Eigen::Index r = 0; r < h.floor_t.rows(); ++r) {
        for (Eigen::Index c = 0; c < h.floor_t.cols(); ++c) {
            if (r > 0) CHECK(h.floor_t(r, c) >= h.floor_t(r - 1, c));
            if (c > 0) CHECK(h.floor_t(r, c) >= h.floor_t(r, c - 1));
        }
    }
    CHECK(h.sigma_p.back() == Approx(2e-3));
    CHECK(h.sigma_theta.back() == Approx(2.0 * std::numbers::pi / 180.0));

    std::ostringstream out;
    emns::write_sensitivity_csv(out, h);
    std::istringstream in(out.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.rfind("# ", 0) != 0) ++rows;
    }
    CHECK(rows == 22);
}

TEST_CASE("sensitivity uses the model Jacobian at each sample") {
    // a constant model has no gradient: only the orientation term remains
    const auto m = oracle::constant_actuation_model(Mat::Identity(3, 3), Vec3::Zero());
    emns::Dataset ds;
    ds.coil_count = 3;
    ds.samples.push_back({Vec3::Zero(), Vec3(1, 0, 0), Vec3(0, 3, 4), 0});
    CHECK(emns::sensitivity_floor(ds, m, 1.0, 0.5) == Approx(std::sqrt(2.0 * 0.25 * 25.0)).epsilon(1e-12));
}

TEST_CASE("oracle generation is seeded and exact when noiseless") {
    auto spec = emns::desk_oracle(1);
    spec.position_count = 25;
    const auto a = emns::synth_generate(spec, 7);
    const auto b = emns::synth_generate(spec, 7);
    const auto c = emns::synth_generate(spec, 8);
    REQUIRE(a.data.size() == b.data.size());
    bool same = true;
    for (std::size_t n = 0; n < a.data.size(); ++n) {
        same = same && a.data.samples[n].field == b.data.samples[n].field && a.data.samples[n].position == b.data.samples[n].position;
    }
    CHECK(same);
    CHECK(a.data.samples[0].position != c.data.samples[0].position);
    CHECK(a.data.size() == 25 * 3 * 9);
    CHECK(a.data.position_count() == 25);

    spec.noise_sigma_t = 0.0;
    const auto audit = emns::affine_audit(emns::synth_generate(spec, 7).data);
    for (const auto& r : audit.positions) CHECK(r.r_squared >= 1 - 1e-12);
}

TEST_CASE("oracle noise has the requested vector RMS") {
    auto spec = emns::desk_oracle(1);
    spec.position_count = 300;
    const auto noisy = emns::synth_generate(spec, 9);
    spec.noise_sigma_t = 0.0;
    const auto clean = emns::synth_generate(spec, 9);
    double sq = 0.0;
    for (std::size_t n = 0; n < noisy.data.size(); ++n) sq += (noisy.data.samples[n].field - clean.data.samples[n].field).squaredNorm();
    CHECK(std::sqrt(sq / static_cast<double>(noisy.data.size())) == Approx(5e-4).epsilon(0.02));
}

TEST_CASE("planted offset sources are recovered by the audit") {
    auto spec = emns::desk_oracle(1);
    spec.position_count = 10;
    spec.noise_sigma_t = 0.0;
    const auto synth = emns::synth_generate(spec, 10);
    const auto audit = emns::affine_audit(synth.data);
    for (const auto& r : audit.positions) {
        const Vec3 p = synth.positions[static_cast<std::size_t>(r.position_id)];
        CHECK(std::abs(r.offset_norm - emns::eval_affine(synth.truth, p).offset.norm()) <= 1e-9);
        CHECK(r.offset_norm > 0.0);
    }
}

TEST_CASE("presets follow the sweep protocols") {
    const auto octo = emns::octomag_like();
    CHECK(octo.truth.coil_count == 8);
    CHECK(octo.levels == emns::current_levels(-4, 4, 1));
    CHECK(octo.levels.size() == 9);
    const auto nav = emns::navion_like();
    CHECK(nav.truth.coil_count == 3);
    CHECK(nav.levels == std::vector<double>{0, 5, 10, 15, 20, 25, 30});
    CHECK_NOTHROW(octo.validate());
    CHECK_NOTHROW(nav.validate());
    auto bad = emns::desk_oracle(1);
    bad.box_hi = Vec3::Constant(0.3);
    CHECK_THROWS_AS(bad.validate(), emns::DomainError);
}

TEST_CASE("perturbed poses stay within the requested bounds") {
    const auto truth = emns::desk_oracle(1).truth;
    const auto poses = emns::perturbed_poses(truth, 5e-3, 5.0 * std::numbers::pi / 180.0, 11);
    REQUIRE(poses.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& t = truth.coils[k].direct.pose;
        CHECK((poses[k].location - t.location).norm() <= 5e-3);
        CHECK(std::acos(std::clamp(poses[k].zenith.dot(t.zenith), -1.0, 1.0)) <= 5.0 * std::numbers::pi / 180.0 + 1e-12);
        CHECK(poses[k].zenith.norm() == Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("latency benchmark reports consistent statistics") {
    const auto m = emns::synth_generate(emns::desk_oracle(1), 0).truth;
    const auto r = emns::latency_bench(m, 500, emns::BenchMode::field, Vec3::Constant(-0.05), Vec3::Constant(0.05), 1, 10);
    CHECK(r.queries == 500);
    CHECK(r.mean_s > 0.0);
    CHECK(r.median_s <= r.p95_s);
    CHECK(r.mean_s < 1.5e-3);
    const auto g = emns::latency_bench(m, 500, emns::BenchMode::field_gradient, Vec3::Constant(-0.05), Vec3::Constant(0.05), 1, 10);
    CHECK(g.mean_s < 1.5e-3);
    const auto d = oracle::constant_actuation_model(Mat::Identity(3, 3), Vec3::Zero());
    auto direct = d;
    direct.kind = emns::ModelKind::direct_gbt;
    direct.payload = emns::GbtEnsemble{};
    CHECK_THROWS_AS(emns::latency_bench(direct, 10, emns::BenchMode::field, Vec3::Zero(), Vec3::Zero()), emns::KindMismatchError);
}

TEST_CASE("radial segments partition positions by horizontal distance") {
    emns::Dataset ds;
    ds.coil_count = 1;
    for (int k = 0; k < 7; ++k) {
        for (int r = 0; r < 2; ++r) ds.samples.push_back({Vec3(0.01 * k, 0, 0.05 * r - 0.01 * k), Vec::Ones(1), Vec3::Zero(), -1});
    }
    emns::assign_position_ids(ds);
    const auto segs = emns::radial_segments(ds, {Vec3(0.1, 0, 5.0)}, 3);
    REQUIRE(segs.size() == 3);
    std::size_t total = 0;
    for (const auto& s : segs) total += s.size();
    CHECK(total == ds.size());
    CHECK(segs[0].position_count() + segs[1].position_count() + segs[2].position_count() == 14);
    double last = 0.0;
    for (const auto& s : segs) {
        double lo = 1.0;
        double hi = 0.0;
        for (const auto& x : s.samples) {
            lo = std::min(lo, std::abs(0.1 - x.position.x()));
            hi = std::max(hi, std::abs(0.1 - x.position.x()));
        }
        CHECK(lo >= last);
        last = hi;
    }
    CHECK_THROWS_AS(emns::radial_segments(ds, {Vec3::Zero()}, 0), emns::DomainError);
    CHECK_THROWS_AS(emns::radial_segments(ds, {Vec3::Zero()}, 20), emns::DataError);
}
