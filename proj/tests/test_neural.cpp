#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using Catch::Approx;
using emns::Mat;
using emns::Mat3;
using emns::ModelKind;
using emns::Vec;
using emns::Vec3;

namespace {

emns::MlpParams random_net(const std::vector<int>& sizes, std::uint64_t seed, double pos_scale = 0.05) {
    emns::Rng rng(seed);
    auto p = emns::mlp_init(sizes, rng);
    for (auto& b : p.biases) {
        for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = emns::uniform(rng, -0.3, 0.3);
    }
    p.input_scale.head(3).setConstant(pos_scale);
    p.output_scale.setConstant(1e-3);
    return p;
}

struct Splits {
    emns::Dataset train, val, test;
};

Splits small_oracle(double noise, std::size_t positions, std::uint64_t seed) {
    auto spec = emns::desk_oracle(1);
    spec.position_count = positions;
    spec.noise_sigma_t = noise;
    spec.levels = {-4, -2, 0, 2, 4};
    const auto synth = emns::synth_generate(spec, seed);
    const auto split = emns::split_positions(synth.data, {0.7, 0.15, 0.15}, seed);
    return {emns::select_split(synth.data, split, emns::SplitPart::train),
            emns::select_split(synth.data, split, emns::SplitPart::validation),
            emns::select_split(synth.data, split, emns::SplitPart::test)};
}

/// Sixth-order central difference of a scalar function along a direction.
double directional_derivative(const std::function<double(const Vec3&)>& f, const Vec3& x, const Vec3& v, double h) {
    auto g = [&](double t) { return f(x + t * v); };
    return (g(3 * h) - 9 * g(2 * h) + 45 * g(h) - 45 * g(-h) + 9 * g(-2 * h) - g(-3 * h)) / (60 * h);
}

}  // namespace

TEST_CASE("actuation output reshape is row-major over component and coil") {
    Mat a(3, 3);
    a << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    const auto m = oracle::constant_actuation_model(a, Vec3(10, 11, 12));
    const auto& p = m.mlp();
    CHECK(p.biases[0] == (Vec(12) << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12).finished());
    const auto e = emns::actuationnet_predict(p, Vec3(0.3, -0.2, 0.1), 3);
    CHECK(e.actuation.row(0) == Eigen::RowVector3d(1, 2, 3));
    CHECK(e.actuation.row(1) == Eigen::RowVector3d(4, 5, 6));
    CHECK(e.actuation.row(2) == Eigen::RowVector3d(7, 8, 9));
    CHECK(e.offset == Vec3(10, 11, 12));
    const Vec i = Vec3(0.5, -1.0, 2.0);
    CHECK(emns::predict_field(m, Vec3::Zero(), i) == e.actuation * i + e.offset);
}

TEST_CASE("linear potential gives unit actuation columns") {
    emns::MlpParams p;
    Mat w = Mat::Zero(4, 3);
    w.topRows(3) = -Mat::Identity(3, 3);  // phi_s = -p . e_s
    p.weights.push_back(w);
    p.biases.push_back(Vec::Zero(4));
    p.input_mean = Vec::Zero(3);
    p.input_scale = Vec::Ones(3);
    p.output_scale = Vec::Ones(4);
    const auto e = emns::potentialnet_predict(p, Vec3(0.2, 0.1, -0.4), 3);
    CHECK(oracle::rel_err(e.actuation, Mat::Identity(3, 3)) < 1e-15);
    CHECK(e.offset.isZero(0.0));
}

TEST_CASE("potential field Jacobian is symmetric and matches differencing") {
    const auto p = random_net({3, 24, 24, 4}, 31);
    emns::Rng rng(31);
    for (int t = 0; t < 100; ++t) {
        const Vec3 x(emns::uniform(rng, -0.06, 0.06), emns::uniform(rng, -0.06, 0.06), emns::uniform(rng, -0.06, 0.06));
        const auto jet = emns::potentialnet_jet(p, x, 3);
        const Vec i = Vec::Random(3);
        const Mat3 j = jet.field_jacobian(i);
        const auto res = emns::maxwell_from_jacobian(j);
        CHECK(res.curl_norm <= 1e-10 * j.norm());
        for (int s = 0; s < 3; ++s) {
            const auto fd = oracle::fd_jacobian2(
                [&](const Vec& y) -> Vec { return emns::potentialnet_predict(p, y, 3).actuation.col(s); }, x, 1e-5);
            CHECK(oracle::rel_err(jet.actuation_gradient[static_cast<std::size_t>(s)], fd) < 1e-5);
        }
    }
}

TEST_CASE("potential field is the negative gradient of the potential") {
    const auto p = random_net({3, 16, 16, 3}, 32);
    emns::Rng rng(32);
    const Vec3 x(0.01, -0.02, 0.015);
    const auto e = emns::potentialnet_predict(p, x, 2);
    for (int t = 0; t < 10; ++t) {
        const Vec3 v = oracle::random_unit(rng);
        for (int s = 0; s < 3; ++s) {
            const double dd = directional_derivative(
                [&](const Vec3& y) { return emns::potentialnet_potentials(p, y, 2)(s); }, x, v, 5e-4);
            const Vec3 col = s < 2 ? Vec3(e.actuation.col(s)) : e.offset;
            CHECK(std::abs(-col.dot(v) - dd) <= 1e-10 * col.norm());
        }
    }
}

TEST_CASE("actuation and direct network Jacobians match differencing") {
    emns::Rng rng(33);
    const auto an = random_net({3, 20, 20, 12}, 33);
    const auto dn = random_net({6, 20, 20, 3}, 34);
    for (int t = 0; t < 100; ++t) {
        const Vec3 x(emns::uniform(rng, -0.06, 0.06), emns::uniform(rng, -0.06, 0.06), emns::uniform(rng, -0.06, 0.06));
        const auto jet = emns::actuationnet_jet(an, x, 3);
        for (int s = 0; s < 3; ++s) {
            const auto fd = oracle::fd_jacobian2(
                [&](const Vec& y) -> Vec { return emns::actuationnet_predict(an, y, 3).actuation.col(s); }, x, 1e-5);
            CHECK(oracle::rel_err(jet.actuation_gradient[static_cast<std::size_t>(s)], fd) < 1e-5);
        }
        const Vec i = Vec::Random(3);
        const auto fd = oracle::fd_jacobian2([&](const Vec& y) -> Vec { return emns::directnet_predict(dn, y, i); }, x, 1e-5);
        CHECK(oracle::rel_err(emns::directnet_spatial_jacobian(dn, x, i), fd) < 1e-5);
    }
}

TEST_CASE("network heads reject wrong widths") {
    const auto p = random_net({3, 4, 5}, 35);
    CHECK_THROWS_AS(emns::actuationnet_predict(p, Vec3::Zero(), 3), emns::DimensionError);
    CHECK_THROWS_AS(emns::potentialnet_predict(p, Vec3::Zero(), 3), emns::DimensionError);
    CHECK_THROWS_AS(emns::directnet_predict(p, Vec3::Zero(), Vec::Zero(3)), emns::DimensionError);
}

TEST_CASE("zero-weight direct network is constant") {
    auto p = random_net({6, 8, 3}, 36);
    for (auto& w : p.weights) w.setZero();
    const Vec3 a = emns::directnet_predict(p, Vec3(0.1, 0.2, 0.3), Vec3(1, 2, 3));
    const Vec3 b = emns::directnet_predict(p, Vec3(-0.1, 0.0, 0.3), Vec3(-4, 0, 3));
    CHECK(a == b);
}

TEST_CASE("objective is zero on perfect predictions") {
    Mat a(3, 3);
    a << 1e-3, 2e-4, 0, 0, 1e-3, 0, -3e-4, 0, 2e-3;
    const auto m = oracle::constant_actuation_model(a, Vec3(1e-4, 0, -2e-4));
    const auto ds = oracle::sample_model(m, 10, {-2, 0, 2}, 5);
    emns::detail::FieldObjective obj(ModelKind::actuation_net, ds);
    CHECK(obj.rmse(m.mlp()) == 0.0);
}

TEST_CASE("objective gradients match central differences for every network kind") {
    const auto data = small_oracle(5e-4, 12, 40);
    for (auto kind : {ModelKind::actuation_net, ModelKind::potential_net, ModelKind::direct_net}) {
        const int S = data.train.coil_count;
        const int in = kind == ModelKind::direct_net ? 3 + S : 3;
        auto p = random_net({in, 10, 10, emns::network_output_width(kind, S)}, 41);
        emns::detail::fit_normalization(kind, data.train, p);
        emns::detail::FieldObjective obj(kind, data.train);
        std::vector<std::size_t> idx;
        for (std::size_t n = 0; n < data.train.size(); n += 3) idx.push_back(n);
        const double w = 1.0 / static_cast<double>(idx.size());
        emns::MlpGrads g(p);
        obj.evaluate(p, idx, w, &g);
        emns::Rng rng(42);
        for (int t = 0; t < 20; ++t) {
            const auto layer = static_cast<std::size_t>(emns::uniform_index(rng, p.layer_count()));
            const auto k = static_cast<Eigen::Index>(emns::uniform_index(rng, static_cast<std::uint64_t>(p.weights[layer].size())));
            double& param = p.weights[layer].data()[k];
            const double saved = param;
            const double h = 1e-6;
            param = saved + h;
            const double up = w * obj.evaluate(p, idx, 0.0, nullptr);
            param = saved - h;
            const double down = w * obj.evaluate(p, idx, 0.0, nullptr);
            param = saved;
            const double fd = (up - down) / (2 * h);
            const double an = g.weights[layer].data()[k];
            CHECK(std::abs(an - fd) <= 1e-5 * std::max(std::abs(fd), 1e-3));
        }
    }
}

TEST_CASE("training keeps the best validation epoch and is deterministic") {
    const auto data = small_oracle(5e-4, 40, 43);
    emns::TrainConfig cfg;
    cfg.max_epochs = 25;
    cfg.batch_size = 128;
    cfg.seed = 9;
    for (auto kind : {ModelKind::actuation_net, ModelKind::potential_net, ModelKind::direct_net}) {
        const auto a = emns::train_network(kind, {16, 16}, data.train, data.val, cfg);
        const auto b = emns::train_network(kind, {16, 16}, data.train, data.val, cfg);
        CHECK(a.params == b.params);
        REQUIRE_FALSE(a.history.empty());
        double best = std::numeric_limits<double>::infinity();
        int best_epoch = 0;
        for (const auto& row : a.history) {
            if (row.val_rmse_mT < best) {
                best = row.val_rmse_mT;
                best_epoch = row.epoch;
            }
        }
        CHECK(a.best_val_rmse_mT == best);
        CHECK(a.best_epoch == best_epoch);
        emns::detail::FieldObjective val(kind, data.val);
        CHECK(val.rmse(a.params) == Approx(best).epsilon(1e-12));
        // training moves well below the untrained error
        CHECK(a.history.back().train_rmse_mT < a.history.front().train_rmse_mT);
    }
}

TEST_CASE("early stopping halts within patience epochs of the last real improvement") {
    const auto data = small_oracle(5e-4, 30, 44);
    emns::TrainConfig cfg;
    cfg.max_epochs = 400;
    cfg.batch_size = 64;
    cfg.patience = 3;
    cfg.min_improvement_mT = 0.05;
    cfg.seed = 3;
    const auto r = emns::train_network(ModelKind::actuation_net, {8}, data.train, data.val, cfg);
    REQUIRE(r.epochs_run < cfg.max_epochs);
    double reference = std::numeric_limits<double>::infinity();
    int last = 0;
    for (const auto& row : r.history) {
        if (row.val_rmse_mT < reference - cfg.min_improvement_mT) {
            reference = row.val_rmse_mT;
            last = row.epoch;
        }
    }
    CHECK(r.epochs_run - last <= cfg.patience + 1);
    CHECK(r.epochs_run - last == cfg.patience);
}

TEST_CASE("normalization makes training translation invariant") {
    const auto data = small_oracle(5e-4, 20, 45);
    const Vec3 shift(0.25, -0.5, 1.0);
    auto moved = [&](emns::Dataset ds) {
        for (auto& s : ds.samples) s.position += shift;
        return ds;
    };
    emns::TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.batch_size = 64;
    const auto a = emns::train_network(ModelKind::actuation_net, {12, 12}, data.train, data.val, cfg);
    const auto b = emns::train_network(ModelKind::actuation_net, {12, 12}, moved(data.train), moved(data.val), cfg);
    for (const auto& s : data.test.samples) {
        const auto ea = emns::actuationnet_predict(a.params, s.position, 3);
        const auto eb = emns::actuationnet_predict(b.params, s.position + shift, 3);
        CHECK(oracle::rel_err(ea.apply(s.currents), eb.apply(s.currents)) < 1e-9);
    }
}

TEST_CASE("non-finite loss aborts training") {
    const auto data = small_oracle(5e-4, 12, 46);
    emns::TrainConfig cfg;
    cfg.learning_rate = 1e300;
    cfg.max_epochs = 5;
    CHECK_THROWS_AS(emns::train_network(ModelKind::direct_net, {8}, data.train, data.val, cfg), emns::NumericalError);
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(emns::train_network(ModelKind::direct_net, {8}, data.train, data.val, cfg), emns::DomainError);
}
