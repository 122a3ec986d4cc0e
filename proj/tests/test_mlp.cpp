#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using Catch::Approx;
using emns::Mat;
using emns::Vec;

namespace {

emns::MlpParams random_net(const std::vector<int>& sizes, std::uint64_t seed) {
    emns::Rng rng(seed);
    auto p = emns::mlp_init(sizes, rng);
    for (auto& b : p.biases) {
        for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = emns::uniform(rng, -0.3, 0.3);
    }
    for (Eigen::Index k = 0; k < p.input_mean.size(); ++k) {
        p.input_mean(k) = emns::uniform(rng, -0.1, 0.1);
        p.input_scale(k) = emns::uniform(rng, 0.02, 0.2);
    }
    for (Eigen::Index k = 0; k < p.output_scale.size(); ++k) p.output_scale(k) = emns::uniform(rng, 0.5, 2.0);
    return p;
}

Vec random_input(emns::Rng& rng, const emns::MlpParams& p) {
    Vec x(p.input_dim());
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = p.input_mean(k) + p.input_scale(k) * emns::uniform(rng, -1.5, 1.5);
    return x;
}

}  // namespace

TEST_CASE("zero weights give the final bias") {
    emns::Rng rng(1);
    auto p = emns::mlp_init({3, 8, 4}, rng);
    for (auto& w : p.weights) w.setZero();
    p.biases.back() << 1, -2, 3, 0.5;
    for (int t = 0; t < 5; ++t) {
        const Vec x = Vec::Random(3);
        CHECK(emns::mlp_forward(p, x) == p.biases.back());
        CHECK(emns::mlp_input_jacobian(p, x).isZero(0.0));
    }
}

TEST_CASE("single linear layer") {
    emns::Rng rng(2);
    auto p = random_net({3, 2}, 2);
    p.output_scale.setOnes();
    const Mat expected_jac = p.weights[0] * p.input_scale.cwiseInverse().asDiagonal();
    for (int t = 0; t < 10; ++t) {
        const Vec x = random_input(rng, p);
        const Vec xhat = (x - p.input_mean).cwiseQuotient(p.input_scale);
        CHECK(oracle::rel_err(emns::mlp_forward(p, x), p.weights[0] * xhat + p.biases[0]) < 1e-15);
        CHECK(oracle::rel_err(emns::mlp_input_jacobian(p, x), expected_jac) < 1e-15);
    }
}

TEST_CASE("tanh bounds hidden activations under huge inputs") {
    emns::Rng rng(3);
    auto p = emns::mlp_init({2, 6, 6}, rng);
    p.weights[1].setIdentity();  // output exposes the hidden layer
    const Vec x = 1e6 * Vec::Random(2);
    const Vec h = emns::mlp_forward(p, x);
    CHECK(h.allFinite());
    CHECK(h.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("glorot initialization is bounded and seeded") {
    emns::Rng a(5);
    emns::Rng b(5);
    const auto p = emns::mlp_init({3, 40, 7}, a);
    const auto q = emns::mlp_init({3, 40, 7}, b);
    CHECK(p == q);
    CHECK(p.weights[0].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 43.0));
    CHECK(p.weights[1].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 47.0));
    CHECK(p.biases[0].isZero(0.0));
    CHECK(p.parameter_count() == 3 * 40 + 40 + 40 * 7 + 7);
    CHECK(p.layer_sizes() == std::vector<int>{3, 40, 7});
}

TEST_CASE("input Jacobian matches central differences") {
    const auto p = random_net({4, 16, 16, 5}, 4);
    emns::Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        const Vec x = random_input(rng, p);
        const Mat j = emns::mlp_input_jacobian(p, x);
        // step 1e-4 in normalized coordinates, per input dimension
        Mat fd(5, 4);
        for (int k = 0; k < 4; ++k) {
            const double h = 1e-4 * p.input_scale(k);
            Vec a = x, b = x;
            a(k) += h;
            b(k) -= h;
            fd.col(k) = (emns::mlp_forward(p, a) - emns::mlp_forward(p, b)) / (2 * h);
        }
        CHECK(oracle::rel_err(j, fd) < 1e-5);
    }
}

TEST_CASE("input Hessians match differencing the Jacobian") {
    const auto p = random_net({3, 12, 12, 2}, 6);
    emns::Rng rng(6);
    for (int t = 0; t < 30; ++t) {
        const Vec x = random_input(rng, p);
        const auto jet = emns::mlp_jet(p, x, 3, true);
        for (int o = 0; o < 2; ++o) {
            const Mat fd = oracle::fd_jacobian(
                [&](const Vec& y) -> Vec { return emns::mlp_input_jacobian(p, y).row(o).transpose(); }, x, 1e-4 * p.input_scale.minCoeff());
            CHECK(oracle::rel_err(jet.hessians[static_cast<std::size_t>(o)], fd) < 1e-7);
        }
        CHECK(oracle::rel_err(jet.value, emns::mlp_forward(p, x)) < 1e-14);
    }
}

TEST_CASE("batched pass agrees with single-point jets") {
    const auto p = random_net({3, 10, 10, 4}, 7);
    emns::Rng rng(7);
    Mat x(3, 9);
    for (int c = 0; c < 9; ++c) x.col(c) = random_input(rng, p);
    emns::MlpBatch batch;
    batch.forward(p, x, 3);
    const Mat out = batch.output();
    for (int c = 0; c < 9; ++c) {
        const auto jet = emns::mlp_jet(p, x.col(c), 3, false);
        CHECK(oracle::rel_err(out.col(c), jet.value) < 1e-14);
        for (int k = 0; k < 3; ++k) CHECK(oracle::rel_err(batch.tangent(k).col(c), jet.jacobian.col(k)) < 1e-14);
    }
}

TEST_CASE("reverse-mode parameter gradients match central differences") {
    auto p = random_net({3, 8, 8, 4}, 8);
    emns::Rng rng(8);
    Mat x(3, 6);
    for (int c = 0; c < 6; ++c) x.col(c) = random_input(rng, p);
    const Mat seed_out = Mat::Random(4, 6);
    const std::vector<Mat> seed_tan{Mat::Random(4, 6), Mat::Random(4, 6), Mat::Random(4, 6)};
    auto loss = [&](const emns::MlpParams& q) {
        emns::MlpBatch b;
        b.forward(q, x, 3);
        double v = (seed_out.array() * b.output().array()).sum();
        for (int c = 0; c < 3; ++c) v += (seed_tan[static_cast<std::size_t>(c)].array() * b.tangent(c).array()).sum();
        return v;
    };
    emns::MlpBatch b;
    b.forward(p, x, 3);
    emns::MlpGrads g(p);
    b.backward(p, seed_out, seed_tan, g);
    for (int t = 0; t < 20; ++t) {
        const auto layer = static_cast<std::size_t>(emns::uniform_index(rng, p.layer_count()));
        const bool bias = t % 3 == 0;
        double* param;
        double analytic;
        if (bias) {
            const auto k = static_cast<Eigen::Index>(emns::uniform_index(rng, static_cast<std::uint64_t>(p.biases[layer].size())));
            param = &p.biases[layer](k);
            analytic = g.biases[layer](k);
        } else {
            const auto k = static_cast<Eigen::Index>(emns::uniform_index(rng, static_cast<std::uint64_t>(p.weights[layer].size())));
            param = p.weights[layer].data() + k;
            analytic = g.weights[layer].data()[k];
        }
        const double saved = *param;
        const double h = 1e-6;
        *param = saved + h;
        const double up = loss(p);
        *param = saved - h;
        const double down = loss(p);
        *param = saved;
        const double fd = (up - down) / (2 * h);
        CHECK(std::abs(analytic - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("first Adam step moves each parameter by the learning rate") {
    emns::Rng rng(9);
    auto p = emns::mlp_init({2, 3, 1}, rng);
    const auto before = p;
    emns::MlpGrads g(p);
    for (auto& w : g.weights) w.setConstant(0.7);
    for (auto& b : g.biases) b.setConstant(-0.2);
    emns::Adam adam(p, 1e-3, 0.9, 0.999, 1e-8);
    adam.step(p, g);
    CHECK((p.weights[0] - before.weights[0]).array().abs().maxCoeff() == Approx(1e-3).epsilon(1e-6));
    CHECK((p.biases[1] - before.biases[1])(0) == Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("shape validation") {
    auto p = random_net({3, 4, 2}, 10);
    CHECK_NOTHROW(p.validate());
    CHECK_THROWS_AS(emns::mlp_forward(p, Vec::Zero(4)), emns::DimensionError);
    auto bad = p;
    bad.biases[0] = Vec::Zero(3);
    CHECK_THROWS_AS(bad.validate(), emns::DimensionError);
    bad = p;
    bad.input_scale(0) = 0.0;
    CHECK_THROWS_AS(bad.validate(), emns::DomainError);
}
