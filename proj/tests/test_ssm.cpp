#include <gtest/gtest.h>

#include "support.hpp"

using namespace kficl;
using namespace kficl::testing;

namespace {

SystemParams make_params(Matrix F, Matrix Q, Matrix R, Matrix H, int N) {
    SystemParams p;
    p.n = static_cast<int>(F.rows());
    p.m = static_cast<int>(H.rows());
    p.F = std::move(F);
    p.Q = std::move(Q);
    p.R = std::move(R);
    p.H_seq.assign(static_cast<std::size_t>(N), H);
    return p;
}

}  // namespace

TEST(Simulate, IdentityDynamicsWithoutNoise) {
    auto p = make_params(Matrix::Identity(2, 2), Matrix::Zero(2, 2), Matrix::Zero(2, 2),
                         Matrix::Identity(2, 2), 3);
    Rng rng = make_rng(1);
    const Vector x0 = (Vector(2) << 1, 2).finished();
    const auto tr = simulate(p, x0, 3, rng);
    ASSERT_EQ(tr.x_seq.size(), 4u);
    for (int t = 1; t <= 3; ++t) {
        EXPECT_EQ(tr.x_seq[t], x0);
        EXPECT_EQ(tr.y_seq[t - 1], x0);
    }
}

TEST(Simulate, NilpotentDynamics) {
    auto p = make_params(Matrix::Zero(2, 2), Matrix::Zero(2, 2), Matrix::Zero(1, 1),
                         Matrix::Ones(1, 2), 2);
    Rng rng = make_rng(2);
    const auto tr = simulate(p, Vector::Constant(2, 5.0), 2, rng);
    EXPECT_EQ(tr.x_seq[1], Vector::Zero(2));
    EXPECT_EQ(tr.x_seq[2], Vector::Zero(2));
}

TEST(Simulate, ReplayRecordedNoise) {
    Matrix F(2, 2);
    F << 0.5, 0, 0, 0.5;
    auto p = make_params(F, 0.01 * Matrix::Identity(2, 2), Matrix::Constant(1, 1, 0.01),
                         Matrix::Zero(1, 2), 25);
    Rng hr = make_rng(9);
    for (auto& H : p.H_seq) H = standard_normal(1, 2, hr);
    Rng rng = make_rng(42);
    const Vector x0 = (Vector(2) << 0.3, -1.2).finished();
    const auto tr = simulate(p, x0, 25, rng, 42);

    double x[2] = {x0(0), x0(1)};
    for (int t = 1; t <= 25; ++t) {
        const auto& q = tr.noise.process[t - 1];
        const auto& r = tr.noise.measurement[t - 1];
        const double nx0 = 0.5 * x[0] + q(0);
        const double nx1 = 0.5 * x[1] + q(1);
        x[0] = nx0;
        x[1] = nx1;
        const auto& H = p.H_seq[t - 1];
        const double y = H(0, 0) * x[0] + H(0, 1) * x[1] + r(0);
        EXPECT_NEAR(tr.x_seq[t](0), x[0], 1e-15);
        EXPECT_NEAR(tr.x_seq[t](1), x[1], 1e-15);
        EXPECT_NEAR(tr.y_seq[t - 1](0), y, 1e-15);
    }
}

TEST(Simulate, ControlTermEntersTransition) {
    auto p = make_params(Matrix::Identity(2, 2), Matrix::Zero(2, 2), Matrix::Zero(1, 1),
                         Matrix::Ones(1, 2), 2);
    p.B = 2.0 * Matrix::Identity(2, 2);
    p.u_seq = {(Vector(2) << 1, 0).finished(), (Vector(2) << 0, 1).finished()};
    Rng rng = make_rng(3);
    const auto tr = simulate(p, Vector::Zero(2), 2, rng);
    EXPECT_EQ(tr.x_seq[1], (Vector(2) << 2, 0).finished());
    EXPECT_EQ(tr.x_seq[2], (Vector(2) << 2, 2).finished());
}

TEST(Simulate, Deterministic) {
    const auto a = sampled_example(4, 30, Strategy::symmetric, 77);
    const auto b = sampled_example(4, 30, Strategy::symmetric, 77);
    for (std::size_t t = 0; t < a.traj.x_seq.size(); ++t) EXPECT_EQ(a.traj.x_seq[t], b.traj.x_seq[t]);
    for (std::size_t t = 0; t < a.traj.y_seq.size(); ++t) EXPECT_EQ(a.traj.y_seq[t], b.traj.y_seq[t]);
}

TEST(Simulate, OrthonormalDynamicsPreserveNorm) {
    Rng rng = make_rng(5);
    for (int n : {1, 3, 8}) {
        auto p = make_params(sample_orthonormal(n, rng), Matrix::Zero(n, n), Matrix::Zero(1, 1),
                             Matrix::Ones(1, n), 100);
        const Vector x0 = standard_normal(n, rng);
        const auto tr = simulate(p, x0, 100, rng);
        for (const auto& x : tr.x_seq) EXPECT_NEAR(x.norm(), x0.norm(), 1e-10);
    }
}

TEST(Simulate, ProcessNoiseCovariance) {
    Rng rng = make_rng(11);
    const int n = 3;
    const int N = 100000;
    const Matrix Q = random_spd(n, 0.1, 1.0, rng);
    auto p = make_params(Matrix::Zero(n, n), Q, Matrix::Zero(1, 1), Matrix::Zero(1, n), N);
    const auto tr = simulate(p, Vector::Zero(n), N, rng);
    Matrix S = Matrix::Zero(n, n);
    for (int t = 1; t <= N; ++t) S += tr.x_seq[t] * tr.x_seq[t].transpose();
    S /= N;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double se = std::sqrt((Q(i, i) * Q(j, j) + Q(i, j) * Q(i, j)) / N);
            EXPECT_LT(std::abs(S(i, j) - Q(i, j)), 5 * se) << i << "," << j;
        }
    }
}

TEST(Simulate, SingularCovarianceSamples) {
    Rng rng = make_rng(12);
    Matrix Q = Matrix::Zero(3, 3);
    Q(0, 0) = 1.0;
    Q(0, 1) = Q(1, 0) = 1.0;
    Q(1, 1) = 1.0;
    auto p = make_params(Matrix::Zero(3, 3), Q, Matrix::Zero(1, 1), Matrix::Zero(1, 3), 50);
    const auto tr = simulate(p, Vector::Zero(3), 50, rng);
    for (int t = 1; t <= 50; ++t) {
        EXPECT_NEAR(tr.x_seq[t](0), tr.x_seq[t](1), 1e-12);
        EXPECT_EQ(tr.x_seq[t](2), 0.0);
    }
}

TEST(Simulate, DimensionErrorsNameMatrix) {
    auto p = make_params(Matrix::Identity(2, 2), Matrix::Zero(3, 3), Matrix::Zero(1, 1),
                         Matrix::Ones(1, 2), 2);
    Rng rng = make_rng(0);
    try {
        simulate(p, Vector::Zero(2), 2, rng);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("Q"), std::string::npos) << e.what();
    }
    p.Q = Matrix::Zero(2, 2);
    p.H_seq[1] = Matrix::Ones(1, 3);
    EXPECT_THROW(simulate(p, Vector::Zero(2), 2, rng), ConfigError);
    p.H_seq[1] = Matrix::Ones(1, 2);
    EXPECT_THROW(simulate(p, Vector::Zero(3), 2, rng), ConfigError);
    EXPECT_THROW(simulate(p, Vector::Zero(2), 0, rng), ConfigError);
    EXPECT_THROW(simulate(p, Vector::Zero(2), 3, rng), ConfigError);
    p.B = Matrix::Identity(2, 2);
    EXPECT_THROW(simulate(p, Vector::Zero(2), 2, rng), ConfigError);
}

TEST(SystemParams, RejectsInvalidCovariances) {
    auto p = make_params(Matrix::Identity(2, 2), Matrix::Zero(2, 2), Matrix::Zero(1, 1),
                         Matrix::Ones(1, 2), 1);
    p.Q(0, 1) = 0.1;
    EXPECT_THROW(p.validate(), ConfigError);
    p.Q = -Matrix::Identity(2, 2);
    EXPECT_THROW(p.validate(), ConfigError);
    p.Q = Matrix::Zero(2, 2);
    p.R = Matrix::Constant(1, 1, -1.0);
    EXPECT_THROW(p.validate(), ConfigError);
    p.R = Matrix::Zero(1, 1);
    EXPECT_NO_THROW(p.validate());
}
