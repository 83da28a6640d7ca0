#include <gtest/gtest.h>

#include "support.hpp"

using namespace kficl;
using namespace kficl::testing;

namespace {

Example random_example(Scheme scheme, int n, int m, int N, std::uint64_t seed) {
    SamplerConfig cfg;
    cfg.n = n;
    cfg.m = scheme == Scheme::vector ? m : 1;
    cfg.with_control = scheme == Scheme::control;
    cfg.context_length = CurriculumSchedule::constant(N);
    cfg.strategy = seed % 2 ? Strategy::rotation_blend : Strategy::symmetric;
    Rng rng = make_rng(seed);
    return sample_example(cfg, 0, rng, seed);
}

}  // namespace

TEST(Encode, SmallestScalarLayout) {
    SystemParams p;
    p.n = 1;
    p.m = 1;
    p.F = Matrix::Constant(1, 1, 0.9);
    p.Q = Matrix::Constant(1, 1, 0.02);
    p.R = Matrix::Constant(1, 1, 0.01);
    p.H_seq = {Matrix::Constant(1, 1, -1.5)};
    const auto ctx = encode(p, {Vector::Constant(1, 0.7)}, Scheme::scalar);
    Matrix expected(2, 5);
    expected << 0, 0, 0.01, 0, 0.7,
                0.9, 0.02, 0, -1.5, 0;
    EXPECT_EQ(ctx.data, expected);
    EXPECT_EQ(ctx.target_positions, std::vector<int>{3});
}

TEST(Encode, ScalarLayoutPlacement) {
    const auto ex = random_example(Scheme::scalar, 3, 1, 4, 1);
    const auto ctx = encode(ex, Scheme::scalar);
    ASSERT_EQ(ctx.data.rows(), 4);
    ASSERT_EQ(ctx.data.cols(), 2 * 3 + 2 * 4 + 1);
    EXPECT_EQ(ctx.data.block(1, 0, 3, 3), ex.params.F);
    EXPECT_EQ(ctx.data.block(1, 3, 3, 3), ex.params.Q);
    EXPECT_EQ(ctx.data(0, 6), ex.params.R(0, 0));
    for (int t = 1; t <= 4; ++t) {
        EXPECT_EQ(ctx.data.block(1, 5 + 2 * t, 3, 1), ex.params.H_seq[t - 1].transpose());
        EXPECT_EQ(ctx.data(0, 6 + 2 * t), ex.traj.y_seq[t - 1](0));
        EXPECT_EQ(ctx.target_positions[t - 1], 5 + 2 * t);
        EXPECT_EQ(ctx.data.block(1, 6 + 2 * t, 3, 1), Matrix::Zero(3, 1));
        EXPECT_EQ(ctx.data(0, 5 + 2 * t), 0.0);
    }
}

TEST(Encode, ColumnFormulas) {
    for (int n = 1; n <= 8; ++n) {
        for (int m = 1; m <= 4; ++m) {
            for (int N = 1; N <= 40; ++N) {
                const auto s = context_shape(Scheme::scalar, n, m, N);
                EXPECT_EQ(s.rows, n + 1);
                EXPECT_EQ(s.cols, 2 * n + 2 * N + 1);
                const auto v = context_shape(Scheme::vector, n, m, N);
                EXPECT_EQ(v.rows, m + m * n);
                EXPECT_EQ(v.cols, 2 * n + 2 * N + 1);
                const auto c = context_shape(Scheme::control, n, m, N);
                EXPECT_EQ(c.cols, 2 * n + 3 * N + 2);
                const auto np = context_shape(Scheme::scalar_no_params, n, m, N);
                EXPECT_EQ(np.cols, n + 2 * N + 1);
                for (Scheme sc : kAllSchemes) {
                    const auto sh = context_shape(sc, n, m, N);
                    EXPECT_EQ(sh.y_col(N), sh.cols - 1);
                    EXPECT_EQ(sh.target_col(1), sh.y_col(1) - 1);
                }
            }
        }
    }
}

TEST(Encode, VectorSchemeRowGroups) {
    const auto ex = random_example(Scheme::vector, 2, 3, 3, 2);
    const auto ctx = encode(ex, Scheme::vector);
    ASSERT_EQ(ctx.data.rows(), 3 + 3 * 2);
    for (int j = 0; j < 3; ++j) EXPECT_EQ(ctx.data(j, 4), ex.params.R(j, j));
    EXPECT_EQ(ctx.data.block(3, 0, 2, 2), ex.params.F);
    EXPECT_EQ(ctx.data.block(3, 2, 2, 2), ex.params.Q);
    for (int t = 1; t <= 3; ++t) {
        for (int j = 0; j < 3; ++j) {
            EXPECT_EQ(ctx.data.block(3 + 2 * j, 3 + 2 * t, 2, 1), ex.params.H_seq[t - 1].row(j).transpose());
            EXPECT_EQ(ctx.data(j, 4 + 2 * t), ex.traj.y_seq[t - 1](j));
        }
    }
}

TEST(Encode, ControlSchemeTriplets) {
    const auto ex = random_example(Scheme::control, 2, 1, 3, 3);
    const auto ctx = encode(ex, Scheme::control);
    ASSERT_EQ(ctx.data.cols(), 2 * 2 + 3 * 3 + 2);
    EXPECT_EQ(ctx.data.col(5), Vector::Zero(3));
    for (int t = 1; t <= 3; ++t) {
        EXPECT_EQ(ctx.data.block(1, 3 + 3 * t, 2, 1), ex.params.H_seq[t - 1].transpose());
        EXPECT_EQ(ctx.data.block(1, 4 + 3 * t, 2, 1), ex.params.u_seq[t - 1]);
        EXPECT_EQ(ctx.data(0, 5 + 3 * t), ex.traj.y_seq[t - 1](0));
        EXPECT_EQ(ctx.target_positions[t - 1], 4 + 3 * t);
    }
}

TEST(Encode, WithholdingIsMasking) {
    const auto ex = random_example(Scheme::scalar, 4, 1, 6, 4);
    const auto full = encode(ex, Scheme::scalar);
    const auto masked = encode(ex, Scheme::scalar_no_cov);
    Matrix expected = full.data;
    expected.block(1, 4, 4, 4).setZero();
    expected(0, 8) = 0.0;
    EXPECT_TRUE((masked.data.array() == expected.array()).all());
    EXPECT_TRUE((withhold_covariances(full).data.array() == masked.data.array()).all());

    SystemParams zeroed = ex.params;
    zeroed.Q.setZero();
    zeroed.R.setZero();
    EXPECT_TRUE((encode(zeroed, ex.traj.y_seq, Scheme::scalar).data.array() == masked.data.array()).all());
}

TEST(Encode, NoParamsDropsTransition) {
    const auto ex = random_example(Scheme::scalar, 3, 1, 5, 5);
    const auto full = encode(ex, Scheme::scalar);
    const auto np = encode(ex, Scheme::scalar_no_params);
    EXPECT_EQ(np.data.cols(), full.data.cols() - 3);
    EXPECT_EQ(np.data, full.data.rightCols(full.data.cols() - 3));
}

TEST(Encode, SchemeMismatches) {
    const auto vec = random_example(Scheme::vector, 2, 2, 3, 6);
    EXPECT_THROW(encode(vec, Scheme::scalar), ConfigError);
    const auto ctl = random_example(Scheme::control, 2, 1, 3, 7);
    EXPECT_THROW(encode(ctl, Scheme::scalar), ConfigError);
    const auto plain = random_example(Scheme::scalar, 2, 1, 3, 8);
    EXPECT_THROW(encode(plain, Scheme::control), ConfigError);
}

TEST(Decode, WithheldFieldsAreAbsent) {
    const auto ex = random_example(Scheme::scalar, 2, 1, 3, 9);
    const auto nc = decode(encode(ex, Scheme::scalar_no_cov));
    EXPECT_TRUE(nc.F.has_value());
    EXPECT_FALSE(nc.Q.has_value());
    EXPECT_FALSE(nc.r_diag.has_value());
    const auto np = decode(encode(ex, Scheme::scalar_no_params));
    EXPECT_FALSE(np.F.has_value());
    EXPECT_TRUE(np.Q.has_value());
    EXPECT_TRUE(np.r_diag.has_value());
}

TEST(Decode, MalformedLayout) {
    const auto ex = random_example(Scheme::scalar, 2, 1, 3, 10);
    auto ctx = encode(ex, Scheme::scalar);
    ctx.data.conservativeResize(3, ctx.data.cols() - 1);
    EXPECT_THROW(decode(ctx), ConfigError);
}

TEST(Decode, RandomRoundTripAllSchemes) {
    for (int k = 0; k < 1000; ++k) {
        const Scheme scheme = kAllSchemes[k % 5];
        const int n = 1 + k % 8;
        const int m = 1 + k % 4;
        const int N = 1 + (k * 7) % 40;
        const auto ex = random_example(scheme, n, m, N, 1000 + k);
        const auto ctx = encode(ex, scheme);
        ASSERT_EQ(static_cast<int>(ctx.target_positions.size()), N);
        const auto dec = decode(ctx);
        for (int t = 0; t < N; ++t) {
            ASSERT_EQ(dec.H_seq[t], ex.params.H_seq[t]);
            ASSERT_EQ(dec.y_seq[t], ex.traj.y_seq[t]);
            if (scheme == Scheme::control) ASSERT_EQ(dec.u_seq[t], ex.params.u_seq[t]);
        }
        if (dec.F) ASSERT_EQ(*dec.F, ex.params.F);
        if (dec.Q) ASSERT_EQ(*dec.Q, ex.params.Q);
        if (dec.r_diag) ASSERT_EQ(*dec.r_diag, Vector(ex.params.R.diagonal()));
        ASSERT_EQ(dec.F.has_value(), scheme != Scheme::scalar_no_params);
        ASSERT_EQ(dec.Q.has_value(), scheme != Scheme::scalar_no_cov);
    }
}
