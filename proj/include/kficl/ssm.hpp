#pragma once

// Linear-Gaussian state-space model and trajectory simulation.
//
//   x_t = F x_{t-1} + B u_t + q_t,   q_t ~ N(0, Q)
//   y_t = H_t x_t + r_t,             r_t ~ N(0, R),  R diagonal
//
// for t = 1..N. The control u_t is the one presented alongside H_t, so it is
// known when y_t is predicted.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kficl/common.hpp"

namespace kficl {

struct SystemParams {
    int n = 0;  ///< state dimension
    int m = 0;  ///< measurement dimension
    Matrix F;
    Matrix Q;
    Matrix R;  ///< diagonal m x m
    std::vector<Matrix> H_seq;
    std::optional<Matrix> B;
    std::vector<Vector> u_seq;

    int horizon() const { return static_cast<int>(H_seq.size()); }
    bool has_control() const { return B.has_value(); }

    /// Checks shapes and the covariance invariants. Throws ConfigError naming
    /// the offending matrix.
    void validate() const {
        if (n < 1 || m < 1) {
            throw ConfigError("SystemParams: dimensions must be positive, got n=" +
                              std::to_string(n) + " m=" + std::to_string(m));
        }
        auto expect = [](const Matrix& a, int rows, int cols, const std::string& name) {
            if (a.rows() != rows || a.cols() != cols) {
                throw ConfigError("SystemParams: " + name + " is " + shape_str(a) +
                                  ", expected " + shape_str(rows, cols));
            }
        };
        expect(F, n, n, "F");
        expect(Q, n, n, "Q");
        expect(R, m, m, "R");
        for (std::size_t t = 0; t < H_seq.size(); ++t) {
            expect(H_seq[t], m, n, "H_" + std::to_string(t + 1));
        }
        if (max_asymmetry(Q) > 1e-12) throw ConfigError("SystemParams: Q is not symmetric");
        if (min_eigenvalue(Q) < -1e-10) {
            throw ConfigError("SystemParams: Q is not positive semidefinite");
        }
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                if (i != j && R(i, j) != 0.0) throw ConfigError("SystemParams: R is not diagonal");
            }
            if (R(i, i) < 0.0) throw ConfigError("SystemParams: R has a negative variance");
        }
        if (B) {
            expect(*B, n, n, "B");
            if (u_seq.size() != H_seq.size()) {
                throw ConfigError("SystemParams: u_seq has " + std::to_string(u_seq.size()) +
                                  " entries but H_seq has " + std::to_string(H_seq.size()));
            }
        }
        for (std::size_t t = 0; t < u_seq.size(); ++t) {
            if (u_seq[t].size() != n) {
                throw ConfigError("SystemParams: u_" + std::to_string(t + 1) + " has length " +
                                  std::to_string(u_seq[t].size()) + ", expected " +
                                  std::to_string(n));
            }
        }
    }

    /// Control contribution B u_t for 1-based step t (zero without controls).
    Vector control_term(int t) const {
        if (!B) return Vector::Zero(n);
        return *B * u_seq.at(static_cast<std::size_t>(t - 1));
    }
};

/// Noise draws recorded during simulation; index t-1 holds q_t and r_t.
struct NoiseRecord {
    std::vector<Vector> process;
    std::vector<Vector> measurement;
};

struct Trajectory {
    std::vector<Vector> x_seq;  ///< x_0..x_N
    std::vector<Vector> y_seq;  ///< y_1..y_N
    std::shared_ptr<const SystemParams> params;
    std::uint64_t seed = 0;
    NoiseRecord noise;

    int horizon() const { return static_cast<int>(y_seq.size()); }
};

namespace detail {

/// Square-root factor L with L L^T = cov. Falls back to a symmetric
/// eigen-decomposition when the Cholesky factorisation breaks down on a
/// semidefinite matrix.
inline Matrix covariance_factor(const Matrix& cov) {
    if (cov.isZero(0.0)) return Matrix::Zero(cov.rows(), cov.cols());
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(cov));
    Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

}  // namespace detail

/// Simulates N steps from x0. Process noise is drawn before measurement
/// noise at every step, so the stream layout is fixed for a given (n, m, N).
inline Trajectory simulate(const SystemParams& params, const Vector& x0, int N, Rng& rng,
                           std::uint64_t seed = 0) {
    if (N < 1) throw ConfigError("simulate: horizon must be at least 1");
    params.validate();
    if (params.horizon() < N) {
        throw ConfigError("simulate: H_seq has " + std::to_string(params.horizon()) +
                          " matrices, need " + std::to_string(N));
    }
    if (params.B && static_cast<int>(params.u_seq.size()) < N) {
        throw ConfigError("simulate: u_seq shorter than horizon");
    }
    if (x0.size() != params.n) {
        throw ConfigError("simulate: x0 has length " + std::to_string(x0.size()) +
                          ", expected " + std::to_string(params.n));
    }

    const Matrix q_factor = detail::covariance_factor(params.Q);
    const Vector r_scale = params.R.diagonal().cwiseSqrt();

    Trajectory traj;
    traj.seed = seed;
    traj.params = std::make_shared<const SystemParams>(params);
    traj.x_seq.reserve(static_cast<std::size_t>(N) + 1);
    traj.y_seq.reserve(static_cast<std::size_t>(N));
    traj.x_seq.push_back(x0);

    for (int t = 1; t <= N; ++t) {
        Vector q = q_factor * standard_normal(params.n, rng);
        Vector r = r_scale.cwiseProduct(standard_normal(params.m, rng));
        Vector x = params.F * traj.x_seq.back() + params.control_term(t) + q;
        Vector y = params.H_seq[static_cast<std::size_t>(t - 1)] * x + r;
        traj.noise.process.push_back(std::move(q));
        traj.noise.measurement.push_back(std::move(r));
        traj.x_seq.push_back(std::move(x));
        traj.y_seq.push_back(std::move(y));
    }
    return traj;
}

/// As above with x0 drawn from N(0, I) out of the same stream.
inline Trajectory simulate(const SystemParams& params, int N, Rng& rng, std::uint64_t seed = 0) {
    if (params.n < 1) throw ConfigError("simulate: state dimension must be positive");
    Vector x0 = standard_normal(params.n, rng);
    return simulate(params, x0, N, rng, seed);
}

/// One sampled system together with its simulated trajectory.
struct Example {
    SystemParams params;
    Trajectory traj;
};

}  // namespace kficl
