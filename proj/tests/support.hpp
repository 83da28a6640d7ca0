#pragma once

#include <cmath>
#include <string>

#include "kficl/kficl.hpp"

namespace kficl::testing {

inline double rel_fro(const Matrix& a, const Matrix& b) {
    const double scale = std::max(b.norm(), 1.0);
    return (a - b).norm() / scale;
}

inline double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

/// Random SPD matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(int n, double lo, double hi, Rng& rng) {
    const Matrix U = sample_orthonormal(n, rng);
    Vector d(n);
    for (int i = 0; i < n; ++i) d(i) = uniform(lo, hi, rng);
    return symmetrize(U * d.asDiagonal() * U.transpose());
}

/// Scalar-measurement example from the default sampler, fixed horizon.
inline Example sampled_example(int n, int N, Strategy strategy, std::uint64_t seed,
                               double q_cap = 0.025, double r_cap = 0.025) {
    SamplerConfig cfg;
    cfg.n = n;
    cfg.strategy = strategy;
    cfg.sigma_q2 = CurriculumSchedule::constant(q_cap);
    cfg.sigma_r2 = CurriculumSchedule::constant(r_cap);
    cfg.context_length = CurriculumSchedule::constant(N);
    cfg.seed = seed;
    Rng rng = make_rng(seed);
    return sample_example(cfg, 0, rng, seed);
}

inline std::string golden(const std::string& name) { return std::string(KFICL_GOLDEN_DIR) + "/" + name; }

}  // namespace kficl::testing
