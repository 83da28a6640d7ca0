#pragma once

// Random system generation: Haar orthonormal matrices, the two transition
// matrix strategies, noise covariances, control matrices, and the training
// curricula that ramp their parameters.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kficl/common.hpp"
#include "kficl/ssm.hpp"

namespace kficl {

// =============================================================================
// Curriculum schedules
// =============================================================================

class CurriculumSchedule {
public:
    enum class Kind { constant, linear_ramp, staircase };

    static CurriculumSchedule constant(double value) {
        CurriculumSchedule s;
        s.kind_ = Kind::constant;
        s.start_ = s.end_ = value;
        return s;
    }

    /// Linear interpolation from `start` to `end` over `ramp_steps`, then held.
    static CurriculumSchedule linear_ramp(double start, double end, std::int64_t ramp_steps) {
        if (ramp_steps < 0) throw RangeError("linear_ramp: ramp_steps must be nonnegative");
        if (end < start) throw RangeError("linear_ramp: end must not be below start");
        CurriculumSchedule s;
        s.kind_ = Kind::linear_ramp;
        s.start_ = start;
        s.end_ = end;
        s.ramp_steps_ = ramp_steps;
        return s;
    }

    /// `start`, raised by `increment` every `period` steps until it reaches `cap`.
    static CurriculumSchedule staircase(double start, double increment, std::int64_t period,
                                        double cap) {
        if (period <= 0) throw RangeError("staircase: period must be positive");
        if (increment < 0.0 || cap < start) throw RangeError("staircase: must be nondecreasing");
        CurriculumSchedule s;
        s.kind_ = Kind::staircase;
        s.start_ = start;
        s.end_ = cap;
        s.increment_ = increment;
        s.period_ = period;
        s.ramp_steps_ =
            increment > 0.0
                ? static_cast<std::int64_t>(std::ceil((cap - start) / increment)) * period
                : 0;
        return s;
    }

    double value(std::int64_t step) const {
        if (step < 0) step = 0;
        switch (kind_) {
            case Kind::constant:
                return start_;
            case Kind::linear_ramp:
                if (step >= ramp_steps_ || ramp_steps_ == 0) return end_;
                return start_ + (end_ - start_) * static_cast<double>(step) /
                                    static_cast<double>(ramp_steps_);
            case Kind::staircase:
                return std::min(end_, start_ + increment_ * static_cast<double>(step / period_));
        }
        return end_;
    }

    Kind kind() const { return kind_; }
    double start_value() const { return start_; }
    double end_value() const { return end_; }
    std::int64_t ramp_steps() const { return ramp_steps_; }
    double increment() const { return increment_; }
    std::int64_t period() const { return period_; }

private:
    Kind kind_ = Kind::constant;
    double start_ = 0.0;
    double end_ = 0.0;
    std::int64_t ramp_steps_ = 0;
    double increment_ = 0.0;
    std::int64_t period_ = 1;
};

/// Training curricula: noise caps ramp to 0.025 over 100000 steps, alpha to 1
/// over 50000 steps, context length from 10 by 2 every 2000 steps up to 40.
namespace curricula {
inline CurriculumSchedule noise_cap() { return CurriculumSchedule::linear_ramp(0.0, 0.025, 100000); }
inline CurriculumSchedule alpha() { return CurriculumSchedule::linear_ramp(0.0, 1.0, 50000); }
inline CurriculumSchedule context_length() { return CurriculumSchedule::staircase(10, 2, 2000, 40); }
}  // namespace curricula

// =============================================================================
// Matrix samplers
// =============================================================================

/// Haar-distributed orthonormal matrix: QR of a standard Gaussian matrix with
/// the signs of R's diagonal folded into Q.
inline Matrix sample_orthonormal(int n, Rng& rng) {
    if (n < 1) throw ConfigError("sample_orthonormal: n must be positive");
    Matrix g = standard_normal(n, n, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix& r = qr.matrixQR();
    for (int j = 0; j < n; ++j) {
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    return q;
}

/// F = (1 - alpha) I + alpha U with U Haar orthonormal.
inline Matrix sample_F_strategy1(int n, double alpha, Rng& rng) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw RangeError("sample_F_strategy1: alpha must lie in [0, 1], got " +
                         std::to_string(alpha));
    }
    Matrix u = sample_orthonormal(n, rng);
    return (1.0 - alpha) * Matrix::Identity(n, n) + alpha * u;
}

/// U diag(s) U^T.
inline Matrix conjugate_diagonal(const Matrix& u, const Vector& s) {
    return symmetrize(u * s.asDiagonal() * u.transpose());
}

/// U diag(s) U^T with s_i ~ U[-1, 1]; symmetric and stable.
inline Matrix sample_symmetric_unit_spectrum(int n, Rng& rng) {
    Matrix u = sample_orthonormal(n, rng);
    Vector s(n);
    for (int i = 0; i < n; ++i) s(i) = uniform(-1.0, 1.0, rng);
    return conjugate_diagonal(u, s);
}

inline Matrix sample_F_strategy2(int n, Rng& rng) { return sample_symmetric_unit_spectrum(n, rng); }

/// U diag(s) U^T with s_i ~ U[0, cap].
inline Matrix sample_covariance(int n, double sigma2_cap, Rng& rng) {
    if (!(sigma2_cap >= 0.0)) throw RangeError("sample_covariance: negative variance cap");
    Matrix u = sample_orthonormal(n, rng);
    Vector s(n);
    for (int i = 0; i < n; ++i) s(i) = uniform(0.0, sigma2_cap, rng);
    return conjugate_diagonal(u, s);
}

inline Matrix sample_R(int m, double sigma2_cap, Rng& rng) {
    if (m < 1) throw ConfigError("sample_R: m must be positive");
    if (!(sigma2_cap >= 0.0)) throw RangeError("sample_R: negative variance cap");
    Matrix r = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i) r(i, i) = uniform(0.0, sigma2_cap, rng);
    return r;
}

inline Matrix sample_B(int n, Rng& rng) { return sample_symmetric_unit_spectrum(n, rng); }

/// N controls drawn from N(0, I) and normalised to unit length.
inline std::vector<Vector> sample_controls(int n, int N, Rng& rng) {
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(N));
    for (int t = 0; t < N; ++t) {
        Vector u = standard_normal(n, rng);
        double norm = u.norm();
        // Redraw on the (measure-zero) all-zero sample.
        while (norm == 0.0) {
            u = standard_normal(n, rng);
            norm = u.norm();
        }
        out.push_back(u / norm);
    }
    return out;
}

// =============================================================================
// Example generation
// =============================================================================

enum class Strategy { rotation_blend = 1, symmetric = 2 };

struct SamplerConfig {
    int n = 8;
    int m = 1;
    Strategy strategy = Strategy::symmetric;
    CurriculumSchedule sigma_q2 = CurriculumSchedule::constant(0.025);
    CurriculumSchedule sigma_r2 = CurriculumSchedule::constant(0.025);
    /// Unset: a fresh alpha ~ U[0, 1] per example (evaluation); set: scheduled (training).
    std::optional<CurriculumSchedule> alpha;
    CurriculumSchedule context_length = CurriculumSchedule::constant(40);
    bool with_control = false;
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 1 || m < 1) throw ConfigError("SamplerConfig: n and m must be positive");
        if (strategy != Strategy::rotation_blend && strategy != Strategy::symmetric) {
            throw ConfigError("SamplerConfig: strategy must be 1 or 2");
        }
        if (sigma_q2.start_value() < 0.0 || sigma_r2.start_value() < 0.0) {
            throw RangeError("SamplerConfig: noise caps must be nonnegative");
        }
        if (alpha && (alpha->start_value() < 0.0 || alpha->end_value() > 1.0)) {
            throw RangeError("SamplerConfig: alpha must lie in [0, 1]");
        }
        if (context_length.start_value() < 1.0) {
            throw RangeError("SamplerConfig: context length must be at least 1");
        }
    }

    int horizon_at(std::int64_t step) const {
        return static_cast<int>(std::lround(context_length.value(step)));
    }
};

/// Draws one system and its trajectory with every schedule evaluated at
/// `step`. Stream order: F, Q, R, (B, u), H_1..H_N, x_0, noise.
inline Example sample_example(const SamplerConfig& cfg, std::int64_t step, Rng& rng,
                              std::uint64_t seed = 0) {
    cfg.validate();
    const int n = cfg.n;
    const int m = cfg.m;
    const int N = cfg.horizon_at(step);

    SystemParams p;
    p.n = n;
    p.m = m;
    if (cfg.strategy == Strategy::rotation_blend) {
        const double alpha = cfg.alpha ? cfg.alpha->value(step) : uniform(0.0, 1.0, rng);
        p.F = sample_F_strategy1(n, alpha, rng);
    } else {
        p.F = sample_F_strategy2(n, rng);
    }
    p.Q = sample_covariance(n, cfg.sigma_q2.value(step), rng);
    p.R = sample_R(m, cfg.sigma_r2.value(step), rng);
    if (cfg.with_control) {
        p.B = sample_B(n, rng);
        p.u_seq = sample_controls(n, N, rng);
    }
    p.H_seq.reserve(static_cast<std::size_t>(N));
    for (int t = 0; t < N; ++t) p.H_seq.push_back(standard_normal(m, n, rng));

    Example ex;
    ex.traj = simulate(p, N, rng, seed);
    ex.params = std::move(p);
    return ex;
}

/// `count` examples, example i drawn from substream (cfg.seed, i).
inline std::vector<Example> sample_batch(const SamplerConfig& cfg, std::int64_t step,
                                         std::size_t count) {
    cfg.validate();
    std::vector<Example> out(count);
    parallel_for(count, [&](std::size_t i) {
        const std::uint64_t seed = derive_seed(cfg.seed, i);
        Rng rng = make_rng(seed);
        out[i] = sample_example(cfg, step, rng, seed);
    });
    return out;
}

}  // namespace kficl
