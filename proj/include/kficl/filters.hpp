#pragma once

// Kalman filter recursions: matrix-gain, scalar-gain and row-sequential
// updates, control inputs, and the dual filter that jointly tracks the state
// and the (row-major) vectorised transition matrix.

#include <optional>
#include <sstream>
#include <vector>

#include "kficl/common.hpp"
#include "kficl/ssm.hpp"

namespace kficl {

/// Largest innovation-covariance condition number accepted by kf_update.
inline constexpr double kMaxInnovationCondition = 1e12;
/// Smallest scalar innovation variance accepted by the scalar updates.
inline constexpr double kMinScalarInnovation = 1e-14;

struct FilterState {
    enum class Phase { prior, posterior };

    Vector x_hat;
    Matrix P;
    int t = 0;
    Phase phase = Phase::posterior;

    /// Zero mean, identity covariance.
    static FilterState initial(int n) {
        return {Vector::Zero(n), Matrix::Identity(n, n), 0, Phase::posterior};
    }
};

struct Control {
    Matrix B;
    Vector u;
};

inline FilterState kf_predict(const FilterState& s, const Matrix& F, const Matrix& Q,
                              const std::optional<Control>& control = std::nullopt) {
    const auto n = s.x_hat.size();
    if (F.rows() != n || F.cols() != n) {
        throw ConfigError("kf_predict: F is " + shape_str(F) + ", state has length " +
                          std::to_string(n));
    }
    if (Q.rows() != n || Q.cols() != n) throw ConfigError("kf_predict: Q is " + shape_str(Q));
    if (s.P.rows() != n || s.P.cols() != n) throw ConfigError("kf_predict: P is " + shape_str(s.P));

    FilterState out;
    out.x_hat = F * s.x_hat;
    if (control) {
        if (control->B.rows() != n || control->B.cols() != control->u.size()) {
            throw ConfigError("kf_predict: B is " + shape_str(control->B) + ", u has length " +
                              std::to_string(control->u.size()));
        }
        out.x_hat += control->B * control->u;
    }
    out.P = symmetrize(F * s.P * F.transpose() + Q);
    out.t = s.t + 1;
    out.phase = FilterState::Phase::prior;
    return out;
}

inline FilterState kf_update(const FilterState& s, const Matrix& H, const Matrix& R,
                             const Vector& y) {
    const auto n = s.x_hat.size();
    const auto m = H.rows();
    if (H.cols() != n) throw ConfigError("kf_update: H is " + shape_str(H));
    if (R.rows() != m || R.cols() != m) throw ConfigError("kf_update: R is " + shape_str(R));
    if (y.size() != m) throw ConfigError("kf_update: y has length " + std::to_string(y.size()));

    const Matrix HP = H * s.P;
    const Matrix S = symmetrize(HP * H.transpose() + R);
    const double cond = condition_number(S);
    if (!(cond < kMaxInnovationCondition)) {
        std::ostringstream msg;
        msg << "kf_update: innovation covariance is near-singular (condition " << cond << ")";
        throw NumericalError(msg.str(), cond);
    }
    // K = P H^T S^{-1}, computed as (S^{-1} H P)^T since S and P are symmetric.
    const Matrix K = S.partialPivLu().solve(HP).transpose();

    FilterState out;
    out.x_hat = s.x_hat + K * (y - H * s.x_hat);
    out.P = symmetrize(s.P - K * HP);
    out.t = s.t;
    out.phase = FilterState::Phase::posterior;
    return out;
}

/// Scalar-measurement update: the gain is P h^T divided by h P h^T + sigma2.
inline FilterState kf_update_scalar(const FilterState& s, const RowVector& h, double sigma2,
                                    double y) {
    const auto n = s.x_hat.size();
    if (h.size() != n) throw ConfigError("kf_update_scalar: h has length " + std::to_string(h.size()));

    const Vector Ph = s.P * h.transpose();
    const double denom = h.dot(Ph) + sigma2;
    if (!(denom > kMinScalarInnovation)) {
        std::ostringstream msg;
        msg << "kf_update_scalar: innovation variance " << denom << " is not positive";
        throw NumericalError(msg.str(), std::numeric_limits<double>::infinity());
    }
    const Vector K = Ph / denom;

    FilterState out;
    out.x_hat = s.x_hat + K * (y - h.dot(s.x_hat));
    out.P = symmetrize(s.P - K * (h * s.P));
    out.t = s.t;
    out.phase = FilterState::Phase::posterior;
    return out;
}

/// Processes the rows of a diagonal-noise vector measurement one at a time.
inline FilterState kf_update_sequential(const FilterState& s, const Matrix& H, const Matrix& R,
                                        const Vector& y) {
    const auto m = H.rows();
    if (H.cols() != s.x_hat.size()) throw ConfigError("kf_update_sequential: H is " + shape_str(H));
    if (R.rows() != m || R.cols() != m || y.size() != m) {
        throw ConfigError("kf_update_sequential: R/y do not match H with " + std::to_string(m) +
                          " rows");
    }
    if (!(R - Matrix(R.diagonal().asDiagonal())).isZero(0.0)) {
        throw ConfigError("kf_update_sequential: R must be diagonal");
    }
    FilterState out = s;
    for (Eigen::Index j = 0; j < m; ++j) {
        out = kf_update_scalar(out, H.row(j), R(j, j), y(j));
    }
    return out;
}

/// ŷ = H_next (F x̂ + B u).
inline Vector predict_observation(const Vector& x_post, const Matrix& F, const Matrix& H_next,
                                  const std::optional<Control>& control = std::nullopt) {
    if (F.cols() != x_post.size() || H_next.cols() != F.rows()) {
        throw ConfigError("predict_observation: F is " + shape_str(F) + ", H is " +
                          shape_str(H_next) + ", state has length " +
                          std::to_string(x_post.size()));
    }
    Vector x = F * x_post;
    if (control) x += control->B * control->u;
    return H_next * x;
}

// =============================================================================
// Full forward pass
// =============================================================================

enum class UpdateForm { joint, sequential };

struct FilterOutput {
    std::vector<Vector> x_post;  ///< x̂⁺_0..x̂⁺_N
    std::vector<Matrix> P_post;  ///< P⁺_0..P⁺_N
    std::vector<Vector> x_prior; ///< x̂⁻_1..x̂⁻_N
    std::vector<Matrix> P_prior; ///< P⁻_1..P⁻_N
    std::vector<Vector> y_pred;  ///< ŷ_{t|1..t-1} for t = 1..N
};

inline std::optional<Control> control_at(const SystemParams& params, int t) {
    if (!params.B) return std::nullopt;
    return Control{*params.B, params.u_seq.at(static_cast<std::size_t>(t - 1))};
}

inline FilterOutput kf_run(const SystemParams& params, const std::vector<Vector>& y_seq,
                           UpdateForm form = UpdateForm::joint,
                           std::optional<FilterState> initial = std::nullopt) {
    params.validate();
    const int N = static_cast<int>(y_seq.size());
    if (params.horizon() < N) {
        throw ConfigError("kf_run: " + std::to_string(N) + " observations but only " +
                          std::to_string(params.horizon()) + " measurement matrices");
    }
    FilterState s = initial.value_or(FilterState::initial(params.n));

    FilterOutput out;
    out.x_post.push_back(s.x_hat);
    out.P_post.push_back(s.P);
    for (int t = 1; t <= N; ++t) {
        const Matrix& H = params.H_seq[static_cast<std::size_t>(t - 1)];
        const Vector& y = y_seq[static_cast<std::size_t>(t - 1)];
        s = kf_predict(s, params.F, params.Q, control_at(params, t));
        out.x_prior.push_back(s.x_hat);
        out.P_prior.push_back(s.P);
        out.y_pred.push_back(H * s.x_hat);
        s = form == UpdateForm::joint ? kf_update(s, H, params.R, y)
                                      : kf_update_sequential(s, H, params.R, y);
        out.x_post.push_back(s.x_hat);
        out.P_post.push_back(s.P);
    }
    return out;
}

// =============================================================================
// Dual Kalman filter
// =============================================================================

struct DualFilterState {
    FilterState state;
    Vector f_hat;  ///< row-major vec of the transition-matrix estimate
    Matrix P_f;

    /// x̂ = 0, P = I, f̂ = vec(I), P_f = I.
    static DualFilterState initial(int n) {
        return {FilterState::initial(n), vec_row_major(Matrix::Identity(n, n)),
                Matrix::Identity(n * n, n * n)};
    }

    Matrix F_hat() const {
        const auto n = state.x_hat.size();
        return unvec_row_major(f_hat, n, n);
    }
};

/// The n x n² regressor with x̂ᵀ on each block row, so that X vec(F) = F x̂.
inline Matrix regressor_blocks(const Vector& x) {
    const auto n = x.size();
    Matrix X = Matrix::Zero(n, n * n);
    for (Eigen::Index i = 0; i < n; ++i) X.block(i, i * n, 1, n) = x.transpose();
    return X;
}

/// One scalar-measurement step. The state filter runs with the current
/// transition estimate; the transition filter then regresses y on
/// H_f = h X(x̂⁺_{t-1}) with noise variance h Q hᵀ + sigma2.
inline DualFilterState dual_kf_step(const DualFilterState& s, const RowVector& h, double sigma2,
                                    const Matrix& Q, double y) {
    const auto n = s.state.x_hat.size();
    if (h.size() != n) throw ConfigError("dual_kf_step: h has length " + std::to_string(h.size()));
    if (s.f_hat.size() != n * n || s.P_f.rows() != n * n || s.P_f.cols() != n * n) {
        throw ConfigError("dual_kf_step: transition estimate does not match state dimension");
    }

    DualFilterState out;
    const FilterState prior = kf_predict(s.state, s.F_hat(), Q);
    out.state = kf_update_scalar(prior, h, sigma2, y);

    const RowVector Hf = h * regressor_blocks(s.state.x_hat);
    const Vector PHt = s.P_f * Hf.transpose();
    const double r_f = h.dot(Q * h.transpose()) + sigma2;
    const double denom = Hf.dot(PHt) + r_f;
    if (!(denom > kMinScalarInnovation)) {
        std::ostringstream msg;
        msg << "dual_kf_step: transition innovation variance " << denom << " is not positive";
        throw NumericalError(msg.str(), std::numeric_limits<double>::infinity());
    }
    const Vector Kf = PHt / denom;
    out.f_hat = s.f_hat + Kf * (y - Hf.dot(s.f_hat));
    out.P_f = symmetrize(s.P_f - Kf * (Hf * s.P_f));
    return out;
}

struct DualFilterOutput {
    std::vector<DualFilterState> states;  ///< index 0 is the initial state
    std::vector<double> y_pred;           ///< ŷ_{t|1..t-1} = h_t F̂_{t-1} x̂⁺_{t-1}
};

/// Runs the dual filter over a scalar-measurement system; params.F is unused.
inline DualFilterOutput dual_kf_run(const SystemParams& params, const std::vector<Vector>& y_seq,
                                    std::optional<DualFilterState> initial = std::nullopt) {
    if (params.m != 1) throw ConfigError("dual_kf_run: requires scalar measurements");
    if (params.B) throw ConfigError("dual_kf_run: control inputs are not supported");
    const int N = static_cast<int>(y_seq.size());
    if (params.horizon() < N) throw ConfigError("dual_kf_run: too few measurement matrices");

    DualFilterOutput out;
    out.states.push_back(initial.value_or(DualFilterState::initial(params.n)));
    for (int t = 1; t <= N; ++t) {
        const auto& prev = out.states.back();
        const RowVector h = params.H_seq[static_cast<std::size_t>(t - 1)].row(0);
        out.y_pred.push_back(h.dot(prev.F_hat() * prev.state.x_hat));
        out.states.push_back(
            dual_kf_step(prev, h, params.R(0, 0), params.Q, y_seq[static_cast<std::size_t>(t - 1)](0)));
    }
    return out;
}

}  // namespace kficl
