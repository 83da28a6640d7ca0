#pragma once

// Prompt-matrix encodings of an example.
//
// Column layouts (0-based, N steps, state dimension n):
//
//   scalar            rows n+1, cols 2n+2N+1
//                     row 0:    [0 ... 0 | 0 ... 0 | σ² | 0   y_1 | 0   y_2 | ... | 0   y_N]
//                     rows 1..: [   F    |    Q    | 0  | h_1 0   | h_2 0   | ... | h_N 0  ]
//   vector            rows m+mn: σ_j² and y_t^(j) on row j; F, Q and H_t^(1)ᵀ on the first
//                     n-row group; H_t^(j)ᵀ on group j. Same columns as scalar.
//   control           rows n+1, cols 2n+3N+2: [F | Q | σ² | 0 | h_1 u_1 y_1 | ... | h_N u_N y_N]
//   scalar-no-cov     scalar with the Q block and σ² zeroed
//   scalar-no-params  rows n+1, cols n+2N+1: [Q | σ² | h_1 y_1 | ... | h_N y_N]
//
// Model outputs are read at `target_positions`: the last input column of each
// step, immediately left of the column holding y_t.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kficl/common.hpp"
#include "kficl/ssm.hpp"

namespace kficl {

enum class Scheme { scalar, vector, control, scalar_no_cov, scalar_no_params };

inline constexpr Scheme kAllSchemes[] = {Scheme::scalar, Scheme::vector, Scheme::control,
                                         Scheme::scalar_no_cov, Scheme::scalar_no_params};

inline std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::scalar: return "scalar";
        case Scheme::vector: return "vector";
        case Scheme::control: return "control";
        case Scheme::scalar_no_cov: return "scalar-no-cov";
        case Scheme::scalar_no_params: return "scalar-no-params";
    }
    return "?";
}

inline Scheme parse_scheme(std::string_view name) {
    for (Scheme s : kAllSchemes) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("unknown context scheme '" + std::string(name) + "'");
}

struct ContextMatrix {
    Matrix data;
    Scheme scheme = Scheme::scalar;
    int n = 0;
    int m = 0;
    int N = 0;
    std::vector<int> target_positions;
};

/// Geometry of a scheme for given dimensions.
struct ContextShape {
    int rows = 0;
    int cols = 0;
    int header_cols = 0;  ///< columns before the first step group
    int step_width = 0;   ///< columns per step (h [u] y)

    int h_col(int t) const { return header_cols + step_width * (t - 1); }
    int u_col(int t) const { return h_col(t) + 1; }
    int y_col(int t) const { return h_col(t) + step_width - 1; }
    int target_col(int t) const { return y_col(t) - 1; }
};

inline ContextShape context_shape(Scheme scheme, int n, int m, int N) {
    switch (scheme) {
        case Scheme::scalar:
        case Scheme::scalar_no_cov:
            return {n + 1, 2 * n + 2 * N + 1, 2 * n + 1, 2};
        case Scheme::vector:
            return {m + m * n, 2 * n + 2 * N + 1, 2 * n + 1, 2};
        case Scheme::control:
            return {n + 1, 2 * n + 3 * N + 2, 2 * n + 2, 3};
        case Scheme::scalar_no_params:
            return {n + 1, n + 2 * N + 1, n + 1, 2};
    }
    throw ConfigError("context_shape: unknown scheme");
}

namespace detail {

inline void check_scheme_dims(Scheme scheme, int n, int m, bool has_control) {
    if (n < 1 || m < 1) throw ConfigError("context: dimensions must be positive");
    if (scheme != Scheme::vector && m != 1) {
        throw ConfigError("context: scheme " + to_string(scheme) +
                          " requires scalar measurements, got m=" + std::to_string(m));
    }
    if (scheme == Scheme::control && !has_control) {
        throw ConfigError("context: control scheme requires B and u_seq");
    }
    if (scheme != Scheme::control && has_control) {
        throw ConfigError("context: scheme " + to_string(scheme) + " cannot carry control inputs");
    }
}

inline int sigma_col(Scheme scheme, int n) { return scheme == Scheme::scalar_no_params ? n : 2 * n; }

}  // namespace detail

inline ContextMatrix encode(const SystemParams& params, const std::vector<Vector>& y_seq,
                            Scheme scheme) {
    params.validate();
    const int n = params.n;
    const int m = params.m;
    const int N = static_cast<int>(y_seq.size());
    detail::check_scheme_dims(scheme, n, m, params.has_control());
    if (N < 1 || params.horizon() < N) {
        throw ConfigError("encode: need 1..H_seq observations, got " + std::to_string(N));
    }

    const ContextShape shape = context_shape(scheme, n, m, N);
    ContextMatrix ctx;
    ctx.scheme = scheme;
    ctx.n = n;
    ctx.m = m;
    ctx.N = N;
    ctx.data = Matrix::Zero(shape.rows, shape.cols);
    const int top = scheme == Scheme::vector ? m : 1;  // first row of the F/Q/H group

    const bool with_cov = scheme != Scheme::scalar_no_cov;
    const int sigma = detail::sigma_col(scheme, n);
    if (scheme == Scheme::scalar_no_params) {
        ctx.data.block(top, 0, n, n) = params.Q;
    } else {
        ctx.data.block(top, 0, n, n) = params.F;
        if (with_cov) ctx.data.block(top, n, n, n) = params.Q;
    }
    if (with_cov) {
        for (int j = 0; j < m; ++j) ctx.data(j, sigma) = params.R(j, j);
    }

    for (int t = 1; t <= N; ++t) {
        const Matrix& H = params.H_seq[static_cast<std::size_t>(t - 1)];
        const Vector& y = y_seq[static_cast<std::size_t>(t - 1)];
        if (y.size() != m) throw ConfigError("encode: y_" + std::to_string(t) + " has wrong length");
        for (int j = 0; j < m; ++j) {
            ctx.data.block(top + j * n, shape.h_col(t), n, 1) = H.row(j).transpose();
            ctx.data(j, shape.y_col(t)) = y(j);
        }
        if (scheme == Scheme::control) {
            ctx.data.block(top, shape.u_col(t), n, 1) = params.u_seq[static_cast<std::size_t>(t - 1)];
        }
        ctx.target_positions.push_back(shape.target_col(t));
    }
    return ctx;
}

inline ContextMatrix encode(const Example& ex, Scheme scheme) {
    return encode(ex.params, ex.traj.y_seq, scheme);
}

/// Fields recoverable from a context; withheld fields are empty.
struct DecodedContext {
    std::optional<Matrix> F;
    std::optional<Matrix> Q;
    std::optional<Vector> r_diag;
    std::vector<Matrix> H_seq;
    std::vector<Vector> u_seq;
    std::vector<Vector> y_seq;
};

inline DecodedContext decode(const ContextMatrix& ctx) {
    const int n = ctx.n;
    const int m = ctx.m;
    const int N = ctx.N;
    detail::check_scheme_dims(ctx.scheme, n, m, ctx.scheme == Scheme::control);
    if (N < 1) throw ConfigError("decode: context has no steps");
    const ContextShape shape = context_shape(ctx.scheme, n, m, N);
    if (ctx.data.rows() != shape.rows || ctx.data.cols() != shape.cols) {
        throw ConfigError("decode: " + to_string(ctx.scheme) + " context is " +
                          shape_str(ctx.data) + ", expected " +
                          shape_str(shape.rows, shape.cols));
    }
    const int top = ctx.scheme == Scheme::vector ? m : 1;
    const int sigma = detail::sigma_col(ctx.scheme, n);

    DecodedContext out;
    if (ctx.scheme == Scheme::scalar_no_params) {
        out.Q = ctx.data.block(top, 0, n, n);
    } else {
        out.F = ctx.data.block(top, 0, n, n);
        if (ctx.scheme != Scheme::scalar_no_cov) out.Q = ctx.data.block(top, n, n, n);
    }
    if (ctx.scheme != Scheme::scalar_no_cov) {
        Vector r(m);
        for (int j = 0; j < m; ++j) r(j) = ctx.data(j, sigma);
        out.r_diag = r;
    }
    for (int t = 1; t <= N; ++t) {
        Matrix H(m, n);
        Vector y(m);
        for (int j = 0; j < m; ++j) {
            H.row(j) = ctx.data.block(top + j * n, shape.h_col(t), n, 1).transpose();
            y(j) = ctx.data(j, shape.y_col(t));
        }
        out.H_seq.push_back(std::move(H));
        out.y_seq.push_back(std::move(y));
        if (ctx.scheme == Scheme::control) {
            out.u_seq.push_back(ctx.data.block(top, shape.u_col(t), n, 1));
        }
    }
    return out;
}

/// Zeroes the Q block and σ² entry of a scalar context.
inline ContextMatrix withhold_covariances(const ContextMatrix& ctx) {
    if (ctx.scheme != Scheme::scalar && ctx.scheme != Scheme::scalar_no_cov) {
        throw ConfigError("withhold_covariances: expected a scalar context, got " +
                          to_string(ctx.scheme));
    }
    ContextMatrix out = ctx;
    out.scheme = Scheme::scalar_no_cov;
    out.data.block(1, ctx.n, ctx.n, ctx.n).setZero();
    out.data(0, 2 * ctx.n) = 0.0;
    return out;
}

}  // namespace kficl
