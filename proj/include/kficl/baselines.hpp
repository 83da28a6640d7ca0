#pragma once

// Regression baselines that ignore the state dynamics: online least-squares
// SGD, ordinary least squares and ridge regression.

#include <sstream>

#include "kficl/common.hpp"

namespace kficl {

/// Stacked measurement rows and their observations.
struct RegressionProblem {
    Matrix H_bar;  ///< N x n, one measurement vector per row
    Vector Y;      ///< N

    RegressionProblem(Matrix h_bar, Vector y) : H_bar(std::move(h_bar)), Y(std::move(y)) {
        if (H_bar.rows() != Y.size()) {
            throw ConfigError("RegressionProblem: " + std::to_string(H_bar.rows()) + " rows but " +
                              std::to_string(Y.size()) + " observations");
        }
    }

    Eigen::Index dim() const { return H_bar.cols(); }
    Eigen::Index size() const { return H_bar.rows(); }
};

inline constexpr double kMaxGramCondition = 1e12;

struct SgdOptions {
    int passes = 1;
    /// Stop after a pass once the full-data gradient norm drops below this.
    double gradient_tolerance = 1e-8;
};

/// x̂ ← x̂ − 2α hᵀ(h x̂ − y), sweeping rows in order from x̂ = 0.
inline Vector sgd_estimate(const RegressionProblem& p, double alpha, SgdOptions opts = {}) {
    if (!(alpha > 0.0)) throw RangeError("sgd_estimate: learning rate must be positive");
    if (opts.passes < 1) throw RangeError("sgd_estimate: at least one pass is required");
    Vector x = Vector::Zero(p.dim());
    for (int pass = 0; pass < opts.passes; ++pass) {
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const auto h = p.H_bar.row(i);
            x -= 2.0 * alpha * (h.dot(x) - p.Y(i)) * h.transpose();
        }
        if (p.size() == 0) break;
        const Vector grad = 2.0 * p.H_bar.transpose() * (p.H_bar * x - p.Y);
        if (grad.norm() < opts.gradient_tolerance) break;
    }
    return x;
}

/// Least squares via column-pivoted QR of H̄; rejects rank-deficient designs.
inline Vector ols_estimate(const RegressionProblem& p) {
    const double cond = p.size() < p.dim() ? std::numeric_limits<double>::infinity()
                                           : condition_number(p.H_bar);
    const double gram_cond = cond * cond;
    if (!(gram_cond < kMaxGramCondition)) {
        std::ostringstream msg;
        msg << "ols_estimate: design is rank-deficient (Gram condition " << gram_cond << ")";
        throw NumericalError(msg.str(), gram_cond);
    }
    return p.H_bar.colPivHouseholderQr().solve(p.Y);
}

/// (H̄ᵀH̄ + λI)⁻¹H̄ᵀȲ, solved as least squares on H̄ stacked over √λ I.
inline Vector ridge_estimate(const RegressionProblem& p, double lambda) {
    if (!(lambda >= 0.0)) throw RangeError("ridge_estimate: lambda must be nonnegative");
    if (lambda == 0.0) return ols_estimate(p);
    const auto n = p.dim();
    Matrix A(p.size() + n, n);
    A << p.H_bar, std::sqrt(lambda) * Matrix::Identity(n, n);
    Vector b(p.size() + n);
    b << p.Y, Vector::Zero(n);
    return A.householderQr().solve(b);
}

/// Minimum-norm least-squares solution; defined for any design.
inline Vector min_norm_estimate(const RegressionProblem& p) {
    if (p.size() == 0) return Vector::Zero(p.dim());
    return p.H_bar.completeOrthogonalDecomposition().solve(p.Y);
}

}  // namespace kficl
