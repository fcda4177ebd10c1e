#pragma once

#include "covtest/data_io.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string_view>
#include <vector>

namespace covtest {

/// Strictly increasing interior knots for a degree-`degree` truncated
/// power basis.
struct KnotSet {
    std::vector<double> knots;
    int degree = 1;

    int size() const noexcept { return static_cast<int>(knots.size()); }
};

/// Knot k (1-based) is the order statistic at index ceil(k n / (K + 1)) of
/// the n sorted distinct values of t. Fails if t has fewer than K + 1
/// distinct values.
KnotSet place_knots(const VectorXd& t, int n_knots, int degree);

/// (t - knot)_+^degree with a strict inequality: t == knot gives 0.
double truncated_power(double t, double knot, int degree);

/// Mixed-model design of a degree-d penalized spline.
///   A: n x (d+1) polynomial basis (1, t, ..., t^d)
///   B: n x K truncated power basis
///   X: [S | A]
struct DesignMatrices {
    MatrixXd A;
    MatrixXd B;
    MatrixXd X;
    int degree = 1;
    Eigen::Index p = 0;

    Eigen::Index fixed_cols() const noexcept { return X.cols(); }

    /// [S | 1, t, ..., t^(d-h)], the null design when the top h polynomial
    /// coefficients are dropped.
    MatrixXd reduced_X(int h) const;
};

/// Polynomial basis columns 1, t, ..., t^degree.
MatrixXd polynomial_basis(const VectorXd& t, int degree);

MatrixXd truncated_power_basis(const VectorXd& t, const KnotSet& knots);

/// Throws a model error if X is rank deficient.
DesignMatrices build_design(const Dataset& d, const KnotSet& knots);

/// Same, with S and t given directly.
DesignMatrices build_design(const MatrixXd& S, const VectorXd& t, const KnotSet& knots);

// -------------------------------------------------------------------------
// Smoother kernels for the score test
// -------------------------------------------------------------------------

enum class KernelKind { penalized_gram, natural_spline };

std::string_view kernel_name(KernelKind k) noexcept;
KernelKind parse_kernel(std::string_view name);

struct SmootherKernel {
    MatrixXd M;
    KernelKind kind = KernelKind::natural_spline;
};

/// Reproducing kernel of the order-d Wiener process prior,
///   R(s, u) = int_0^min(s,u) (s - w)^d (u - w)^d dw / (d!)^2,
/// evaluated in closed form. For d = 1 this is the cubic smoothing spline
/// kernel s u m - (s + u) m^2 / 2 + m^3 / 3 with m = min(s, u).
double spline_kernel(double s, double u, int degree);

/// penalized_gram: M = B B^T from `knots`.
/// natural_spline: M(i, j) = R(u_i, u_j) with u = t mapped onto [0, 1].
/// Every construction is checked to be symmetric PSD within
/// 1e-8 * ||M||; a violation is an internal error.
SmootherKernel smoother_kernel(const VectorXd& t, int degree, KernelKind kind,
                               const std::optional<KnotSet>& knots = std::nullopt);

}  // namespace covtest
