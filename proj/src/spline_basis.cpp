#include "covtest/spline_basis.hpp"

#include "covtest/errors.hpp"

#include <algorithm>
#include <cmath>

namespace covtest {

KnotSet place_knots(const VectorXd& t, int n_knots, int degree)
{
    if (n_knots < 0) {
        fail(ErrorCategory::config, "number of knots must be non-negative");
    }
    if (degree < 0) {
        fail(ErrorCategory::config, "spline degree must be non-negative");
    }
    KnotSet ks;
    ks.degree = degree;
    if (n_knots == 0) {
        return ks;
    }
    std::vector<double> u(t.data(), t.data() + t.size());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    const auto n = static_cast<long long>(u.size());
    const long long K = n_knots;
    if (n < K + 1) {
        fail(ErrorCategory::config, "only " + std::to_string(n) + " distinct t values; knot quantiles collapse for K = " +
                                        std::to_string(K) + "; use a smaller K (at most " + std::to_string(std::max(0LL, n - 1)) + ")");
    }
    ks.knots.reserve(static_cast<std::size_t>(K));
    for (long long k = 1; k <= K; ++k) {
        long long idx = (k * n + K) / (K + 1);  // ceil(k n / (K + 1)), 1-based
        ks.knots.push_back(u[static_cast<std::size_t>(idx - 1)]);
    }
    for (std::size_t k = 1; k < ks.knots.size(); ++k) {
        if (!(ks.knots[k] > ks.knots[k - 1])) {
            fail(ErrorCategory::internal, "knot placement produced non-increasing knots");
        }
    }
    return ks;
}

double truncated_power(double t, double knot, int degree)
{
    if (t <= knot) {
        return 0.0;
    }
    return degree == 0 ? 1.0 : std::pow(t - knot, degree);
}

MatrixXd polynomial_basis(const VectorXd& t, int degree)
{
    MatrixXd A(t.size(), degree + 1);
    A.col(0).setOnes();
    for (int j = 1; j <= degree; ++j) {
        A.col(j) = A.col(j - 1).cwiseProduct(t);
    }
    return A;
}

MatrixXd truncated_power_basis(const VectorXd& t, const KnotSet& knots)
{
    MatrixXd B(t.size(), knots.size());
    for (int k = 0; k < knots.size(); ++k) {
        const double xi = knots.knots[static_cast<std::size_t>(k)];
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            B(i, k) = truncated_power(t(i), xi, knots.degree);
        }
    }
    return B;
}

MatrixXd DesignMatrices::reduced_X(int h) const
{
    if (h < 0 || h > degree) {
        fail(ErrorCategory::config, "h must lie in 0..degree");
    }
    MatrixXd X0(X.rows(), p + degree + 1 - h);
    X0 << X.leftCols(p), A.leftCols(degree + 1 - h);
    return X0;
}

DesignMatrices build_design(const MatrixXd& S, const VectorXd& t, const KnotSet& knots)
{
    const Eigen::Index n = t.size();
    if (S.cols() > 0 && S.rows() != n) {
        fail(ErrorCategory::data, "S and t have different row counts");
    }
    // Knots beyond the data are allowed (their columns are simply zero);
    // place_knots never produces them.
    for (std::size_t k = 0; k < knots.knots.size(); ++k) {
        if (!std::isfinite(knots.knots[k]) || (k > 0 && !(knots.knots[k] > knots.knots[k - 1]))) {
            fail(ErrorCategory::config, "knots must be finite and strictly increasing");
        }
    }
    DesignMatrices dm;
    dm.degree = knots.degree;
    dm.p = S.cols();
    dm.A = polynomial_basis(t, knots.degree);
    dm.B = truncated_power_basis(t, knots);
    dm.X.resize(n, dm.p + dm.A.cols());
    if (dm.p > 0) {
        dm.X.leftCols(dm.p) = S;
    }
    dm.X.rightCols(dm.A.cols()) = dm.A;

    // Under-determined designs (n < columns) are left to the fitting
    // routines, which require n > columns.
    if (n >= dm.X.cols()) {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(dm.X);
        if (qr.rank() < dm.X.cols()) {
            fail(ErrorCategory::model, "fixed-effects design X = [S|A] is rank deficient (rank " +
                                           std::to_string(qr.rank()) + " < " + std::to_string(dm.X.cols()) + ")");
        }
    }
    return dm;
}

DesignMatrices build_design(const Dataset& d, const KnotSet& knots)
{
    return build_design(d.S, d.t, knots);
}

std::string_view kernel_name(KernelKind k) noexcept
{
    return k == KernelKind::penalized_gram ? "penalized" : "natural";
}

KernelKind parse_kernel(std::string_view name)
{
    if (name == "penalized" || name == "penalized-gram") {
        return KernelKind::penalized_gram;
    }
    if (name == "natural" || name == "natural-spline-kernel") {
        return KernelKind::natural_spline;
    }
    fail(ErrorCategory::config, "unknown kernel '" + std::string(name) + "' (expected penalized|natural)");
}

double spline_kernel(double s, double u, int degree)
{
    // With a = min, b = max and x = a - w:
    //   int_0^a x^d (x + b - a)^d dx = sum_j C(d,j) (b-a)^(d-j) a^(d+j+1) / (d+j+1)
    // Every term is non-negative, so there is no cancellation.
    const double a = std::min(s, u);
    const double b = std::max(s, u);
    if (a <= 0.0) {
        return 0.0;
    }
    const double gap = b - a;
    double sum = 0.0;
    double binom = 1.0;
    for (int j = 0; j <= degree; ++j) {
        sum += binom * std::pow(gap, degree - j) * std::pow(a, degree + j + 1) / (degree + j + 1);
        binom = binom * (degree - j) / (j + 1);
    }
    double fact = 1.0;
    for (int k = 2; k <= degree; ++k) {
        fact *= k;
    }
    return sum / (fact * fact);
}

SmootherKernel smoother_kernel(const VectorXd& t, int degree, KernelKind kind, const std::optional<KnotSet>& knots)
{
    SmootherKernel k;
    k.kind = kind;
    const Eigen::Index n = t.size();
    if (kind == KernelKind::penalized_gram) {
        if (!knots) {
            fail(ErrorCategory::config, "penalized kernel requires knots");
        }
        MatrixXd B = truncated_power_basis(t, *knots);
        k.M = B * B.transpose();
    } else {
        const double lo = t.minCoeff();
        const double hi = t.maxCoeff();
        if (!(hi > lo)) {
            fail(ErrorCategory::config, "natural spline kernel needs a non-constant covariate t");
        }
        VectorXd u = (t.array() - lo) / (hi - lo);
        k.M.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                k.M(i, j) = k.M(j, i) = spline_kernel(u(i), u(j), degree);
            }
        }
    }

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(k.M, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) {
        fail(ErrorCategory::numerical, "eigensolver failed on smoother kernel");
    }
    const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (n > 0 && eig.eigenvalues().minCoeff() < -1e-8 * norm) {
        fail(ErrorCategory::internal, "smoother kernel is not positive semi-definite");
    }
    return k;
}

}  // namespace covtest
