#pragma once

#include "covtest/data_io.hpp"
#include "covtest/spline_basis.hpp"

#include <string>
#include <vector>

namespace covtest {

/// sigma2_eps I + sigma2_b Z Z^T for a random-intercept model; Z is the
/// cluster indicator matrix (absent for independent data).
struct CovarianceModel {
    double sigma2_eps = 1.0;
    double sigma2_b = 0.0;
    std::vector<int> cluster;  // empty: independent rows
    int n_clusters = 0;

    MatrixXd dense(Eigen::Index n) const;
    MatrixXd dense_inverse(Eigen::Index n) const;
    VectorXd solve(const VectorXd& r) const;
    double condition_number() const;
};

enum class VarianceCriterion { reml, ml };

struct NullFit {
    VectorXd beta;
    double sigma2_eps = 0.0;
    double sigma2_b = 0.0;
    CovarianceModel cov;
    double loglik = 0.0;             // -1/2 log|V| - 1/2 r^T V^-1 r
    double restricted_loglik = 0.0;  // loglik - 1/2 log|X^T V^-1 X|
    VectorXd fitted;
    VectorXd residuals;
    int iterations = 0;
    std::vector<std::string> warnings;

    MatrixXd covariance() const { return cov.dense(residuals.size()); }
};

/// OLS under the polynomial null. sigma2_eps uses the n - q divisor.
/// Rank deficiency is a model error; an exact fit is a degenerate error.
NullFit fit_ols(const VectorXd& y, const MatrixXd& X);
NullFit fit_ols(const Dataset& d, const DesignMatrices& design);

/// Gaussian random-intercept fit. The variance ratio sigma2_b / sigma2_eps
/// is profiled on a log grid over [1e-8, 1e8] plus the boundary 0, then
/// refined by golden-section search in log ratio. sigma2_b = 0 is a valid
/// answer.
NullFit fit_reml_random_intercept(const Dataset& d, const MatrixXd& X,
                                  VarianceCriterion criterion = VarianceCriterion::reml);
NullFit fit_reml_random_intercept(const Dataset& d, const DesignMatrices& design,
                                  VarianceCriterion criterion = VarianceCriterion::reml);

/// Restricted log-likelihood at explicit variance components; exposed for
/// tests and diagnostics.
double restricted_loglik(const VectorXd& y, const MatrixXd& X, const CovarianceModel& cov);

/// P = V^-1 - V^-1 X (X^T V^-1 X)^-1 X^T V^-1, so that P X = 0 and P V P = P.
struct RemlProjection {
    MatrixXd P;
};

/// Fails with a numerical error when cond(V) > 1e12.
RemlProjection reml_projection(const NullFit& fit, const MatrixXd& X);

}  // namespace covtest
