#pragma once

#include "covtest/data_io.hpp"
#include "covtest/spline_basis.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace covtest {

enum class LrtKind { lrt, rlrt };

std::string_view lrt_kind_name(LrtKind k) noexcept;

// -------------------------------------------------------------------------
// Spectral summary of the design
// -------------------------------------------------------------------------

/// Eigenvalues of B^T P0 B (mu) and B^T B (zeta), both descending, with
/// P0 = I - X (X^T X)^-1 X^T. The eigenvalues below 1e-12 * max are
/// clamped to zero. These numbers together with the dimensions fully
/// determine the finite-sample null law of the LRT and RLRT.
struct SpectralCache {
    VectorXd mu;
    VectorXd zeta;
    int m = 0;  // sample size
    int p = 0;  // parametric covariates
    int d = 1;  // spline degree
    int K = 0;  // knots

    /// m - p - d - 1: dimension of the orthogonal complement of col(X).
    int residual_dim() const noexcept { return m - p - d - 1; }
};

SpectralCache spectral_decompose(const DesignMatrices& design);

/// Spectral summary for an explicit (B, X) pair. `p` is the parametric
/// covariate count used for the residual dimension; it may differ from
/// X.cols() - d - 1 when X omits covariates on purpose.
SpectralCache spectral_decompose(const MatrixXd& B, const MatrixXd& X, int p, int d);

/// Grid of smoothing parameters, starting at exactly 0, strictly increasing.
struct LambdaGrid {
    std::vector<double> values;
};

/// {0} plus `points` log-spaced values on [lo, hi] divided by mean(zeta).
LambdaGrid make_grid(const SpectralCache& cache, int points = 200, double lo = 1e-6, double hi = 1e8);

/// Validates and wraps an explicit grid.
LambdaGrid make_grid(std::vector<double> values);

struct ProfileTerms {
    double N = 0.0;
    double D = 0.0;
    double f = 0.0;
};

/// N(lambda) = sum lambda mu_s w_s^2 / (1 + lambda mu_s)
/// D(lambda) = sum w_s^2 / (1 + lambda mu_s) + tail
/// LRT:  f = m log(1 + N/D) - sum log(1 + lambda zeta_s)
/// RLRT: f = (m - p - d - 1) log(1 + N/D) - sum log(1 + lambda mu_s)
/// f(0) is exactly 0.
ProfileTerms profile_terms(const SpectralCache& cache, std::span<const double> w2, double tail, double lambda,
                           LrtKind kind = LrtKind::lrt);

/// Data version of the squared projections entering profile_terms:
/// w2[s] = (u_s^T B^T P0 y)^2 / mu_s for the eigenvectors u_s of B^T P0 B,
/// tail = y^T P0 y - sum w2. With these, profile_terms reproduces the
/// profiled (restricted) likelihood ratio of the observed data.
struct SpectralData {
    VectorXd w2;
    double tail = 0.0;
};

SpectralData spectral_data(const DesignMatrices& design, const VectorXd& y);

// -------------------------------------------------------------------------
// Null distribution
// -------------------------------------------------------------------------

struct NullDistribution {
    std::vector<double> samples;
    LrtKind kind = LrtKind::lrt;
    int h = 0;
    double zero_mass = 0.0;  // #{samples <= 1e-12} / n_sims
    std::uint64_t seed = 0;
    LambdaGrid grid;
    SpectralCache cache;

    std::size_t n_sims() const noexcept { return samples.size(); }
};

inline constexpr double zero_tolerance = 1e-12;

/// Draws n_sims replicates of the exact finite-sample null statistic.
/// Replicate r uses the stream (seed, r), so the result does not depend on
/// `threads`.
NullDistribution simulate_null(const SpectralCache& cache, LrtKind kind, int h, const LambdaGrid& grid,
                               std::size_t n_sims, std::uint64_t seed, int threads = 1);

/// Add-one Monte Carlo p-value (1 + #{samples >= observed}) / (1 + n).
double p_value(double observed, const NullDistribution& null);

// -------------------------------------------------------------------------
// Observed statistics
// -------------------------------------------------------------------------

/// Profiled Gaussian likelihood of y = X beta + B a + e with
/// V(lambda) = sigma^2 (I + lambda B B^T). beta and sigma^2 are profiled in
/// closed form by GLS; V(lambda)^-1 is applied through the Woodbury identity
/// on the eigenbasis of B^T B. Additive constants common to all lambda are
/// dropped.
class ProfileLikelihood {
public:
    ProfileLikelihood(const VectorXd& y, const MatrixXd& X, const MatrixXd& B);

    struct Value {
        double ml = 0.0;
        double reml = 0.0;
        double sigma2_ml = 0.0;
        double sigma2_reml = 0.0;
    };

    Value at(double lambda) const;

private:
    Eigen::Index n_;
    Eigen::Index q_;
    VectorXd zeta_;
    MatrixXd gram_;  // [X|y]^T [X|y]
    MatrixXd G_;     // (B U)^T [X|y]
};

/// Method tag, statistic and p-value plus whatever nuisance estimates and
/// provenance the method produced. Shared by every test in the library.
struct TestResult {
    std::string method;
    double statistic = 0.0;
    double p_value = 1.0;
    std::optional<double> lambda_hat;
    double sigma2_eps = 0.0;
    double sigma2_b = 0.0;
    VectorXd beta;
    std::map<std::string, double> details;
    std::map<std::string, std::string> provenance;
    std::vector<std::string> notes;
};

/// 2 sup_lambda l_alt(lambda) - 2 l_null over the grid, clamped at 0.
/// LRT: the null drops the top h polynomial coefficients and the spline.
/// RLRT: restricted likelihoods; only h = 0 is defined.
TestResult observed_statistic(const Dataset& d, const DesignMatrices& design, LrtKind kind, int h,
                              const LambdaGrid& grid);

TestResult observed_statistic(const VectorXd& y, const DesignMatrices& design, LrtKind kind, int h,
                              const LambdaGrid& grid);

}  // namespace covtest
