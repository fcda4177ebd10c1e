#include "covtest/null_fit.hpp"

#include "covtest/errors.hpp"

#include <cmath>
#include <limits>

namespace covtest {

namespace {

std::vector<int> cluster_sizes(const CovarianceModel& cov)
{
    std::vector<int> sizes(static_cast<std::size_t>(cov.n_clusters), 0);
    for (int c : cov.cluster) {
        ++sizes[static_cast<std::size_t>(c)];
    }
    return sizes;
}

void check_perfect_fit(const VectorXd& y, const VectorXd& r)
{
    constexpr double rel = 64.0 * std::numeric_limits<double>::epsilon();
    const double yy = y.squaredNorm();
    if (yy == 0.0 || r.squaredNorm() <= rel * rel * yy) {
        fail(ErrorCategory::degenerate, "null model fits the response exactly (zero residual variance)");
    }
}

// Per-cluster sufficient statistics for the random-intercept profile.
struct ClusterSums {
    MatrixXd sx;  // n_clusters x q
    VectorXd sy;
    VectorXd size;
};

ClusterSums cluster_sums(const VectorXd& y, const MatrixXd& X, const std::vector<int>& cluster, int n_clusters)
{
    ClusterSums cs;
    cs.sx = MatrixXd::Zero(n_clusters, X.cols());
    cs.sy = VectorXd::Zero(n_clusters);
    cs.size = VectorXd::Zero(n_clusters);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        int c = cluster[static_cast<std::size_t>(i)];
        cs.sx.row(c) += X.row(i);
        cs.sy(c) += y(i);
        cs.size(c) += 1.0;
    }
    return cs;
}

struct ProfilePoint {
    double objective = -std::numeric_limits<double>::infinity();
    double sigma2 = 0.0;
    double log_det_V1 = 0.0;    // log|I + rho Z Z^T|
    double log_det_XVX1 = 0.0;  // log|X^T (I + rho Z Z^T)^-1 X|
    double rss = 0.0;           // r^T (I + rho Z Z^T)^-1 r
    VectorXd beta;
};

class RandomInterceptProfile {
public:
    RandomInterceptProfile(const VectorXd& y, const MatrixXd& X, const std::vector<int>& cluster, int n_clusters,
                           VarianceCriterion criterion)
        : y_(y), X_(X), cluster_(cluster), criterion_(criterion),
          sums_(cluster_sums(y, X, cluster, n_clusters)), XtX_(X.transpose() * X), Xty_(X.transpose() * y)
    {
    }

    ProfilePoint evaluate(double rho) const
    {
        const Eigen::Index n = y_.size();
        const Eigen::Index q = X_.cols();
        VectorXd c = (rho / (1.0 + rho * sums_.size.array())).matrix();

        MatrixXd XVX = XtX_ - sums_.sx.transpose() * c.asDiagonal() * sums_.sx;
        VectorXd XVy = Xty_ - sums_.sx.transpose() * c.cwiseProduct(sums_.sy);
        Eigen::LLT<MatrixXd> llt(XVX);
        ProfilePoint pt;
        if (llt.info() != Eigen::Success) {
            return pt;
        }
        pt.beta = llt.solve(XVy);
        VectorXd r = y_ - X_ * pt.beta;
        VectorXd rsum = VectorXd::Zero(sums_.size.size());
        for (Eigen::Index i = 0; i < n; ++i) {
            rsum(cluster_[static_cast<std::size_t>(i)]) += r(i);
        }
        pt.rss = r.squaredNorm() - c.dot(rsum.cwiseAbs2());
        pt.log_det_V1 = (rho * sums_.size.array()).log1p().sum();
        pt.log_det_XVX1 = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        if (!(pt.rss > 0.0)) {
            return pt;
        }
        if (criterion_ == VarianceCriterion::reml) {
            pt.sigma2 = pt.rss / static_cast<double>(n - q);
            pt.objective = -0.5 * (static_cast<double>(n - q) * std::log(pt.sigma2) + pt.log_det_V1 + pt.log_det_XVX1);
        } else {
            pt.sigma2 = pt.rss / static_cast<double>(n);
            pt.objective = -0.5 * (static_cast<double>(n) * std::log(pt.sigma2) + pt.log_det_V1);
        }
        return pt;
    }

private:
    const VectorXd& y_;
    const MatrixXd& X_;
    const std::vector<int>& cluster_;
    VarianceCriterion criterion_;
    ClusterSums sums_;
    MatrixXd XtX_;
    VectorXd Xty_;
};

void finish_fit(NullFit& fit, const VectorXd& y, const MatrixXd& X)
{
    fit.fitted = X * fit.beta;
    fit.residuals = y - fit.fitted;
    fit.sigma2_eps = fit.cov.sigma2_eps;
    fit.sigma2_b = fit.cov.sigma2_b;

    const Eigen::Index n = y.size();
    double log_det_V = n * std::log(fit.cov.sigma2_eps);
    if (fit.cov.sigma2_b > 0.0) {
        const double rho = fit.cov.sigma2_b / fit.cov.sigma2_eps;
        for (int s : cluster_sizes(fit.cov)) {
            log_det_V += std::log1p(rho * s);
        }
    }
    const double quad = fit.residuals.dot(fit.cov.solve(fit.residuals));
    fit.loglik = -0.5 * log_det_V - 0.5 * quad;

    MatrixXd VinvX(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        VinvX.col(j) = fit.cov.solve(X.col(j));
    }
    Eigen::LLT<MatrixXd> llt(X.transpose() * VinvX);
    const double log_det_XVX = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    fit.restricted_loglik = fit.loglik - 0.5 * log_det_XVX;
}

void check_shapes(const VectorXd& y, const MatrixXd& X)
{
    if (X.rows() != y.size()) {
        fail(ErrorCategory::internal, "design and response lengths differ");
    }
    if (y.size() <= X.cols()) {
        fail(ErrorCategory::model, "need more observations (" + std::to_string(y.size()) +
                                       ") than fixed effects (" + std::to_string(X.cols()) + ")");
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
    if (qr.rank() < X.cols()) {
        fail(ErrorCategory::model, "null design is rank deficient");
    }
}

}  // namespace

// -------------------------------------------------------------------------
// CovarianceModel
// -------------------------------------------------------------------------

MatrixXd CovarianceModel::dense(Eigen::Index n) const
{
    MatrixXd V = sigma2_eps * MatrixXd::Identity(n, n);
    if (sigma2_b > 0.0) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (cluster[static_cast<std::size_t>(i)] == cluster[static_cast<std::size_t>(j)]) {
                    V(i, j) += sigma2_b;
                }
            }
        }
    }
    return V;
}

MatrixXd CovarianceModel::dense_inverse(Eigen::Index n) const
{
    MatrixXd Vi = MatrixXd::Identity(n, n) / sigma2_eps;
    if (sigma2_b > 0.0) {
        auto sizes = cluster_sizes(*this);
        for (Eigen::Index i = 0; i < n; ++i) {
            int ci = cluster[static_cast<std::size_t>(i)];
            double c = sigma2_b / (sigma2_eps + sigma2_b * sizes[static_cast<std::size_t>(ci)]) / sigma2_eps;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (cluster[static_cast<std::size_t>(j)] == ci) {
                    Vi(i, j) -= c;
                }
            }
        }
    }
    return Vi;
}

VectorXd CovarianceModel::solve(const VectorXd& r) const
{
    VectorXd out = r / sigma2_eps;
    if (sigma2_b > 0.0) {
        auto sizes = cluster_sizes(*this);
        VectorXd sums = VectorXd::Zero(n_clusters);
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            sums(cluster[static_cast<std::size_t>(i)]) += r(i);
        }
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            int ci = cluster[static_cast<std::size_t>(i)];
            double c = sigma2_b / (sigma2_eps + sigma2_b * sizes[static_cast<std::size_t>(ci)]);
            out(i) -= c * sums(ci) / sigma2_eps;
        }
    }
    return out;
}

double CovarianceModel::condition_number() const
{
    if (sigma2_b <= 0.0) {
        return 1.0;
    }
    int largest = 0;
    for (int s : cluster_sizes(*this)) {
        largest = std::max(largest, s);
    }
    return (sigma2_eps + sigma2_b * largest) / sigma2_eps;
}

// -------------------------------------------------------------------------
// Fits
// -------------------------------------------------------------------------

NullFit fit_ols(const VectorXd& y, const MatrixXd& X)
{
    check_shapes(y, X);
    NullFit fit;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
    fit.beta = qr.solve(y);
    VectorXd r = y - X * fit.beta;
    check_perfect_fit(y, r);
    fit.cov.sigma2_eps = r.squaredNorm() / static_cast<double>(y.size() - X.cols());
    fit.cov.sigma2_b = 0.0;
    finish_fit(fit, y, X);
    return fit;
}

NullFit fit_ols(const Dataset& d, const DesignMatrices& design)
{
    NullFit fit = fit_ols(d.y, design.X);
    if (d.cluster) {
        fit.cov.cluster = *d.cluster;
        fit.cov.n_clusters = d.n_clusters;
    }
    return fit;
}

NullFit fit_reml_random_intercept(const Dataset& d, const MatrixXd& X, VarianceCriterion criterion)
{
    if (!d.cluster) {
        fail(ErrorCategory::config, "random-intercept fit requires cluster labels");
    }
    if (d.n_clusters < 2) {
        fail(ErrorCategory::config, "random-intercept fit requires at least 2 clusters");
    }
    check_shapes(d.y, X);

    NullFit fit;
    fit.cov.cluster = *d.cluster;
    fit.cov.n_clusters = d.n_clusters;

    bool all_singletons = d.n_clusters == d.n();
    if (all_singletons) {
        NullFit ols = fit_ols(d.y, X);
        fit.beta = ols.beta;
        fit.cov.sigma2_eps = ols.cov.sigma2_eps;
        fit.cov.sigma2_b = 0.0;
        fit.warnings.push_back("all clusters have size 1: random-intercept variance is not identifiable, set to 0");
        finish_fit(fit, d.y, X);
        return fit;
    }

    RandomInterceptProfile profile(d.y, X, *d.cluster, d.n_clusters, criterion);

    constexpr int per_decade = 8;
    constexpr int lo_exp = -8 * per_decade;
    constexpr int hi_exp = 8 * per_decade;
    std::vector<double> log_grid;
    for (int k = lo_exp; k <= hi_exp; ++k) {
        log_grid.push_back(std::log(10.0) * k / per_decade);
    }

    ProfilePoint best = profile.evaluate(0.0);
    if (!std::isfinite(best.objective)) {
        check_perfect_fit(d.y, d.y - X * best.beta);
        fail(ErrorCategory::numerical, "restricted likelihood undefined at the boundary");
    }
    double best_rho = 0.0;
    std::size_t best_idx = log_grid.size();
    for (std::size_t k = 0; k < log_grid.size(); ++k) {
        ProfilePoint pt = profile.evaluate(std::exp(log_grid[k]));
        if (pt.objective > best.objective) {
            best = std::move(pt);
            best_rho = std::exp(log_grid[k]);
            best_idx = k;
        }
    }

    int iterations = static_cast<int>(log_grid.size()) + 1;
    if (best_idx < log_grid.size()) {
        // Golden-section search in log ratio between the grid neighbours.
        double a = log_grid[best_idx == 0 ? 0 : best_idx - 1];
        double b = log_grid[std::min(best_idx + 1, log_grid.size() - 1)];
        const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double x1 = b - inv_phi * (b - a);
        double x2 = a + inv_phi * (b - a);
        double f1 = profile.evaluate(std::exp(x1)).objective;
        double f2 = profile.evaluate(std::exp(x2)).objective;
        constexpr int max_iter = 200;
        constexpr double tol = 1e-10;
        int it = 0;
        while (b - a > tol && it < max_iter) {
            if (f1 < f2) {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = profile.evaluate(std::exp(x2)).objective;
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = profile.evaluate(std::exp(x1)).objective;
            }
            ++it;
        }
        iterations += it;
        if (b - a > tol) {
            fail(ErrorCategory::numerical, "variance-ratio search did not converge after " + std::to_string(it) +
                                               " iterations (bracket [" + std::to_string(a) + ", " +
                                               std::to_string(b) + "] in log ratio)");
        }
        double rho = std::exp(0.5 * (a + b));
        ProfilePoint refined = profile.evaluate(rho);
        if (refined.objective > best.objective) {
            best = std::move(refined);
            best_rho = rho;
        }
    }

    fit.beta = best.beta;
    fit.cov.sigma2_eps = best.sigma2;
    fit.cov.sigma2_b = best_rho * best.sigma2;
    fit.iterations = iterations;
    finish_fit(fit, d.y, X);
    if (criterion == VarianceCriterion::ml) {
        fit.warnings.push_back("variance components estimated by maximum likelihood");
    }
    return fit;
}

NullFit fit_reml_random_intercept(const Dataset& d, const DesignMatrices& design, VarianceCriterion criterion)
{
    return fit_reml_random_intercept(d, design.X, criterion);
}

double restricted_loglik(const VectorXd& y, const MatrixXd& X, const CovarianceModel& cov)
{
    NullFit fit;
    fit.cov = cov;
    MatrixXd VinvX(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        VinvX.col(j) = cov.solve(X.col(j));
    }
    fit.beta = (X.transpose() * VinvX).llt().solve(VinvX.transpose() * y);
    finish_fit(fit, y, X);
    return fit.restricted_loglik;
}

RemlProjection reml_projection(const NullFit& fit, const MatrixXd& X)
{
    const Eigen::Index n = fit.residuals.size();
    if (X.rows() != n) {
        fail(ErrorCategory::internal, "projection design does not match the fit");
    }
    const double cond = fit.cov.condition_number();
    if (!(cond <= 1e12)) {
        fail(ErrorCategory::numerical, "covariance is ill-conditioned (condition number " + std::to_string(cond) + ")");
    }
    MatrixXd Vinv = fit.cov.dense_inverse(n);
    MatrixXd W = Vinv * X;
    Eigen::LLT<MatrixXd> llt(X.transpose() * W);
    if (llt.info() != Eigen::Success) {
        fail(ErrorCategory::numerical, "X^T V^-1 X is not positive definite");
    }
    RemlProjection proj;
    proj.P = Vinv - W * llt.solve(W.transpose());
    proj.P = 0.5 * (proj.P + proj.P.transpose()).eval();
    return proj;
}

}  // namespace covtest
