#include "covtest/exact_lrt.hpp"

#include "covtest/errors.hpp"
#include "covtest/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace covtest {

std::string_view lrt_kind_name(LrtKind k) noexcept
{
    return k == LrtKind::lrt ? "lrt" : "rlrt";
}

// -------------------------------------------------------------------------
// Spectral summary
// -------------------------------------------------------------------------

namespace {

MatrixXd residualize(const MatrixXd& B, const MatrixXd& X)
{
    Eigen::HouseholderQR<MatrixXd> qr(X);
    MatrixXd Q = qr.householderQ() * MatrixXd::Identity(X.rows(), X.cols());
    return B - Q * (Q.transpose() * B);
}

// Descending eigen-decomposition of a symmetric matrix.
void sorted_eigen(const MatrixXd& S, VectorXd& values, MatrixXd* vectors)
{
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) {
        fail(ErrorCategory::numerical, "eigensolver failed");
    }
    values = eig.eigenvalues().reverse();
    if (vectors) {
        *vectors = eig.eigenvectors().rowwise().reverse();
    }
}

void clamp_small(VectorXd& v)
{
    if (v.size() == 0) {
        return;
    }
    const double cut = 1e-12 * std::max(v.maxCoeff(), 0.0);
    for (auto& x : v) {
        if (x < cut) {
            x = 0.0;
        }
    }
}

}  // namespace

SpectralCache spectral_decompose(const MatrixXd& B, const MatrixXd& X, int p, int d)
{
    if (B.cols() < 1) {
        fail(ErrorCategory::config, "the spline alternative needs at least one knot");
    }
    SpectralCache c;
    c.m = static_cast<int>(B.rows());
    c.p = p;
    c.d = d;
    c.K = static_cast<int>(B.cols());
    MatrixXd PB = residualize(B, X);
    MatrixXd BPB = PB.transpose() * PB;
    sorted_eigen(0.5 * (BPB + BPB.transpose()), c.mu, nullptr);
    sorted_eigen(B.transpose() * B, c.zeta, nullptr);
    clamp_small(c.mu);
    clamp_small(c.zeta);
    return c;
}

SpectralCache spectral_decompose(const DesignMatrices& design)
{
    return spectral_decompose(design.B, design.X, static_cast<int>(design.p), design.degree);
}

LambdaGrid make_grid(const SpectralCache& cache, int points, double lo, double hi)
{
    if (points < 1 || !(lo > 0.0) || !(hi > lo)) {
        fail(ErrorCategory::config, "invalid lambda grid specification");
    }
    const double mean_zeta = cache.zeta.size() > 0 ? cache.zeta.mean() : 0.0;
    if (!(mean_zeta > 0.0)) {
        fail(ErrorCategory::model, "spline basis is identically zero; no alternative to test");
    }
    LambdaGrid g;
    g.values.reserve(static_cast<std::size_t>(points) + 1);
    g.values.push_back(0.0);
    const double a = std::log(lo);
    const double b = std::log(hi);
    for (int i = 0; i < points; ++i) {
        double frac = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
        g.values.push_back(std::exp(a + frac * (b - a)) / mean_zeta);
    }
    return g;
}

LambdaGrid make_grid(std::vector<double> values)
{
    if (values.empty() || values.front() != 0.0) {
        fail(ErrorCategory::config, "lambda grid must start at exactly 0");
    }
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (!(values[i] > values[i - 1]) || !std::isfinite(values[i])) {
            fail(ErrorCategory::config, "lambda grid must be finite and strictly increasing");
        }
    }
    return LambdaGrid{std::move(values)};
}

ProfileTerms profile_terms(const SpectralCache& cache, std::span<const double> w2, double tail, double lambda,
                           LrtKind kind)
{
    if (std::ssize(w2) != cache.mu.size()) {
        fail(ErrorCategory::internal, "w2 length differs from the number of eigenvalues");
    }
    if (lambda < 0.0 || tail < 0.0) {
        fail(ErrorCategory::config, "profile terms need lambda >= 0 and tail >= 0");
    }
    ProfileTerms out;
    double penalty = 0.0;
    for (Eigen::Index s = 0; s < cache.mu.size(); ++s) {
        const double lm = lambda * cache.mu(s);
        const double w = w2[static_cast<std::size_t>(s)];
        out.N += lm / (1.0 + lm) * w;
        out.D += w / (1.0 + lm);
        penalty += std::log1p(lambda * (kind == LrtKind::lrt ? cache.zeta(s) : cache.mu(s)));
    }
    out.D += tail;
    if (!(out.D > 0.0)) {
        fail(ErrorCategory::numerical, "D(lambda) = 0: all squared projections are zero");
    }
    const double scale = kind == LrtKind::lrt ? cache.m : cache.residual_dim();
    out.f = lambda == 0.0 ? 0.0 : scale * std::log1p(out.N / out.D) - penalty;
    return out;
}

SpectralData spectral_data(const DesignMatrices& design, const VectorXd& y)
{
    MatrixXd PB = residualize(design.B, design.X);
    MatrixXd BPB = PB.transpose() * PB;
    VectorXd mu;
    MatrixXd U;
    sorted_eigen(0.5 * (BPB + BPB.transpose()), mu, &U);
    clamp_small(mu);

    Eigen::HouseholderQR<MatrixXd> qr(design.X);
    MatrixXd Q = qr.householderQ() * MatrixXd::Identity(design.X.rows(), design.X.cols());
    VectorXd P0y = y - Q * (Q.transpose() * y);

    SpectralData out;
    out.w2 = VectorXd::Zero(mu.size());
    VectorXd proj = U.transpose() * (PB.transpose() * y);
    double used = 0.0;
    for (Eigen::Index s = 0; s < mu.size(); ++s) {
        if (mu(s) > 0.0) {
            out.w2(s) = proj(s) * proj(s) / mu(s);
            used += out.w2(s);
        }
    }
    out.tail = std::max(0.0, P0y.squaredNorm() - used);
    return out;
}

// -------------------------------------------------------------------------
// Null simulation
// -------------------------------------------------------------------------

NullDistribution simulate_null(const SpectralCache& cache, LrtKind kind, int h, const LambdaGrid& grid,
                               std::size_t n_sims, std::uint64_t seed, int threads)
{
    if (h < 0 || h > cache.d) {
        fail(ErrorCategory::config, "h must lie in 0..degree");
    }
    if (kind == LrtKind::rlrt && h != 0) {
        fail(ErrorCategory::config, "the RLRT is only defined for h = 0 (same fixed effects under both hypotheses)");
    }
    if (cache.residual_dim() <= cache.K) {
        fail(ErrorCategory::config, "m - p - d - 1 = " + std::to_string(cache.residual_dim()) +
                                        " must exceed the number of knots K = " + std::to_string(cache.K));
    }
    if (n_sims < 1) {
        fail(ErrorCategory::config, "n_sims must be at least 1");
    }
    make_grid(grid.values);  // validates

    const auto K = static_cast<std::size_t>(cache.K);
    const std::size_t G = grid.values.size();
    // Per grid point: shrink factors 1/(1 + lambda mu_s) and the penalty.
    std::vector<double> shrink(G * K);
    std::vector<double> gain(G * K);
    std::vector<double> penalty(G, 0.0);
    for (std::size_t g = 0; g < G; ++g) {
        const double lambda = grid.values[g];
        for (std::size_t s = 0; s < K; ++s) {
            const double mu = cache.mu(static_cast<Eigen::Index>(s));
            shrink[g * K + s] = 1.0 / (1.0 + lambda * mu);
            gain[g * K + s] = lambda * mu / (1.0 + lambda * mu);
            const double pen_eig = kind == LrtKind::lrt ? cache.zeta(static_cast<Eigen::Index>(s)) : mu;
            penalty[g] += std::log1p(lambda * pen_eig);
        }
    }
    const double scale = kind == LrtKind::lrt ? cache.m : cache.residual_dim();
    const int tail_df = cache.residual_dim() - cache.K;

    NullDistribution out;
    out.kind = kind;
    out.h = h;
    out.seed = seed;
    out.grid = grid;
    out.cache = cache;
    out.samples.assign(n_sims, 0.0);

    parallel_for(n_sims, threads, [&](std::size_t r) {
        Engine eng = make_stream(seed, {r});
        std::normal_distribution<double> normal;
        std::vector<double> w2(K);
        double sum_w2 = 0.0;
        for (auto& w : w2) {
            double z = normal(eng);
            w = z * z;
            sum_w2 += w;
        }
        std::chi_squared_distribution<double> tail_dist(tail_df);
        const double tail = tail_dist(eng);
        double xh = 0.0;
        if (h > 0) {
            std::chi_squared_distribution<double> h_dist(h);
            xh = h_dist(eng);
        }
        const double total = sum_w2 + tail;

        double best = 0.0;  // lambda = 0
        for (std::size_t g = 1; g < G; ++g) {
            double D = tail;
            double N = 0.0;
            const double* sh = &shrink[g * K];
            const double* gn = &gain[g * K];
            for (std::size_t s = 0; s < K; ++s) {
                D += w2[s] * sh[s];
                N += w2[s] * gn[s];
            }
            const double f = scale * std::log1p(N / D) - penalty[g];
            if (f > best) {
                best = f;
            }
        }
        if (h > 0) {
            best += cache.m * std::log1p(xh / total);
        }
        out.samples[r] = best;
    });

    std::size_t zeros = 0;
    for (double s : out.samples) {
        if (s <= zero_tolerance) {
            ++zeros;
        }
    }
    out.zero_mass = static_cast<double>(zeros) / static_cast<double>(n_sims);
    return out;
}

double p_value(double observed, const NullDistribution& null)
{
    std::size_t exceed = 0;
    for (double s : null.samples) {
        if (s >= observed) {
            ++exceed;
        }
    }
    return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(null.samples.size()));
}

// -------------------------------------------------------------------------
// Observed statistics
// -------------------------------------------------------------------------

ProfileLikelihood::ProfileLikelihood(const VectorXd& y, const MatrixXd& X, const MatrixXd& B)
    : n_(y.size()), q_(X.cols())
{
    // GLS residuals do not change when y moves within col(X), so work with
    // the OLS residual. This keeps y^T V^-1 y - (correction) free of the
    // cancellation a large mean would cause.
    const VectorXd r0 = y - X * X.colPivHouseholderQr().solve(y);
    MatrixXd Xy(n_, q_ + 1);
    Xy << X, r0;
    gram_ = Xy.transpose() * Xy;
    if (B.cols() == 0) {
        zeta_.resize(0);
        G_.resize(0, q_ + 1);
        return;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(B.transpose() * B);
    if (eig.info() != Eigen::Success) {
        fail(ErrorCategory::numerical, "eigensolver failed on B^T B");
    }
    zeta_ = eig.eigenvalues().cwiseMax(0.0);
    G_ = eig.eigenvectors().transpose() * (B.transpose() * Xy);
}

ProfileLikelihood::Value ProfileLikelihood::at(double lambda) const
{
    MatrixXd gram = gram_;
    double log_det_V = 0.0;
    if (lambda > 0.0) {
        VectorXd w(zeta_.size());
        for (Eigen::Index s = 0; s < zeta_.size(); ++s) {
            w(s) = lambda / (1.0 + lambda * zeta_(s));
            log_det_V += std::log1p(lambda * zeta_(s));
        }
        gram.noalias() -= G_.transpose() * w.asDiagonal() * G_;
    }
    const MatrixXd XVX = gram.topLeftCorner(q_, q_);
    const VectorXd XVy = gram.topRightCorner(q_, 1);
    Eigen::LLT<MatrixXd> llt(XVX);
    if (llt.info() != Eigen::Success) {
        fail(ErrorCategory::numerical, "X^T V^-1 X is not positive definite at lambda = " + std::to_string(lambda));
    }
    const double rss = gram(q_, q_) - XVy.dot(llt.solve(XVy));
    if (!(rss > 0.0)) {
        fail(ErrorCategory::degenerate, "zero residual variance at lambda = " + std::to_string(lambda));
    }
    const double log_det_XVX = 2.0 * llt.matrixLLT().diagonal().array().log().sum();

    Value v;
    v.sigma2_ml = rss / static_cast<double>(n_);
    v.sigma2_reml = rss / static_cast<double>(n_ - q_);
    v.ml = -0.5 * (static_cast<double>(n_) * std::log(v.sigma2_ml) + log_det_V);
    v.reml = -0.5 * (static_cast<double>(n_ - q_) * std::log(v.sigma2_reml) + log_det_V + log_det_XVX);
    return v;
}

TestResult observed_statistic(const VectorXd& y, const DesignMatrices& design, LrtKind kind, int h,
                              const LambdaGrid& grid)
{
    if (h < 0 || h > design.degree) {
        fail(ErrorCategory::config, "h must lie in 0..degree");
    }
    if (kind == LrtKind::rlrt && h != 0) {
        fail(ErrorCategory::config, "the RLRT is only defined for h = 0 (same fixed effects under both hypotheses)");
    }
    const Eigen::Index n = y.size();
    const Eigen::Index q = design.X.cols();
    if (n - q <= design.B.cols()) {
        fail(ErrorCategory::config, "need n - (p + d + 1) > K for the spline alternative");
    }
    make_grid(grid.values);

    const MatrixXd X0 = design.reduced_X(h);
    Eigen::ColPivHouseholderQR<MatrixXd> qr0(X0);
    VectorXd beta0 = qr0.solve(y);
    VectorXd r0 = y - X0 * beta0;
    if (r0.squaredNorm() <= std::pow(64.0 * std::numeric_limits<double>::epsilon(), 2) * y.squaredNorm()) {
        fail(ErrorCategory::degenerate, "null model fits the response exactly (zero residual variance)");
    }

    ProfileLikelihood alt(y, design.X, design.B);
    auto pick = [kind](const ProfileLikelihood::Value& v) { return kind == LrtKind::lrt ? v.ml : v.reml; };

    const ProfileLikelihood::Value at_zero = alt.at(0.0);
    double null_ll = pick(at_zero);
    double null_sigma2 = kind == LrtKind::lrt ? at_zero.sigma2_ml : at_zero.sigma2_reml;
    if (h > 0) {
        ProfileLikelihood::Value v0 = ProfileLikelihood(y, X0, MatrixXd(n, 0)).at(0.0);
        null_ll = v0.ml;
        null_sigma2 = v0.sigma2_ml;
    }

    double best = pick(at_zero);
    std::size_t best_idx = 0;
    ProfileLikelihood::Value best_value = at_zero;
    for (std::size_t g = 1; g < grid.values.size(); ++g) {
        ProfileLikelihood::Value v = alt.at(grid.values[g]);
        if (pick(v) > best) {
            best = pick(v);
            best_idx = g;
            best_value = v;
        }
    }

    TestResult res;
    res.method = std::string(lrt_kind_name(kind));
    double stat = 2.0 * (best - null_ll);
    if (stat < 0.0) {
        res.notes.push_back("statistic clamped at 0 from " + std::to_string(stat));
        stat = 0.0;
    }
    res.statistic = stat;
    const double lambda_hat = grid.values[best_idx];
    res.lambda_hat = lambda_hat;
    const double sigma2_alt = kind == LrtKind::lrt ? best_value.sigma2_ml : best_value.sigma2_reml;
    res.sigma2_eps = null_sigma2;
    res.beta = beta0;
    res.details["lambda_hat"] = lambda_hat;
    res.details["sigma2_eps_alt"] = sigma2_alt;
    res.details["sigma2_a_alt"] = lambda_hat * sigma2_alt;
    res.details["h"] = h;
    res.details["degree"] = design.degree;
    res.details["knots"] = static_cast<double>(design.B.cols());
    return res;
}

TestResult observed_statistic(const Dataset& d, const DesignMatrices& design, LrtKind kind, int h,
                              const LambdaGrid& grid)
{
    if (d.cluster && d.n_clusters < d.n()) {
        fail(ErrorCategory::config, "exact LRT/RLRT are only available for independent data (no cluster labels)");
    }
    return observed_statistic(d.y, design, kind, h, grid);
}

}  // namespace covtest
