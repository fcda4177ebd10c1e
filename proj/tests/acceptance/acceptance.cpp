// Acceptance suite: one PASS/FAIL line per criterion. Every tolerance used
// for a decision is a named constant below.

#include "covtest/cusum_test.hpp"
#include "covtest/exact_lrt.hpp"
#include "covtest/score_test.hpp"
#include "covtest/sim_study.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

using namespace covtest;

namespace {

// Criterion 1: score test, m = 50, sigma = 0.25, level 0.05.
constexpr double score_size_target = 0.066;
constexpr double score_size_tol = 0.035;
constexpr double score_power_targets[] = {0.443, 0.948};
constexpr double score_power_tol = 0.05;
constexpr double score_power_floor = 0.99;

// Criterion 2: RLRT, m = 100, sigma = 0.5, level 0.05.
constexpr double rlrt_size_target = 0.054;
constexpr double rlrt_size_tol = 0.035;
constexpr double rlrt_power_targets[] = {0.221, 0.670, 0.959};
constexpr double rlrt_power_tol = 0.06;
constexpr double rlrt_power_floor = 0.99;

// Criterion 3.
constexpr double zero_mass_floor = 0.5;
constexpr std::size_t zero_mass_draws = 10000;

// Criterion 4.
constexpr int oracle_instances = 50;
constexpr double profile_rel_tol = 1e-8;
constexpr double statistic_rel_tol = 1e-6;

// Criterion 5.
constexpr int fd_instances = 25;
constexpr double fd_rel_tol = 1e-4;
constexpr double fd_step = 1e-6;  // relative to sigma2_eps

// Criterion 6.
constexpr int moment_draws = 10000;
constexpr int moment_m = 40;
constexpr double mean_se_multiple = 3.0;
constexpr double variance_rel_tol = 0.10;

// Criterion 7.
constexpr double scale_factors[] = {1e-6, 1.0, 1e6};
constexpr double scale_p_tol = 1e-10;

// Criterion 8.
constexpr double cusum_lo = 0.02;
constexpr double cusum_hi = 0.09;
constexpr int cusum_runs = 1000;
constexpr std::size_t cusum_resamples = 1000;
constexpr double terminal_rel_tol = 1e-12;

// Criterion 9.
constexpr double monotone_se_multiple = 2.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double rate(const SimReport& rep, const char* test, double level, double sigma, int m, int c)
{
    const SimCell* cell = rep.find(test, level, sigma, m, c);
    if (!cell) {
        throw std::runtime_error(std::string("missing report cell for ") + test);
    }
    return cell->rate;
}

MatrixXd study_null_design(const Dataset& d)
{
    MatrixXd X(d.n(), d.p() + 2);
    X << d.S, polynomial_basis(d.t, 1);
    return X;
}

Outcome criterion_score_table(const SimReport& rep)
{
    std::ostringstream os;
    bool ok = true;
    const double size = rate(rep, "Score", 0.05, 0.25, 50, 0);
    ok = ok && std::abs(size - score_size_target) <= score_size_tol;
    os << "size " << size;
    for (int c = 1; c <= 2; ++c) {
        const double r = rate(rep, "Score", 0.05, 0.25, 50, c);
        ok = ok && std::abs(r - score_power_targets[c - 1]) <= score_power_tol;
        os << ", c=" << c << " " << r;
    }
    for (int c = 3; c <= 4; ++c) {
        const double r = rate(rep, "Score", 0.05, 0.25, 50, c);
        ok = ok && r >= score_power_floor;
        os << ", c=" << c << " " << r;
    }
    return {ok, os.str()};
}

Outcome criterion_rlrt_table(const SimReport& rep)
{
    std::ostringstream os;
    bool ok = true;
    const double size = rate(rep, "RLRT", 0.05, 0.5, 100, 0);
    ok = ok && std::abs(size - rlrt_size_target) <= rlrt_size_tol;
    os << "size " << size;
    for (int c = 1; c <= 3; ++c) {
        const double r = rate(rep, "RLRT", 0.05, 0.5, 100, c);
        ok = ok && std::abs(r - rlrt_power_targets[c - 1]) <= rlrt_power_tol;
        os << ", c=" << c << " " << r;
    }
    const double r4 = rate(rep, "RLRT", 0.05, 0.5, 100, 4);
    ok = ok && r4 >= rlrt_power_floor;
    os << ", c=4 " << r4;
    return {ok, os.str()};
}

Outcome criterion_zero_mass(const SimReport& rep)
{
    std::ostringstream os;
    bool ok = true;
    int seen = 0;
    for (const auto& n : rep.nulls) {
        if (n.test != "RLRT") {
            continue;
        }
        ++seen;
        ok = ok && n.n_sims == zero_mass_draws && n.zero_mass > zero_mass_floor;
        os << (seen > 1 ? ", " : "") << "m=" << n.m << " " << n.zero_mass << " over " << n.n_sims;
    }
    return {ok && seen == 2, os.str()};
}

Outcome criterion_dense_oracle()
{
    std::mt19937_64 rng(20080215);
    std::uniform_int_distribution<int> pick_m(12, 30), pick_k(1, 8), pick_p(0, 2), pick_d(1, 2);
    std::normal_distribution<double> z;
    double worst_profile = 0.0;
    double worst_stat = 0.0;
    int instances = 0;
    while (instances < oracle_instances) {
        const int m = pick_m(rng);
        const int K = pick_k(rng);
        const int p = pick_p(rng);
        const int d = pick_d(rng);
        if (m - p - d - 1 - K < 2) {
            continue;
        }
        ++instances;
        oracle::RandomDesign r = oracle::random_design(rng, m, p, d, K);
        DesignMatrices design = build_design(r.S, r.t, KnotSet{r.knots, d});
        const double signal = instances % 2 == 0 ? 0.0 : 2.0;
        VectorXd y(m);
        for (int i = 0; i < m; ++i) {
            y(i) = 0.5 + r.t(i) + signal * std::sin(6.0 * r.t(i)) + z(rng);
        }
        SpectralCache cache = spectral_decompose(design);
        SpectralData sd = spectral_data(design, y);
        LambdaGrid grid = make_grid(cache);
        for (LrtKind kind : {LrtKind::lrt, LrtKind::rlrt}) {
            const bool restricted = kind == LrtKind::rlrt;
            for (double lambda : grid.values) {
                ProfileTerms t = profile_terms(cache, std::span<const double>(sd.w2.data(), sd.w2.size()), sd.tail,
                                               lambda, kind);
                const auto dense = static_cast<double>(oracle::dense_two_delta(y, r.X, r.X, r.B, lambda, restricted));
                worst_profile = std::max(worst_profile, std::abs(t.f - dense) / std::max(1.0, std::abs(dense)));
            }
            const double stat = observed_statistic(y, design, kind, 0, grid).statistic;
            const double dense = std::max(0.0, oracle::dense_statistic(y, r.X, r.X, r.B, grid.values, restricted));
            worst_stat = std::max(worst_stat, std::abs(stat - dense) / std::max(1.0, std::abs(dense)));
        }
        if (d == 2) {
            MatrixXd X0 = r.X.leftCols(r.X.cols() - 1);
            const double stat = observed_statistic(y, design, LrtKind::lrt, 1, grid).statistic;
            const double dense = std::max(0.0, oracle::dense_statistic(y, r.X, X0, r.B, grid.values, false));
            worst_stat = std::max(worst_stat, std::abs(stat - dense) / std::max(1.0, std::abs(dense)));
        }
    }
    const bool ok = worst_profile < profile_rel_tol && worst_stat < statistic_rel_tol;
    return {ok, std::to_string(instances) + " instances; worst f_m rel err " + fmt("%.3g", worst_profile) +
                    ", worst statistic rel err " + fmt("%.3g", worst_stat)};
}

Outcome criterion_score_derivative()
{
    std::mt19937_64 rng(20080216);
    std::normal_distribution<double> z;
    double worst = 0.0;
    for (int rep = 0; rep < fd_instances; ++rep) {
        const int m = 10 + rep % 7;
        VectorXd t = VectorXd::LinSpaced(m, 0, 1);
        MatrixXd S(m, rep % 3);
        for (int i = 0; i < S.rows(); ++i) {
            for (int j = 0; j < S.cols(); ++j) {
                S(i, j) = z(rng);
            }
        }
        VectorXd y(m);
        std::vector<std::string> labels;
        for (int i = 0; i < m; ++i) {
            y(i) = 0.3 + t(i) + 0.8 * std::sin(5 * t(i)) * (rep % 3) + 0.4 * z(rng) + (i % 3 == 0 ? 0.5 : 0.0);
            labels.push_back(std::to_string(i % 3));
        }
        const bool clustered = rep % 2 == 0;
        Dataset d = clustered ? make_dataset(y, S, t, labels) : make_dataset(y, S, t);
        MatrixXd X = study_null_design(d);
        NullFit fit = clustered ? fit_reml_random_intercept(d, X) : fit_ols(y, X);
        RemlProjection proj = reml_projection(fit, X);
        const KernelKind kind = rep % 3 == 0 ? KernelKind::penalized_gram : KernelKind::natural_spline;
        SmootherKernel k = smoother_kernel(t, 1, kind, place_knots(t, 3, 1));
        ScoreResult r = score_statistic(fit, proj, k);

        const oracle::LMat V = fit.covariance().cast<long double>();
        const oracle::LMat M = k.M.cast<long double>();
        const long double h = static_cast<long double>(fd_step) * fit.sigma2_eps;
        const long double up = oracle::restricted_loglik(y, X, V + h * M);
        const long double down = oracle::restricted_loglik(y, X, V - h * M);
        const auto fd = static_cast<double>((up - down) / (2 * h));
        worst = std::max(worst, std::abs(r.U_tau - fd) / std::abs(fd));
    }
    return {worst <= fd_rel_tol, std::to_string(fd_instances) + " instances; worst rel err " + fmt("%.3g", worst)};
}

Outcome criterion_moments()
{
    Dataset base = generate_dataset(moment_m, 0.5, 0, 404);
    MatrixXd X = study_null_design(base);
    CovarianceModel cov;
    cov.sigma2_eps = 0.25;
    MatrixXd Vi = cov.dense_inverse(moment_m);
    MatrixXd gls = (X.transpose() * Vi * X).ldlt().solve(X.transpose() * Vi);
    auto fixed_fit = [&](const VectorXd& y) {
        NullFit fit;
        fit.cov = cov;
        fit.sigma2_eps = cov.sigma2_eps;
        fit.beta = gls * y;
        fit.fitted = X * fit.beta;
        fit.residuals = y - fit.fitted;
        return fit;
    };
    NullFit ref = fixed_fit(base.y);
    RemlProjection proj = reml_projection(ref, X);
    SmootherKernel k = smoother_kernel(base.t, 1, KernelKind::natural_spline);
    ScoreMoments mom = score_moments(proj, k.M);

    std::mt19937_64 rng(405);
    std::normal_distribution<double> z;
    const VectorXd mean_y = X * VectorXd::LinSpaced(X.cols(), 1.0, 2.0);
    double sum = 0.0;
    double sum2 = 0.0;
    for (int r = 0; r < moment_draws; ++r) {
        VectorXd y = mean_y;
        for (int i = 0; i < moment_m; ++i) {
            y(i) += 0.5 * z(rng);
        }
        const double u = score_statistic(fixed_fit(y), proj, k).U_quad;
        sum += u;
        sum2 += u * u;
    }
    const double mean = sum / moment_draws;
    const double var = (sum2 - moment_draws * mean * mean) / (moment_draws - 1);
    const double se = std::sqrt(var / moment_draws);
    const bool ok = std::abs(mean - mom.delta1) <= mean_se_multiple * se &&
                    std::abs(var - mom.delta2) <= variance_rel_tol * mom.delta2;
    return {ok, "mean " + fmt("%.5g", mean) + " vs delta1 " + fmt("%.5g", mom.delta1) + " (" +
                    fmt("%.2f", std::abs(mean - mom.delta1) / se) + " SE); var " + fmt("%.5g", var) + " vs delta2 " +
                    fmt("%.5g", mom.delta2) + " (" + fmt("%.1f%%", 100 * std::abs(var - mom.delta2) / mom.delta2) +
                    ")"};
}

Outcome criterion_kernel_scale()
{
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        Dataset d = generate_dataset(rep % 2 == 0 ? 50 : 100, rep % 4 < 2 ? 0.25 : 0.5, rep % 5, 606 + rep);
        MatrixXd X = study_null_design(d);
        NullFit fit = fit_ols(d.y, X);
        RemlProjection proj = reml_projection(fit, X);
        const KernelKind kind = rep % 3 == 0 ? KernelKind::penalized_gram : KernelKind::natural_spline;
        SmootherKernel k = smoother_kernel(d.t, 1, kind, place_knots(d.t, 20, 1));
        const double p1 = score_statistic(fit, proj, k).p_value;
        for (double c : scale_factors) {
            SmootherKernel kc{c * k.M, k.kind};
            worst = std::max(worst, std::abs(score_statistic(fit, proj, kc).p_value - p1));
        }
    }
    return {worst <= scale_p_tol, "20 data sets; worst |dp| " + fmt("%.3g", worst)};
}

Outcome criterion_cusum()
{
    SimConfig cfg;
    cfg.ms = {50};
    cfg.sigmas = {0.25};
    cfg.cs = {0};
    cfg.levels = {0.05};
    cfg.tests = {StudyTest::cusum};
    cfg.n_runs = cusum_runs;
    cfg.cusum_resamples = cusum_resamples;
    cfg.threads = 0;
    SimReport rep = run_study(cfg);
    const double size = rate(rep, "Cusum", 0.05, 0.25, 50, 0);

    double worst_terminal = 0.0;
    for (int r = 0; r < 200; ++r) {
        Dataset d = generate_dataset(50, 0.25, r % 5, 808 + r);
        MatrixXd X = study_null_design(d);
        NullFit fit = fit_ols(d.y, X);
        const double scale = fit.residuals.cwiseAbs().sum() / std::sqrt(50.0);
        for (const VectorXd& ord : {d.t, VectorXd(d.S.col(0)), VectorXd(d.S.col(1)), fit.fitted}) {
            worst_terminal = std::max(worst_terminal, std::abs(cumulative_process(fit, ord).terminal()) / scale);
        }
    }
    const bool ok = size >= cusum_lo && size <= cusum_hi && worst_terminal <= terminal_rel_tol;
    return {ok, "rejection at 0.05 " + fmt("%.3f", size) + " over " + std::to_string(cusum_runs) + "x" +
                    std::to_string(cusum_resamples) + "; worst |terminal| / scale " + fmt("%.3g", worst_terminal)};
}

Outcome criterion_monotone(const SimReport& rep)
{
    int checks = 0;
    int violations = 0;
    std::ostringstream first;
    auto compare = [&](const SimCell* hi, const SimCell* lo, const std::string& what) {
        ++checks;
        const double slack = monotone_se_multiple * std::sqrt(hi->se * hi->se + lo->se * lo->se);
        if (hi->rate < lo->rate - slack) {
            if (violations == 0) {
                first << "; first violation " << what << " (" << hi->rate << " < " << lo->rate << ")";
            }
            ++violations;
        }
    };
    for (const char* t : {"LRT1", "LRT2", "RLRT", "Score"}) {
        for (double a : {0.05, 0.1}) {
            for (double s : {0.25, 0.5}) {
                for (int m : {50, 100}) {
                    for (int c = 1; c <= 4; ++c) {
                        compare(rep.find(t, a, s, m, c), rep.find(t, a, s, m, c - 1),
                                std::string(t) + " c " + std::to_string(c));
                    }
                }
            }
            for (int m : {50, 100}) {
                for (int c = 1; c <= 4; ++c) {
                    compare(rep.find(t, a, 0.25, m, c), rep.find(t, a, 0.5, m, c),
                            std::string(t) + " sigma at c " + std::to_string(c));
                }
            }
            for (double s : {0.25, 0.5}) {
                for (int c = 1; c <= 4; ++c) {
                    compare(rep.find(t, a, s, 100, c), rep.find(t, a, s, 50, c),
                            std::string(t) + " m at c " + std::to_string(c));
                }
            }
        }
    }
    return {violations == 0, std::to_string(checks) + " comparisons, " + std::to_string(violations) +
                                 " violations beyond 2 SE" + first.str()};
}

}  // namespace

int main()
{
    using clock = std::chrono::steady_clock;
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
        const auto start = clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(clock::now() - start).count();
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " ("
                  << fmt("%.1f", secs) << " s)" << std::endl;
        failures += o.pass ? 0 : 1;
    };

    SimConfig study;
    study.threads = 1;
    std::cout << "running the full simulation study (" << study.n_runs << " runs per cell, " << study.n_sims
              << " null draws)..." << std::endl;
    SimReport main_report = run_study(study);
    std::cout << "study finished in " << fmt("%.1f", main_report.runtime_seconds) << " s\n\n"
              << format_report_table(main_report) << std::endl;

    report(1, "score test size and power, m=50 sigma=0.25", [&] { return criterion_score_table(main_report); });
    report(2, "RLRT size and power, m=100 sigma=0.5", [&] { return criterion_rlrt_table(main_report); });
    report(3, "RLRT null zero mass above one half", [&] { return criterion_zero_mass(main_report); });
    report(4, "spectral profile and statistics match dense fits", criterion_dense_oracle);
    report(5, "U_tau is the restricted-likelihood derivative", criterion_score_derivative);
    report(6, "quadratic-form moments", criterion_moments);
    report(7, "score p-value invariant to kernel scale", criterion_kernel_scale);
    report(8, "cusum calibration and zero terminal value", criterion_cusum);
    report(9, "power monotone in c, sigma and m", [&] { return criterion_monotone(main_report); });
    report(10, "study byte-identical across reruns and thread counts", [&] {
        SimConfig again = study;
        again.threads = 4;
        std::ostringstream a, b;
        write_report_csv(main_report, a);
        write_report_csv(run_study(again), b);
        return Outcome{a.str() == b.str(), std::to_string(a.str().size()) + " CSV bytes, 1 vs 4 threads"};
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
