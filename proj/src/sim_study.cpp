#include "covtest/sim_study.hpp"

#include "covtest/cusum_test.hpp"
#include "covtest/errors.hpp"
#include "covtest/exact_lrt.hpp"
#include "covtest/null_cache.hpp"
#include "covtest/null_fit.hpp"
#include "covtest/random.hpp"
#include "covtest/score_test.hpp"
#include "covtest/spline_basis.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace covtest {

double f_c(double t, int c)
{
    return 0.25 * c * t * std::exp(2.0 - 2.0 * t) - t + 0.5;
}

namespace {

struct BaseDraws {
    VectorXd t;
    MatrixXd S;
    VectorXd z;  // standard normal noise
};

BaseDraws draw_base(int m, std::uint64_t seed, const DesignSpec& spec)
{
    if (m < 2) {
        fail(ErrorCategory::config, "simulation needs m >= 2");
    }
    BaseDraws b;
    b.t.resize(m);
    for (int i = 0; i < m; ++i) {
        b.t(i) = static_cast<double>(i) / (m - 1);
    }
    const double sd1 = spec.covariate_variance ? std::sqrt(spec.s1_spread) : spec.s1_spread;
    const double sd2 = spec.covariate_variance ? std::sqrt(spec.s2_spread) : spec.s2_spread;
    Engine cov = make_stream(seed, {0});
    std::normal_distribution<double> normal;
    b.S.resize(m, 2);
    for (int i = 0; i < m; ++i) {
        b.S(i, 0) = sd1 * normal(cov);
    }
    for (int i = 0; i < m; ++i) {
        b.S(i, 1) = sd2 * normal(cov);
    }
    Engine noise = make_stream(seed, {1});
    b.z.resize(m);
    for (int i = 0; i < m; ++i) {
        b.z(i) = normal(noise);
    }
    return b;
}

VectorXd assemble_y(const BaseDraws& b, double sigma, int c, const DesignSpec& spec)
{
    VectorXd y(b.t.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        y(i) = spec.beta1 * b.S(i, 0) + spec.beta2 * b.S(i, 1) + f_c(b.t(i), c) + sigma * b.z(i);
    }
    return y;
}

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

Dataset generate_dataset(int m, double sigma, int c, std::uint64_t seed, const DesignSpec& spec)
{
    if (!(sigma >= 0.0)) {
        fail(ErrorCategory::config, "sigma must be non-negative");
    }
    BaseDraws b = draw_base(m, seed, spec);
    VectorXd y = assemble_y(b, sigma, c, spec);
    return make_dataset(std::move(y), std::move(b.S), std::move(b.t));
}

std::string_view study_test_name(StudyTest t) noexcept
{
    switch (t) {
    case StudyTest::lrt1: return "LRT1";
    case StudyTest::lrt2: return "LRT2";
    case StudyTest::rlrt: return "RLRT";
    case StudyTest::score: return "Score";
    case StudyTest::cusum: return "Cusum";
    }
    return "?";
}

StudyTest parse_study_test(std::string_view name)
{
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (lower == "lrt1") return StudyTest::lrt1;
    if (lower == "lrt2") return StudyTest::lrt2;
    if (lower == "rlrt") return StudyTest::rlrt;
    if (lower == "score") return StudyTest::score;
    if (lower == "cusum") return StudyTest::cusum;
    fail(ErrorCategory::config, "unknown study test '" + std::string(name) + "' (expected lrt1|lrt2|rlrt|score|cusum)");
}

void validate(const SimConfig& config)
{
    if (config.n_runs < 1) {
        fail(ErrorCategory::config, "n_runs must be at least 1");
    }
    if (config.ms.empty() || config.sigmas.empty() || config.cs.empty() || config.levels.empty() ||
        config.tests.empty()) {
        fail(ErrorCategory::config, "m, sigma, c, level and test lists must be non-empty");
    }
    for (double s : config.sigmas) {
        if (!(s > 0.0)) {
            fail(ErrorCategory::config, "sigma must be positive");
        }
    }
    for (double a : config.levels) {
        if (!(a > 0.0 && a < 1.0)) {
            fail(ErrorCategory::config, "nominal levels must lie in (0, 1)");
        }
    }
    for (int m : config.ms) {
        if (m < 2) {
            fail(ErrorCategory::config, "m must be at least 2");
        }
    }
    if (config.knots < 1 || config.n_sims < 1 || config.grid_points < 1) {
        fail(ErrorCategory::config, "knots, n_sims and grid points must be positive");
    }
}

const SimCell* SimReport::find(std::string_view test, double level, double sigma, int m, int c) const
{
    for (const auto& cell : cells) {
        if (cell.test == test && cell.level == level && cell.sigma == sigma && cell.m == m && cell.c == c) {
            return &cell;
        }
    }
    return nullptr;
}

// -------------------------------------------------------------------------
// Study driver
// -------------------------------------------------------------------------

namespace {

constexpr std::uint64_t null_role = 0x6e756c6c;  // "null"
constexpr std::uint64_t cusum_role = 0x63757375;

// Everything that depends on m only: t is a fixed grid, so bases, spectral
// summaries, null distributions and the score kernel are shared by every
// replicate, sigma and c.
struct MContext {
    int m = 0;
    VectorXd t;
    KnotSet knots1, knots2;
    LambdaGrid grid1, grid2;
    std::optional<NullDistribution> null_lrt1, null_lrt2, null_rlrt;
    std::optional<SmootherKernel> kernel;
};

MContext prepare(const SimConfig& cfg, int m, std::vector<NullSummary>& nulls)
{
    MContext ctx;
    ctx.m = m;
    ctx.t.resize(m);
    for (int i = 0; i < m; ++i) {
        ctx.t(i) = static_cast<double>(i) / (m - 1);
    }
    constexpr int p = 2;
    auto want = [&](StudyTest t) { return std::find(cfg.tests.begin(), cfg.tests.end(), t) != cfg.tests.end(); };
    bool need1 = want(StudyTest::lrt1) || want(StudyTest::rlrt);
    bool need2 = want(StudyTest::lrt2);

    // The null law depends on X only through mu; with S resampled every
    // replicate the polynomial part alone is used, keeping the residual
    // dimension m - p - d - 1 of the full design.
    auto null_for = [&](const KnotSet& ks, LambdaGrid& grid, StudyTest which, LrtKind kind, int h) {
        MatrixXd B = truncated_power_basis(ctx.t, ks);
        MatrixXd A = polynomial_basis(ctx.t, ks.degree);
        SpectralCache cache = spectral_decompose(B, A, p, ks.degree);
        grid = make_grid(cache, cfg.grid_points);
        std::uint64_t seed = derive_seed(cfg.seed, {null_role, static_cast<std::uint64_t>(m),
                                                    static_cast<std::uint64_t>(which)});
        bool hit = false;
        NullDistribution nd =
            cached_simulate_null(cfg.cache_dir, cache, kind, h, grid, cfg.n_sims, seed, cfg.threads, &hit);
        nulls.push_back({std::string(study_test_name(which)), m, nd.n_sims(), nd.zero_mass, hit});
        return nd;
    };

    if (need1) {
        ctx.knots1 = place_knots(ctx.t, cfg.knots, 1);
        if (want(StudyTest::lrt1)) {
            ctx.null_lrt1 = null_for(ctx.knots1, ctx.grid1, StudyTest::lrt1, LrtKind::lrt, 0);
        }
        if (want(StudyTest::rlrt)) {
            ctx.null_rlrt = null_for(ctx.knots1, ctx.grid1, StudyTest::rlrt, LrtKind::rlrt, 0);
        }
    } else {
        ctx.knots1 = place_knots(ctx.t, std::min(cfg.knots, m - 1), 1);
    }
    if (need2) {
        ctx.knots2 = place_knots(ctx.t, cfg.knots, 2);
        ctx.null_lrt2 = null_for(ctx.knots2, ctx.grid2, StudyTest::lrt2, LrtKind::lrt, 1);
    }
    if (want(StudyTest::score)) {
        ctx.kernel = smoother_kernel(ctx.t, 1, KernelKind::natural_spline);
    }
    return ctx;
}

// Outcome codes per (replicate, sigma, c, test, level).
constexpr std::uint8_t keep = 0;
constexpr std::uint8_t reject = 1;
constexpr std::uint8_t failed = 2;

}  // namespace

SimReport run_study(const SimConfig& cfg)
{
    validate(cfg);
    const auto start = std::chrono::steady_clock::now();
    SimReport report;

    const std::size_t nS = cfg.sigmas.size();
    const std::size_t nC = cfg.cs.size();
    const std::size_t nT = cfg.tests.size();
    const std::size_t nL = cfg.levels.size();
    const std::size_t per_rep = nS * nC * nT * nL;

    for (int m : cfg.ms) {
        MContext ctx = prepare(cfg, m, report.nulls);
        std::vector<std::uint8_t> outcome(static_cast<std::size_t>(cfg.n_runs) * per_rep, keep);

        parallel_for(static_cast<std::size_t>(cfg.n_runs), cfg.threads, [&](std::size_t r) {
            const std::uint64_t rep_seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(m), r});
            const BaseDraws base = draw_base(m, rep_seed, cfg.design);
            const DesignMatrices design1 = build_design(base.S, base.t, ctx.knots1);
            std::optional<DesignMatrices> design2;
            if (ctx.null_lrt2) {
                design2 = build_design(base.S, base.t, ctx.knots2);
            }
            for (std::size_t si = 0; si < nS; ++si) {
                for (std::size_t ci = 0; ci < nC; ++ci) {
                    const VectorXd y = assemble_y(base, cfg.sigmas[si], cfg.cs[ci], cfg.design);
                    for (std::size_t ti = 0; ti < nT; ++ti) {
                        std::uint8_t* slot = &outcome[r * per_rep + ((si * nC + ci) * nT + ti) * nL];
                        double p = 1.0;
                        try {
                            switch (cfg.tests[ti]) {
                            case StudyTest::lrt1:
                                p = p_value(observed_statistic(y, design1, LrtKind::lrt, 0, ctx.grid1).statistic,
                                            *ctx.null_lrt1);
                                break;
                            case StudyTest::rlrt:
                                p = p_value(observed_statistic(y, design1, LrtKind::rlrt, 0, ctx.grid1).statistic,
                                            *ctx.null_rlrt);
                                break;
                            case StudyTest::lrt2:
                                p = p_value(observed_statistic(y, *design2, LrtKind::lrt, 1, ctx.grid2).statistic,
                                            *ctx.null_lrt2);
                                break;
                            case StudyTest::score: {
                                NullFit fit = fit_ols(y, design1.X);
                                RemlProjection proj = reml_projection(fit, design1.X);
                                p = score_statistic(fit, proj, *ctx.kernel).p_value;
                                break;
                            }
                            case StudyTest::cusum: {
                                NullFit fit = fit_ols(y, design1.X);
                                RemlProjection proj = reml_projection(fit, design1.X);
                                CusumProcess proc = cumulative_process(fit, base.t);
                                auto sups = multiplier_null(fit, proj, base.t, cfg.cusum_resamples,
                                                            derive_seed(rep_seed, {cusum_role, si, ci}), 1);
                                p = sup_test(proc, sups).p_value;
                                break;
                            }
                            }
                            for (std::size_t li = 0; li < nL; ++li) {
                                slot[li] = p < cfg.levels[li] ? reject : keep;
                            }
                        } catch (const Error&) {
                            for (std::size_t li = 0; li < nL; ++li) {
                                slot[li] = failed;
                            }
                        }
                    }
                }
            }
        });

        for (std::size_t li = 0; li < nL; ++li) {
            for (std::size_t si = 0; si < nS; ++si) {
                for (std::size_t ti = 0; ti < nT; ++ti) {
                    for (std::size_t ci = 0; ci < nC; ++ci) {
                        SimCell cell;
                        cell.test = std::string(study_test_name(cfg.tests[ti]));
                        cell.level = cfg.levels[li];
                        cell.sigma = cfg.sigmas[si];
                        cell.m = m;
                        cell.c = cfg.cs[ci];
                        cell.n_runs = cfg.n_runs;
                        int failures = 0;
                        for (int r = 0; r < cfg.n_runs; ++r) {
                            auto v = outcome[static_cast<std::size_t>(r) * per_rep +
                                             ((si * nC + ci) * nT + ti) * nL + li];
                            if (v == failed) {
                                ++failures;
                            } else {
                                ++cell.n_valid;
                                cell.rejections += v == reject;
                            }
                        }
                        if (failures > 0.01 * cfg.n_runs) {
                            fail(ErrorCategory::numerical,
                                 std::to_string(failures) + " of " + std::to_string(cfg.n_runs) + " replicates failed for " +
                                     cell.test + " (m=" + std::to_string(m) + ", sigma=" + format_double(cell.sigma) +
                                     ", c=" + std::to_string(cell.c) + ")");
                        }
                        if (cell.n_valid > 0) {
                            cell.rate = static_cast<double>(cell.rejections) / cell.n_valid;
                            cell.se = std::sqrt(cell.rate * (1.0 - cell.rate) / cell.n_valid);
                        }
                        report.cells.push_back(std::move(cell));
                    }
                }
            }
        }
    }
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

// -------------------------------------------------------------------------
// Report formats
// -------------------------------------------------------------------------

void write_report_csv(const SimReport& report, std::ostream& os)
{
    os << "test,level,sigma,m,c,n_runs,n_valid,rejections,rate,se\n";
    for (const auto& c : report.cells) {
        os << c.test << ',' << format_double(c.level) << ',' << format_double(c.sigma) << ',' << c.m << ',' << c.c
           << ',' << c.n_runs << ',' << c.n_valid << ',' << c.rejections << ',' << format_double(c.rate) << ','
           << format_double(c.se) << '\n';
    }
}

SimReport read_report_csv(std::istream& is)
{
    SimReport report;
    std::string line;
    if (!std::getline(is, line) || line.rfind("test,level,sigma,m,c", 0) != 0) {
        fail(ErrorCategory::data, "not a simulation report CSV (unexpected header)");
    }
    std::size_t row = 0;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            f.push_back(cell);
        }
        if (f.size() != 10) {
            fail(ErrorCategory::data, "report row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                          " fields, expected 10");
        }
        try {
            SimCell c;
            c.test = f[0];
            c.level = std::stod(f[1]);
            c.sigma = std::stod(f[2]);
            c.m = std::stoi(f[3]);
            c.c = std::stoi(f[4]);
            c.n_runs = std::stoi(f[5]);
            c.n_valid = std::stoi(f[6]);
            c.rejections = std::stoi(f[7]);
            c.rate = std::stod(f[8]);
            c.se = std::stod(f[9]);
            report.cells.push_back(std::move(c));
        } catch (const std::logic_error&) {
            fail(ErrorCategory::data, "report row " + std::to_string(row) + " is not numeric");
        }
    }
    return report;
}

std::string format_report_table(const SimReport& report)
{
    std::vector<int> ms, cs;
    std::vector<double> levels, sigmas;
    std::vector<std::string> tests;
    auto add = [](auto& v, const auto& x) {
        if (std::find(v.begin(), v.end(), x) == v.end()) {
            v.push_back(x);
        }
    };
    for (const auto& c : report.cells) {
        add(ms, c.m);
        add(cs, c.c);
        add(levels, c.level);
        add(sigmas, c.sigma);
        add(tests, c.test);
    }
    std::sort(cs.begin(), cs.end());

    std::ostringstream os;
    os << std::fixed;
    for (int m : ms) {
        os << "Empirical sizes and powers, m = " << m << "\n";
        os << std::left << std::setw(9) << "level" << std::setw(7) << "sigma" << std::setw(7) << "test";
        for (int c : cs) {
            os << std::right << std::setw(8) << ("c=" + std::to_string(c));
        }
        os << std::left << "\n";
        for (double a : levels) {
            bool first_level = true;
            for (double s : sigmas) {
                bool first_sigma = true;
                for (const auto& t : tests) {
                    std::ostringstream lv, sg;
                    lv << std::setprecision(2) << std::fixed << a;
                    sg << std::setprecision(2) << std::fixed << s;
                    os << std::setw(9) << (first_level ? lv.str() : "") << std::setw(7)
                       << (first_sigma ? sg.str() : "") << std::setw(7) << t;
                    for (int c : cs) {
                        const SimCell* cell = report.find(t, a, s, m, c);
                        os << std::right << std::setw(8);
                        if (cell) {
                            os << std::setprecision(3) << cell->rate;
                        } else {
                            os << "-";
                        }
                        os << std::left;
                    }
                    os << "\n";
                    first_level = false;
                    first_sigma = false;
                }
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace covtest
