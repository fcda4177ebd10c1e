// covtest: command-line front end for the polynomial lack-of-fit tests.
//
//   covtest test      --input data.csv --method {lrt,rlrt,score,cusum} ...
//   covtest simulate  --nruns 1000 --out study/ ...
//   covtest null-sim  --input data.csv --method rlrt --nsims 10000 ...
//   covtest report    --input study/sim_report.csv
//
// Every option may also come from a flat key=value file given by --config;
// flags on the command line win.

#include "covtest/cusum_test.hpp"
#include "covtest/data_io.hpp"
#include "covtest/errors.hpp"
#include "covtest/exact_lrt.hpp"
#include "covtest/null_cache.hpp"
#include "covtest/null_fit.hpp"
#include "covtest/random.hpp"
#include "covtest/score_test.hpp"
#include "covtest/sim_study.hpp"
#include "covtest/spline_basis.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace covtest {
namespace {

struct RunConfig {
    std::string input;
    std::string method = "score";
    int degree = 1;
    int h = 0;
    int knots = 20;
    std::string kernel = "natural";
    std::size_t nsims = 10000;
    std::size_t resamples = 1000;
    std::uint64_t seed = 20080215;
    std::vector<double> levels{0.05, 0.10};
    std::string out = ".";
    int threads = 0;
    bool rescale_t = false;
    int grid_points = 200;
    std::string variance = "reml";
    std::size_t emit_paths = 0;

    // column map
    std::string y_col = "y";
    std::string t_col = "t";
    std::vector<std::string> s_cols;
    std::string cluster_col;

    // simulate
    int nruns = 1000;
    std::vector<int> ms{50, 100};
    std::vector<double> sigmas{0.25, 0.5};
    std::vector<int> cs{0, 1, 2, 3, 4};
    std::vector<std::string> tests{"lrt1", "lrt2", "rlrt", "score"};
    std::string covariate_scale = "variance";
};

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        fail(ErrorCategory::config, "cannot write '" + path.string() + "'");
    }
    os << text;
    if (!os) {
        fail(ErrorCategory::config, "write to '" + path.string() + "' failed");
    }
}

Dataset load_input(const RunConfig& cfg)
{
    if (cfg.input.empty()) {
        fail(ErrorCategory::config, "--input is required");
    }
    ColumnMap columns;
    columns.y = cfg.y_col;
    columns.t = cfg.t_col;
    columns.s = cfg.s_cols;
    if (!cfg.cluster_col.empty()) {
        columns.cluster = cfg.cluster_col;
    }
    Dataset d = load_csv(cfg.input, columns);
    return cfg.rescale_t ? rescale_t(d) : d;
}

double first_level(const RunConfig& cfg)
{
    return cfg.levels.front();
}

VarianceCriterion parse_variance(const std::string& v)
{
    if (v == "reml") {
        return VarianceCriterion::reml;
    }
    if (v == "ml") {
        return VarianceCriterion::ml;
    }
    fail(ErrorCategory::config, "--variance must be reml or ml");
}

json vec_json(const VectorXd& v)
{
    json a = json::array();
    for (double x : v) {
        a.push_back(x);
    }
    return a;
}

json result_json(const TestResult& r, const Dataset& d, double level, const std::string& effective)
{
    json j;
    j["method"] = r.method;
    j["statistic"] = r.statistic;
    j["p_value"] = r.p_value;
    j["level"] = level;
    j["reject"] = r.p_value < level;
    if (r.lambda_hat) {
        j["lambda_hat"] = *r.lambda_hat;
    }
    j["nuisance"] = {{"sigma2_eps", r.sigma2_eps}, {"sigma2_b", r.sigma2_b}, {"beta", vec_json(r.beta)}};
    j["details"] = json::object();
    for (const auto& [k, v] : r.details) {
        j["details"][k] = v;
    }
    j["provenance"] = json::object();
    for (const auto& [k, v] : r.provenance) {
        j["provenance"][k] = v;
    }
    j["notes"] = r.notes;
    DataSummary s = summarize(d);
    j["data"] = {{"n", s.n}, {"p", s.p}, {"units", s.units}, {"distinct_t", s.distinct_t},
                 {"t_min", s.range.t_min}, {"t_max", s.range.t_max}};
    j["config"] = effective;
    return j;
}

std::string summary_text(const TestResult& r, const Dataset& d, double level)
{
    std::ostringstream os;
    os << std::setprecision(6);
    os << "method      : " << r.method << "\n";
    os << "observations: " << d.n() << " (units " << d.units() << ", p = " << d.p() << ")\n";
    os << "statistic   : " << r.statistic << "\n";
    os << "p-value     : " << r.p_value << "\n";
    os << "decision    : " << (r.p_value < level ? "reject" : "do not reject") << " H0 at level " << level << "\n";
    if (r.lambda_hat) {
        os << "lambda_hat  : " << *r.lambda_hat << "\n";
    }
    os << "sigma2_eps  : " << r.sigma2_eps << "\n";
    if (r.sigma2_b > 0.0) {
        os << "sigma2_b    : " << r.sigma2_b << "\n";
    }
    for (const auto& [k, v] : r.details) {
        os << "  " << k << " = " << v << "\n";
    }
    for (const auto& n : r.notes) {
        os << "note: " << n << "\n";
    }
    return os.str();
}

// Null fit for the score and cusum tests: REML random intercept when the
// data carry clusters, OLS otherwise.
NullFit null_fit_for(const Dataset& d, const MatrixXd& X, const RunConfig& cfg)
{
    if (d.cluster && d.n_clusters < d.n()) {
        return fit_reml_random_intercept(d, X, parse_variance(cfg.variance));
    }
    NullFit fit = fit_ols(d.y, X);
    if (d.cluster) {
        fit.cov.cluster = *d.cluster;
        fit.cov.n_clusters = d.n_clusters;
    }
    return fit;
}

void fill_nuisance(TestResult& r, const NullFit& fit)
{
    r.sigma2_eps = fit.sigma2_eps;
    r.sigma2_b = fit.sigma2_b;
    r.beta = fit.beta;
    r.notes.insert(r.notes.end(), fit.warnings.begin(), fit.warnings.end());
}

TestResult run_lrt(const Dataset& d, const RunConfig& cfg, LrtKind kind)
{
    KnotSet knots = place_knots(d.t, cfg.knots, cfg.degree);
    DesignMatrices design = build_design(d, knots);
    SpectralCache cache = spectral_decompose(design);
    LambdaGrid grid = make_grid(cache, cfg.grid_points);
    TestResult r = observed_statistic(d, design, kind, cfg.h, grid);
    fs::path cache_dir = resolve_cache_dir(fs::path(cfg.out) / "null_cache");
    NullDistribution null =
        cached_simulate_null(cache_dir, cache, kind, cfg.h, grid, cfg.nsims, cfg.seed, cfg.threads);
    r.p_value = p_value(r.statistic, null);
    r.details["null_zero_mass"] = null.zero_mass;
    r.provenance["null_key"] = null_cache_key(cache, kind, cfg.h, grid, cfg.nsims, cfg.seed);
    r.provenance["null_seed"] = std::to_string(cfg.seed);
    r.provenance["null_n_sims"] = std::to_string(null.n_sims());
    r.provenance["grid_points"] = std::to_string(grid.values.size());
    return r;
}

TestResult run_score(const Dataset& d, const RunConfig& cfg)
{
    KernelKind kind = parse_kernel(cfg.kernel);
    MatrixXd X(d.n(), d.p() + cfg.degree + 1);
    X << d.S, polynomial_basis(d.t, cfg.degree);
    NullFit fit = null_fit_for(d, X, cfg);
    RemlProjection proj = reml_projection(fit, X);
    std::optional<KnotSet> knots;
    if (kind == KernelKind::penalized_gram) {
        knots = place_knots(d.t, cfg.knots, cfg.degree);
    }
    SmootherKernel kernel = smoother_kernel(d.t, cfg.degree, kind, knots);
    ScoreResult s = score_statistic(fit, proj, kernel);

    TestResult r;
    r.method = "score";
    r.statistic = s.U_quad;
    r.p_value = s.p_value;
    fill_nuisance(r, fit);
    r.details["U_quad"] = s.U_quad;
    r.details["U_tau"] = s.U_tau;
    r.details["delta1"] = s.moments.delta1;
    r.details["delta2"] = s.moments.delta2;
    r.details["kappa"] = s.moments.kappa;
    r.details["nu"] = s.moments.nu;
    r.details["degree"] = cfg.degree;
    r.provenance["kernel"] = std::string(kernel_name(kind));
    return r;
}

void write_process_csv(const fs::path& path, const CusumProcess& proc, const std::vector<std::vector<double>>& paths)
{
    std::ostringstream os;
    os << std::setprecision(17) << "point,observed";
    for (std::size_t k = 0; k < paths.size(); ++k) {
        os << ",resample_" << (k + 1);
    }
    os << "\n";
    for (std::size_t i = 0; i < proc.points.size(); ++i) {
        os << proc.points[i] << ',' << proc.values[i];
        for (const auto& p : paths) {
            os << ',' << p[i];
        }
        os << "\n";
    }
    write_text(path, os.str());
}

TestResult run_cusum(const Dataset& d, const RunConfig& cfg)
{
    MatrixXd X(d.n(), d.p() + cfg.degree + 1);
    X << d.S, polynomial_basis(d.t, cfg.degree);
    NullFit fit = null_fit_for(d, X, cfg);
    RemlProjection proj = reml_projection(fit, X);

    std::vector<std::pair<std::string, VectorXd>> orderings;
    orderings.emplace_back(d.t_name, d.t);
    for (Eigen::Index j = 0; j < d.p(); ++j) {
        orderings.emplace_back(d.s_names[static_cast<std::size_t>(j)], d.S.col(j));
    }
    orderings.emplace_back("fitted", fit.fitted);

    TestResult r;
    r.method = "cusum";
    fill_nuisance(r, fit);
    for (std::size_t k = 0; k < orderings.size(); ++k) {
        const auto& [name, ord] = orderings[k];
        CusumProcess proc = cumulative_process(fit, ord);
        const std::uint64_t seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(k)});
        CusumResult cr = sup_test(proc, multiplier_null(fit, proj, ord, cfg.resamples, seed, cfg.threads), name);
        if (k == 0) {
            r.statistic = cr.observed_sup;
            r.p_value = cr.p_value;
        }
        r.details["sup_" + name] = cr.observed_sup;
        r.details["p_" + name] = cr.p_value;
        if (cfg.emit_paths > 0 || k == 0) {
            write_process_csv(fs::path(cfg.out) / ("cusum_process_" + name + ".csv"), proc,
                              multiplier_paths(fit, proj, ord, cfg.emit_paths, seed));
        }
    }
    r.details["resamples"] = static_cast<double>(cfg.resamples);
    r.provenance["process"] = d.t_name;
    return r;
}

int cmd_test(const RunConfig& cfg, const std::string& effective)
{
    Dataset d = load_input(cfg);
    TestResult r;
    if (cfg.method == "lrt") {
        r = run_lrt(d, cfg, LrtKind::lrt);
    } else if (cfg.method == "rlrt") {
        r = run_lrt(d, cfg, LrtKind::rlrt);
    } else if (cfg.method == "score") {
        r = run_score(d, cfg);
    } else if (cfg.method == "cusum") {
        r = run_cusum(d, cfg);
    } else {
        fail(ErrorCategory::config, "unknown --method '" + cfg.method + "'");
    }
    const double level = first_level(cfg);
    fs::path out(cfg.out);
    write_text(out / "result.json", result_json(r, d, level, effective).dump(2) + "\n");
    std::string summary = summary_text(r, d, level);
    write_text(out / "summary.txt", summary);
    write_text(out / "effective_config.ini", effective);
    std::cout << summary;
    return 0;
}

SimConfig sim_config(const RunConfig& cfg)
{
    SimConfig sc;
    sc.n_runs = cfg.nruns;
    sc.ms = cfg.ms;
    sc.sigmas = cfg.sigmas;
    sc.cs = cfg.cs;
    sc.levels = cfg.levels;
    sc.tests.clear();
    for (const auto& t : cfg.tests) {
        sc.tests.push_back(parse_study_test(t));
    }
    sc.knots = cfg.knots;
    sc.n_sims = cfg.nsims;
    sc.grid_points = cfg.grid_points;
    sc.cusum_resamples = cfg.resamples;
    sc.seed = cfg.seed;
    sc.threads = cfg.threads;
    if (cfg.covariate_scale == "variance") {
        sc.design.covariate_variance = true;
    } else if (cfg.covariate_scale == "sd") {
        sc.design.covariate_variance = false;
    } else {
        fail(ErrorCategory::config, "--covariate-scale must be variance or sd");
    }
    sc.cache_dir = resolve_cache_dir(fs::path(cfg.out) / "null_cache");
    return sc;
}

int cmd_simulate(const RunConfig& cfg, const std::string& effective)
{
    SimConfig sc = sim_config(cfg);
    SimReport report = run_study(sc);
    fs::path out(cfg.out);
    std::ostringstream csv;
    write_report_csv(report, csv);
    write_text(out / "sim_report.csv", csv.str());
    std::string table = format_report_table(report);
    write_text(out / "sim_table.txt", "# effective configuration\n" + effective + "\n" + table);
    write_text(out / "effective_config.ini", effective);

    json meta;
    meta["runtime_seconds"] = report.runtime_seconds;
    meta["nulls"] = json::array();
    for (const auto& n : report.nulls) {
        meta["nulls"].push_back(
            {{"test", n.test}, {"m", n.m}, {"n_sims", n.n_sims}, {"zero_mass", n.zero_mass}, {"cache_hit", n.cache_hit}});
    }
    meta["config"] = effective;
    write_text(out / "sim_meta.json", meta.dump(2) + "\n");
    std::cout << table;
    return 0;
}

int cmd_null_sim(const RunConfig& cfg, const std::string& effective)
{
    Dataset d = load_input(cfg);
    LrtKind kind;
    if (cfg.method == "lrt") {
        kind = LrtKind::lrt;
    } else if (cfg.method == "rlrt") {
        kind = LrtKind::rlrt;
    } else {
        fail(ErrorCategory::config, "null-sim needs --method lrt or rlrt");
    }
    KnotSet knots = place_knots(d.t, cfg.knots, cfg.degree);
    DesignMatrices design = build_design(d, knots);
    SpectralCache cache = spectral_decompose(design);
    LambdaGrid grid = make_grid(cache, cfg.grid_points);
    fs::path cache_dir = resolve_cache_dir(fs::path(cfg.out) / "null_cache");
    NullDistribution null = cached_simulate_null(cache_dir, cache, kind, cfg.h, grid, cfg.nsims, cfg.seed, cfg.threads);
    std::string key = null_cache_key(cache, kind, cfg.h, grid, cfg.nsims, cfg.seed);
    fs::path file = fs::path(cfg.out) / ("null_" + key + ".bin");
    save_null(null, file);

    std::vector<double> sorted = null.samples;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size()))) - 1;
        return sorted[std::min(idx, sorted.size() - 1)];
    };
    json j;
    j["method"] = cfg.method;
    j["key"] = key;
    j["file"] = file.filename().string();
    j["n_sims"] = null.n_sims();
    j["zero_mass"] = null.zero_mass;
    j["quantiles"] = {{"0.90", quantile(0.90)}, {"0.95", quantile(0.95)}, {"0.99", quantile(0.99)}};
    j["config"] = effective;
    write_text(fs::path(cfg.out) / "null_summary.json", j.dump(2) + "\n");
    std::cout << "wrote " << file.string() << "\n"
              << "zero mass " << null.zero_mass << ", 95% quantile " << quantile(0.95) << "\n";
    return 0;
}

int cmd_report(const RunConfig& cfg)
{
    if (cfg.input.empty()) {
        fail(ErrorCategory::config, "--input (a sim_report.csv) is required");
    }
    std::ifstream in(cfg.input);
    if (!in) {
        fail(ErrorCategory::config, "cannot open '" + cfg.input + "'");
    }
    SimReport report = read_report_csv(in);
    std::string table = format_report_table(report);
    write_text(fs::path(cfg.out) / "sim_table.txt", table);
    std::cout << table;
    return 0;
}

}  // namespace
}  // namespace covtest

int main(int argc, char** argv)
{
    using namespace covtest;
    RunConfig cfg;
    CLI::App app{"Tests for polynomial covariate effects against penalized-spline alternatives"};
    app.set_help_flag("--help", "print this help and exit");
    app.set_config("--config", "", "flat key=value configuration file; flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    app.add_option("--input", cfg.input, "input CSV (test, null-sim) or report CSV (report)");
    app.add_option("--method", cfg.method, "test to run")
        ->check(CLI::IsMember({"lrt", "rlrt", "score", "cusum"}))
        ->capture_default_str();
    app.add_option("--degree", cfg.degree, "spline degree d; the null is a polynomial of degree d - h")
        ->check(CLI::Range(0, 10))
        ->capture_default_str();
    app.add_option("--h", cfg.h, "number of top polynomial coefficients dropped under the null")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--knots", cfg.knots, "number of spline knots K")->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--kernel", cfg.kernel, "score-test kernel")
        ->check(CLI::IsMember({"penalized", "natural"}))
        ->capture_default_str();
    app.add_option("--nsims", cfg.nsims, "null-distribution draws")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--resamples", cfg.resamples, "multiplier resamples for the cusum test")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--seed", cfg.seed, "master seed; all randomness derives from it")->capture_default_str();
    app.add_option("--level", cfg.levels, "nominal level(s); test uses the first")
        ->delimiter(',')
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app.add_option("--out", cfg.out, "output directory")->capture_default_str();
    app.add_option("--threads", cfg.threads, "worker threads (0 = hardware); results do not depend on it")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_flag("--rescale-t", cfg.rescale_t, "map t affinely onto [0, 1] before testing");
    app.add_option("--grid-points", cfg.grid_points, "positive lambda grid points")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--variance", cfg.variance, "variance-component criterion for clustered null fits")
        ->check(CLI::IsMember({"reml", "ml"}))
        ->capture_default_str();
    app.add_option("--emit-paths", cfg.emit_paths, "resampled cusum paths written next to the observed process")
        ->capture_default_str();
    app.add_option("--y", cfg.y_col, "response column")->capture_default_str();
    app.add_option("--t", cfg.t_col, "smooth covariate column")->capture_default_str();
    app.add_option("--s", cfg.s_cols, "parametric covariate columns")->delimiter(',');
    app.add_option("--cluster", cfg.cluster_col, "cluster label column");
    app.add_option("--nruns", cfg.nruns, "Monte Carlo replicates per cell")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--m", cfg.ms, "sample sizes")->delimiter(',')->capture_default_str();
    app.add_option("--sigma", cfg.sigmas, "noise standard deviations")->delimiter(',')->capture_default_str();
    app.add_option("--c", cfg.cs, "departure-from-linearity levels")->delimiter(',')->capture_default_str();
    app.add_option("--tests", cfg.tests, "study tests (lrt1,lrt2,rlrt,score,cusum)")->delimiter(',')->capture_default_str();
    app.add_option("--covariate-scale", cfg.covariate_scale, "read N(0, v) covariate spreads as variance or sd")
        ->check(CLI::IsMember({"variance", "sd"}))
        ->capture_default_str();

    auto* test = app.add_subcommand("test", "run one test on a data file");
    auto* simulate = app.add_subcommand("simulate", "run the size/power simulation study");
    auto* null_sim = app.add_subcommand("null-sim", "simulate and store an LRT/RLRT null distribution");
    auto* report = app.add_subcommand("report", "render a simulation report CSV as text tables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : exit_code(ErrorCategory::config);
    }

    // A config file echoed back with an empty list yields one empty entry.
    std::erase(cfg.s_cols, std::string{});
    std::erase(cfg.tests, std::string{});
    const std::string effective = app.config_to_str(true, false);
    try {
        if (*test) {
            return cmd_test(cfg, effective);
        }
        if (*simulate) {
            return cmd_simulate(cfg, effective);
        }
        if (*null_sim) {
            return cmd_null_sim(cfg, effective);
        }
        if (*report) {
            return cmd_report(cfg);
        }
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return exit_code(ErrorCategory::internal);
    }
    return exit_code(ErrorCategory::config);
}
