#pragma once

#include "covtest/data_io.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace covtest {

/// f_c(t) = 0.25 c t exp(2 - 2t) - t + 0.5; linear for c = 0.
double f_c(double t, int c);

struct DesignSpec {
    double beta1 = 1.3;
    double beta2 = 0.45;
    double s1_spread = 0.3;  // variance of s1 (or SD, see covariate_variance)
    double s2_spread = 0.4;
    bool covariate_variance = true;
};

/// One draw of the partially linear simulation model with t on the equally
/// spaced grid (i - 1) / (m - 1). Covariates use the stream (seed, {0}),
/// noise uses (seed, {1}); the same seed gives the same covariates and the
/// same standardized noise for every (sigma, c).
Dataset generate_dataset(int m, double sigma, int c, std::uint64_t seed, const DesignSpec& spec = {});

enum class StudyTest { lrt1, lrt2, rlrt, score, cusum };

std::string_view study_test_name(StudyTest t) noexcept;
StudyTest parse_study_test(std::string_view name);

struct SimConfig {
    std::vector<int> ms{50, 100};
    std::vector<double> sigmas{0.25, 0.5};
    std::vector<int> cs{0, 1, 2, 3, 4};
    std::vector<double> levels{0.05, 0.1};
    std::vector<StudyTest> tests{StudyTest::lrt1, StudyTest::lrt2, StudyTest::rlrt, StudyTest::score};
    int n_runs = 1000;
    int knots = 20;
    std::size_t n_sims = 10000;
    int grid_points = 200;
    std::size_t cusum_resamples = 1000;
    std::uint64_t seed = 20080215;
    int threads = 0;
    DesignSpec design;
    std::optional<std::filesystem::path> cache_dir;
};

void validate(const SimConfig& config);

struct SimCell {
    std::string test;
    double level = 0.0;
    double sigma = 0.0;
    int m = 0;
    int c = 0;
    int n_runs = 0;
    int n_valid = 0;
    int rejections = 0;
    double rate = 0.0;
    double se = 0.0;  // sqrt(rate (1 - rate) / n_valid)
};

struct NullSummary {
    std::string test;
    int m = 0;
    std::size_t n_sims = 0;
    double zero_mass = 0.0;
    bool cache_hit = false;
};

struct SimReport {
    std::vector<SimCell> cells;
    std::vector<NullSummary> nulls;
    double runtime_seconds = 0.0;

    const SimCell* find(std::string_view test, double level, double sigma, int m, int c) const;
};

/// Runs every configured test on the same simulated data set per replicate.
/// The report is bit-identical for a fixed seed regardless of `threads`.
/// More than 1% failed replicates in any cell is a numerical error.
SimReport run_study(const SimConfig& config);

/// Machine-readable cells; excludes runtime so reruns compare byte-equal.
void write_report_csv(const SimReport& report, std::ostream& os);
SimReport read_report_csv(std::istream& is);

/// Aligned text tables, one per m, rows nominal level > sigma > test and
/// one column per c.
std::string format_report_table(const SimReport& report);

}  // namespace covtest
