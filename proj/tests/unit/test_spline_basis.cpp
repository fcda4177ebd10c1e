#include "covtest/spline_basis.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace covtest;

namespace {

double max_abs(const MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("place_knots: K = 0 gives an empty set")
{
    KnotSet k = place_knots(VectorXd::LinSpaced(10, 0, 1), 0, 1);
    CHECK(k.size() == 0);
    CHECK(k.degree == 1);
}

TEST_CASE("place_knots: median of a symmetric grid")
{
    KnotSet k = place_knots(VectorXd::LinSpaced(101, 0, 1), 1, 1);
    REQUIRE(k.size() == 1);
    CHECK(k.knots[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("place_knots: permutation of 1..99 with K = 9")
{
    std::vector<double> v(99);
    std::iota(v.begin(), v.end(), 1.0);
    std::mt19937_64 rng(17);
    std::shuffle(v.begin(), v.end(), rng);
    KnotSet k = place_knots(Eigen::Map<VectorXd>(v.data(), 99), 9, 1);
    REQUIRE(k.size() == 9);
    for (int j = 0; j < 9; ++j) {
        CHECK(k.knots[static_cast<std::size_t>(j)] == 10.0 * (j + 1));
    }
}

TEST_CASE("place_knots: order-statistic oracle on random tied data")
{
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 20 + rep;
        VectorXd t(n);
        for (int i = 0; i < n; ++i) {
            t(i) = std::floor(std::uniform_real_distribution<double>(0, 40)(rng));
        }
        std::vector<double> distinct(t.data(), t.data() + n);
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        const int nd = static_cast<int>(distinct.size());
        const int K = std::min(8, nd - 1);
        KnotSet k = place_knots(t, K, 2);
        REQUIRE(k.size() == K);
        for (int j = 1; j <= K; ++j) {
            const int idx = static_cast<int>(std::ceil(static_cast<double>(j) * nd / (K + 1)));
            CHECK(k.knots[static_cast<std::size_t>(j - 1)] == distinct[static_cast<std::size_t>(idx - 1)]);
        }
        for (int j = 1; j < K; ++j) {
            CHECK(k.knots[static_cast<std::size_t>(j - 1)] < k.knots[static_cast<std::size_t>(j)]);
        }
    }
}

TEST_CASE("place_knots: collapsing quantiles ask for a smaller K")
{
    VectorXd t(6);
    t << 0, 0, 0, 1, 1, 1;
    try {
        (void)place_knots(t, 3, 1);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::config);
        CHECK(std::string(e.what()).find("smaller") != std::string::npos);
    }
    CHECK_FAILS_WITH(place_knots(t, -1, 1), ErrorCategory::config);
}

TEST_CASE("truncated_power")
{
    CHECK(truncated_power(0.3, 0.5, 1) == 0.0);
    CHECK(truncated_power(0.7, 0.5, 2) == doctest::Approx(0.04).epsilon(1e-14));
    for (int d = 0; d <= 4; ++d) {
        CHECK(truncated_power(0.5, 0.5, d) == 0.0);
    }
    CHECK(truncated_power(0.6, 0.5, 0) == 1.0);
    CHECK(truncated_power(0.4, 0.5, 0) == 0.0);
    CHECK(truncated_power(3.0, 1.0, 3) == 8.0);
}

TEST_CASE("build_design: single observation")
{
    KnotSet k{{0.5}, 1};
    DesignMatrices d = build_design(MatrixXd(1, 0), VectorXd::Constant(1, 0.3), k);
    REQUIRE(d.A.rows() == 1);
    REQUIRE(d.A.cols() == 2);
    CHECK(d.A(0, 0) == 1.0);
    CHECK(d.A(0, 1) == 0.3);
    REQUIRE(d.B.cols() == 1);
    CHECK(d.B(0, 0) == 0.0);
    CHECK(d.X == d.A);
}

TEST_CASE("build_design: linear basis with 20 quantile knots on 50 points")
{
    VectorXd t = VectorXd::LinSpaced(50, 0, 1);
    KnotSet k = place_knots(t, 20, 1);
    DesignMatrices d = build_design(MatrixXd(50, 0), t, k);
    REQUIRE(d.B.rows() == 50);
    REQUIRE(d.B.cols() == 20);
    for (int i = 0; i < 50; ++i) {
        for (int j = 0; j < 20; ++j) {
            CHECK(d.B(i, j) == std::max(0.0, t(i) - k.knots[static_cast<std::size_t>(j)]));
        }
    }
}

TEST_CASE("build_design: structure on random inputs")
{
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 30; ++rep) {
        const int n = 15 + rep;
        const int d = rep % 3;
        const int K = 1 + rep % 6;
        oracle::RandomDesign r = oracle::random_design(rng, n, rep % 3, std::max(d, 1), K);
        KnotSet k = place_knots(r.t, K, d);
        DesignMatrices des = build_design(r.S, r.t, k);
        CHECK(des.A.col(0).isOnes());
        CHECK(des.X.cols() == r.S.cols() + d + 1);
        CHECK(des.X.leftCols(r.S.cols()) == r.S);
        CHECK((des.B.array() >= 0).all());
        for (int j = 0; j < K; ++j) {
            const double xi = k.knots[static_cast<std::size_t>(j)];
            int above = 0;
            int nonzero = 0;
            for (int i = 0; i < n; ++i) {
                above += r.t(i) > xi ? 1 : 0;
                nonzero += des.B(i, j) != 0.0 ? 1 : 0;
                if (r.t(i) <= xi) {
                    CHECK(des.B(i, j) == 0.0);
                }
            }
            if (d >= 1) {
                CHECK(nonzero == above);
            }
        }
    }
}

TEST_CASE("build_design: rank deficiency and malformed knots")
{
    KnotSet k{{}, 1};
    CHECK_FAILS_WITH(build_design(MatrixXd(5, 0), VectorXd::Constant(5, 0.2), k), ErrorCategory::model);
    KnotSet unordered{{0.6, 0.4}, 1};
    CHECK_FAILS_WITH(build_design(MatrixXd(5, 0), VectorXd::LinSpaced(5, 0, 1), unordered), ErrorCategory::config);
}

TEST_CASE("reduced_X drops the top polynomial columns")
{
    VectorXd t = VectorXd::LinSpaced(12, 0, 1);
    MatrixXd S = MatrixXd::Random(12, 2);
    DesignMatrices d = build_design(S, t, place_knots(t, 3, 2));
    MatrixXd X0 = d.reduced_X(1);
    REQUIRE(X0.cols() == 4);
    CHECK(X0 == d.X.leftCols(4));
    CHECK(d.reduced_X(0) == d.X);
    CHECK_FAILS_WITH(d.reduced_X(3), ErrorCategory::config);
}

TEST_CASE("translation equivariance of the truncated power basis")
{
    std::mt19937_64 rng(37);
    for (int rep = 0; rep < 20; ++rep) {
        const int d = 1 + rep % 3;
        oracle::RandomDesign r = oracle::random_design(rng, 25, 0, d, 5);
        // Shift by a power of two so that t + c and knot + c are exact.
        const double c = std::ldexp(1.0, rep % 5);
        KnotSet k{r.knots, d};
        KnotSet ks = k;
        for (auto& v : ks.knots) {
            v += c;
        }
        VectorXd ts = r.t.array() + c;
        MatrixXd B = truncated_power_basis(r.t, k);
        MatrixXd Bs = truncated_power_basis(ts, ks);
        CHECK(max_abs(B - Bs) <= 1e-12 * std::max(1.0, max_abs(B)));
    }
}

TEST_CASE("permuting knots permutes the columns of B")
{
    std::mt19937_64 rng(41);
    oracle::RandomDesign r = oracle::random_design(rng, 30, 0, 2, 6);
    KnotSet k{r.knots, 2};
    MatrixXd B = truncated_power_basis(r.t, k);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    KnotSet kp{{}, 2};
    for (int j : perm) {
        kp.knots.push_back(k.knots[static_cast<std::size_t>(j)]);
    }
    MatrixXd Bp = truncated_power_basis(r.t, kp);
    for (int j = 0; j < 6; ++j) {
        CHECK(Bp.col(j) == B.col(perm[static_cast<std::size_t>(j)]));
    }
}

TEST_CASE("[A|B] has full column rank for distinct t and K <= n - d - 1")
{
    std::mt19937_64 rng(43);
    for (int rep = 0; rep < 40; ++rep) {
        const int d = 1 + rep % 3;
        const int n = 12 + rep % 10;
        const int K = n - d - 1;
        oracle::RandomDesign r = oracle::random_design(rng, n, 0, d, 1);
        KnotSet k = place_knots(r.t, K, d);
        DesignMatrices des = build_design(MatrixXd(n, 0), r.t, k);
        MatrixXd AB(n, des.A.cols() + des.B.cols());
        AB << des.A, des.B;
        Eigen::ColPivHouseholderQR<MatrixXd> qr(AB);
        qr.setThreshold(1e-12);
        CHECK(qr.rank() == AB.cols());
    }
}

TEST_CASE("spline_kernel: closed form against Simpson quadrature")
{
    const double grid[] = {0.0, 0.1, 0.37, 0.5, 0.82, 1.0};
    for (int d = 0; d <= 4; ++d) {
        const double fact = std::tgamma(d + 1.0);
        for (double s : grid) {
            for (double u : grid) {
                const double m = std::min(s, u);
                const double quad = oracle::simpson(
                                        [&](double w) { return std::pow(s - w, d) * std::pow(u - w, d); }, 0.0, m,
                                        2000) /
                                    (fact * fact);
                CHECK(spline_kernel(s, u, d) == doctest::Approx(quad).epsilon(1e-10));
            }
        }
    }
    // d = 1 at s = u = 1: integral of (1 - w)^2 over [0, 1].
    CHECK(spline_kernel(1.0, 1.0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const double s = 0.3, u = 0.8, m = 0.3;
    CHECK(spline_kernel(s, u, 1) == doctest::Approx(s * u * m - (s + u) * m * m / 2 + m * m * m / 3).epsilon(1e-14));
}

TEST_CASE("smoother_kernel: natural kernel uses t rescaled to [0, 1]")
{
    VectorXd t(4);
    t << 2, 6, 4, 10;
    SmootherKernel k = smoother_kernel(t, 1, KernelKind::natural_spline);
    VectorXd u = (t.array() - 2.0) / 8.0;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(k.M(i, j) == doctest::Approx(spline_kernel(u(i), u(j), 1)).epsilon(1e-14));
        }
    }
    CHECK(k.M(3, 3) == doctest::Approx(1.0 / 3.0));
    CHECK_FAILS_WITH(smoother_kernel(VectorXd::Constant(3, 1.0), 1, KernelKind::natural_spline),
                     ErrorCategory::config);
}

TEST_CASE("smoother_kernel: penalized Gram of a unit column")
{
    // Only t = 8 lies above the knot, at distance 1, so B = e_9 and B B^T
    // has a single unit eigenvalue.
    VectorXd t = VectorXd::LinSpaced(9, 0, 8);
    KnotSet k{{7.0}, 1};
    SmootherKernel g = smoother_kernel(t, 1, KernelKind::penalized_gram, k);
    MatrixXd B = truncated_power_basis(t, k);
    CHECK(max_abs(g.M - B * B.transpose()) == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(g.M);
    VectorXd ev = es.eigenvalues();
    for (int i = 0; i < 8; ++i) {
        CHECK(ev(i) == doctest::Approx(0.0));
    }
    CHECK(ev(8) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_FAILS_WITH(smoother_kernel(t, 1, KernelKind::penalized_gram), ErrorCategory::config);
}

TEST_CASE("smoother_kernel: symmetric and PSD on random inputs")
{
    std::mt19937_64 rng(47);
    for (int rep = 0; rep < 20; ++rep) {
        const int d = 1 + rep % 3;
        oracle::RandomDesign r = oracle::random_design(rng, 40, 0, d, 6);
        for (KernelKind kind : {KernelKind::natural_spline, KernelKind::penalized_gram}) {
            SmootherKernel k = smoother_kernel(r.t, d, kind, KnotSet{r.knots, d});
            CHECK(k.M == k.M.transpose());
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(k.M);
            CHECK(es.eigenvalues().minCoeff() >= -1e-8 * k.M.norm());
        }
    }
}

TEST_CASE("kernel names round-trip")
{
    CHECK(parse_kernel("natural") == KernelKind::natural_spline);
    CHECK(parse_kernel("penalized") == KernelKind::penalized_gram);
    CHECK(kernel_name(KernelKind::natural_spline) == "natural");
    CHECK_FAILS_WITH(parse_kernel("gaussian"), ErrorCategory::config);
}
