// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/stats.hpp"

using namespace edscore;

namespace {

// Brute-force QWK straight from raw rating pairs, no confusion matrix:
// kappa = 1 - sum_k w(h_k,p_k) / ((1/n) sum_{a,b} w(h_a,p_b)).
// Test-only oracle; kept independent of the production path.
double qwk_brute_force(const std::vector<int>& h, const std::vector<int>& p, int K) {
    const double norm = static_cast<double>(K - 1) * (K - 1);
    const std::size_t n = h.size();
    double num = 0.0;
    for (std::size_t k = 0; k < n; ++k) num += (h[k] - p[k]) * (h[k] - p[k]) / norm;
    double den = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) den += (h[a] - p[b]) * (h[a] - p[b]) / norm;
    den /= static_cast<double>(n);
    if (num == 0.0 && den == 0.0) return 1.0;
    return 1.0 - num / den;
}

// ANOVA route for the F statistic: F = SSR / (SSE / (n-2)).
double f_stat_anova(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ssr = 0.0, sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double fit = slope * x[i] + intercept;
        ssr += (fit - my) * (fit - my);
        sse += (y[i] - fit) * (y[i] - fit);
    }
    return ssr / (sse / static_cast<double>(n - 2));
}

}  // namespace

TEST_CASE("qwk: perfect agreement is 1") {
    std::vector<int> h{0, 1, 2, 1, 0, 2};
    CHECK(qwk(h, h, 3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("qwk: worked example recomputed from the formula") {
    std::vector<int> h{0, 0, 1, 2};
    std::vector<int> p{0, 1, 1, 2};
    // sum w*O = 0.25, sum w*E = 1.25
    CHECK(qwk(h, p, 3) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(qwk_brute_force(h, p, 3) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("qwk: matches brute-force oracle on random instances") {
    Rng rng(2024);
    for (int iter = 0; iter < 1000; ++iter) {
        const int K = static_cast<int>(rng.uniform_int(2, 5));
        const int n = static_cast<int>(rng.uniform_int(2, 50));
        std::vector<int> h, p;
        for (int i = 0; i < n; ++i) {
            h.push_back(static_cast<int>(rng.uniform_int(0, K - 1)));
            p.push_back(static_cast<int>(rng.uniform_int(0, K - 1)));
        }
        const double got = qwk(h, p, K);
        const double want = qwk_brute_force(h, p, K);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("qwk: near zero for independent uniform ratings") {
    Rng rng(7);
    const int n = 100000;
    std::vector<int> h(n), p(n);
    for (int i = 0; i < n; ++i) {
        h[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, 2));
        p[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, 2));
    }
    CHECK(std::fabs(qwk(h, p, 3)) < 0.02);
}

TEST_CASE("qwk: transpose symmetry") {
    Rng rng(11);
    for (int iter = 0; iter < 50; ++iter) {
        const int K = static_cast<int>(rng.uniform_int(2, 5));
        std::vector<int> h, p;
        for (int i = 0; i < 30; ++i) {
            h.push_back(static_cast<int>(rng.uniform_int(0, K - 1)));
            p.push_back(static_cast<int>(rng.uniform_int(0, K - 1)));
        }
        CHECK(qwk(h, p, K) == doctest::Approx(qwk(p, h, K)).epsilon(1e-12));
    }
}

TEST_CASE("qwk: single shared label degenerates to 1") {
    std::vector<int> h{1, 1, 1};
    CHECK(qwk(h, h, 3) == doctest::Approx(1.0));
}

TEST_CASE("qwk: unobserved labels still shape expectations") {
    // K=4 declared but only labels {0,1} appear; must not throw
    std::vector<int> h{0, 0, 1, 1};
    std::vector<int> p{0, 1, 1, 0};
    CHECK_NOTHROW(qwk(h, p, 4));
    CHECK(qwk(h, p, 4) == doctest::Approx(qwk_brute_force(h, p, 4)).epsilon(1e-12));
}

TEST_CASE("qwk: errors") {
    std::vector<int> h{0, 1};
    std::vector<int> p{0, 1, 2};
    CHECK_THROWS_AS(qwk(h, p, 3), DataError);
    std::vector<int> bad{0, 5};
    std::vector<int> ok{0, 1};
    CHECK_THROWS_AS(qwk(bad, ok, 3), DataError);
    std::vector<int> one{0};
    CHECK_THROWS_AS(qwk(one, one, 2), DataError);
}

TEST_CASE("paired t-test: identical samples") {
    std::vector<double> a{1.0, 2.0, 3.0};
    const auto res = paired_t_test(a, a);
    CHECK(res.t == 0.0);
    CHECK(res.p_value == doctest::Approx(1.0));
}

TEST_CASE("paired t-test: d=[1,2,3] closed form") {
    std::vector<double> a{2.0, 4.0, 6.0};
    std::vector<double> b{1.0, 2.0, 3.0};
    const auto res = paired_t_test(a, b);
    CHECK(res.t == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-10));
    CHECK(res.df == 2);
    // df=2 tail closed form: 0.5*(1 - t/sqrt(2+t^2))
    const double p_expected = 2.0 * 0.5 * (1.0 - res.t / std::sqrt(2.0 + res.t * res.t));
    CHECK(res.p_value == doctest::Approx(p_expected).epsilon(1e-9));
    CHECK(res.p_value == doctest::Approx(0.074180).epsilon(1e-3));
}

TEST_CASE("paired t-test: antisymmetry") {
    std::vector<double> a{0.85, 0.91, 0.78, 0.88};
    std::vector<double> b{0.80, 0.83, 0.75, 0.90};
    const auto ab = paired_t_test(a, b);
    const auto ba = paired_t_test(b, a);
    CHECK(ab.t == doctest::Approx(-ba.t).epsilon(1e-12));
    CHECK(ab.p_value == doctest::Approx(ba.p_value).epsilon(1e-12));
}

TEST_CASE("paired t-test: scale equivariance of t") {
    std::vector<double> a{1.0, 2.5, 0.5, 3.0, 1.5};
    std::vector<double> b{0.5, 2.0, 0.2, 2.0, 1.1};
    const auto base = paired_t_test(a, b);
    std::vector<double> a2 = b;
    for (std::size_t i = 0; i < a.size(); ++i) a2[i] = b[i] + (a[i] - b[i]) * 7.5;
    const auto scaled = paired_t_test(a2, b);
    CHECK(scaled.t == doctest::Approx(base.t).epsilon(1e-9));
}

TEST_CASE("paired t-test: degenerate errors") {
    std::vector<double> a{1.0};
    CHECK_THROWS_AS(paired_t_test(a, a), DataError);
    std::vector<double> c{2.0, 3.0, 4.0};
    std::vector<double> d{1.0, 2.0, 3.0};  // constant nonzero difference
    CHECK_THROWS_AS(paired_t_test(c, d), NumericError);
}

TEST_CASE("pearson: exact cases") {
    std::vector<double> x{1.0, 2.0, 3.0, 4.0};
    std::vector<double> y{3.0, 5.0, 7.0, 9.0};  // y = 2x+1
    CHECK(pearson_r(x, y) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> neg{-1.0, -2.0, -3.0, -4.0};
    CHECK(pearson_r(x, neg) == doctest::Approx(-1.0).epsilon(1e-12));
    std::vector<double> x3{1.0, 2.0, 3.0};
    std::vector<double> y3{1.0, 3.0, 2.0};
    CHECK(pearson_r(x3, y3) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pearson: affine invariance") {
    Rng rng(5);
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
        x.push_back(rng.normal());
        y.push_back(rng.normal() + 0.4 * x.back());
    }
    const double base = pearson_r(x, y);
    std::vector<double> x2 = x;
    for (auto& v : x2) v = 3.0 * v + 11.0;
    CHECK(pearson_r(x2, y) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("pearson: zero variance error") {
    std::vector<double> x{1.0, 1.0, 1.0};
    std::vector<double> y{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(pearson_r(x, y), NumericError);
}

TEST_CASE("regression: F matches r-route and ANOVA route") {
    Rng rng(99);
    for (int iter = 0; iter < 100; ++iter) {
        const int n = static_cast<int>(rng.uniform_int(5, 60));
        std::vector<double> x, y;
        for (int i = 0; i < n; ++i) {
            x.push_back(rng.normal());
            y.push_back(0.7 * x.back() + rng.normal());
        }
        const auto res = simple_regression(x, y);
        const double f_identity =
            res.r_squared * static_cast<double>(n - 2) / (1.0 - res.r_squared);
        CHECK(res.f_stat == doctest::Approx(f_identity).epsilon(1e-9));
        CHECK(res.f_stat == doctest::Approx(f_stat_anova(x, y)).epsilon(1e-7));
    }
}

TEST_CASE("regression: published r/F pair is consistent") {
    // r = -0.72 at n = 27 implies F = r^2 * 25 / (1 - r^2) = 26.91
    const double r2 = 0.72 * 0.72;
    const double f = r2 * 25.0 / (1.0 - r2);
    CHECK(f == doctest::Approx(26.9103).epsilon(1e-4));
    CHECK(std::fabs(f - 27.12) < 1.0);
    CHECK(r2 == doctest::Approx(0.5184).epsilon(1e-9));
}

TEST_CASE("regression: null slope simulation keeps p uniform-ish") {
    Rng rng(1234);
    int rejections = 0;
    const int trials = 200;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<double> x, y;
        for (int i = 0; i < 200; ++i) {
            x.push_back(rng.normal());
            y.push_back(5.0 + rng.normal());  // true slope 0
        }
        const auto res = simple_regression(x, y);
        if (res.p_value < 0.05) ++rejections;
        CHECK(std::fabs(res.slope) < 0.5);
    }
    // binomial(200, 0.05): mean 10, 3 sigma ~ 9.3
    CHECK(rejections >= 1);
    CHECK(rejections <= 21);
}

TEST_CASE("regression: perfectly linear input hits the sentinel path") {
    std::vector<double> x{1.0, 2.0, 3.0, 4.0};
    std::vector<double> y{2.0, 4.0, 6.0, 8.0};
    const auto res = simple_regression(x, y);
    CHECK(res.r_squared == doctest::Approx(1.0));
    CHECK(std::isinf(res.f_stat));
    CHECK(res.p_value == 0.0);
}

TEST_CASE("t_cdf: symmetry and anchors") {
    CHECK(t_cdf(0.0, 5) == doctest::Approx(0.5).epsilon(1e-12));
    // df=1 is Cauchy: 1/2 + atan(t)/pi
    CHECK(t_cdf(1.0, 1) == doctest::Approx(0.75).epsilon(1e-10));
    CHECK(t_cdf(-1.0, 1) == doctest::Approx(0.25).epsilon(1e-10));
    // df=2 closed form at t = 2*sqrt(3)
    CHECK(t_cdf(3.4641016151377544, 2) == doctest::Approx(0.9629100498862757).epsilon(1e-10));
    CHECK(t_cdf(3.4641, 2) == doctest::Approx(0.96291).epsilon(1e-5));
}

TEST_CASE("t_cdf: monotone and complementary") {
    Rng rng(17);
    for (int df : {1, 2, 5, 26, 100}) {
        double prev = 0.0;
        for (double t = -8.0; t <= 8.0; t += 0.25) {
            const double c = t_cdf(t, df);
            CHECK(c >= prev - 1e-12);
            prev = c;
            CHECK(c + t_cdf(-t, df) == doctest::Approx(1.0).epsilon(1e-10));
        }
    }
    (void)rng;
}

TEST_CASE("f_cdf: squared-t identity") {
    for (int df : {2, 10, 25}) {
        for (double t : {0.5, 1.7, 3.2}) {
            const double via_f = f_cdf_1(t * t, df);
            const double via_t = 2.0 * t_cdf(t, df) - 1.0;
            CHECK(via_f == doctest::Approx(via_t).epsilon(1e-12));
        }
    }
}

TEST_CASE("qwk: invariant under distance-preserving relabeling") {
    Rng rng(23);
    for (int iter = 0; iter < 50; ++iter) {
        const int K = static_cast<int>(rng.uniform_int(2, 5));
        std::vector<int> h, p, hr, pr;
        for (int i = 0; i < 24; ++i) {
            h.push_back(static_cast<int>(rng.uniform_int(0, K - 1)));
            p.push_back(static_cast<int>(rng.uniform_int(0, K - 1)));
            hr.push_back(K - 1 - h.back());  // label reversal preserves distances
            pr.push_back(K - 1 - p.back());
        }
        CHECK(qwk(h, p, K) == doctest::Approx(qwk(hr, pr, K)).epsilon(1e-12));
    }
}
