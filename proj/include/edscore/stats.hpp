// SPDX-License-Identifier: Apache-2.0
//
// Scoring metrics and the statistics used by the evaluation: quadratic
// weighted kappa, paired t-test, Pearson correlation, simple linear
// regression with F-test, and the Student-t / F CDFs via the regularized
// incomplete beta function.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "edscore/common.hpp"

namespace edscore {

struct ConfusionMatrix {
    int num_labels = 0;
    std::vector<double> counts;  // K*K, counts[i*K+j] = #(human i, predicted j)
    double n = 0.0;

    double& at(int i, int j) { return counts[static_cast<std::size_t>(i * num_labels + j)]; }
    double at(int i, int j) const { return counts[static_cast<std::size_t>(i * num_labels + j)]; }
};

struct PairedTestResult {
    double mean_diff = 0.0;
    double sd_diff = 0.0;
    int n = 0;
    double t = 0.0;
    int df = 0;
    double p_value = 1.0;
};

struct RegressionResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r = 0.0;
    double r_squared = 0.0;
    double f_stat = 0.0;
    int df1 = 1;
    int df2 = 0;
    double p_value = 1.0;
};

// ---------------------------------------------------------------------------
// regularized incomplete beta and derived CDFs
// ---------------------------------------------------------------------------

namespace detail {

// continued fraction for I_x(a,b), modified Lentz
inline double beta_cont_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    constexpr int max_iter = 500;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) <= eps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

inline double regularized_incomplete_beta(double x, double a, double b) {
    if (!(a > 0.0 && b > 0.0)) throw NumericError("regularized_incomplete_beta: a,b must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_cont_fraction(a, b, x) / a;
    }
    return 1.0 - front * detail::beta_cont_fraction(b, a, 1.0 - x) / b;
}

// P(T <= t) for Student's t with df degrees of freedom
inline double t_cdf(double t, int df) {
    if (df < 1) throw NumericError("t_cdf: df must be >= 1");
    if (t == 0.0) return 0.5;
    const double v = static_cast<double>(df);
    const double x = v / (v + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(x, v / 2.0, 0.5);
    return t > 0.0 ? 1.0 - tail : tail;
}

// P(F <= x) for F(1, df) via the identity F(1, df) = T(df)^2
inline double f_cdf_1(double x, int df) {
    if (df < 1) throw NumericError("f_cdf_1: df must be >= 1");
    if (x <= 0.0) return 0.0;
    return 2.0 * t_cdf(std::sqrt(x), df) - 1.0;
}

inline double two_sided_t_pvalue(double t, int df) {
    return 2.0 * (1.0 - t_cdf(std::fabs(t), df));
}

// ---------------------------------------------------------------------------
// quadratic weighted kappa
// ---------------------------------------------------------------------------

inline ConfusionMatrix confusion_matrix(std::span<const int> human, std::span<const int> predicted,
                                        int num_labels) {
    if (human.size() != predicted.size())
        throw DataError("confusion_matrix: rating lists differ in length");
    if (num_labels < 2) throw DataError("confusion_matrix: need at least 2 labels");
    ConfusionMatrix cm;
    cm.num_labels = num_labels;
    cm.counts.assign(static_cast<std::size_t>(num_labels) * num_labels, 0.0);
    for (std::size_t k = 0; k < human.size(); ++k) {
        const int h = human[k];
        const int p = predicted[k];
        if (h < 0 || h >= num_labels || p < 0 || p >= num_labels)
            throw DataError("confusion_matrix: label out of range [0, K)");
        cm.at(h, p) += 1.0;
        cm.n += 1.0;
    }
    return cm;
}

// kappa = 1 - sum(w*O) / sum(w*E), w[i][j] = (i-j)^2/(K-1)^2, E[i][j] = row_i*col_j/n.
// Unobserved labels keep zero marginals and still shape E; returns 1 when both
// weighted sums are zero (all mass on one diagonal cell).
inline double qwk_from_confusion(const ConfusionMatrix& cm) {
    const int K = cm.num_labels;
    if (cm.n < 1.0) throw DataError("qwk: empty confusion matrix");
    std::vector<double> row(static_cast<std::size_t>(K), 0.0);
    std::vector<double> col(static_cast<std::size_t>(K), 0.0);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            row[static_cast<std::size_t>(i)] += cm.at(i, j);
            col[static_cast<std::size_t>(j)] += cm.at(i, j);
        }
    const double norm = static_cast<double>(K - 1) * (K - 1);
    double num = 0.0;
    double den = 0.0;
    for (int i = 0; i < K; ++i) {
        for (int j = 0; j < K; ++j) {
            const double w = static_cast<double>(i - j) * (i - j) / norm;
            num += w * cm.at(i, j);
            den += w * row[static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(j)] / cm.n;
        }
    }
    if (num == 0.0 && den == 0.0) return 1.0;
    return 1.0 - num / den;
}

inline double qwk(std::span<const int> human, std::span<const int> predicted, int num_labels) {
    if (human.size() < 2) throw DataError("qwk: need at least 2 rating pairs");
    return qwk_from_confusion(confusion_matrix(human, predicted, num_labels));
}

// ---------------------------------------------------------------------------
// paired t-test
// ---------------------------------------------------------------------------

inline PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("paired_t_test: lists differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw DataError("paired_t_test: need n >= 2");

    PairedTestResult res;
    res.n = static_cast<int>(n);
    res.df = res.n - 1;

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    res.mean_diff = mean;
    res.sd_diff = sd;
    if (sd == 0.0) {
        if (mean == 0.0) {
            res.t = 0.0;
            res.p_value = 1.0;
            return res;
        }
        throw NumericError("paired_t_test: zero variance with nonzero mean difference");
    }
    res.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    res.p_value = two_sided_t_pvalue(res.t, res.df);
    return res;
}

// ---------------------------------------------------------------------------
// Pearson correlation and simple regression
// ---------------------------------------------------------------------------

inline double pearson_r(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("pearson_r: lists differ in length");
    const std::size_t n = x.size();
    if (n < 3) throw DataError("pearson_r: need n >= 3");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson_r: zero variance input");
    return sxy / std::sqrt(sxx * syy);
}

inline RegressionResult simple_regression(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    RegressionResult res;
    res.r = pearson_r(x, y);  // validates sizes and variance
    res.r_squared = res.r * res.r;
    res.df2 = static_cast<int>(n) - 2;

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    res.slope = sxy / sxx;
    res.intercept = my - res.slope * mx;

    const double one_minus_r2 = 1.0 - res.r_squared;
    if (one_minus_r2 <= 1e-15) {
        res.f_stat = std::numeric_limits<double>::infinity();
        res.p_value = 0.0;
        return res;
    }
    res.f_stat = res.r_squared * static_cast<double>(res.df2) / one_minus_r2;
    res.p_value = 1.0 - f_cdf_1(res.f_stat, res.df2);
    return res;
}

}  // namespace edscore
