#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace cage {

inline double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)), safe for large |x|
inline double softplus(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double log_sum_exp(std::span<const double> xs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

inline void softmax_inplace(std::vector<double>& xs) {
    double lse = log_sum_exp(xs);
    for (double& x : xs) x = std::exp(x - lse);
}

// Lanczos approximation (g = 7, 9 coefficients). Relative error below
// 1e-13 for positive arguments, deterministic across platforms unlike
// std::lgamma.
inline double log_gamma(double x) {
    static constexpr double kCoef[9] = {
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    };
    if (!(x > 0.0)) throw std::invalid_argument("log_gamma: argument must be positive");
    if (x < 0.5) {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        constexpr double kPi = 3.14159265358979323846;
        return std::log(kPi / std::sin(kPi * x)) - log_gamma(1.0 - x);
    }
    double z = x - 1.0;
    double a = kCoef[0];
    for (int i = 1; i < 9; ++i) a += kCoef[i] / (z + i);
    double t = z + 7.5;
    constexpr double kLogSqrt2Pi = 0.91893853320467274178;
    return kLogSqrt2Pi + (z + 0.5) * std::log(t) - t + std::log(a);
}

inline double log_beta_fn(double a, double b) {
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

// log pdf of Beta(alpha, beta) at s in (0,1)
inline double log_beta_pdf(double s, double alpha, double beta) {
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("log_beta_pdf: s outside (0,1)");
    if (!(alpha > 0.0 && beta > 0.0)) throw std::runtime_error("log_beta_pdf: nonpositive shape");
    return (alpha - 1.0) * std::log(s) + (beta - 1.0) * std::log1p(-s) - log_beta_fn(alpha, beta);
}

// Digamma via recurrence into the asymptotic region.
inline double digamma(double x) {
    if (!(x > 0.0)) throw std::invalid_argument("digamma: argument must be positive");
    double r = 0.0;
    while (x < 6.0) {
        r -= 1.0 / x;
        x += 1.0;
    }
    double f = 1.0 / (x * x);
    return r + std::log(x) - 0.5 / x -
           f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))));
}

// Composite Simpson over [a,b]; panels must be even.
template <typename F>
double simpson(F&& f, double a, double b, int panels) {
    if (panels < 2 || panels % 2 != 0) throw std::invalid_argument("simpson: panels must be even and >= 2");
    double h = (b - a) / panels;
    double acc = f(a) + f(b);
    for (int i = 1; i < panels; ++i) {
        acc += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    }
    return acc * h / 3.0;
}

inline double clamp_unit_open(double s, double eps = 1e-6) {
    return std::clamp(s, eps, 1.0 - eps);
}

inline double clamp_prob(double p, double eps = 1e-12) {
    return std::clamp(p, eps, 1.0 - eps);
}

}  // namespace cage
