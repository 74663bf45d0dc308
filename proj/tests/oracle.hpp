#pragma once

// Test-only reference implementations, deliberately independent of the
// library's log-domain code paths: linear-domain enumeration over trigger
// configurations, tanh-sinh quadrature for score integrals, and Beta pdfs
// through std::tgamma.

#include <cmath>
#include <functional>
#include <vector>

#include "cage/types.hpp"

namespace oracle {

// tanh-sinh quadrature on (0,1); handles integrable endpoint singularities.
inline double integrate01(const std::function<double(double)>& f, int points_per_side = 6000) {
    const double tmax = 4.0;
    const double h = tmax / points_per_side;
    const double half_pi = 1.57079632679489661923;
    double acc = 0.0;
    for (int k = -points_per_side; k <= points_per_side; ++k) {
        double t = k * h;
        double u = half_pi * std::sinh(t);
        // x = sigmoid(2u), computed from the smaller exponential so nodes
        // survive near both endpoints instead of rounding through tanh
        double x = u >= 0.0 ? 1.0 / (1.0 + std::exp(-2.0 * u))
                            : std::exp(2.0 * u) / (1.0 + std::exp(2.0 * u));
        double c = std::cosh(u);
        double w = 0.5 * half_pi * h * std::cosh(t) / (c * c);
        if (x <= 0.0 || x >= 1.0 || w <= 0.0) continue;
        acc += f(x) * w;
    }
    return acc;
}

inline double beta_pdf(double s, double a, double b) {
    return std::pow(s, a - 1.0) * std::pow(1.0 - s, b - 1.0) * std::tgamma(a + b) /
           (std::tgamma(a) * std::tgamma(b));
}

inline double beta_pdf_branch(const cage::ModelParams& params, int j, const cage::LFSpec& lf,
                              double s, int y) {
    double pi = std::exp(params.rho(j, y - 1));
    double qc = *lf.quality_guide_c;
    double qa = y == lf.target_class ? qc : 1.0 - qc;
    return beta_pdf(s, qa * pi, (1.0 - qa) * pi);
}

// Z by brute force: all 2^n trigger configurations x K classes, integrating
// each triggered continuous factor numerically.
inline double normalizer(const cage::ModelParams& params, const std::vector<cage::LFSpec>& lfs,
                         int num_classes) {
    const int n = static_cast<int>(lfs.size());
    double total = 0.0;
    for (int y = 1; y <= num_classes; ++y) {
        for (unsigned cfg = 0; cfg < (1u << n); ++cfg) {
            double term = 1.0;
            for (int j = 0; j < n; ++j) {
                if (!(cfg & (1u << j))) continue;
                term *= std::exp(params.theta(j, y - 1));
                if (lfs[j].is_continuous) {
                    int yy = y;
                    term *= integrate01(
                        [&](double s) { return beta_pdf_branch(params, j, lfs[j], s, yy); });
                }
            }
            total += term;
        }
    }
    return total;
}

// Unnormalized joint weight of a concrete (tau, s, y) cell, linear domain.
inline double joint_weight(const cage::ModelParams& params, const std::vector<cage::LFSpec>& lfs,
                           const std::vector<int>& tau, const std::vector<double>& score, int y) {
    double w = 1.0;
    for (size_t j = 0; j < lfs.size(); ++j) {
        if (tau[j] == 0) continue;
        w *= std::exp(params.theta(static_cast<int>(j), y - 1));
        if (lfs[j].is_continuous)
            w *= beta_pdf_branch(params, static_cast<int>(j), lfs[j], score[j], y);
    }
    return w;
}

inline std::vector<double> posterior(const cage::ModelParams& params,
                                     const std::vector<cage::LFSpec>& lfs,
                                     const std::vector<int>& tau,
                                     const std::vector<double>& score, int num_classes) {
    std::vector<double> p(num_classes);
    double total = 0.0;
    for (int y = 1; y <= num_classes; ++y) {
        p[y - 1] = joint_weight(params, lfs, tau, score, y);
        total += p[y - 1];
    }
    for (double& v : p) v /= total;
    return p;
}

// Conditional P(y = k_j | tau_j = k_j) from the enumerated joint.
inline double agreement_probability(const cage::ModelParams& params,
                                    const std::vector<cage::LFSpec>& lfs, int j, int num_classes) {
    const int n = static_cast<int>(lfs.size());
    double num = 0.0, den = 0.0;
    for (int y = 1; y <= num_classes; ++y) {
        for (unsigned cfg = 0; cfg < (1u << n); ++cfg) {
            if (!(cfg & (1u << j))) continue;  // restrict to tau_j = k_j
            double term = 1.0;
            for (int r = 0; r < n; ++r) {
                if (!(cfg & (1u << r))) continue;
                term *= std::exp(params.theta(r, y - 1));
                if (lfs[r].is_continuous) {
                    int yy = y;
                    term *= integrate01(
                        [&](double s) { return beta_pdf_branch(params, r, lfs[r], s, yy); });
                }
            }
            den += term;
            if (y == lfs[j].target_class) num += term;
        }
    }
    return num / den;
}

// Central-difference gradient of a scalar function of a flat parameter vector.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double orig = x[i];
        x[i] = orig + h;
        double fp = f(x);
        x[i] = orig - h;
        double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace oracle
