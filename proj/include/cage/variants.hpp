#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "cage/math.hpp"
#include "cage/model.hpp"
#include "cage/types.hpp"

namespace cage {

inline constexpr double kScoreClampEps = 1e-6;
inline constexpr int kAltQuadPanels = 1024;

// ---------------------------------------------------------------------------
// Snorkel shared-parameter variant (one theta_j per LF, opposite signs for
// the agree/disagree branches).
// ---------------------------------------------------------------------------

inline double snorkel_log_potential(double theta_j, const LFSpec& lf, int tau_ij, int y) {
    detail::check_trigger(tau_ij, lf);
    if (tau_ij == 0) return 0.0;
    return y == lf.target_class ? theta_j : -theta_j;
}

inline double snorkel_log_normalizer(std::span<const double> theta_shared,
                                     const std::vector<LFSpec>& lfs, int num_classes) {
    std::vector<double> per_class(num_classes, 0.0);
    for (int y = 1; y <= num_classes; ++y) {
        double acc = 0.0;
        for (size_t j = 0; j < lfs.size(); ++j)
            acc += softplus(y == lfs[j].target_class ? theta_shared[j] : -theta_shared[j]);
        per_class[y - 1] = acc;
    }
    return log_sum_exp(per_class);
}

inline LabelPosterior snorkel_posterior(std::span<const double> theta_shared,
                                        const std::vector<LFSpec>& lfs,
                                        std::span<const int> tau_row, int num_classes) {
    std::vector<double> scores(num_classes, 0.0);
    for (int y = 1; y <= num_classes; ++y)
        for (size_t j = 0; j < lfs.size(); ++j)
            scores[y - 1] += snorkel_log_potential(theta_shared[j], lfs[j], tau_row[j], y);
    return posterior_from_scores(std::move(scores));
}

// ---------------------------------------------------------------------------
// Directed Bayesian-network variant: class prior, per-LF trigger Bernoulli
// P(tau_j = k_j | y) = sigmoid(theta_{jy}), and the same locally normalized
// Beta potentials for continuous LFs. No global normalizer.
// ---------------------------------------------------------------------------

inline double directed_log_joint(std::span<const double> class_prior, const ModelParams& params,
                                 const std::vector<LFSpec>& lfs, std::span<const int> tau_row,
                                 std::span<const double> s_row, int y) {
    const int K = static_cast<int>(class_prior.size());
    detail::check_class(y, K);
    double total = std::accumulate(class_prior.begin(), class_prior.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("directed_log_joint: class_prior does not sum to 1");
    double acc = std::log(class_prior[y - 1]);
    for (size_t j = 0; j < lfs.size(); ++j) {
        double th = params.theta(static_cast<int>(j), y - 1);
        // log sigmoid(th) when triggered, log(1 - sigmoid(th)) otherwise
        acc += tau_row[j] != 0 ? -softplus(-th) : -softplus(th);
        if (lfs[j].is_continuous && tau_row[j] != 0)
            acc += continuous_log_potential(params, static_cast<int>(j), lfs[j], tau_row[j],
                                            s_row[j], y);
    }
    return acc;
}

inline LabelPosterior directed_posterior(std::span<const double> class_prior,
                                         const ModelParams& params,
                                         const std::vector<LFSpec>& lfs,
                                         std::span<const int> tau_row,
                                         std::span<const double> s_row) {
    const int K = static_cast<int>(class_prior.size());
    std::vector<double> scores(K);
    for (int y = 1; y <= K; ++y)
        scores[y - 1] = directed_log_joint(class_prior, params, lfs, tau_row, s_row, y);
    return posterior_from_scores(std::move(scores));
}

// ---------------------------------------------------------------------------
// Alternative continuous potential forms. Unlike the Beta these do not
// integrate to one, so the model normalizer carries a numerical integral of
// each triggered form over the clamped score interval.
// ---------------------------------------------------------------------------

inline bool is_alt_variant(Variant v) {
    return v == Variant::alt_weight || v == Variant::alt_threshold || v == Variant::alt_sigmoid ||
           v == Variant::alt_logit || v == Variant::alt_half_gaussian;
}

namespace alt {

// s-dependent multiplier g(s) in f = theta * g(s) (forms other than the
// half-Gaussian, whose density does not involve theta).
inline double form_g(Variant form, double s, double pi_j) {
    switch (form) {
        case Variant::alt_weight: return s;
        case Variant::alt_threshold: return std::max(s - pi_j, 0.0);
        case Variant::alt_sigmoid: return sigmoid(s - pi_j);
        case Variant::alt_logit: {
            double sc = clamp_unit_open(s, kScoreClampEps);
            return std::log(sc / (1.0 - sc));
        }
        default: throw std::logic_error("form_g: not a theta-scaled form");
    }
}

// Half-normal log density with mode at x = 0 and scale sigma, evaluated at
// x >= 0 (x is 1-s on the agreement branch, s on disagreement).
inline double half_gaussian_log_density(double x, double sigma) {
    constexpr double kLogSqrt2OverPi = -0.22579135264472741679;  // log sqrt(2/pi)
    return kLogSqrt2OverPi - std::log(sigma) - x * x / (2.0 * sigma * sigma);
}

struct AltParams {
    double theta = 0.0;  // theta_{jy}
    double pi = 0.0;     // threshold/sigmoid offset, exp(rho_{j,0})
    double sigma = 1.0;  // half-Gaussian scale, exp(rho_{jy})
    bool agree = true;
};

inline double log_value(Variant form, const AltParams& p, double s) {
    if (form == Variant::alt_half_gaussian) {
        double x = p.agree ? 1.0 - s : s;
        return half_gaussian_log_density(x, p.sigma);
    }
    return p.theta * form_g(form, s, p.pi);
}

inline double d_dtheta(Variant form, const AltParams& p, double s) {
    if (form == Variant::alt_half_gaussian) return 0.0;
    return form_g(form, s, p.pi);
}

// Derivative w.r.t. the underlying rho (pi = exp(rho) or sigma = exp(rho)).
inline double d_drho(Variant form, const AltParams& p, double s) {
    switch (form) {
        case Variant::alt_weight:
        case Variant::alt_logit:
            return 0.0;
        case Variant::alt_threshold:
            return s > p.pi ? -p.theta * p.pi : 0.0;
        case Variant::alt_sigmoid: {
            double sg = sigmoid(s - p.pi);
            return -p.theta * sg * (1.0 - sg) * p.pi;
        }
        case Variant::alt_half_gaussian: {
            double x = p.agree ? 1.0 - s : s;
            return -1.0 + x * x / (p.sigma * p.sigma);
        }
        default: throw std::logic_error("d_drho: not an alt form");
    }
}

struct Integrals {
    double value = 0.0;     // I = integral of exp(f)
    double d_theta = 0.0;   // dI/dtheta
    double d_rho = 0.0;     // dI/drho
};

// Composite Simpson on a mesh graded geometrically toward both endpoints.
// The logit form's integrand behaves like s^theta near 0 and (1-s)^(-theta)
// near 1; a uniform mesh cannot resolve those spikes, a geometric one can.
template <typename F>
double alt_quadrature(F&& f, double lo, double hi) {
    constexpr double kRatio = 1.2;
    constexpr int kPanelsPerSegment = 8;  // ~144 segments, > 1024 panels total
    const double mid = 0.5;
    double acc = 0.0;
    for (double a = lo; a < mid;) {
        double b = std::min(a * kRatio, mid);
        acc += simpson(f, a, b, kPanelsPerSegment);
        a = b;
    }
    for (double a = 1.0 - hi; a < mid;) {
        double b = std::min(a * kRatio, mid);
        // mirrored segment [1-b, 1-a]
        acc += simpson(f, 1.0 - b, 1.0 - a, kPanelsPerSegment);
        a = b;
    }
    return acc;
}

inline Integrals integrals(Variant form, const AltParams& p) {
    Integrals out;
    const double lo = kScoreClampEps;
    const double hi = 1.0 - kScoreClampEps;
    out.value = alt_quadrature([&](double s) { return std::exp(log_value(form, p, s)); }, lo, hi);
    out.d_theta = alt_quadrature(
        [&](double s) { return d_dtheta(form, p, s) * std::exp(log_value(form, p, s)); }, lo, hi);
    out.d_rho = alt_quadrature(
        [&](double s) { return d_drho(form, p, s) * std::exp(log_value(form, p, s)); }, lo, hi);
    return out;
}

}  // namespace alt

// Extracts the per-(j,y) alt parameters from the shared ModelParams layout:
// pi_j = exp(rho(j,0)) for the threshold forms, sigma_{jy} = exp(rho(j,y))
// for the half-Gaussian.
inline alt::AltParams alt_params_at(Variant, const ModelParams& params, int j,
                                    const LFSpec& lf, int y) {
    alt::AltParams p;
    p.theta = params.theta(j, y - 1);
    p.pi = std::exp(params.rho(j, 0));
    p.sigma = std::exp(params.rho(j, y - 1));
    p.agree = (y == lf.target_class);
    return p;
}

inline double alt_continuous_log_potential(Variant form, const ModelParams& params, int j,
                                           const LFSpec& lf, int tau_ij, double s_ij, int y) {
    if (!is_alt_variant(form)) throw std::invalid_argument("not an alt potential form");
    detail::check_class(y, params.theta.cols());
    detail::check_trigger(tau_ij, lf);
    if (tau_ij == 0) return 0.0;
    double s = clamp_unit_open(s_ij, kScoreClampEps);
    return alt::log_value(form, alt_params_at(form, params, j, lf, y), s);
}

// ---------------------------------------------------------------------------
// Majority vote baseline (discrete triggers only).
// ---------------------------------------------------------------------------

inline LabelPosterior majority_vote(std::span<const int> tau_row, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("majority_vote: need at least one class");
    std::vector<int> counts(num_classes, 0);
    int total = 0;
    for (int t : tau_row) {
        if (t == 0) continue;
        if (t < 1 || t > num_classes) throw std::invalid_argument("majority_vote: bad trigger");
        ++counts[t - 1];
        ++total;
    }
    LabelPosterior out;
    out.probs.resize(num_classes);
    if (total == 0) {
        for (double& p : out.probs) p = 1.0 / num_classes;
    } else {
        for (int y = 0; y < num_classes; ++y) out.probs[y] = static_cast<double>(counts[y]) / total;
    }
    int best = 0;
    for (int y = 1; y < num_classes; ++y)
        if (out.probs[y] > out.probs[best]) best = y;
    out.prediction = best + 1;
    return out;
}

}  // namespace cage
