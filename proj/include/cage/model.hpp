#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "cage/math.hpp"
#include "cage/types.hpp"

namespace cage {

// alpha/beta are floored here so a wildly negative rho cannot produce a
// degenerate Beta; the floor only engages far outside the trained range.
inline constexpr double kShapeFloor = 1e-8;

namespace detail {

inline void check_class(int y, int num_classes) {
    if (y < 1 || y > num_classes) throw std::invalid_argument("class index out of range");
}

inline void check_trigger(int tau_ij, const LFSpec& lf) {
    if (tau_ij != 0 && tau_ij != lf.target_class)
        throw std::invalid_argument("trigger value must be 0 or the LF's target class");
}

}  // namespace detail

// Discrete potential in log domain: theta_{jy} when the LF fired, 0 otherwise.
inline double discrete_log_potential(const ModelParams& params, int j, const LFSpec& lf,
                                     int tau_ij, int y) {
    detail::check_class(y, params.theta.cols());
    detail::check_trigger(tau_ij, lf);
    if (tau_ij == 0) return 0.0;
    return params.theta(j, y - 1);
}

// Beta shape pair for a continuous LF; branch depends on whether y agrees
// with the LF's target class.
struct BetaShapes {
    double alpha;
    double beta;
};

inline BetaShapes beta_shapes(const ModelParams& params, int j, const LFSpec& lf, int y) {
    double pi = std::exp(params.rho(j, y - 1));
    double qc = *lf.quality_guide_c;
    double alpha, beta;
    if (y == lf.target_class) {
        alpha = qc * pi;
        beta = (1.0 - qc) * pi;
    } else {
        alpha = (1.0 - qc) * pi;
        beta = qc * pi;
    }
    return {std::max(alpha, kShapeFloor), std::max(beta, kShapeFloor)};
}

// Locally normalized score potential: log Beta pdf on the agreement or
// disagreement branch, 0 when the LF did not fire.
inline double continuous_log_potential(const ModelParams& params, int j, const LFSpec& lf,
                                       int tau_ij, double s_ij, int y) {
    if (!lf.is_continuous) throw std::invalid_argument("continuous_log_potential: LF is discrete");
    detail::check_class(y, params.theta.cols());
    detail::check_trigger(tau_ij, lf);
    if (tau_ij == 0) return 0.0;
    if (!(s_ij > 0.0 && s_ij < 1.0))
        throw std::invalid_argument("continuous_log_potential: score outside (0,1)");
    auto [alpha, beta] = beta_shapes(params, j, lf, y);
    return log_beta_pdf(s_ij, alpha, beta);
}

// log Z = log sum_y prod_j (1 + exp(theta_{jy})); independent of rho because
// the Beta factors integrate to one.
inline double log_normalizer(const Matrix& theta, const std::vector<LFSpec>& lfs, int num_classes) {
    const int n = static_cast<int>(lfs.size());
    std::vector<double> per_class(num_classes, 0.0);
    for (int y = 0; y < num_classes; ++y) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += softplus(theta(j, y));
        per_class[y] = acc;
    }
    return log_sum_exp(per_class);
}

// Unnormalized log joint of one instance row, one class: sum of potentials.
inline double log_joint_unnormalized(const ModelParams& params, const std::vector<LFSpec>& lfs,
                                     std::span<const int> tau_row, std::span<const double> s_row,
                                     int y) {
    const int n = static_cast<int>(lfs.size());
    if (static_cast<int>(tau_row.size()) != n || static_cast<int>(s_row.size()) != n)
        throw std::invalid_argument("log_joint: row length mismatch");
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
        acc += discrete_log_potential(params, j, lfs[j], tau_row[j], y);
        if (lfs[j].is_continuous && tau_row[j] != 0)
            acc += continuous_log_potential(params, j, lfs[j], tau_row[j], s_row[j], y);
    }
    return acc;
}

inline double log_joint(const ModelParams& params, const std::vector<LFSpec>& lfs,
                        std::span<const int> tau_row, std::span<const double> s_row, int y) {
    return log_joint_unnormalized(params, lfs, tau_row, s_row, y) -
           log_normalizer(params.theta, lfs, params.theta.cols());
}

inline LabelPosterior posterior_from_scores(std::vector<double> scores) {
    softmax_inplace(scores);
    int best = 0;
    for (int y = 1; y < static_cast<int>(scores.size()); ++y)
        if (scores[y] > scores[best]) best = y;
    return LabelPosterior{std::move(scores), best + 1};
}

inline LabelPosterior posterior(const ModelParams& params, const std::vector<LFSpec>& lfs,
                                std::span<const int> tau_row, std::span<const double> s_row) {
    const int K = params.theta.cols();
    std::vector<double> scores(K);
    for (int y = 1; y <= K; ++y)
        scores[y - 1] = log_joint_unnormalized(params, lfs, tau_row, s_row, y);
    return posterior_from_scores(std::move(scores));
}

// P_theta(y = k_j | tau_j = k_j), marginalizing the other LFs; computed in
// log domain as a softmax over a_y = theta_{jy} + sum_{r != j} softplus(theta_{ry}).
inline double agreement_probability(const Matrix& theta, const std::vector<LFSpec>& lfs, int j) {
    const int n = static_cast<int>(lfs.size());
    const int K = theta.cols();
    if (j < 0 || j >= n) throw std::invalid_argument("agreement_probability: bad LF index");
    std::vector<double> a(K, 0.0);
    for (int y = 0; y < K; ++y) {
        double acc = theta(j, y);
        for (int r = 0; r < n; ++r)
            if (r != j) acc += softplus(theta(r, y));
        a[y] = acc;
    }
    double lse = log_sum_exp(a);
    return std::exp(a[lfs[j].target_class - 1] - lse);
}

}  // namespace cage
