#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "cage/math.hpp"
#include "cage/model.hpp"
#include "cage/types.hpp"
#include "cage/variants.hpp"

namespace cage {

// Parameters of any trainable variant. Unused fields stay empty.
struct VariantParams {
    Variant variant = Variant::cage;
    int num_classes = 0;
    ModelParams core;                  // cage / alt / directed
    std::vector<double> prior_logits;  // directed, length K
    std::vector<double> theta_shared;  // snorkel, length n
};

struct Grad {
    Matrix theta;
    Matrix rho;
    std::vector<double> prior_logits;
    std::vector<double> theta_shared;
};

inline Grad zero_grad_like(const VariantParams& vp) {
    Grad g;
    g.theta = Matrix(vp.core.theta.rows(), vp.core.theta.cols());
    g.rho = Matrix(vp.core.rho.rows(), vp.core.rho.cols());
    g.prior_logits.assign(vp.prior_logits.size(), 0.0);
    g.theta_shared.assign(vp.theta_shared.size(), 0.0);
    return g;
}

inline std::vector<double> pack(const VariantParams& vp) {
    std::vector<double> out;
    out.insert(out.end(), vp.core.theta.data().begin(), vp.core.theta.data().end());
    out.insert(out.end(), vp.core.rho.data().begin(), vp.core.rho.data().end());
    out.insert(out.end(), vp.prior_logits.begin(), vp.prior_logits.end());
    out.insert(out.end(), vp.theta_shared.begin(), vp.theta_shared.end());
    return out;
}

inline std::vector<double> pack(const Grad& g) {
    std::vector<double> out;
    out.insert(out.end(), g.theta.data().begin(), g.theta.data().end());
    out.insert(out.end(), g.rho.data().begin(), g.rho.data().end());
    out.insert(out.end(), g.prior_logits.begin(), g.prior_logits.end());
    out.insert(out.end(), g.theta_shared.begin(), g.theta_shared.end());
    return out;
}

inline void unpack(std::span<const double> flat, VariantParams& vp) {
    size_t pos = 0;
    auto take = [&](std::vector<double>& dst) {
        std::copy(flat.begin() + pos, flat.begin() + pos + dst.size(), dst.begin());
        pos += dst.size();
    };
    take(vp.core.theta.data());
    take(vp.core.rho.data());
    take(vp.prior_logits);
    take(vp.theta_shared);
    if (pos != flat.size()) throw std::logic_error("unpack: size mismatch");
}

namespace engine {

inline std::vector<double> prior_from_logits(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    softmax_inplace(p);
    return p;
}

// Per-(j,y) integral table for the alt continuous forms.
struct AltTables {
    Matrix integral;  // I_{jy}
    Matrix d_theta;   // dI/dtheta_{jy}
    Matrix d_rho;     // dI/drho (slot depends on the form)
};

// rho column receiving the d/drho contribution for LF j, class column y0.
inline int alt_rho_col(Variant form, int y0) {
    return form == Variant::alt_half_gaussian ? y0 : 0;
}

inline AltTables compute_alt_tables(const VariantParams& vp, const std::vector<LFSpec>& lfs) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    AltTables t{Matrix(n, K, 1.0), Matrix(n, K), Matrix(n, K)};
    for (int j = 0; j < n; ++j) {
        if (!lfs[j].is_continuous) continue;
        for (int y = 1; y <= K; ++y) {
            auto ap = alt_params_at(vp.variant, vp.core, j, lfs[j], y);
            auto ints = alt::integrals(vp.variant, ap);
            t.integral(j, y - 1) = ints.value;
            t.d_theta(j, y - 1) = ints.d_theta;
            t.d_rho(j, y - 1) = ints.d_rho;
        }
    }
    return t;
}

// d log BetaPdf(s; branch(j,y)) / d rho_{jy}
inline double beta_log_pdf_drho(const ModelParams& params, int j, const LFSpec& lf, double s,
                                int y) {
    double pi = std::exp(params.rho(j, y - 1));
    double qc = *lf.quality_guide_c;
    double qa = (y == lf.target_class) ? qc : 1.0 - qc;
    double alpha = std::max(qa * pi, kShapeFloor);
    double beta = std::max((1.0 - qa) * pi, kShapeFloor);
    double d_dpi = qa * std::log(s) + (1.0 - qa) * std::log1p(-s) -
                   (qa * digamma(alpha) + (1.0 - qa) * digamma(beta) - digamma(alpha + beta));
    return pi * d_dpi;
}

// Per-class log score of one instance. Unnormalized for the globally
// normalized variants; the directed variant's score is its complete log
// joint (it has no global Z).
inline std::vector<double> log_scores(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                                      std::span<const int> tau_row,
                                      std::span<const double> s_row) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    switch (vp.variant) {
        case Variant::cage: {
            std::vector<double> u(K);
            for (int y = 1; y <= K; ++y)
                u[y - 1] = log_joint_unnormalized(vp.core, lfs, tau_row, s_row, y);
            return u;
        }
        case Variant::snorkel: {
            std::vector<double> u(K, 0.0);
            for (int y = 1; y <= K; ++y)
                for (int j = 0; j < n; ++j)
                    u[y - 1] += snorkel_log_potential(vp.theta_shared[j], lfs[j], tau_row[j], y);
            return u;
        }
        case Variant::directed: {
            auto prior = prior_from_logits(vp.prior_logits);
            std::vector<double> u(K);
            for (int y = 1; y <= K; ++y)
                u[y - 1] = directed_log_joint(prior, vp.core, lfs, tau_row, s_row, y);
            return u;
        }
        default: {
            if (!is_alt_variant(vp.variant)) throw std::invalid_argument("untrainable variant");
            std::vector<double> u(K, 0.0);
            for (int y = 1; y <= K; ++y) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) {
                    if (tau_row[j] == 0) continue;
                    acc += vp.core.theta(j, y - 1);
                    if (lfs[j].is_continuous)
                        acc += alt_continuous_log_potential(vp.variant, vp.core, j, lfs[j],
                                                            tau_row[j], s_row[j], y);
                }
                u[y - 1] = acc;
            }
            return u;
        }
    }
}

// Adds w(y) * d u_i(y) / d params for one instance row.
inline void accumulate_u_grad(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                              std::span<const int> tau_row, std::span<const double> s_row,
                              std::span<const double> w, Grad& g) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    switch (vp.variant) {
        case Variant::cage: {
            for (int j = 0; j < n; ++j) {
                if (tau_row[j] == 0) continue;
                for (int y = 1; y <= K; ++y) {
                    g.theta(j, y - 1) += w[y - 1];
                    if (lfs[j].is_continuous)
                        g.rho(j, y - 1) +=
                            w[y - 1] * beta_log_pdf_drho(vp.core, j, lfs[j], s_row[j], y);
                }
            }
            return;
        }
        case Variant::snorkel: {
            for (int j = 0; j < n; ++j) {
                if (tau_row[j] == 0) continue;
                for (int y = 1; y <= K; ++y)
                    g.theta_shared[j] += w[y - 1] * (y == lfs[j].target_class ? 1.0 : -1.0);
            }
            return;
        }
        case Variant::directed: {
            auto prior = prior_from_logits(vp.prior_logits);
            double wsum = 0.0;
            for (double v : w) wsum += v;
            for (int y = 0; y < K; ++y) g.prior_logits[y] += w[y] - wsum * prior[y];
            for (int j = 0; j < n; ++j) {
                for (int y = 1; y <= K; ++y) {
                    double sg = sigmoid(vp.core.theta(j, y - 1));
                    g.theta(j, y - 1) += w[y - 1] * (tau_row[j] != 0 ? 1.0 - sg : -sg);
                    if (lfs[j].is_continuous && tau_row[j] != 0)
                        g.rho(j, y - 1) +=
                            w[y - 1] * beta_log_pdf_drho(vp.core, j, lfs[j], s_row[j], y);
                }
            }
            return;
        }
        default: {
            for (int j = 0; j < n; ++j) {
                if (tau_row[j] == 0) continue;
                for (int y = 1; y <= K; ++y) {
                    if (!lfs[j].is_continuous) {
                        g.theta(j, y - 1) += w[y - 1];
                        continue;
                    }
                    double s = clamp_unit_open(s_row[j], kScoreClampEps);
                    auto ap = alt_params_at(vp.variant, vp.core, j, lfs[j], y);
                    g.theta(j, y - 1) += w[y - 1] * (1.0 + alt::d_dtheta(vp.variant, ap, s));
                    g.rho(j, alt_rho_col(vp.variant, y - 1)) +=
                        w[y - 1] * alt::d_drho(vp.variant, ap, s);
                }
            }
            return;
        }
    }
}

// log Z of the globally normalized variants; optionally adds
// coef * d logZ / d params into g.
inline double log_z(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                    const AltTables* alt_tables, Grad* g = nullptr, double coef = 0.0) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    switch (vp.variant) {
        case Variant::cage: {
            double z = log_normalizer(vp.core.theta, lfs, K);
            if (g) {
                std::vector<double> b(K, 0.0);
                for (int y = 0; y < K; ++y)
                    for (int j = 0; j < n; ++j) b[y] += softplus(vp.core.theta(j, y));
                softmax_inplace(b);
                for (int y = 0; y < K; ++y)
                    for (int j = 0; j < n; ++j)
                        g->theta(j, y) += coef * b[y] * sigmoid(vp.core.theta(j, y));
            }
            return z;
        }
        case Variant::snorkel: {
            double z = snorkel_log_normalizer(vp.theta_shared, lfs, K);
            if (g) {
                std::vector<double> b(K, 0.0);
                for (int y = 1; y <= K; ++y)
                    for (int j = 0; j < n; ++j)
                        b[y - 1] += softplus(y == lfs[j].target_class ? vp.theta_shared[j]
                                                                      : -vp.theta_shared[j]);
                softmax_inplace(b);
                for (int y = 1; y <= K; ++y)
                    for (int j = 0; j < n; ++j) {
                        double sgn = y == lfs[j].target_class ? 1.0 : -1.0;
                        g->theta_shared[j] +=
                            coef * b[y - 1] * sigmoid(sgn * vp.theta_shared[j]) * sgn;
                    }
            }
            return z;
        }
        case Variant::directed:
            return 0.0;  // locally normalized
        default: {
            if (!is_alt_variant(vp.variant)) throw std::invalid_argument("untrainable variant");
            // per-LF factor z_j(y) = 1 + E_j(y), E = exp(theta) [* I for continuous]
            Matrix logE(n, K);
            std::vector<double> b(K, 0.0);
            for (int y = 0; y < K; ++y) {
                for (int j = 0; j < n; ++j) {
                    double le = vp.core.theta(j, y);
                    if (lfs[j].is_continuous) le += std::log(alt_tables->integral(j, y));
                    logE(j, y) = le;
                    b[y] += softplus(le);
                }
            }
            double z = log_sum_exp(b);
            if (g) {
                std::vector<double> zeta = b;
                softmax_inplace(zeta);
                for (int y = 0; y < K; ++y)
                    for (int j = 0; j < n; ++j) {
                        double frac = sigmoid(logE(j, y));  // E / (1 + E)
                        if (!lfs[j].is_continuous) {
                            g->theta(j, y) += coef * zeta[y] * frac;
                            continue;
                        }
                        double I = alt_tables->integral(j, y);
                        g->theta(j, y) +=
                            coef * zeta[y] * frac * (1.0 + alt_tables->d_theta(j, y) / I);
                        g->rho(j, alt_rho_col(vp.variant, y)) +=
                            coef * zeta[y] * frac * alt_tables->d_rho(j, y) / I;
                    }
            }
            return z;
        }
    }
}

// Marginalized trigger weight logE_j(y) = log of the triggered-case mass of
// LF j under class y (scores integrated out), used by the KL guide.
inline Matrix log_e_table(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                          const AltTables* alt_tables) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    Matrix logE(n, K);
    for (int y = 1; y <= K; ++y)
        for (int j = 0; j < n; ++j) {
            double le;
            switch (vp.variant) {
                case Variant::cage:
                    le = vp.core.theta(j, y - 1);
                    break;
                case Variant::snorkel:
                    le = y == lfs[j].target_class ? vp.theta_shared[j] : -vp.theta_shared[j];
                    break;
                default:
                    le = vp.core.theta(j, y - 1);
                    if (lfs[j].is_continuous) le += std::log(alt_tables->integral(j, y - 1));
                    break;
            }
            logE(j, y - 1) = le;
        }
    return logE;
}

// Adds coefficient G(j,y) worth of d logE_j(y) / d params.
inline void add_log_e_grad(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                           const AltTables* alt_tables, int j, int y0, double G, Grad& g) {
    switch (vp.variant) {
        case Variant::cage:
            g.theta(j, y0) += G;
            return;
        case Variant::snorkel:
            g.theta_shared[j] += G * (y0 + 1 == lfs[j].target_class ? 1.0 : -1.0);
            return;
        default: {
            if (!lfs[j].is_continuous) {
                g.theta(j, y0) += G;
                return;
            }
            double I = alt_tables->integral(j, y0);
            g.theta(j, y0) += G * (1.0 + alt_tables->d_theta(j, y0) / I);
            g.rho(j, alt_rho_col(vp.variant, y0)) += G * alt_tables->d_rho(j, y0) / I;
            return;
        }
    }
}

// KL quality guide for the globally normalized variants (Eq-9-style
// cross-entropy between q_j^t and the model's agreement probability).
inline double kl_guide(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                       const AltTables* alt_tables, Grad* g = nullptr, double coef = 1.0) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    Matrix logE = log_e_table(vp, lfs, alt_tables);
    // S(y) = sum_r softplus(logE(r,y)) so a^j_y = logE(j,y) + S(y) - softplus(logE(j,y))
    std::vector<double> S(K, 0.0);
    for (int y = 0; y < K; ++y)
        for (int j = 0; j < n; ++j) S[y] += softplus(logE(j, y));

    double value = 0.0;
    Matrix gmat(n, K);  // g^j_y = dR_j / d a^j_y
    for (int j = 0; j < n; ++j) {
        std::vector<double> a(K);
        for (int y = 0; y < K; ++y) a[y] = logE(j, y) + S[y] - softplus(logE(j, y));
        softmax_inplace(a);  // now the conditional p(y | tau_j = k_j)
        int kj = lfs[j].target_class - 1;
        double P = clamp_prob(a[kj]);
        double q = lfs[j].quality_guide_t;
        value += q * std::log(P) + (1.0 - q) * std::log(1.0 - P);
        if (g) {
            double dRdP = q / P - (1.0 - q) / (1.0 - P);
            for (int y = 0; y < K; ++y)
                gmat(j, y) = dRdP * P * ((y == kj ? 1.0 : 0.0) - a[y]);
        }
    }
    if (g) {
        for (int y = 0; y < K; ++y) {
            double gsum = 0.0;
            for (int j = 0; j < n; ++j) gsum += gmat(j, y);
            for (int r = 0; r < n; ++r) {
                double G = gmat(r, y) + sigmoid(logE(r, y)) * (gsum - gmat(r, y));
                add_log_e_grad(vp, lfs, alt_tables, r, y, coef * G, *g);
            }
        }
    }
    return value;
}

// KL guide for the directed variant: agreement probability is
// prior_y sigmoid(theta_{jy}) normalized over y (other LFs marginalize out).
inline double kl_guide_directed(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                                Grad* g = nullptr, double coef = 1.0) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    double value = 0.0;
    for (int j = 0; j < n; ++j) {
        std::vector<double> a(K);
        for (int y = 0; y < K; ++y)
            a[y] = vp.prior_logits[y] - softplus(-vp.core.theta(j, y));  // + log sigmoid
        softmax_inplace(a);
        int kj = lfs[j].target_class - 1;
        double P = clamp_prob(a[kj]);
        double q = lfs[j].quality_guide_t;
        value += q * std::log(P) + (1.0 - q) * std::log(1.0 - P);
        if (g) {
            double dRdP = q / P - (1.0 - q) / (1.0 - P);
            for (int y = 0; y < K; ++y) {
                double gy = dRdP * P * ((y == kj ? 1.0 : 0.0) - a[y]);
                g->prior_logits[y] += coef * gy;
                g->theta(j, y) += coef * gy * (1.0 - sigmoid(vp.core.theta(j, y)));
            }
        }
    }
    return value;
}

// Hinge penalty on disagreeing parameters exceeding the agreeing one.
inline double sign_penalty_value(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                                 Grad* g = nullptr, double coef = 1.0) {
    const int n = static_cast<int>(lfs.size());
    const int K = vp.num_classes;
    double value = 0.0;
    for (int j = 0; j < n; ++j) {
        int kj = lfs[j].target_class - 1;
        for (int y = 0; y < K; ++y) {
            if (y == kj) continue;
            double margin = vp.variant == Variant::snorkel ? -2.0 * vp.theta_shared[j]
                                                           : vp.core.theta(j, y) -
                                                                 vp.core.theta(j, kj);
            if (margin > 0.0) {
                value -= margin;
                if (g) {
                    if (vp.variant == Variant::snorkel) {
                        g->theta_shared[j] += coef * 2.0;
                    } else {
                        g->theta(j, y) -= coef;
                        g->theta(j, kj) += coef;
                    }
                }
            }
        }
    }
    return value;
}

}  // namespace engine

inline LabelPosterior variant_posterior(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                                        std::span<const int> tau_row,
                                        std::span<const double> s_row) {
    if (vp.variant == Variant::majority) return majority_vote(tau_row, vp.num_classes);
    return posterior_from_scores(engine::log_scores(vp, lfs, tau_row, s_row));
}

struct ObjectiveResult {
    double objective = 0.0;    // ll + guide_weight * regularizer
    double ll = 0.0;           // marginal log likelihood of the batch
    double regularizer = 0.0;  // unweighted
    Grad grad;                 // of objective
};

// Marginal log likelihood, its gradient, and the selected guide term, over
// the given batch of instance indices. Per-instance scores are computed in
// parallel when threads > 1; accumulation order is fixed, so results do not
// depend on the worker count.
inline ObjectiveResult objective_and_gradient(const VariantParams& vp,
                                              const std::vector<LFSpec>& lfs,
                                              const ObservationSet& obs,
                                              std::span<const int> batch, GuideMode mode,
                                              double guide_weight = 1.0, int threads = 1) {
    if (batch.empty()) throw std::invalid_argument("objective_and_gradient: empty batch");
    const int B = static_cast<int>(batch.size());
    const int K = vp.num_classes;

    std::unique_ptr<engine::AltTables> alt_tables;
    if (is_alt_variant(vp.variant))
        alt_tables = std::make_unique<engine::AltTables>(engine::compute_alt_tables(vp, lfs));

    // stage A: per-instance class scores, log-sum-exp, posterior
    std::vector<std::vector<double>> post(B);
    std::vector<double> lse(B);
    auto worker = [&](int lo, int hi) {
        for (int b = lo; b < hi; ++b) {
            int i = batch[b];
            auto u = engine::log_scores(vp, lfs, obs.tau[i], obs.score[i]);
            lse[b] = log_sum_exp(u);
            softmax_inplace(u);
            post[b] = std::move(u);
        }
    };
    if (threads > 1 && B > 1) {
        int nt = std::min<int>(threads, B);
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) {
            int lo = static_cast<int>(static_cast<long long>(B) * t / nt);
            int hi = static_cast<int>(static_cast<long long>(B) * (t + 1) / nt);
            pool.emplace_back(worker, lo, hi);
        }
        for (auto& th : pool) th.join();
    } else {
        worker(0, B);
    }

    ObjectiveResult out;
    out.grad = zero_grad_like(vp);
    for (int b = 0; b < B; ++b) out.ll += lse[b];
    for (int b = 0; b < B; ++b)
        engine::accumulate_u_grad(vp, lfs, obs.tau[batch[b]], obs.score[batch[b]], post[b],
                                  out.grad);
    out.ll -= B * engine::log_z(vp, lfs, alt_tables.get(), &out.grad, -static_cast<double>(B));

    switch (mode) {
        case GuideMode::none:
            break;
        case GuideMode::kl_guide:
            out.regularizer =
                vp.variant == Variant::directed
                    ? engine::kl_guide_directed(vp, lfs, &out.grad, guide_weight)
                    : engine::kl_guide(vp, lfs, alt_tables.get(), &out.grad, guide_weight);
            break;
        case GuideMode::sign_penalty:
            out.regularizer = engine::sign_penalty_value(vp, lfs, &out.grad, guide_weight);
            break;
        case GuideMode::data_guide: {
            // T_j = sum over triggered instances of (q_j - posterior(k_j))
            const int n = static_cast<int>(lfs.size());
            std::vector<double> T(n, 0.0);
            for (int b = 0; b < B; ++b) {
                int i = batch[b];
                for (int j = 0; j < n; ++j)
                    if (obs.tau[i][j] != 0)
                        T[j] += lfs[j].quality_guide_t - post[b][lfs[j].target_class - 1];
            }
            for (int j = 0; j < n; ++j) out.regularizer -= softplus(T[j]);
            std::vector<double> w(K);
            for (int b = 0; b < B; ++b) {
                int i = batch[b];
                std::fill(w.begin(), w.end(), 0.0);
                bool any = false;
                for (int j = 0; j < n; ++j) {
                    if (obs.tau[i][j] == 0) continue;
                    any = true;
                    int kj = lfs[j].target_class - 1;
                    double c = guide_weight * sigmoid(T[j]) * post[b][kj];
                    for (int y = 0; y < K; ++y) w[y] -= c * post[b][y];
                    w[kj] += c;
                }
                if (any) engine::accumulate_u_grad(vp, lfs, obs.tau[i], obs.score[i], w, out.grad);
            }
            break;
        }
    }
    out.objective = out.ll + guide_weight * out.regularizer;
    return out;
}

// --- spec-level CAGE operations ------------------------------------------

inline VariantParams as_cage(const ModelParams& params) {
    VariantParams vp;
    vp.variant = Variant::cage;
    vp.num_classes = params.theta.cols();
    vp.core = params;
    return vp;
}

inline double marginal_log_likelihood(const ModelParams& params, const std::vector<LFSpec>& lfs,
                                      const ObservationSet& obs) {
    if (obs.num_instances == 0) throw std::invalid_argument("marginal_log_likelihood: empty dataset");
    double acc = 0.0;
    const int K = params.theta.cols();
    for (int i = 0; i < obs.num_instances; ++i) {
        std::vector<double> u(K);
        for (int y = 1; y <= K; ++y)
            u[y - 1] = log_joint_unnormalized(params, lfs, obs.tau[i], obs.score[i], y);
        acc += log_sum_exp(u);
    }
    return acc - obs.num_instances * log_normalizer(params.theta, lfs, K);
}

inline double kl_guide_regularizer(const Matrix& theta, const std::vector<LFSpec>& lfs) {
    VariantParams vp;
    vp.variant = Variant::cage;
    vp.num_classes = theta.cols();
    vp.core.theta = theta;
    vp.core.rho = Matrix(theta.rows(), theta.cols());
    return engine::kl_guide(vp, lfs, nullptr);
}

inline double data_guide_regularizer(const ModelParams& params, const std::vector<LFSpec>& lfs,
                                     const ObservationSet& obs, std::span<const int> batch) {
    if (batch.empty()) throw std::invalid_argument("data_guide_regularizer: empty batch");
    const int n = static_cast<int>(lfs.size());
    std::vector<double> T(n, 0.0);
    for (int i : batch) {
        auto p = posterior(params, lfs, obs.tau[i], obs.score[i]);
        for (int j = 0; j < n; ++j)
            if (obs.tau[i][j] != 0)
                T[j] += lfs[j].quality_guide_t - p.probs[lfs[j].target_class - 1];
    }
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc -= softplus(T[j]);
    return acc;
}

inline double sign_penalty(const Matrix& theta, const std::vector<LFSpec>& lfs) {
    double acc = 0.0;
    for (size_t j = 0; j < lfs.size(); ++j) {
        int kj = lfs[j].target_class - 1;
        for (int y = 0; y < theta.cols(); ++y) {
            if (y == kj) continue;
            acc -= std::max(0.0, theta(static_cast<int>(j), y) - theta(static_cast<int>(j), kj));
        }
    }
    return acc;
}

// --- optimizer loop -------------------------------------------------------

namespace engine {

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
};

// One ascent step; grad is the gradient of the maximized objective.
inline void step(std::vector<double>& params, const std::vector<double>& grad, Optimizer opt,
                 double lr, AdamState& adam) {
    if (opt == Optimizer::sgd) {
        for (size_t i = 0; i < params.size(); ++i) params[i] += lr * grad[i];
        return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (adam.m.size() != params.size()) {
        adam.m.assign(params.size(), 0.0);
        adam.v.assign(params.size(), 0.0);
        adam.t = 0;
    }
    ++adam.t;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
    for (size_t i = 0; i < params.size(); ++i) {
        adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * grad[i];
        adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * grad[i] * grad[i];
        params[i] += lr * (adam.m[i] / c1) / (std::sqrt(adam.v[i] / c2) + eps);
    }
}

inline void init_theta(Matrix& theta, const std::vector<LFSpec>& lfs, InitScheme scheme,
                       std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 0.1);
    for (int j = 0; j < theta.rows(); ++j)
        for (int y = 0; y < theta.cols(); ++y) {
            switch (scheme) {
                case InitScheme::agreeing:
                    theta(j, y) = (y + 1 == lfs[j].target_class) ? 1.0 : -1.0;
                    break;
                case InitScheme::disagreeing:
                    theta(j, y) = (y + 1 == lfs[j].target_class) ? -1.0 : 1.0;
                    break;
                case InitScheme::all_ones:
                    theta(j, y) = 1.0;
                    break;
                case InitScheme::random_gaussian:
                    theta(j, y) = gauss(rng);
                    break;
            }
        }
}

}  // namespace engine

inline VariantParams initial_params(const std::vector<LFSpec>& lfs, int num_classes,
                                    const TrainConfig& config) {
    const int n = static_cast<int>(lfs.size());
    std::mt19937_64 rng(config.seed);
    VariantParams vp;
    vp.variant = config.variant;
    vp.num_classes = num_classes;
    if (config.variant == Variant::snorkel) {
        vp.theta_shared.assign(n, 0.0);
        std::normal_distribution<double> gauss(0.0, 0.1);
        for (int j = 0; j < n; ++j) {
            switch (config.init_scheme) {
                case InitScheme::agreeing:
                case InitScheme::all_ones:
                    vp.theta_shared[j] = 1.0;
                    break;
                case InitScheme::disagreeing:
                    vp.theta_shared[j] = -1.0;
                    break;
                case InitScheme::random_gaussian:
                    vp.theta_shared[j] = gauss(rng);
                    break;
            }
        }
        return vp;
    }
    vp.core.theta = Matrix(n, num_classes);
    vp.core.rho = Matrix(n, num_classes);  // pi = 1 in every scheme
    engine::init_theta(vp.core.theta, lfs, config.init_scheme, rng);
    if (config.variant == Variant::directed) vp.prior_logits.assign(num_classes, 0.0);
    return vp;
}

namespace engine {

inline void train_metrics(const VariantParams& vp, const std::vector<LFSpec>& lfs,
                          const ObservationSet& obs, EpochRecord& rec) {
    if (!obs.has_gold()) return;
    int correct = 0, tp = 0, fp = 0, fn = 0, labeled = 0;
    for (int i = 0; i < obs.num_instances; ++i) {
        int gold = obs.gold[i];
        if (gold == 0) continue;
        int pred = variant_posterior(vp, lfs, obs.tau[i], obs.score[i]).prediction;
        ++labeled;
        if (pred == gold) ++correct;
        if (pred == 1 && gold == 1) ++tp;
        if (pred == 1 && gold != 1) ++fp;
        if (pred != 1 && gold == 1) ++fn;
    }
    if (labeled == 0) return;
    rec.train_accuracy = static_cast<double>(correct) / labeled;
    rec.train_f1 = (2 * tp + fp + fn) > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
}

}  // namespace engine

inline std::pair<VariantParams, TrainReport> fit(const ObservationSet& obs,
                                                 const std::vector<LFSpec>& lfs,
                                                 const TrainConfig& config) {
    config.validate();
    if (config.variant == Variant::majority)
        throw std::invalid_argument("fit: majority vote has no trainable parameters");
    if (obs.num_instances == 0) throw std::invalid_argument("fit: empty dataset");
    if (static_cast<int>(lfs.size()) != obs.num_lfs)
        throw std::invalid_argument("fit: LF count mismatch");

    VariantParams vp = initial_params(lfs, obs.num_classes, config);
    std::vector<double> flat = pack(vp);
    engine::AdamState adam;
    std::mt19937_64 batch_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<int> order(obs.num_instances);
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    report.epochs.reserve(config.epochs);
    bool warned_small_batch = false;
    std::vector<double> last_finite = flat;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        int bs = config.batch_size > 0 ? config.batch_size : obs.num_instances;
        if (config.batch_size > 0) std::shuffle(order.begin(), order.end(), batch_rng);

        bool diverged = false;
        for (int start = 0; start < obs.num_instances && !diverged; start += bs) {
            int end = std::min(start + bs, obs.num_instances);
            std::span<const int> batch(order.data() + start, end - start);

            if (config.guide_mode == GuideMode::data_guide && !warned_small_batch) {
                std::vector<int> trig(lfs.size(), 0);
                for (int i : batch)
                    for (size_t j = 0; j < lfs.size(); ++j)
                        if (obs.tau[i][j] != 0) ++trig[j];
                for (size_t j = 0; j < lfs.size(); ++j)
                    if (trig[j] < 10) {
                        std::fprintf(stderr,
                                     "warning: LF %s triggers only %d times in a batch; "
                                     "data-guide estimate may be unreliable\n",
                                     lfs[j].lf_id.c_str(), trig[j]);
                        warned_small_batch = true;
                        break;
                    }
            }

            auto res = objective_and_gradient(vp, lfs, obs, batch, config.guide_mode,
                                              config.guide_weight, config.threads);
            if (!std::isfinite(res.objective)) {
                diverged = true;
                break;
            }
            last_finite = flat;
            engine::step(flat, pack(res.grad), config.optimizer, config.learning_rate, adam);
            unpack(flat, vp);
        }

        std::vector<int> full(obs.num_instances);
        std::iota(full.begin(), full.end(), 0);
        ObjectiveResult eval;
        if (!diverged) {
            eval = objective_and_gradient(vp, lfs, obs, full, config.guide_mode,
                                          config.guide_weight, config.threads);
            // the last step of the epoch may itself have pushed the
            // parameters out of range; treat that as divergence too
            if (!std::isfinite(eval.objective)) diverged = true;
        }
        if (diverged) {
            unpack(last_finite, vp);
            report.diverged = true;
            break;
        }

        EpochRecord rec;
        rec.objective = eval.objective;
        rec.regularizer = eval.regularizer;
        engine::train_metrics(vp, lfs, obs, rec);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(rec);
    }

    report.final_params = vp.core;
    report.final_prior_logits = vp.prior_logits;
    report.final_theta_shared = vp.theta_shared;
    return {vp, std::move(report)};
}

}  // namespace cage
