#include "doctest.h"

#include <cmath>
#include <random>

#include "cage/math.hpp"
#include "oracle.hpp"

using namespace cage;

TEST_CASE("log_gamma matches known values") {
    // Gamma(0.5) = sqrt(pi), Gamma(1) = Gamma(2) = 1, Gamma(5) = 24
    CHECK(log_gamma(0.5) == doctest::Approx(0.5 * std::log(M_PI)).epsilon(1e-12));
    CHECK(log_gamma(1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(log_gamma(2.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(log_gamma(5.0) == doctest::Approx(std::log(24.0)).epsilon(1e-12));
    CHECK(log_gamma(10.5) == doctest::Approx(std::lgamma(10.5)).epsilon(1e-12));
}

TEST_CASE("log_gamma relative accuracy across the working range") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(1e-3, 1e4);
    for (int k = 0; k < 1000; ++k) {
        double x = unif(rng);
        double ref = std::lgamma(x);
        double rel = std::abs(log_gamma(x) - ref) / std::max(1.0, std::abs(ref));
        CHECK(rel < 1e-10);
    }
}

TEST_CASE("digamma matches finite differences of log_gamma") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unif(0.05, 50.0);
    for (int k = 0; k < 200; ++k) {
        double x = unif(rng);
        double h = 1e-6 * std::max(1.0, x);
        double fd = (log_gamma(x + h) - log_gamma(x - h)) / (2 * h);
        CHECK(digamma(x) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("softplus and sigmoid limits") {
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
    CHECK(softplus(100.0) == doctest::Approx(100.0));
    CHECK(softplus(-100.0) == doctest::Approx(0.0).epsilon(1e-30));
    CHECK(sigmoid(0.0) == doctest::Approx(0.5));
    CHECK(sigmoid(40.0) == doctest::Approx(1.0));
}

TEST_CASE("log_sum_exp is overflow safe") {
    std::vector<double> big{1000.0, 1000.0};
    CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)));
    std::vector<double> mixed{-1000.0, 0.0};
    CHECK(log_sum_exp(mixed) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("log_beta_pdf integrates to one") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif_q(0.2, 0.8);
    std::uniform_real_distribution<double> unif_logpi(1.2, 3.0);
    for (int k = 0; k < 20; ++k) {
        double q = unif_q(rng);
        double pi = std::exp(unif_logpi(rng));
        double a = q * pi, b = (1 - q) * pi;
        double integral =
            oracle::integrate01([&](double s) { return std::exp(log_beta_pdf(s, a, b)); });
        CHECK(integral == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("simpson integrates a cubic exactly") {
    double v = simpson([](double x) { return x * x * x; }, 0.0, 2.0, 4);
    CHECK(v == doctest::Approx(4.0).epsilon(1e-12));
}
