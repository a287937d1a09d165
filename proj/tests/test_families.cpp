#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "gmfm/families.hpp"
#include "gmfm/rng.hpp"

using namespace gmfm;

namespace {

// Central finite difference of loglik_cell in pi.
double fd1(FamilyKind f, double x, double pi, double h = 1e-5) {
    return (loglik_cell(f, x, pi + h) - loglik_cell(f, x, pi - h)) / (2 * h);
}
double fd2(FamilyKind f, double x, double pi, double h = 1e-4) {
    return (loglik_cell(f, x, pi + h) - 2 * loglik_cell(f, x, pi) +
            loglik_cell(f, x, pi - h)) /
           (h * h);
}

double draw_support(FamilyKind f, double pi, std::mt19937_64& rng) {
    return sample_cell(f, pi, rng);
}

const FamilyKind kAll[] = {FamilyKind::GaussianQuasi, FamilyKind::Poisson,
                           FamilyKind::Logit, FamilyKind::Probit,
                           FamilyKind::Tobit};

}  // namespace

TEST_CASE("loglik_cell hand values") {
    CHECK(loglik_cell(FamilyKind::GaussianQuasi, 0.0, 0.0) == doctest::Approx(0.0));
    CHECK(loglik_cell(FamilyKind::Poisson, 0.0, 0.0) == doctest::Approx(-1.0));
    CHECK(loglik_cell(FamilyKind::Logit, 1.0, 0.0) ==
          doctest::Approx(std::log(0.5)));
    CHECK(loglik_cell(FamilyKind::Tobit, 0.0, 0.0) ==
          doctest::Approx(std::log(0.5)));
}

TEST_CASE("loglik_cell rejects support violations and bad pi") {
    CHECK_THROWS_AS(loglik_cell(FamilyKind::Poisson, -1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(loglik_cell(FamilyKind::Poisson, 1.5, 0.0), std::domain_error);
    CHECK_THROWS_AS(loglik_cell(FamilyKind::Logit, 2.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(loglik_cell(FamilyKind::Probit, 0.5, 0.0), std::domain_error);
    CHECK_THROWS_AS(loglik_cell(FamilyKind::Tobit, -0.1, 0.0), std::domain_error);
    CHECK_THROWS_AS(
        loglik_cell(FamilyKind::GaussianQuasi, 0.0,
                    std::numeric_limits<double>::infinity()),
        std::invalid_argument);
}

TEST_CASE("derivatives_cell closed-form examples") {
    auto d = derivatives_cell(FamilyKind::Poisson, 2.0, 0.0);
    CHECK(d.d1 == doctest::Approx(1.0));
    CHECK(d.d2 == doctest::Approx(-1.0));
    auto dl = derivatives_cell(FamilyKind::Logit, 1.0, 0.0);
    CHECK(dl.d2 == doctest::Approx(-0.25));
    auto dg = derivatives_cell(FamilyKind::GaussianQuasi, 3.0, 1.0);
    CHECK(dg.d1 == doctest::Approx(2.0));
    CHECK(dg.d2 == doctest::Approx(-1.0));
}

TEST_CASE("derivatives match finite differences on 200 random pairs per family") {
    auto rng = make_rng(1, "fd");
    std::uniform_real_distribution<double> upi(-5.0, 5.0);
    for (FamilyKind f : kAll) {
        for (int n = 0; n < 200; ++n) {
            double pi = upi(rng);
            double x = draw_support(f, pi, rng);
            auto d = derivatives_cell(f, x, pi);
            CHECK(d.loglik == doctest::Approx(loglik_cell(f, x, pi)).epsilon(1e-12));
            double g = fd1(f, x, pi);
            double h = fd2(f, x, pi);
            CHECK(d.d1 ==
                  doctest::Approx(g).epsilon(1e-5).scale(std::max(1.0, std::abs(g))));
            CHECK(d.d2 ==
                  doctest::Approx(h).epsilon(2e-4).scale(std::max(1.0, std::abs(h))));
            CHECK(d.d2 < 0.0);
        }
    }
}

TEST_CASE("probit derivatives at the spec point match tight finite differences") {
    auto d = derivatives_cell(FamilyKind::Probit, 1.0, 0.7);
    CHECK(std::abs(d.d1 - fd1(FamilyKind::Probit, 1.0, 0.7)) < 1e-6);
    CHECK(std::abs(d.d2 - fd2(FamilyKind::Probit, 1.0, 0.7)) < 1e-5);
}

TEST_CASE("probit and tobit tails stay finite far out") {
    for (double pi : {-30.0, -12.0, 12.0, 30.0}) {
        for (double x : {0.0, 1.0}) {
            auto d = derivatives_cell(FamilyKind::Probit, x, pi);
            CHECK(std::isfinite(d.loglik));
            CHECK(std::isfinite(d.d1));
            CHECK(std::isfinite(d.d2));
            CHECK(d.d2 < 0.0);
        }
        auto t = derivatives_cell(FamilyKind::Tobit, pi < 0 ? 0.0 : pi, pi);
        CHECK(std::isfinite(t.loglik));
        CHECK(std::isfinite(t.d1));
        CHECK(t.d2 < 0.0);
    }
}

TEST_CASE("curvature_bound values and validity") {
    CHECK(curvature_bound(FamilyKind::Logit, 5.0) == doctest::Approx(0.25));
    CHECK(curvature_bound(FamilyKind::Probit, 5.0) == doctest::Approx(1.0));
    CHECK(curvature_bound(FamilyKind::GaussianQuasi, 5.0) == doctest::Approx(1.0));
    CHECK(curvature_bound(FamilyKind::Poisson, 3.0) ==
          doctest::Approx(std::exp(3.0)));

    auto rng = make_rng(2, "bound");
    std::uniform_real_distribution<double> upi(-5.0, 5.0);
    for (FamilyKind f : kAll) {
        double bu = curvature_bound(f, 5.0);
        for (int n = 0; n < 200; ++n) {
            double pi = upi(rng);
            double x = draw_support(f, pi, rng);
            CHECK(-derivatives_cell(f, x, pi).d2 <= bu * (1 + 1e-9));
        }
    }
}

TEST_CASE("loglik maximized at the link inverse of x") {
    // Scalar grid search around the analytic argmax.
    auto argmax = [](FamilyKind f, double x) {
        double best = -1e300, arg = 0;
        for (double pi = -6.0; pi <= 6.0; pi += 1e-3) {
            double v = loglik_cell(f, x, pi);
            if (v > best) { best = v; arg = pi; }
        }
        return arg;
    };
    CHECK(argmax(FamilyKind::GaussianQuasi, 1.7) == doctest::Approx(1.7).epsilon(1e-2));
    CHECK(argmax(FamilyKind::Poisson, 5.0) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-2));
}

TEST_CASE("sample_cell empirical moments") {
    auto rng = make_rng(3, "sample");
    const int n = 100000;
    double ml = 0, mp = 0;
    for (int k = 0; k < n; ++k) ml += sample_cell(FamilyKind::Logit, 0.0, rng) / n;
    for (int k = 0; k < n; ++k) mp += sample_cell(FamilyKind::Poisson, 0.0, rng) / n;
    CHECK(ml == doctest::Approx(0.5).epsilon(0.02));
    CHECK(mp == doctest::Approx(1.0).epsilon(0.02));
    for (int k = 0; k < 1000; ++k)
        CHECK(sample_cell(FamilyKind::Tobit, -10.0, rng) == 0.0);
}

TEST_CASE("family names round-trip") {
    for (FamilyKind f : kAll) CHECK(family_from_string(to_string(f)) == f);
    CHECK_THROWS(family_from_string("negbin"));
}
