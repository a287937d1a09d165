#include "gmfm/families.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmfm {

namespace {

constexpr double kLogSqrt2Pi = 0.9189385332046727417803297;

double log_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

[[noreturn]] void support_error(FamilyKind family, double x, const char* what) {
    throw std::domain_error(std::string("observation ") + std::to_string(x) +
                            " outside support of family '" + to_string(family) +
                            "': " + what);
}

void check_inputs(FamilyKind family, double x, double pi) {
    if (!std::isfinite(pi))
        throw std::invalid_argument("non-finite natural parameter pi");
    if (!std::isfinite(x)) support_error(family, x, "non-finite");
    switch (family) {
        case FamilyKind::GaussianQuasi:
            break;
        case FamilyKind::Poisson:
            if (x < 0.0 || x != std::floor(x))
                support_error(family, x, "expected a nonnegative integer");
            break;
        case FamilyKind::Logit:
        case FamilyKind::Probit:
            if (x != 0.0 && x != 1.0) support_error(family, x, "expected 0 or 1");
            break;
        case FamilyKind::Tobit:
            if (x < 0.0) support_error(family, x, "expected x >= 0");
            break;
    }
}

// log(1 + e^z) without overflow.
double softplus(double z) {
    if (z > 35.0) return z;
    if (z < -35.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

const char* to_string(FamilyKind family) {
    switch (family) {
        case FamilyKind::GaussianQuasi: return "gaussian";
        case FamilyKind::Poisson: return "poisson";
        case FamilyKind::Logit: return "logit";
        case FamilyKind::Probit: return "probit";
        case FamilyKind::Tobit: return "tobit";
    }
    return "?";
}

FamilyKind family_from_string(const std::string& name) {
    if (name == "gaussian") return FamilyKind::GaussianQuasi;
    if (name == "poisson") return FamilyKind::Poisson;
    if (name == "logit") return FamilyKind::Logit;
    if (name == "probit") return FamilyKind::Probit;
    if (name == "tobit") return FamilyKind::Tobit;
    throw std::invalid_argument("unknown family tag '" + name + "'");
}

double log_normal_cdf(double z) {
    if (z > -8.0) return std::log(0.5 * std::erfc(-z / M_SQRT2));
    // Mills-ratio expansion for the deep lower tail.
    double z2 = z * z;
    double series = -1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    return log_normal_pdf(z) - std::log(-z) + std::log1p(series);
}

double inverse_mills(double z) {
    return std::exp(log_normal_pdf(z) - log_normal_cdf(z));
}

double loglik_cell(FamilyKind family, double x, double pi) {
    check_inputs(family, x, pi);
    switch (family) {
        case FamilyKind::GaussianQuasi:
            return -0.5 * (x - pi) * (x - pi);
        case FamilyKind::Poisson:
            return -std::exp(pi) + x * pi - std::lgamma(x + 1.0);
        case FamilyKind::Logit:
            return x * pi - softplus(pi);
        case FamilyKind::Probit:
            return x == 1.0 ? log_normal_cdf(pi) : log_normal_cdf(-pi);
        case FamilyKind::Tobit:
            return x > 0.0 ? -0.5 * (x - pi) * (x - pi) : log_normal_cdf(-pi);
    }
    return 0.0;
}

CellDerivatives derivatives_cell(FamilyKind family, double x, double pi) {
    check_inputs(family, x, pi);
    CellDerivatives d{};
    switch (family) {
        case FamilyKind::GaussianQuasi:
            d.loglik = -0.5 * (x - pi) * (x - pi);
            d.d1 = x - pi;
            d.d2 = -1.0;
            break;
        case FamilyKind::Poisson: {
            double lambda = std::exp(pi);
            d.loglik = -lambda + x * pi - std::lgamma(x + 1.0);
            d.d1 = x - lambda;
            d.d2 = -lambda;
            break;
        }
        case FamilyKind::Logit: {
            double p = logistic(pi);
            d.loglik = x * pi - softplus(pi);
            d.d1 = x - p;
            d.d2 = -p * (1.0 - p);
            break;
        }
        case FamilyKind::Probit:
            if (x == 1.0) {
                double m = inverse_mills(pi);
                d.loglik = log_normal_cdf(pi);
                d.d1 = m;
                d.d2 = -m * (pi + m);
            } else {
                double h = inverse_mills(-pi);
                d.loglik = log_normal_cdf(-pi);
                d.d1 = -h;
                d.d2 = -h * (h - pi);
            }
            break;
        case FamilyKind::Tobit:
            if (x > 0.0) {
                d.loglik = -0.5 * (x - pi) * (x - pi);
                d.d1 = x - pi;
                d.d2 = -1.0;
            } else {
                double h = inverse_mills(-pi);
                d.loglik = log_normal_cdf(-pi);
                d.d1 = -h;
                d.d2 = -h * (h - pi);
            }
            break;
    }
    return d;
}

double curvature_bound(FamilyKind family, double pi_bound) {
    if (!(pi_bound > 0.0))
        throw std::invalid_argument("curvature_bound: pi_bound must be positive");
    switch (family) {
        case FamilyKind::GaussianQuasi: return 1.0;
        case FamilyKind::Poisson: return std::exp(pi_bound);
        case FamilyKind::Logit: return 0.25;
        case FamilyKind::Probit: return 1.0;
        case FamilyKind::Tobit: {
            // The censored branch (x = 0) has no closed-form supremum; scan
            // a 1e-3 grid on [-pi_bound, pi_bound]. The uncensored branch
            // contributes exactly 1.
            double best = 1.0;
            const double step = 1e-3;
            for (double pi = -pi_bound; pi <= pi_bound + 0.5 * step; pi += step) {
                double h = inverse_mills(-pi);
                best = std::max(best, h * (h - pi));
            }
            return best;
        }
    }
    return 1.0;
}

double sample_cell(FamilyKind family, double pi, std::mt19937_64& rng) {
    if (!std::isfinite(pi))
        throw std::invalid_argument("sample_cell: non-finite pi");
    switch (family) {
        case FamilyKind::GaussianQuasi: {
            std::normal_distribution<double> n(pi, 1.0);
            return n(rng);
        }
        case FamilyKind::Poisson: {
            std::poisson_distribution<long> p(std::exp(std::min(pi, 30.0)));
            return static_cast<double>(p(rng));
        }
        case FamilyKind::Logit: {
            std::bernoulli_distribution b(logistic(pi));
            return b(rng) ? 1.0 : 0.0;
        }
        case FamilyKind::Probit: {
            std::bernoulli_distribution b(0.5 * std::erfc(-pi / M_SQRT2));
            return b(rng) ? 1.0 : 0.0;
        }
        case FamilyKind::Tobit: {
            std::normal_distribution<double> n(pi, 1.0);
            return std::max(0.0, n(rng));
        }
    }
    return 0.0;
}

double sample_gaussian(double pi, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> n(pi, sigma);
    return n(rng);
}

}  // namespace gmfm
