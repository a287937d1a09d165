#ifndef GMFM_FAMILIES_HPP
#define GMFM_FAMILIES_HPP

#include <random>
#include <string>

namespace gmfm {

// Likelihood family of a single cell. None of the families carries free
// parameters; the Gaussian is the unit-variance quasi-likelihood.
enum class FamilyKind : unsigned char {
    GaussianQuasi = 0,
    Poisson = 1,
    Logit = 2,
    Probit = 3,
    Tobit = 4,
};

constexpr int kNumFamilies = 5;

const char* to_string(FamilyKind family);
FamilyKind family_from_string(const std::string& name);

struct CellDerivatives {
    double loglik;  // l(pi), nats
    double d1;      // dl/dpi
    double d2;      // d2l/dpi2, strictly negative on the clamped domain
};

// Log-density l(pi) of observation x under the family's natural parameter pi.
// Throws std::domain_error when x is outside the family's support and
// std::invalid_argument for non-finite pi.
double loglik_cell(FamilyKind family, double x, double pi);

// l, dl/dpi and d2l/dpi2 in closed form (stable tail ratios for Probit/Tobit).
CellDerivatives derivatives_cell(FamilyKind family, double x, double pi);

// Upper bound b_U with -d2(x, pi) <= b_U for all x in support, |pi| <= pi_bound.
double curvature_bound(FamilyKind family, double pi_bound);

// Draw x ~ g(.|pi).
double sample_cell(FamilyKind family, double pi, std::mt19937_64& rng);

// Heteroscedastic Gaussian draw N(pi, sigma^2); sampling-side only, the
// fitting side always uses the unit-variance quasi-likelihood.
double sample_gaussian(double pi, double sigma, std::mt19937_64& rng);

// Numerically stable log Phi(z) and inverse Mills ratio phi(z)/Phi(z).
double log_normal_cdf(double z);
double inverse_mills(double z);

}  // namespace gmfm

#endif
