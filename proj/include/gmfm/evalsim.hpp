#ifndef GMFM_EVALSIM_HPP
#define GMFM_EVALSIM_HPP

#include <cstdint>
#include <string>

#include "gmfm/model.hpp"

namespace gmfm {

enum class SimCase {
    Case1,  // Gaussian, homoscedastic, k = (2,2)
    Case2,  // Gaussian, heteroscedastic columns, k = (1,3)
    Case3,  // Poisson, k = (3,3)
    Case4,  // Poisson | Logit column halves, k = (4,4)
    Case5,  // Gaussian | Poisson column halves, k = (5,5)
    Case6,  // Gaussian / Poisson / Poisson / Logit quadrants, k = (6,6)
    DGP1,   // Logit, k = (1,1), iid N(0,1) factors
    DGP2,   // Probit, k = (1,1)
    DGP3,   // Gaussian / Logit / Probit column thirds, k = (1,1)
};

SimCase sim_case_from_string(const std::string& name);
const char* to_string(SimCase c);
void case_ranks(SimCase c, int* k1, int* k2);

struct SimulationSpec {
    SimCase case_id = SimCase::Case1;
    int p1 = 20, p2 = 20, T = 30;
    std::uint64_t seed = 0;
};

struct SimulatedData {
    MatrixSeries X;
    FamilyMap map;
    FactorParams theta0;  // normalized ground truth
    VectorXd tau;         // per-column noise sd (Case 2 only, empty otherwise)
};

// Smallest nonzero canonical correlation between col(A) and col(B).
double ccor(const MatrixXd& A, const MatrixXd& B);

// Draws a dataset for the given setting: AR(1) factors with burn-in for the
// Cases, iid N(0,1) factors for the DGPs, U(0,1) loadings, ground truth
// normalized into the identified parameterization before sampling.
SimulatedData simulate_case(const SimulationSpec& spec);

// Linear baseline: eigenvectors of the averaged row/column Gram matrices.
FactorParams alpha_pca_fit(const MatrixSeries& X, int k1, int k2);

// E[x | pi] under the family.
double mean_response(FamilyKind family, double pi);

struct RollingResult {
    std::vector<double> mse;  // one entry per evaluation period
    std::vector<double> rho;
    double mse_bar = 0.0;
    double rho_bar = 0.0;
};

// Rolling validation: for each evaluation period, fit loadings on the
// preceding window_years periods, re-estimate the in-period factor slices
// with loadings frozen, reconstruct through the family mean and score by
// MSE and the unexplained variance proportion rho. algo is "tsam", "mm" or
// "alpha_pca".
RollingResult rolling_validate(const MatrixSeries& X, const FamilyMap& map,
                               int window_years, int quarters_per_period, int k1,
                               int k2, const std::string& algo,
                               std::uint64_t seed = 0);

}  // namespace gmfm

#endif
