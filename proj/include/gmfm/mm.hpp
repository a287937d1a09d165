#ifndef GMFM_MM_HPP
#define GMFM_MM_HPP

#include <cstdint>
#include <optional>

#include "gmfm/model.hpp"

namespace gmfm {

struct MmConfig {
    int k1 = 1, k2 = 1;
    int restarts = 5;
    int max_outer = 500;
    double error_tol = 1e-6;      // absolute likelihood increase stop
    int inner_als_sweeps = 1;     // ALS passes per MM step
    bool inner_exact = false;     // run inner ALS to stationarity instead
    double pi_clamp = 0.0;        // 0 = auto (see resolve_pi_clamp)
    std::uint64_t seed = 0;
    std::optional<FactorParams> warm_start;  // init of restart 1
};

// Quadratic-surrogate targets xhat = pi + d1/b_U, cell-wise. b_U per cell is
// the curvature bound of that cell's family on the clamped domain.
std::vector<MatrixXd> surrogate_targets(const MatrixSeries& X, const FamilyMap& map,
                                        const FactorParams& theta,
                                        double pi_clamp = kDefaultPiClamp);

// Alternating-least-squares passes on min sum (xhat - r_i'F_t c_j)^2 starting
// from `init`; the LS objective never increases relative to init.
FactorParams ls_factorize(const std::vector<MatrixXd>& Xhat, int k1, int k2,
                          const FactorParams& init, int sweeps,
                          FitReport* report = nullptr);

std::pair<FactorParams, FitReport> mm_fit(const MatrixSeries& X, const FamilyMap& map,
                                          const MmConfig& config);

}  // namespace gmfm

#endif
