#ifndef GMFM_INFERENCE_HPP
#define GMFM_INFERENCE_HPP

#include "gmfm/model.hpp"

namespace gmfm {

// Sandwich estimate of an entity's asymptotic variance: bread is the inverse
// of the d2-weighted kernel sum, meat the d1^2-weighted one, and
// variance = scale * bread * meat * bread with scale in {p2 T, p1 p2, p1 T}.
struct SandwichEstimate {
    MatrixXd bread;
    MatrixXd meat;
    MatrixXd variance;  // symmetric PSD
    double scale = 0.0;
};

SandwichEstimate avar_row(int i, const MatrixSeries& X, const FamilyMap& map,
                          const FactorParams& theta_hat,
                          double pi_clamp = kDefaultPiClamp);
SandwichEstimate avar_col(int j, const MatrixSeries& X, const FamilyMap& map,
                          const FactorParams& theta_hat,
                          double pi_clamp = kDefaultPiClamp);
SandwichEstimate avar_factor(int t, const MatrixSeries& X, const FamilyMap& map,
                             const FactorParams& theta_hat,
                             double pi_clamp = kDefaultPiClamp);

// z = var^{-1/2} * sqrt(scale) * (hat - truth), symmetric square root with
// eigenvalue floor 1e-12.
VectorXd standardized_error(const VectorXd& hat, const VectorXd& truth,
                            const SandwichEstimate& avar);

// Resolves residual column-sign ambiguity between two normalized parameter
// sets: flips columns of theta_hat's loadings (and the matching factor rows/
// columns) toward theta0, preserving every pi.
FactorParams align_signs(const FactorParams& theta_hat, const FactorParams& theta0);

}  // namespace gmfm

#endif
