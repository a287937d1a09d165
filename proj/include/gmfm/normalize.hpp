#ifndef GMFM_NORMALIZE_HPP
#define GMFM_NORMALIZE_HPP

#include "gmfm/model.hpp"

namespace gmfm {

// Rotates (R, F, C) into the identified parameterization: R'R/p1 = I,
// C'C/p2 = I, sum F F'/T and sum F'F/T diagonal with descending diagonals,
// first nonzero loading entry per column positive. Preserves every pi_ijt.
// Throws std::runtime_error on rank deficiency; near-tied eigenvalues are
// reported through `warnings` when given.
FactorParams normalize(const FactorParams& theta,
                       std::vector<std::string>* warnings = nullptr);

ConstraintResidual constraint_residuals(const FactorParams& theta);

}  // namespace gmfm

#endif
