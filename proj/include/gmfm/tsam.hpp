#ifndef GMFM_TSAM_HPP
#define GMFM_TSAM_HPP

#include <cstdint>
#include <optional>

#include "gmfm/model.hpp"

namespace gmfm {

struct TsamConfig {
    int k1 = 1, k2 = 1;
    int restarts = 5;
    int max_outer = 100;
    int inner_newton_iters = 50;
    double tol = 1e-6;       // relative likelihood change, outer loop
    double grad_tol = 1e-8;  // sub-problem gradient stop
    double pi_clamp = 0.0;   // 0 = auto: 8 with Poisson cells present, else 30
    double ridge = 1e-8;
    std::uint64_t seed = 0;
    // When set, stage-one index sets prefer this family on every line that
    // contains it (falling back to the modal family otherwise). Used to
    // reproduce single-type stage-one estimators on mixed data.
    std::optional<FamilyKind> stage1_family;
    // Optional warm start: used as the init of restart 1 instead of a random
    // draw (remaining restarts stay random).
    std::optional<FactorParams> warm_start;
};

// Single-type index sets for stage one, stored as the selected family per
// column / row / slice; cell (i,j,t) belongs to S1_j iff its family equals
// col_family[j], and so on.
struct TypedSets {
    std::vector<FamilyKind> col_family;  // p2, defines S1_j over (i,t)
    std::vector<FamilyKind> row_family;  // p1, defines S2_i over (j,t)
    std::vector<FamilyKind> slice_family;  // T, defines S3_t over (i,j)
    std::vector<long> col_count, row_count, slice_count;
};

TypedSets typed_index_sets(const FamilyMap& map, const Dims& dims,
                           std::optional<FamilyKind> prefer = std::nullopt);

// Algorithm 1 step 2: alternating per-column / per-row / per-slice damped
// Newton maximizations over the single-type sets, iterated to likelihood
// convergence. `report` (optional) accumulates the monotonicity audit.
FactorParams alternating_stage(const MatrixSeries& X, const FamilyMap& map,
                               const TsamConfig& config, const FactorParams& init,
                               const TypedSets& sets, FitReport* report = nullptr,
                               int* outer_iters = nullptr);

// Algorithm 1 step 3: one Newton step per block on the full likelihood, all
// blocks evaluated at the same theta_tilde.
FactorParams one_step_correction(const MatrixSeries& X, const FamilyMap& map,
                                 const FactorParams& theta_tilde,
                                 double pi_clamp = kDefaultPiClamp,
                                 double ridge = 1e-8, FitReport* report = nullptr);

std::pair<FactorParams, FitReport> tsam_fit(const MatrixSeries& X,
                                            const FamilyMap& map,
                                            const TsamConfig& config);

// Resolved clamp for a dataset: config override, else 8 when any Poisson cell
// participates, else 30.
double resolve_pi_clamp(double configured, const FamilyMap& map, const Dims& dims);

}  // namespace gmfm

#endif
