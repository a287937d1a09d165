#ifndef GMFM_SELECTION_HPP
#define GMFM_SELECTION_HPP

#include <string>

#include "gmfm/mm.hpp"
#include "gmfm/tsam.hpp"

namespace gmfm {

struct SelectionGrid {
    int l1_max = 8;
    int l2_max = 8;
};

struct CriterionRow {
    int l1 = 0, l2 = 0;
    double negloglik_scaled = 0.0;  // -L/(p1 p2 T)
    double penalty = 0.0;           // (l1+l2) g(p1,p2,T)
    double criterion = 0.0;
    bool failed = false;
};

struct SelectionResult {
    int k1 = 0, k2 = 0;
    std::vector<CriterionRow> table;  // row-major over (l1, l2)
    bool boundary_hit = false;        // argmin sits on the grid edge
    std::vector<std::string> warnings;
};

struct SelectConfig {
    std::string algo = "tsam";  // "tsam" or "mm"
    TsamConfig tsam;
    MmConfig mm;
    bool warm_grid = false;  // reuse the previous cell's solution, padded
    int jobs = 1;
};

// (p1+p2+T)/(p1 p2 T) * ln(p1 p2 T / (p1+p2+T)).
double penalty_g(int p1, int p2, int T);

// Fits every (l1, l2) on the grid with the same restart budget and returns
// the criterion argmin; ties break toward smaller l1+l2, then smaller l1.
SelectionResult select_factor_numbers(const MatrixSeries& X, const FamilyMap& map,
                                      const SelectionGrid& grid,
                                      const SelectConfig& config);

}  // namespace gmfm

#endif
