#ifndef GMFM_MODEL_HPP
#define GMFM_MODEL_HPP

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gmfm/families.hpp"

namespace gmfm {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Default clamp D on |pi| for likelihood evaluation. Poisson cells use a
// tighter clamp inside the optimizers to keep e^pi tame.
constexpr double kDefaultPiClamp = 30.0;
constexpr double kPoissonPiClamp = 8.0;

// T observed p1 x p2 matrices. An empty mask means fully observed; otherwise
// mask[t](i,j) != 0 marks cell (i,j,t) as observed.
struct MatrixSeries {
    int p1 = 0, p2 = 0, T = 0;
    std::vector<MatrixXd> values;
    std::vector<MaskMatrix> mask;

    bool observed(int i, int j, int t) const {
        return mask.empty() || mask[static_cast<size_t>(t)](i, j) != 0;
    }
    void validate() const;  // dims, p1,p2 >= 2, T >= 1
};

// One rectangular family override; all ranges 1-based inclusive.
struct FamilyBlock {
    int i_lo = 1, i_hi = 0;
    int j_lo = 1, j_hi = 0;
    int t_lo = 1, t_hi = 0;
    FamilyKind family = FamilyKind::GaussianQuasi;
};

// Per-cell family assignment: a default plus override blocks, later blocks
// winning. Indices into at() are 0-based.
struct FamilyMap {
    FamilyKind def = FamilyKind::GaussianQuasi;
    std::vector<FamilyBlock> blocks;

    FamilyKind at(int i, int j, int t) const {
        FamilyKind f = def;
        for (const auto& b : blocks) {
            if (i + 1 >= b.i_lo && i + 1 <= b.i_hi && j + 1 >= b.j_lo &&
                j + 1 <= b.j_hi && t + 1 >= b.t_lo && t + 1 <= b.t_hi)
                f = b.family;
        }
        return f;
    }
    bool contains(FamilyKind f, int p1, int p2, int T) const;
};

// theta = (R, F_1..F_T, C). Loadings store r_i / c_j as rows.
struct FactorParams {
    MatrixXd R;               // p1 x k1
    MatrixXd C;               // p2 x k2
    std::vector<MatrixXd> F;  // T slices, k1 x k2

    int k1() const { return static_cast<int>(R.cols()); }
    int k2() const { return static_cast<int>(C.cols()); }
    int p1() const { return static_cast<int>(R.rows()); }
    int p2() const { return static_cast<int>(C.rows()); }
    int T() const { return static_cast<int>(F.size()); }
};

struct PenaltyWeights {
    double b1 = 1.0, b2 = 1.0, b3 = 1.0;
};

struct Dims {
    int p1 = 0, p2 = 0, T = 0;
};

struct ConstraintResidual {
    double r_orth = 0.0;       // max-norm of R'R/p1 - I
    double c_orth = 0.0;       // max-norm of C'C/p2 - I
    double f_row_diag = 0.0;   // max off-diagonal of sum F F'/T
    double f_col_diag = 0.0;   // max off-diagonal of sum F'F/T
    bool sign_ok = true;       // first nonzero entry of each loading column > 0
    double max_residual() const;
};

struct RestartRecord {
    int restart = 0;
    std::uint64_t seed = 0;
    double loglik_stage1 = 0.0;
    double loglik_final = 0.0;
    int outer_iters = 0;
    bool failed = false;
};

struct FitReport {
    std::string algorithm;
    int k1 = 0, k2 = 0;
    double final_loglik = 0.0;
    bool converged = false;
    int best_restart = -1;
    double pi_clamp = kDefaultPiClamp;
    long clamped_cells = 0;  // cells that hit the clamp at the final iterate
    double max_monotonicity_violation = 0.0;
    ConstraintResidual residual_pre;   // before normalization
    ConstraintResidual residual_post;  // after
    std::vector<RestartRecord> restarts;
    std::vector<std::string> warnings;
};

struct BlockDerivatives {
    VectorXd score;
    MatrixXd hessian;
};

// pi_t = R F_t C' for every slice.
std::vector<MatrixXd> natural_params(const FactorParams& theta);

// Sum of loglik_cell over observed cells, pi clamped to [-pi_clamp, pi_clamp].
double total_loglik(const MatrixSeries& X, const FamilyMap& map,
                    const FactorParams& theta, double pi_clamp = kDefaultPiClamp);

// Augmented-Lagrangian penalties P1 + P2 + P3; <= 0, and 0 exactly on the
// identified parameterization. Diagnostic only, never driven by the fitters.
double penalty(const FactorParams& theta, const PenaltyWeights& w, const Dims& dims);

double objective_Q(const MatrixSeries& X, const FamilyMap& map,
                   const FactorParams& theta, const PenaltyWeights& w,
                   double pi_clamp = kDefaultPiClamp);

// Exact score/Hessian of the full likelihood in one parameter block.
BlockDerivatives row_block(int i, const MatrixSeries& X, const FamilyMap& map,
                           const FactorParams& theta,
                           double pi_clamp = kDefaultPiClamp);
BlockDerivatives col_block(int j, const MatrixSeries& X, const FamilyMap& map,
                           const FactorParams& theta,
                           double pi_clamp = kDefaultPiClamp);
// Factor block in the column-major vec{F_t} coordinate.
BlockDerivatives factor_block(int t, const MatrixSeries& X, const FamilyMap& map,
                              const FactorParams& theta,
                              double pi_clamp = kDefaultPiClamp);

// Throws std::domain_error naming the first offending cell.
void validate_support(const MatrixSeries& X, const FamilyMap& map);

}  // namespace gmfm

#endif
