#include "gmfm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmfm {

namespace {

double clamp_pi(double pi, double bound) {
    return std::clamp(pi, -bound, bound);
}

void check_dims(const MatrixSeries& X, const FactorParams& theta) {
    if (theta.p1() != X.p1 || theta.p2() != X.p2 || theta.T() != X.T)
        throw std::invalid_argument("parameter/data dimension mismatch");
}

}  // namespace

void MatrixSeries::validate() const {
    if (p1 < 2 || p2 < 2 || T < 1)
        throw std::invalid_argument("MatrixSeries requires p1,p2 >= 2 and T >= 1");
    if (static_cast<int>(values.size()) != T)
        throw std::invalid_argument("MatrixSeries: slice count != T");
    for (const auto& v : values)
        if (v.rows() != p1 || v.cols() != p2)
            throw std::invalid_argument("MatrixSeries: slice has wrong shape");
    if (!mask.empty() && static_cast<int>(mask.size()) != T)
        throw std::invalid_argument("MatrixSeries: mask count != T");
}

bool FamilyMap::contains(FamilyKind f, int p1, int p2, int T) const {
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < p2; ++j)
            for (int i = 0; i < p1; ++i)
                if (at(i, j, t) == f) return true;
    return false;
}

double ConstraintResidual::max_residual() const {
    return std::max(std::max(r_orth, c_orth), std::max(f_row_diag, f_col_diag));
}

std::vector<MatrixXd> natural_params(const FactorParams& theta) {
    if (theta.R.cols() != (theta.F.empty() ? theta.R.cols() : theta.F[0].rows()) ||
        (!theta.F.empty() && theta.C.cols() != theta.F[0].cols()))
        throw std::invalid_argument("natural_params: inconsistent k1/k2");
    std::vector<MatrixXd> pi;
    pi.reserve(theta.F.size());
    for (const auto& Ft : theta.F) pi.push_back(theta.R * Ft * theta.C.transpose());
    return pi;
}

double total_loglik(const MatrixSeries& X, const FamilyMap& map,
                    const FactorParams& theta, double pi_clamp) {
    check_dims(X, theta);
    double total = 0.0;
    for (int t = 0; t < X.T; ++t) {
        MatrixXd pi = theta.R * theta.F[static_cast<size_t>(t)] * theta.C.transpose();
        for (int j = 0; j < X.p2; ++j)
            for (int i = 0; i < X.p1; ++i) {
                if (!X.observed(i, j, t)) continue;
                try {
                    total += loglik_cell(map.at(i, j, t),
                                         X.values[static_cast<size_t>(t)](i, j),
                                         clamp_pi(pi(i, j), pi_clamp));
                } catch (const std::domain_error& e) {
                    throw std::domain_error("cell (i=" + std::to_string(i + 1) +
                                            ",j=" + std::to_string(j + 1) +
                                            ",t=" + std::to_string(t + 1) + "): " +
                                            e.what());
                }
            }
    }
    return total;
}

double penalty(const FactorParams& theta, const PenaltyWeights& w, const Dims& dims) {
    if (!(w.b1 > 0 && w.b2 > 0 && w.b3 > 0))
        throw std::invalid_argument("penalty weights must be positive");
    const double p1 = dims.p1, p2 = dims.p2, T = dims.T;
    const int k1 = theta.k1(), k2 = theta.k2();
    const MatrixXd RtR = theta.R.transpose() * theta.R;
    const MatrixXd CtC = theta.C.transpose() * theta.C;
    MatrixXd FFt = MatrixXd::Zero(k1, k1), FtF = MatrixXd::Zero(k2, k2);
    for (const auto& Ft : theta.F) {
        FFt += Ft * Ft.transpose();
        FtF += Ft.transpose() * Ft;
    }

    double p1_term = 0.0;
    for (int p = 0; p < k1; ++p)
        for (int q = p + 1; q < k1; ++q) p1_term += RtR(p, q) * RtR(p, q) / (2 * p1 * p1);
    for (int k = 0; k < k1; ++k) {
        double d = RtR(k, k) - p1;
        p1_term += d * d / (8 * p1 * p1);
    }
    for (int p = 0; p < k1; ++p)
        for (int q = p + 1; q < k1; ++q) p1_term += FFt(p, q) * FFt(p, q) / (2 * T * T);
    double P1 = -w.b1 * p1 * p2 * T * p1_term;

    double p2_term = 0.0;
    for (int p = 0; p < k2; ++p)
        for (int q = p + 1; q < k2; ++q) p2_term += CtC(p, q) * CtC(p, q) / (2 * p2 * p2);
    for (int k = 0; k < k2; ++k) {
        double d = CtC(k, k) - p2;
        p2_term += d * d / (8 * p2 * p2);
    }
    for (int p = 0; p < k2; ++p)
        for (int q = p + 1; q < k2; ++q) p2_term += FtF(p, q) * FtF(p, q) / (2 * T * T);
    double P2 = -w.b2 * p1 * p2 * T * p2_term;

    // P3 trades off the cross blocks of the Hessian: for each slice and each
    // (p,q), sum_i [ (r_ip^2-1)/2 f_{t,pq} + sum_{k != p} r_ip r_ik f_{t,kq} ].
    double p3_term = 0.0;
    for (const auto& Ft : theta.F) {
        double slice = 0.0;
        for (int p = 0; p < k1; ++p)
            for (int q = 0; q < k2; ++q) {
                double s = (RtR(p, p) - p1) / 2.0 * Ft(p, q);
                for (int k = 0; k < k1; ++k)
                    if (k != p) s += RtR(p, k) * Ft(k, q);
                slice += s * s;
            }
        p3_term += slice / (2 * p1);
    }
    double P3 = -w.b3 * p2 * p3_term;

    return P1 + P2 + P3;
}

double objective_Q(const MatrixSeries& X, const FamilyMap& map,
                   const FactorParams& theta, const PenaltyWeights& w,
                   double pi_clamp) {
    return total_loglik(X, map, theta, pi_clamp) +
           penalty(theta, w, Dims{X.p1, X.p2, X.T});
}

BlockDerivatives row_block(int i, const MatrixSeries& X, const FamilyMap& map,
                           const FactorParams& theta, double pi_clamp) {
    check_dims(X, theta);
    const int k1 = theta.k1();
    BlockDerivatives out{VectorXd::Zero(k1), MatrixXd::Zero(k1, k1)};
    for (int t = 0; t < X.T; ++t) {
        // u_{jt} = F_t c_j, as rows of C F_t'.
        MatrixXd U = theta.C * theta.F[static_cast<size_t>(t)].transpose();  // p2 x k1
        for (int j = 0; j < X.p2; ++j) {
            if (!X.observed(i, j, t)) continue;
            VectorXd u = U.row(j).transpose();
            double pi = clamp_pi(theta.R.row(i).dot(u), pi_clamp);
            CellDerivatives d = derivatives_cell(
                map.at(i, j, t), X.values[static_cast<size_t>(t)](i, j), pi);
            out.score += d.d1 * u;
            out.hessian += d.d2 * (u * u.transpose());
        }
    }
    return out;
}

BlockDerivatives col_block(int j, const MatrixSeries& X, const FamilyMap& map,
                           const FactorParams& theta, double pi_clamp) {
    check_dims(X, theta);
    const int k2 = theta.k2();
    BlockDerivatives out{VectorXd::Zero(k2), MatrixXd::Zero(k2, k2)};
    for (int t = 0; t < X.T; ++t) {
        MatrixXd V = theta.R * theta.F[static_cast<size_t>(t)];  // p1 x k2, rows F_t'r_i
        for (int i = 0; i < X.p1; ++i) {
            if (!X.observed(i, j, t)) continue;
            VectorXd v = V.row(i).transpose();
            double pi = clamp_pi(v.dot(theta.C.row(j).transpose()), pi_clamp);
            CellDerivatives d = derivatives_cell(
                map.at(i, j, t), X.values[static_cast<size_t>(t)](i, j), pi);
            out.score += d.d1 * v;
            out.hessian += d.d2 * (v * v.transpose());
        }
    }
    return out;
}

BlockDerivatives factor_block(int t, const MatrixSeries& X, const FamilyMap& map,
                              const FactorParams& theta, double pi_clamp) {
    check_dims(X, theta);
    const int k1 = theta.k1(), k2 = theta.k2();
    MatrixXd pi = theta.R * theta.F[static_cast<size_t>(t)] * theta.C.transpose();
    MatrixXd D1(X.p1, X.p2);
    BlockDerivatives out{VectorXd::Zero(k1 * k2), MatrixXd::Zero(k1 * k2, k1 * k2)};
    for (int j = 0; j < X.p2; ++j) {
        // A_j = sum_i d2_ij r_i r_i'; the Hessian is sum_j (c_j c_j') kron A_j.
        MatrixXd Aj = MatrixXd::Zero(k1, k1);
        for (int i = 0; i < X.p1; ++i) {
            if (!X.observed(i, j, t)) {
                D1(i, j) = 0.0;
                continue;
            }
            CellDerivatives d = derivatives_cell(
                map.at(i, j, t), X.values[static_cast<size_t>(t)](i, j),
                clamp_pi(pi(i, j), pi_clamp));
            D1(i, j) = d.d1;
            Aj += d.d2 * (theta.R.row(i).transpose() * theta.R.row(i));
        }
        VectorXd cj = theta.C.row(j).transpose();
        for (int q = 0; q < k2; ++q)
            for (int q2 = 0; q2 < k2; ++q2)
                out.hessian.block(q * k1, q2 * k1, k1, k1) += cj(q) * cj(q2) * Aj;
    }
    // Score: vec(R' D1 C), column-major.
    MatrixXd S = theta.R.transpose() * D1 * theta.C;  // k1 x k2
    out.score = Eigen::Map<VectorXd>(S.data(), k1 * k2);
    return out;
}

void validate_support(const MatrixSeries& X, const FamilyMap& map) {
    X.validate();
    for (int t = 0; t < X.T; ++t)
        for (int j = 0; j < X.p2; ++j)
            for (int i = 0; i < X.p1; ++i) {
                if (!X.observed(i, j, t)) continue;
                try {
                    loglik_cell(map.at(i, j, t),
                                X.values[static_cast<size_t>(t)](i, j), 0.0);
                } catch (const std::domain_error& e) {
                    throw std::domain_error(
                        "cell (i=" + std::to_string(i + 1) + ",j=" +
                        std::to_string(j + 1) + ",t=" + std::to_string(t + 1) +
                        "): " + e.what());
                }
            }
}

}  // namespace gmfm
