#include "gmfm/inference.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmfm {

namespace {

double clampv(double pi, double bound) { return std::clamp(pi, -bound, bound); }

SandwichEstimate assemble(const MatrixXd& hess_sum, const MatrixXd& meat,
                          double scale) {
    Eigen::FullPivLU<MatrixXd> lu(hess_sum);
    if (!lu.isInvertible())
        throw std::runtime_error(
            "sandwich variance: singular bread kernel (rcond ~ 0, rank " +
            std::to_string(lu.rank()) + " of " + std::to_string(hess_sum.rows()) + ")");
    SandwichEstimate out;
    out.bread = lu.inverse();
    out.meat = meat;
    MatrixXd v = scale * out.bread * meat * out.bread;
    out.variance = 0.5 * (v + v.transpose());
    out.scale = scale;
    return out;
}

}  // namespace

SandwichEstimate avar_row(int i, const MatrixSeries& X, const FamilyMap& map,
                          const FactorParams& theta_hat, double pi_clamp) {
    const int k1 = theta_hat.k1();
    MatrixXd hess = MatrixXd::Zero(k1, k1), meat = MatrixXd::Zero(k1, k1);
    for (int t = 0; t < X.T; ++t) {
        MatrixXd U = theta_hat.C * theta_hat.F[static_cast<size_t>(t)].transpose();
        for (int j = 0; j < X.p2; ++j) {
            if (!X.observed(i, j, t)) continue;
            VectorXd u = U.row(j).transpose();
            CellDerivatives d = derivatives_cell(
                map.at(i, j, t), X.values[static_cast<size_t>(t)](i, j),
                clampv(theta_hat.R.row(i).dot(u), pi_clamp));
            MatrixXd uu = u * u.transpose();
            hess += d.d2 * uu;
            meat += d.d1 * d.d1 * uu;
        }
    }
    return assemble(hess, meat, static_cast<double>(X.p2) * X.T);
}

SandwichEstimate avar_col(int j, const MatrixSeries& X, const FamilyMap& map,
                          const FactorParams& theta_hat, double pi_clamp) {
    const int k2 = theta_hat.k2();
    MatrixXd hess = MatrixXd::Zero(k2, k2), meat = MatrixXd::Zero(k2, k2);
    for (int t = 0; t < X.T; ++t) {
        MatrixXd V = theta_hat.R * theta_hat.F[static_cast<size_t>(t)];
        for (int i = 0; i < X.p1; ++i) {
            if (!X.observed(i, j, t)) continue;
            VectorXd v = V.row(i).transpose();
            CellDerivatives d = derivatives_cell(
                map.at(i, j, t), X.values[static_cast<size_t>(t)](i, j),
                clampv(v.dot(theta_hat.C.row(j).transpose()), pi_clamp));
            MatrixXd vv = v * v.transpose();
            hess += d.d2 * vv;
            meat += d.d1 * d.d1 * vv;
        }
    }
    return assemble(hess, meat, static_cast<double>(X.p1) * X.T);
}

SandwichEstimate avar_factor(int t, const MatrixSeries& X, const FamilyMap& map,
                             const FactorParams& theta_hat, double pi_clamp) {
    const int k1 = theta_hat.k1(), k2 = theta_hat.k2();
    const int k = k1 * k2;
    MatrixXd hess = MatrixXd::Zero(k, k), meat = MatrixXd::Zero(k, k);
    MatrixXd pi = theta_hat.R * theta_hat.F[static_cast<size_t>(t)] *
                  theta_hat.C.transpose();
    VectorXd w(k);
    for (int j = 0; j < X.p2; ++j)
        for (int i = 0; i < X.p1; ++i) {
            if (!X.observed(i, j, t)) continue;
            CellDerivatives d = derivatives_cell(
                map.at(i, j, t), X.values[static_cast<size_t>(t)](i, j),
                clampv(pi(i, j), pi_clamp));
            for (int q = 0; q < k2; ++q)
                w.segment(q * k1, k1) =
                    theta_hat.C(j, q) * theta_hat.R.row(i).transpose();
            MatrixXd ww = w * w.transpose();
            hess += d.d2 * ww;
            meat += d.d1 * d.d1 * ww;
        }
    return assemble(hess, meat, static_cast<double>(X.p1) * X.p2);
}

VectorXd standardized_error(const VectorXd& hat, const VectorXd& truth,
                            const SandwichEstimate& avar) {
    if (hat.size() != truth.size() || hat.size() != avar.variance.rows())
        throw std::invalid_argument("standardized_error: dimension mismatch");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(avar.variance);
    VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
    MatrixXd root = es.eigenvectors() * inv_sqrt.asDiagonal() *
                    es.eigenvectors().transpose();
    return root * (std::sqrt(avar.scale) * (hat - truth));
}

FactorParams align_signs(const FactorParams& theta_hat, const FactorParams& theta0) {
    if (theta_hat.k1() != theta0.k1() || theta_hat.k2() != theta0.k2())
        throw std::invalid_argument("align_signs: rank mismatch");
    FactorParams out = theta_hat;
    for (int k = 0; k < out.k1(); ++k)
        if (out.R.col(k).dot(theta0.R.col(k)) < 0) {
            out.R.col(k) *= -1.0;
            for (auto& Ft : out.F) Ft.row(k) *= -1.0;
        }
    for (int k = 0; k < out.k2(); ++k)
        if (out.C.col(k).dot(theta0.C.col(k)) < 0) {
            out.C.col(k) *= -1.0;
            for (auto& Ft : out.F) Ft.col(k) *= -1.0;
        }
    return out;
}

}  // namespace gmfm
