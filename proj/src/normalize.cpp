#include "gmfm/normalize.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace gmfm {

namespace {

constexpr double kRankTol = 1e-10;
constexpr double kEigTieTol = 1e-12;
constexpr double kSignTol = 1e-10;

struct ThinSvd {
    MatrixXd U;  // orthonormal columns
    MatrixXd Q;  // H V', so that input = U Q
};

ThinSvd thin_svd(const MatrixXd& A, const char* name) {
    Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    if (s(s.size() - 1) <= kRankTol * s(0))
        throw std::runtime_error(std::string("normalize: ") + name +
                                 " is rank deficient, parameters not identifiable");
    return {svd.matrixU(),
            s.asDiagonal() * svd.matrixV().transpose()};
}

// Eigenvectors sorted by descending eigenvalue; ties keep incoming order.
MatrixXd descending_eigvecs(const MatrixXd& S, std::vector<std::string>* warnings,
                            const char* name) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
    const int k = static_cast<int>(S.rows());
    MatrixXd G(k, k);
    for (int c = 0; c < k; ++c) G.col(c) = es.eigenvectors().col(k - 1 - c);
    if (warnings) {
        for (int c = 0; c + 1 < k; ++c) {
            double gap = es.eigenvalues()(k - 1 - c) - es.eigenvalues()(k - 2 - c);
            if (gap < kEigTieTol)
                warnings->push_back(std::string("normalize: eigenvalue tie in ") +
                                    name + ", rotation not unique");
        }
    }
    return G;
}

}  // namespace

FactorParams normalize(const FactorParams& theta, std::vector<std::string>* warnings) {
    const int p1 = theta.p1(), p2 = theta.p2(), T = theta.T();
    ThinSvd r = thin_svd(theta.R, "R");
    ThinSvd c = thin_svd(theta.C, "C");

    MatrixXd S1 = MatrixXd::Zero(theta.k1(), theta.k1());
    MatrixXd S2 = MatrixXd::Zero(theta.k2(), theta.k2());
    for (const auto& Ft : theta.F) {
        MatrixXd M = r.Q * Ft * c.Q.transpose();
        S1 += M * M.transpose();
        S2 += M.transpose() * M;
    }
    const double scale = 1.0 / (static_cast<double>(T) * p1 * p2);
    S1 *= scale;
    S2 *= scale;

    MatrixXd G1 = descending_eigvecs(S1, warnings, "sum F F'/T");
    MatrixXd G2 = descending_eigvecs(S2, warnings, "sum F'F/T");

    FactorParams out;
    out.R = std::sqrt(static_cast<double>(p1)) * r.U * G1;
    out.C = std::sqrt(static_cast<double>(p2)) * c.U * G2;
    out.F.reserve(theta.F.size());
    const double fs = 1.0 / std::sqrt(static_cast<double>(p1) * p2);
    for (const auto& Ft : theta.F)
        out.F.push_back(fs * G1.transpose() * r.Q * Ft * c.Q.transpose() * G2);

    // Sign rule: first entry with |.| > tol in each loading column positive.
    for (int k = 0; k < out.k1(); ++k) {
        for (int i = 0; i < p1; ++i) {
            if (std::abs(out.R(i, k)) <= kSignTol) continue;
            if (out.R(i, k) < 0) {
                out.R.col(k) *= -1.0;
                for (auto& Ft : out.F) Ft.row(k) *= -1.0;
            }
            break;
        }
    }
    for (int k = 0; k < out.k2(); ++k) {
        for (int j = 0; j < p2; ++j) {
            if (std::abs(out.C(j, k)) <= kSignTol) continue;
            if (out.C(j, k) < 0) {
                out.C.col(k) *= -1.0;
                for (auto& Ft : out.F) Ft.col(k) *= -1.0;
            }
            break;
        }
    }
    return out;
}

ConstraintResidual constraint_residuals(const FactorParams& theta) {
    ConstraintResidual res;
    const int p1 = theta.p1(), p2 = theta.p2();
    MatrixXd Dr = theta.R.transpose() * theta.R / p1 -
                  MatrixXd::Identity(theta.k1(), theta.k1());
    MatrixXd Dc = theta.C.transpose() * theta.C / p2 -
                  MatrixXd::Identity(theta.k2(), theta.k2());
    res.r_orth = Dr.cwiseAbs().maxCoeff();
    res.c_orth = Dc.cwiseAbs().maxCoeff();

    MatrixXd FFt = MatrixXd::Zero(theta.k1(), theta.k1());
    MatrixXd FtF = MatrixXd::Zero(theta.k2(), theta.k2());
    for (const auto& Ft : theta.F) {
        FFt += Ft * Ft.transpose();
        FtF += Ft.transpose() * Ft;
    }
    FFt /= theta.T();
    FtF /= theta.T();
    res.f_row_diag = 0.0;
    for (int p = 0; p < theta.k1(); ++p)
        for (int q = 0; q < theta.k1(); ++q)
            if (p != q) res.f_row_diag = std::max(res.f_row_diag, std::abs(FFt(p, q)));
    res.f_col_diag = 0.0;
    for (int p = 0; p < theta.k2(); ++p)
        for (int q = 0; q < theta.k2(); ++q)
            if (p != q) res.f_col_diag = std::max(res.f_col_diag, std::abs(FtF(p, q)));

    res.sign_ok = true;
    auto check_signs = [&](const MatrixXd& L) {
        for (int k = 0; k < L.cols(); ++k)
            for (int i = 0; i < L.rows(); ++i) {
                if (std::abs(L(i, k)) <= kSignTol) continue;
                if (L(i, k) < 0) res.sign_ok = false;
                break;
            }
    };
    check_signs(theta.R);
    check_signs(theta.C);
    return res;
}

}  // namespace gmfm
