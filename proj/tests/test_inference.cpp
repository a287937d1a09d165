#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "gmfm/inference.hpp"
#include "gmfm/model.hpp"
#include "gmfm/normalize.hpp"
#include "gmfm/rng.hpp"

using namespace gmfm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

FactorParams random_theta(int p1, int p2, int T, int k1, int k2,
                          std::uint64_t seed, double scale = 1.0) {
    auto rng = make_rng(seed, "theta");
    std::normal_distribution<double> n(0.0, scale);
    FactorParams th;
    th.R = MatrixXd::NullaryExpr(p1, k1, [&] { return n(rng); });
    th.C = MatrixXd::NullaryExpr(p2, k2, [&] { return n(rng); });
    th.F.resize(static_cast<size_t>(T));
    for (auto& Ft : th.F) Ft = MatrixXd::NullaryExpr(k1, k2, [&] { return n(rng); });
    return th;
}

MatrixSeries sample_series(const FamilyMap& map, const FactorParams& th,
                           std::uint64_t seed) {
    auto rng = make_rng(seed, "data");
    MatrixSeries X;
    X.p1 = th.p1(); X.p2 = th.p2(); X.T = th.T();
    X.values.resize(static_cast<size_t>(X.T));
    auto pis = natural_params(th);
    for (int t = 0; t < X.T; ++t) {
        X.values[static_cast<size_t>(t)].resize(X.p1, X.p2);
        for (int j = 0; j < X.p2; ++j)
            for (int i = 0; i < X.p1; ++i)
                X.values[static_cast<size_t>(t)](i, j) = sample_cell(
                    map.at(i, j, t), pis[static_cast<size_t>(t)](i, j), rng);
    }
    return X;
}

// Brute-force sandwich written independently of the library loops.
MatrixXd brute_row_variance(int i, const MatrixSeries& X, const FamilyMap& map,
                            const FactorParams& th, double clamp) {
    int k1 = th.k1();
    MatrixXd H = MatrixXd::Zero(k1, k1), M = MatrixXd::Zero(k1, k1);
    for (int t = 0; t < X.T; ++t)
        for (int j = 0; j < X.p2; ++j) {
            if (!X.observed(i, j, t)) continue;
            double pi = (th.R.row(i) * th.F[static_cast<size_t>(t)] *
                         th.C.row(j).transpose())(0, 0);
            pi = std::clamp(pi, -clamp, clamp);
            auto d = derivatives_cell(map.at(i, j, t),
                                      X.values[static_cast<size_t>(t)](i, j), pi);
            VectorXd k = th.F[static_cast<size_t>(t)] * th.C.row(j).transpose();
            H += d.d2 * k * k.transpose();
            M += d.d1 * d.d1 * k * k.transpose();
        }
    MatrixXd bread = H.inverse();
    return static_cast<double>(X.p2) * X.T * bread * M * bread;
}

}  // namespace

TEST_CASE("avar_row matches a straight-loop sandwich on a Logit instance") {
    FamilyMap map;
    map.def = FamilyKind::Logit;
    FactorParams th = random_theta(6, 8, 7, 2, 2, 201, 0.6);
    MatrixSeries X = sample_series(map, th, 202);
    for (int i = 0; i < 6; ++i) {
        SandwichEstimate se = avar_row(i, X, map, th);
        MatrixXd oracle = brute_row_variance(i, X, map, th, kDefaultPiClamp);
        MatrixXd sym = 0.5 * (oracle + oracle.transpose());
        CHECK((se.variance - sym).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(se.scale == doctest::Approx(8.0 * 7.0));
        // Symmetric PSD.
        CHECK((se.variance - se.variance.transpose()).cwiseAbs().maxCoeff() == 0.0);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(se.variance);
        CHECK(es.eigenvalues().minCoeff() >= -1e-12);
    }
}

TEST_CASE("avar_col and avar_factor mirror the row construction") {
    FamilyMap map;
    map.def = FamilyKind::Probit;
    FactorParams th = random_theta(5, 6, 4, 2, 2, 203, 0.5);
    MatrixSeries X = sample_series(map, th, 204);

    // Column j: kernels v = F_t' r_i, scale p1 T.
    int j = 2;
    SandwichEstimate se = avar_col(j, X, map, th);
    MatrixXd H = MatrixXd::Zero(2, 2), M = MatrixXd::Zero(2, 2);
    for (int t = 0; t < 4; ++t)
        for (int i = 0; i < 5; ++i) {
            double pi = (th.R.row(i) * th.F[static_cast<size_t>(t)] *
                         th.C.row(j).transpose())(0, 0);
            pi = std::clamp(pi, -kDefaultPiClamp, kDefaultPiClamp);
            auto d = derivatives_cell(FamilyKind::Probit,
                                      X.values[static_cast<size_t>(t)](i, j), pi);
            VectorXd v = th.F[static_cast<size_t>(t)].transpose() * th.R.row(i).transpose();
            H += d.d2 * v * v.transpose();
            M += d.d1 * d.d1 * v * v.transpose();
        }
    MatrixXd bread = H.inverse();
    MatrixXd oracle = 5.0 * 4.0 * bread * M * bread;
    CHECK((se.variance - 0.5 * (oracle + oracle.transpose())).cwiseAbs().maxCoeff() <
          1e-10);
    CHECK(se.scale == doctest::Approx(5.0 * 4.0));

    // Factor t: kernels c_j (x) r_i in column-major vec order, scale p1 p2.
    int t = 1;
    SandwichEstimate sf = avar_factor(t, X, map, th);
    MatrixXd Hf = MatrixXd::Zero(4, 4), Mf = MatrixXd::Zero(4, 4);
    for (int jj = 0; jj < 6; ++jj)
        for (int i = 0; i < 5; ++i) {
            double pi = (th.R.row(i) * th.F[static_cast<size_t>(t)] *
                         th.C.row(jj).transpose())(0, 0);
            pi = std::clamp(pi, -kDefaultPiClamp, kDefaultPiClamp);
            auto d = derivatives_cell(FamilyKind::Probit,
                                      X.values[static_cast<size_t>(t)](i, jj), pi);
            VectorXd w(4);
            for (int b = 0; b < 2; ++b)
                for (int a = 0; a < 2; ++a)
                    w(b * 2 + a) = th.C(jj, b) * th.R(i, a);
            Hf += d.d2 * w * w.transpose();
            Mf += d.d1 * d.d1 * w * w.transpose();
        }
    MatrixXd bf = Hf.inverse();
    MatrixXd of = 5.0 * 6.0 * bf * Mf * bf;
    CHECK((sf.variance - 0.5 * (of + of.transpose())).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(sf.scale == doctest::Approx(5.0 * 6.0));
}

TEST_CASE("Gaussian unit-residual pattern collapses bread and meat") {
    // d2 == -1 and d1^2 == 1 per cell: variance = p2 T (sum kk')^{-1}.
    FactorParams th;
    th.R = MatrixXd::Ones(3, 1);
    th.C = MatrixXd::Ones(4, 1);
    th.F.assign(5, MatrixXd::Ones(1, 1));
    MatrixSeries X;
    X.p1 = 3; X.p2 = 4; X.T = 5;
    X.values.resize(5);
    int flip = 0;
    for (auto& s : X.values) {
        s.resize(3, 4);
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 3; ++i) s(i, j) = 1.0 + ((flip++ % 2) ? 1.0 : -1.0);
    }
    FamilyMap map;
    SandwichEstimate se = avar_row(0, X, map, th);
    // Kernel is the scalar 1, summed over p2 T = 20 cells: variance = 20/20.
    CHECK(se.variance(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("standardized_error: zero at truth, analytic diagonal case") {
    SandwichEstimate se;
    se.variance = (MatrixXd(2, 2) << 4.0, 0.0, 0.0, 9.0).finished();
    se.scale = 25.0;
    VectorXd hat = (VectorXd(2) << 1.0, 2.0).finished();
    CHECK(standardized_error(hat, hat, se).norm() == doctest::Approx(0.0));
    VectorXd truth = (VectorXd(2) << 0.0, 1.0).finished();
    VectorXd z = standardized_error(hat, truth, se);
    CHECK(z(0) == doctest::Approx(5.0 * 1.0 / 2.0).epsilon(1e-12));
    CHECK(z(1) == doctest::Approx(5.0 * 1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("align_signs flips loading columns toward the reference") {
    FactorParams th = normalize(random_theta(6, 5, 4, 2, 2, 205));
    FactorParams flipped = th;
    flipped.R.col(1) *= -1.0;
    flipped.C.col(0) *= -1.0;
    for (auto& Ft : flipped.F) {
        Ft.row(1) *= -1.0;
        Ft.col(0) *= -1.0;
    }
    // pi is unchanged by paired flips; align_signs must restore the originals.
    FactorParams aligned = align_signs(flipped, th);
    CHECK((aligned.R - th.R).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((aligned.C - th.C).cwiseAbs().maxCoeff() < 1e-12);
    for (int t = 0; t < 4; ++t)
        CHECK((aligned.F[static_cast<size_t>(t)] - th.F[static_cast<size_t>(t)])
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    auto pa = natural_params(aligned), pf = natural_params(flipped);
    for (int t = 0; t < 4; ++t)
        CHECK((pa[static_cast<size_t>(t)] - pf[static_cast<size_t>(t)]).cwiseAbs().maxCoeff() <
              1e-12);
}

TEST_CASE("avar_row respects the missing mask") {
    FamilyMap map;
    map.def = FamilyKind::Logit;
    FactorParams th = random_theta(4, 5, 3, 1, 1, 206, 0.7);
    MatrixSeries X = sample_series(map, th, 207);
    SandwichEstimate full = avar_row(0, X, map, th);
    X.mask.assign(3, MaskMatrix::Ones(4, 5));
    SandwichEstimate same = avar_row(0, X, map, th);
    CHECK((full.variance - same.variance).cwiseAbs().maxCoeff() < 1e-14);
    for (int t = 0; t < 3; ++t) X.mask[static_cast<size_t>(t)](0, 1) = 0;
    SandwichEstimate masked = avar_row(0, X, map, th);
    CHECK((full.variance - masked.variance).cwiseAbs().maxCoeff() > 1e-8);
}
