#include <doctest.h>

#include <algorithm>
#include <random>

#include "gmfm/evalsim.hpp"
#include "gmfm/model.hpp"
#include "gmfm/rng.hpp"
#include "gmfm/selection.hpp"

using namespace gmfm;
using Eigen::MatrixXd;

TEST_CASE("penalty_g: frozen values and symmetry") {
    // (p1+p2+T)/(p1 p2 T) * ln(p1 p2 T/(p1+p2+T)), evaluated independently.
    CHECK(penalty_g(20, 20, 30) == doctest::Approx(0.03000763900587121).epsilon(1e-12));
    CHECK(penalty_g(100, 100, 100) ==
          doctest::Approx(0.0024335184249924214).epsilon(1e-12));
    CHECK(penalty_g(17, 29, 41) == doctest::Approx(penalty_g(29, 17, 41)).epsilon(1e-15));
    CHECK(penalty_g(50, 50, 50) > 0.0);
}

namespace {

SimulatedData case1_data(int p1, int p2, int T, std::uint64_t seed) {
    SimulationSpec spec;
    spec.case_id = SimCase::Case1;
    spec.p1 = p1; spec.p2 = p2; spec.T = T; spec.seed = seed;
    return simulate_case(spec);
}

}  // namespace

TEST_CASE("select_factor_numbers recovers (2,2) on a strong Gaussian panel") {
    // Built directly so both factor directions carry comparable signal; the
    // simulated AR(1) cases leave the trailing direction near the noise floor
    // at these tiny dims.
    auto rng = make_rng(404, "strong");
    std::normal_distribution<double> n(0, 1);
    FactorParams truth;
    truth.R = MatrixXd::NullaryExpr(30, 2, [&] { return n(rng); });
    truth.C = MatrixXd::NullaryExpr(30, 2, [&] { return n(rng); });
    truth.F.resize(30);
    for (auto& Ft : truth.F) Ft = MatrixXd::NullaryExpr(2, 2, [&] { return n(rng); });
    MatrixSeries X;
    X.p1 = 30; X.p2 = 30; X.T = 30;
    X.values = natural_params(truth);
    for (auto& s : X.values)
        s += MatrixXd::NullaryExpr(30, 30, [&] { return n(rng); });
    FamilyMap map;
    SelectConfig cfg;
    cfg.tsam.restarts = 2;
    cfg.tsam.seed = 17;
    SelectionResult res = select_factor_numbers(X, map, {3, 3}, cfg);
    CHECK(res.k1 == 2);
    CHECK(res.k2 == 2);
    CHECK(res.table.size() == 9);
    CHECK_FALSE(res.boundary_hit);

    // Table is row-major over (l1, l2) and criterion = negloglik + penalty.
    for (int l1 = 1; l1 <= 3; ++l1)
        for (int l2 = 1; l2 <= 3; ++l2) {
            const CriterionRow& row = res.table[static_cast<size_t>((l1 - 1) * 3 + l2 - 1)];
            CHECK(row.l1 == l1);
            CHECK(row.l2 == l2);
            CHECK(row.penalty ==
                  doctest::Approx((l1 + l2) * penalty_g(30, 30, 30)).epsilon(1e-12));
            CHECK(row.criterion ==
                  doctest::Approx(row.negloglik_scaled + row.penalty).epsilon(1e-12));
        }
}

TEST_CASE("pure-noise data selects the smallest grid point") {
    auto rng = make_rng(405, "noise");
    std::normal_distribution<double> n(0, 1);
    MatrixSeries X;
    X.p1 = 15; X.p2 = 15; X.T = 15;
    X.values.resize(15);
    for (auto& s : X.values) s = MatrixXd::NullaryExpr(15, 15, [&] { return n(rng); });
    FamilyMap map;
    SelectConfig cfg;
    cfg.tsam.restarts = 2;
    cfg.tsam.seed = 23;
    SelectionResult res = select_factor_numbers(X, map, {3, 3}, cfg);
    CHECK(res.k1 == 1);
    CHECK(res.k2 == 1);
}

TEST_CASE("grid capped below the truth reports a boundary hit") {
    SimulatedData sim = case1_data(25, 25, 25, 406);
    SelectConfig cfg;
    cfg.tsam.restarts = 1;
    cfg.tsam.seed = 29;
    SelectionResult res = select_factor_numbers(sim.X, sim.map, {1, 1}, cfg);
    CHECK(res.k1 == 1);
    CHECK(res.k2 == 1);
    CHECK(res.boundary_hit);
    CHECK_FALSE(res.warnings.empty());
}

TEST_CASE("selection is invariant to row/column permutations of the data") {
    SimulatedData sim = case1_data(20, 20, 20, 407);
    SelectConfig cfg;
    cfg.tsam.restarts = 2;
    cfg.tsam.seed = 31;
    SelectionResult base = select_factor_numbers(sim.X, sim.map, {3, 3}, cfg);

    auto rng = make_rng(408, "perm");
    std::vector<int> pr(20), pc(20);
    for (int i = 0; i < 20; ++i) { pr[static_cast<size_t>(i)] = i; pc[static_cast<size_t>(i)] = i; }
    std::shuffle(pr.begin(), pr.end(), rng);
    std::shuffle(pc.begin(), pc.end(), rng);
    MatrixSeries P = sim.X;
    for (auto& s : P.values) {
        MatrixXd q(20, 20);
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 20; ++j)
                q(i, j) = s(pr[static_cast<size_t>(i)], pc[static_cast<size_t>(j)]);
        s = q;
    }
    SelectionResult perm = select_factor_numbers(P, sim.map, {3, 3}, cfg);
    CHECK(perm.k1 == base.k1);
    CHECK(perm.k2 == base.k2);
}

TEST_CASE("warm-grid budget agrees with cold fits on the selected pair") {
    SimulatedData sim = case1_data(25, 25, 25, 409);
    SelectConfig cold;
    cold.tsam.restarts = 2;
    cold.tsam.seed = 37;
    SelectConfig warm = cold;
    warm.warm_grid = true;
    SelectionResult a = select_factor_numbers(sim.X, sim.map, {3, 3}, cold);
    SelectionResult b = select_factor_numbers(sim.X, sim.map, {3, 3}, warm);
    CHECK(a.k1 == b.k1);
    CHECK(a.k2 == b.k2);
}
