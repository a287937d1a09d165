#include "gmfm/selection.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gmfm/rng.hpp"
#include "gmfm/util.hpp"

namespace gmfm {

namespace {

// Previous grid cell's solution padded with small random columns/entries.
FactorParams pad_params(const FactorParams& prev, int k1, int k2,
                        std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    FactorParams out;
    out.R = MatrixXd::NullaryExpr(prev.p1(), k1, [&]() { return u(rng); });
    out.C = MatrixXd::NullaryExpr(prev.p2(), k2, [&]() { return u(rng); });
    out.R.leftCols(std::min(k1, prev.k1())) =
        prev.R.leftCols(std::min(k1, prev.k1()));
    out.C.leftCols(std::min(k2, prev.k2())) =
        prev.C.leftCols(std::min(k2, prev.k2()));
    out.F.resize(prev.F.size());
    for (size_t t = 0; t < prev.F.size(); ++t) {
        out.F[t] = MatrixXd::NullaryExpr(k1, k2, [&]() { return u(rng); });
        out.F[t].topLeftCorner(std::min(k1, prev.k1()), std::min(k2, prev.k2())) =
            prev.F[t].topLeftCorner(std::min(k1, prev.k1()), std::min(k2, prev.k2()));
    }
    return out;
}

}  // namespace

double penalty_g(int p1, int p2, int T) {
    if (p1 < 2 || p2 < 2 || T < 1)
        throw std::invalid_argument("penalty_g: dims too small");
    double n = static_cast<double>(p1) * p2 * T;
    double s = static_cast<double>(p1) + p2 + T;
    return s / n * std::log(n / s);
}

SelectionResult select_factor_numbers(const MatrixSeries& X, const FamilyMap& map,
                                      const SelectionGrid& grid,
                                      const SelectConfig& config) {
    const int l1_max = std::min(grid.l1_max, X.p1);
    const int l2_max = std::min(grid.l2_max, X.p2);
    if (grid.l1_max < 1 || grid.l2_max < 1)
        throw std::invalid_argument("select_factor_numbers: empty grid");
    const double g = penalty_g(X.p1, X.p2, X.T);
    const double scale = static_cast<double>(X.p1) * X.p2 * X.T;

    SelectionResult result;
    result.table.resize(static_cast<size_t>(l1_max * l2_max));

    auto fit_cell = [&](int l1, int l2,
                        const std::optional<FactorParams>& warm) -> std::pair<double, FactorParams> {
        std::uint64_t cell_seed = derive_seed(
            config.algo == "mm" ? config.mm.seed : config.tsam.seed,
            "grid/" + std::to_string(l1) + "/" + std::to_string(l2));
        if (config.algo == "mm") {
            MmConfig cfg = config.mm;
            cfg.k1 = l1;
            cfg.k2 = l2;
            cfg.seed = cell_seed;
            cfg.warm_start = warm;
            if (warm) cfg.restarts = 1;
            auto [theta, report] = mm_fit(X, map, cfg);
            return {report.final_loglik, theta};
        }
        TsamConfig cfg = config.tsam;
        cfg.k1 = l1;
        cfg.k2 = l2;
        cfg.seed = cell_seed;
        cfg.warm_start = warm;
        if (warm) cfg.restarts = 1;
        auto [theta, report] = tsam_fit(X, map, cfg);
        return {report.final_loglik, theta};
    };

    auto run_cell = [&](int idx, const std::optional<FactorParams>& warm)
        -> std::optional<FactorParams> {
        int l1 = idx / l2_max + 1, l2 = idx % l2_max + 1;
        CriterionRow& row = result.table[static_cast<size_t>(idx)];
        row.l1 = l1;
        row.l2 = l2;
        row.penalty = (l1 + l2) * g;
        try {
            auto [ll, theta] = fit_cell(l1, l2, warm);
            row.negloglik_scaled = -ll / scale;
            row.criterion = row.negloglik_scaled + row.penalty;
            return theta;
        } catch (const std::exception& e) {
            (void)e;
            row.failed = true;
            row.negloglik_scaled = std::numeric_limits<double>::infinity();
            row.criterion = std::numeric_limits<double>::infinity();
            return std::nullopt;
        }
    };

    if (config.warm_grid) {
        // Sequential sweep, warm-started from the left (or upper) neighbor.
        std::vector<std::optional<FactorParams>> fits(
            static_cast<size_t>(l1_max * l2_max));
        std::mt19937_64 pad_rng(derive_seed(config.tsam.seed, "grid/pad"));
        for (int l1 = 1; l1 <= l1_max; ++l1)
            for (int l2 = 1; l2 <= l2_max; ++l2) {
                int idx = (l1 - 1) * l2_max + (l2 - 1);
                std::optional<FactorParams> warm;
                if (l2 > 1 && fits[static_cast<size_t>(idx - 1)])
                    warm = pad_params(*fits[static_cast<size_t>(idx - 1)], l1, l2,
                                      pad_rng);
                else if (l1 > 1 && fits[static_cast<size_t>(idx - l2_max)])
                    warm = pad_params(*fits[static_cast<size_t>(idx - l2_max)], l1,
                                      l2, pad_rng);
                fits[static_cast<size_t>(idx)] = run_cell(idx, warm);
            }
    } else {
        parallel_for(l1_max * l2_max, config.jobs,
                     [&](int idx) { run_cell(idx, std::nullopt); });
    }

    for (const auto& row : result.table)
        if (row.failed)
            result.warnings.push_back("grid cell (" + std::to_string(row.l1) + "," +
                                      std::to_string(row.l2) +
                                      ") failed; criterion set to +inf");

    // Argmin with parsimony tie-breaking: scan in (l1+l2, l1) order.
    double best = std::numeric_limits<double>::infinity();
    int best_l1 = 1, best_l2 = 1;
    for (int s = 2; s <= l1_max + l2_max; ++s)
        for (int l1 = 1; l1 <= l1_max; ++l1) {
            int l2 = s - l1;
            if (l2 < 1 || l2 > l2_max) continue;
            const auto& row = result.table[static_cast<size_t>((l1 - 1) * l2_max + l2 - 1)];
            if (row.criterion < best) {
                best = row.criterion;
                best_l1 = l1;
                best_l2 = l2;
            }
        }
    result.k1 = best_l1;
    result.k2 = best_l2;
    result.boundary_hit = (best_l1 == l1_max || best_l2 == l2_max);
    if (result.boundary_hit)
        result.warnings.push_back("selected pair sits on the grid boundary; "
                                  "consider enlarging the grid");
    return result;
}

}  // namespace gmfm
