#include "gmfm/mm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gmfm/normalize.hpp"
#include "gmfm/rng.hpp"

namespace gmfm {

namespace {

double clampv(double pi, double bound) { return std::clamp(pi, -bound, bound); }

double ls_objective(const std::vector<MatrixXd>& Xhat, const FactorParams& theta) {
    double obj = 0.0;
    for (size_t t = 0; t < Xhat.size(); ++t)
        obj += (Xhat[t] - theta.R * theta.F[t] * theta.C.transpose()).squaredNorm();
    return obj;
}

FactorParams random_init(int p1, int p2, int T, int k1, int k2,
                         std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    FactorParams theta;
    theta.R = MatrixXd::NullaryExpr(p1, k1, [&]() { return u(rng); });
    theta.C = MatrixXd::NullaryExpr(p2, k2, [&]() { return u(rng); });
    theta.F.resize(static_cast<size_t>(T));
    for (auto& Ft : theta.F)
        Ft = MatrixXd::NullaryExpr(k1, k2, [&]() { return u(rng); });
    return theta;
}

}  // namespace

std::vector<MatrixXd> surrogate_targets(const MatrixSeries& X, const FamilyMap& map,
                                        const FactorParams& theta, double pi_clamp) {
    double bounds[kNumFamilies];
    for (int f = 0; f < kNumFamilies; ++f)
        bounds[f] = curvature_bound(static_cast<FamilyKind>(f), pi_clamp);

    std::vector<MatrixXd> xhat;
    xhat.reserve(static_cast<size_t>(X.T));
    for (int t = 0; t < X.T; ++t) {
        MatrixXd pi = theta.R * theta.F[static_cast<size_t>(t)] * theta.C.transpose();
        MatrixXd target(X.p1, X.p2);
        for (int j = 0; j < X.p2; ++j)
            for (int i = 0; i < X.p1; ++i) {
                double p = clampv(pi(i, j), pi_clamp);
                if (!X.observed(i, j, t)) {
                    // zero-weight imputation keeps the inner LS closed-form
                    // and the minorization valid on the observed likelihood
                    target(i, j) = p;
                    continue;
                }
                FamilyKind fam = map.at(i, j, t);
                CellDerivatives d =
                    derivatives_cell(fam, X.values[static_cast<size_t>(t)](i, j), p);
                target(i, j) = p + d.d1 / bounds[static_cast<int>(fam)];
            }
        xhat.push_back(std::move(target));
    }
    return xhat;
}

FactorParams ls_factorize(const std::vector<MatrixXd>& Xhat, int k1, int k2,
                          const FactorParams& init, int sweeps, FitReport* report) {
    FactorParams theta = init;
    const int T = static_cast<int>(Xhat.size());
    double ridge = 1e-10;

    auto solve_right = [&](const MatrixXd& B, MatrixXd G, const char* label) {
        for (int attempt = 0; attempt < 4; ++attempt) {
            MatrixXd A = G;
            A.diagonal().array() += ridge;
            MatrixXd sol = A.ldlt().solve(B.transpose()).transpose();
            if (sol.allFinite()) return sol;
            ridge *= 100.0;
            if (report)
                report->warnings.push_back(std::string("ls_factorize: ridge escalated for ") +
                                           label);
        }
        throw std::runtime_error("ls_factorize: normal equations unsolvable");
    };

    for (int s = 0; s < sweeps; ++s) {
        // r_i <- (sum u u')^{-1} sum xhat u, u = F_t c_j; shared Gram.
        MatrixXd G = MatrixXd::Zero(k1, k1), B = MatrixXd::Zero(theta.p1(), k1);
        MatrixXd CtC = theta.C.transpose() * theta.C;
        for (int t = 0; t < T; ++t) {
            const MatrixXd& Ft = theta.F[static_cast<size_t>(t)];
            G += Ft * CtC * Ft.transpose();
            B += Xhat[static_cast<size_t>(t)] * theta.C * Ft.transpose();
        }
        theta.R = solve_right(B, G, "row loadings");

        // F_t <- (R'R)^{-1} R' Xhat_t C (C'C)^{-1}; the unweighted Kronecker
        // normal equations factor exactly.
        MatrixXd RtR = theta.R.transpose() * theta.R;
        RtR.diagonal().array() += ridge;
        CtC = theta.C.transpose() * theta.C;
        CtC.diagonal().array() += ridge;
        auto rsolve = RtR.ldlt();
        auto csolve = CtC.ldlt();
        for (int t = 0; t < T; ++t) {
            MatrixXd M = theta.R.transpose() * Xhat[static_cast<size_t>(t)] * theta.C;
            theta.F[static_cast<size_t>(t)] =
                csolve.solve(rsolve.solve(M).transpose()).transpose();
            if (!theta.F[static_cast<size_t>(t)].allFinite())
                throw std::runtime_error("ls_factorize: factor solve failed");
        }

        // c_j <- (sum v v')^{-1} sum xhat v, v = F_t' r_i.
        MatrixXd Gc = MatrixXd::Zero(k2, k2), Bc = MatrixXd::Zero(theta.p2(), k2);
        MatrixXd RtR2 = theta.R.transpose() * theta.R;
        for (int t = 0; t < T; ++t) {
            const MatrixXd& Ft = theta.F[static_cast<size_t>(t)];
            Gc += Ft.transpose() * RtR2 * Ft;
            Bc += Xhat[static_cast<size_t>(t)].transpose() * theta.R * Ft;
        }
        theta.C = solve_right(Bc, Gc, "column loadings");
    }
    return theta;
}

std::pair<FactorParams, FitReport> mm_fit(const MatrixSeries& X, const FamilyMap& map,
                                          const MmConfig& config) {
    validate_support(X, map);
    if (config.restarts < 1 || config.k1 < 1 || config.k2 < 1 ||
        config.k1 > X.p1 || config.k2 > X.p2 || !(config.error_tol > 0))
        throw std::invalid_argument("mm_fit: invalid configuration");
    const Dims dims{X.p1, X.p2, X.T};
    const double clamp = [&] {
        if (config.pi_clamp > 0) return config.pi_clamp;
        return map.contains(FamilyKind::Poisson, dims.p1, dims.p2, dims.T)
                   ? kPoissonPiClamp
                   : kDefaultPiClamp;
    }();

    FitReport report;
    report.algorithm = "mm";
    report.k1 = config.k1;
    report.k2 = config.k2;
    report.pi_clamp = clamp;
    if (map.contains(FamilyKind::Poisson, dims.p1, dims.p2, dims.T))
        report.warnings.push_back(
            "MM with Poisson cells uses the loose bound b_U = e^clamp; "
            "convergence may be slow (MM targets Probit/Logit/Tobit)");

    FactorParams best;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int r = 1; r <= config.restarts; ++r) {
        RestartRecord rec;
        rec.restart = r;
        rec.seed = derive_seed(config.seed, "restart/" + std::to_string(r));
        std::mt19937_64 rng(rec.seed);
        try {
            FactorParams theta;
            if (r == 1 && config.warm_start)
                theta = *config.warm_start;
            else
                theta = random_init(X.p1, X.p2, X.T, config.k1, config.k2, rng);
            double ll_prev = total_loglik(X, map, theta, clamp);
            if (!std::isfinite(ll_prev)) throw std::runtime_error("non-finite init");
            int outer = 0;
            double ll = ll_prev;
            for (; outer < config.max_outer; ++outer) {
                std::vector<MatrixXd> xhat = surrogate_targets(X, map, theta, clamp);
                if (config.inner_exact) {
                    double obj = ls_objective(xhat, theta);
                    for (int s = 0; s < 500; ++s) {
                        theta = ls_factorize(xhat, config.k1, config.k2, theta, 1,
                                             &report);
                        double next = ls_objective(xhat, theta);
                        if (obj - next <= 1e-10 * (1.0 + std::abs(obj))) break;
                        obj = next;
                    }
                } else {
                    theta = ls_factorize(xhat, config.k1, config.k2, theta,
                                         config.inner_als_sweeps, &report);
                }
                ll = total_loglik(X, map, theta, clamp);
                if (!std::isfinite(ll)) throw std::runtime_error("non-finite likelihood");
                if (ll < ll_prev)
                    report.max_monotonicity_violation = std::max(
                        report.max_monotonicity_violation, ll_prev - ll);
                if (ll - ll_prev <= config.error_tol) {
                    ll_prev = ll;
                    ++outer;
                    break;
                }
                ll_prev = ll;
            }
            rec.outer_iters = outer;
            rec.loglik_stage1 = ll;
            rec.loglik_final = ll;
            if (ll > best_ll) {
                best_ll = ll;
                best = theta;
                report.best_restart = r;
            }
        } catch (const std::runtime_error& e) {
            rec.failed = true;
            report.warnings.push_back("restart " + std::to_string(r) +
                                      " failed: " + e.what());
        }
        report.restarts.push_back(rec);
    }
    if (!std::isfinite(best_ll))
        throw std::runtime_error("mm_fit: all restarts failed");

    report.residual_pre = constraint_residuals(best);
    FactorParams normalized = normalize(best, &report.warnings);
    report.residual_post = constraint_residuals(normalized);
    report.final_loglik = total_loglik(X, map, normalized, clamp);
    report.converged = true;
    auto pis = natural_params(normalized);
    for (const auto& pi : pis)
        report.clamped_cells += (pi.array().abs() > clamp).count();
    return {normalized, report};
}

}  // namespace gmfm
