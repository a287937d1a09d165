#include "gmfm/tsam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gmfm/normalize.hpp"
#include "gmfm/rng.hpp"

namespace gmfm {

namespace {

using FamTable = std::vector<MaskMatrix>;

FamTable materialize_families(const FamilyMap& map, const Dims& d) {
    FamTable fams(static_cast<size_t>(d.T));
    for (int t = 0; t < d.T; ++t) {
        fams[static_cast<size_t>(t)].resize(d.p1, d.p2);
        for (int j = 0; j < d.p2; ++j)
            for (int i = 0; i < d.p1; ++i)
                fams[static_cast<size_t>(t)](i, j) =
                    static_cast<std::uint8_t>(map.at(i, j, t));
    }
    return fams;
}

double clampv(double pi, double bound) { return std::clamp(pi, -bound, bound); }

double loglik_table(const MatrixSeries& X, const FamTable& fams,
                    const FactorParams& theta, double pi_clamp) {
    double total = 0.0;
    for (int t = 0; t < X.T; ++t) {
        MatrixXd pi = theta.R * theta.F[static_cast<size_t>(t)] * theta.C.transpose();
        const auto& Xt = X.values[static_cast<size_t>(t)];
        const auto& Ft = fams[static_cast<size_t>(t)];
        for (int j = 0; j < X.p2; ++j)
            for (int i = 0; i < X.p1; ++i) {
                if (!X.observed(i, j, t)) continue;
                total += loglik_cell(static_cast<FamilyKind>(Ft(i, j)), Xt(i, j),
                                     clampv(pi(i, j), pi_clamp));
            }
    }
    return total;
}

struct RestartFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Damped Newton ascent on one parameter block. `f` evaluates the sub-problem
// log-likelihood, `gh` its score and Hessian. Returns false on numerical
// breakdown.
template <class F, class GH>
bool newton_maximize(VectorXd& v, F&& f, GH&& gh, int iters, double grad_tol,
                     double ridge) {
    double ll = f(v);
    if (!std::isfinite(ll)) return false;
    VectorXd g;
    MatrixXd H;
    for (int it = 0; it < iters; ++it) {
        gh(v, g, H);
        if (!g.allFinite() || !H.allFinite()) return false;
        if (g.lpNorm<Eigen::Infinity>() < grad_tol) break;
        MatrixXd A = -H;
        A.diagonal().array() += ridge;
        VectorXd d = A.ldlt().solve(g);
        if (!d.allFinite()) return false;
        double alpha = 1.0;
        bool accepted = false;
        for (int h = 0; h < 40; ++h) {
            VectorXd vt = v + alpha * d;
            double llt = f(vt);
            if (std::isfinite(llt) && llt > ll - 1e-12) {
                if (llt <= ll + 1e-14 && alpha == 1.0) {
                    // stationary to machine precision
                    v = vt;
                    ll = llt;
                    accepted = false;
                } else {
                    v = vt;
                    ll = llt;
                    accepted = true;
                }
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
    }
    return true;
}

FactorParams random_init(const Dims& d, int k1, int k2, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    FactorParams theta;
    theta.R.resize(d.p1, k1);
    theta.C.resize(d.p2, k2);
    for (int c = 0; c < k1; ++c)
        for (int i = 0; i < d.p1; ++i) theta.R(i, c) = u(rng);
    for (int c = 0; c < k2; ++c)
        for (int j = 0; j < d.p2; ++j) theta.C(j, c) = u(rng);
    theta.F.resize(static_cast<size_t>(d.T));
    for (auto& Ft : theta.F) {
        Ft.resize(k1, k2);
        for (int q = 0; q < k2; ++q)
            for (int p = 0; p < k1; ++p) Ft(p, q) = u(rng);
    }
    return theta;
}

}  // namespace

double resolve_pi_clamp(double configured, const FamilyMap& map, const Dims& dims) {
    if (configured > 0.0) return configured;
    return map.contains(FamilyKind::Poisson, dims.p1, dims.p2, dims.T)
               ? kPoissonPiClamp
               : kDefaultPiClamp;
}

TypedSets typed_index_sets(const FamilyMap& map, const Dims& dims,
                           std::optional<FamilyKind> prefer) {
    FamTable fams = materialize_families(map, dims);
    TypedSets sets;

    auto pick = [&](const long counts[kNumFamilies]) {
        if (prefer && counts[static_cast<int>(*prefer)] > 0) return *prefer;
        int best = 0;
        for (int f = 1; f < kNumFamilies; ++f)
            if (counts[f] > counts[best]) best = f;  // ties keep smaller tag
        return static_cast<FamilyKind>(best);
    };

    sets.col_family.resize(static_cast<size_t>(dims.p2));
    sets.col_count.resize(static_cast<size_t>(dims.p2));
    for (int j = 0; j < dims.p2; ++j) {
        long counts[kNumFamilies] = {};
        for (int t = 0; t < dims.T; ++t)
            for (int i = 0; i < dims.p1; ++i)
                ++counts[fams[static_cast<size_t>(t)](i, j)];
        FamilyKind f = pick(counts);
        sets.col_family[static_cast<size_t>(j)] = f;
        sets.col_count[static_cast<size_t>(j)] = counts[static_cast<int>(f)];
    }
    sets.row_family.resize(static_cast<size_t>(dims.p1));
    sets.row_count.resize(static_cast<size_t>(dims.p1));
    for (int i = 0; i < dims.p1; ++i) {
        long counts[kNumFamilies] = {};
        for (int t = 0; t < dims.T; ++t)
            for (int j = 0; j < dims.p2; ++j)
                ++counts[fams[static_cast<size_t>(t)](i, j)];
        FamilyKind f = pick(counts);
        sets.row_family[static_cast<size_t>(i)] = f;
        sets.row_count[static_cast<size_t>(i)] = counts[static_cast<int>(f)];
    }
    sets.slice_family.resize(static_cast<size_t>(dims.T));
    sets.slice_count.resize(static_cast<size_t>(dims.T));
    for (int t = 0; t < dims.T; ++t) {
        long counts[kNumFamilies] = {};
        for (int j = 0; j < dims.p2; ++j)
            for (int i = 0; i < dims.p1; ++i)
                ++counts[fams[static_cast<size_t>(t)](i, j)];
        FamilyKind f = pick(counts);
        sets.slice_family[static_cast<size_t>(t)] = f;
        sets.slice_count[static_cast<size_t>(t)] = counts[static_cast<int>(f)];
    }
    return sets;
}

FactorParams alternating_stage(const MatrixSeries& X, const FamilyMap& map,
                               const TsamConfig& config, const FactorParams& init,
                               const TypedSets& sets, FitReport* report,
                               int* outer_iters) {
    const Dims dims{X.p1, X.p2, X.T};
    const double clamp = resolve_pi_clamp(config.pi_clamp, map, dims);
    const FamTable fams = materialize_families(map, dims);
    FactorParams theta = init;
    const int k1 = theta.k1(), k2 = theta.k2();

    double ll_prev = loglik_table(X, fams, theta, clamp);
    if (!std::isfinite(ll_prev))
        throw RestartFailure("non-finite likelihood at stage-one init");

    int outer = 0;
    for (; outer < config.max_outer; ++outer) {
        // Column pass: c_j over S1_j with (R, F) fixed.
        {
            std::vector<MatrixXd> RF(theta.F.size());
            for (int t = 0; t < X.T; ++t)
                RF[static_cast<size_t>(t)] = theta.R * theta.F[static_cast<size_t>(t)];
            for (int j = 0; j < X.p2; ++j) {
                const FamilyKind want = sets.col_family[static_cast<size_t>(j)];
                auto f = [&](const VectorXd& c) {
                    double ll = 0.0;
                    for (int t = 0; t < X.T; ++t) {
                        const auto& V = RF[static_cast<size_t>(t)];
                        const auto& Ft = fams[static_cast<size_t>(t)];
                        const auto& Xt = X.values[static_cast<size_t>(t)];
                        for (int i = 0; i < X.p1; ++i) {
                            if (static_cast<FamilyKind>(Ft(i, j)) != want ||
                                !X.observed(i, j, t))
                                continue;
                            ll += loglik_cell(want, Xt(i, j),
                                              clampv(V.row(i).dot(c), clamp));
                        }
                    }
                    return ll;
                };
                auto gh = [&](const VectorXd& c, VectorXd& g, MatrixXd& H) {
                    g = VectorXd::Zero(k2);
                    H = MatrixXd::Zero(k2, k2);
                    for (int t = 0; t < X.T; ++t) {
                        const auto& V = RF[static_cast<size_t>(t)];
                        const auto& Ft = fams[static_cast<size_t>(t)];
                        const auto& Xt = X.values[static_cast<size_t>(t)];
                        for (int i = 0; i < X.p1; ++i) {
                            if (static_cast<FamilyKind>(Ft(i, j)) != want ||
                                !X.observed(i, j, t))
                                continue;
                            VectorXd v = V.row(i).transpose();
                            CellDerivatives d = derivatives_cell(
                                want, Xt(i, j), clampv(v.dot(c), clamp));
                            g += d.d1 * v;
                            H += d.d2 * (v * v.transpose());
                        }
                    }
                };
                VectorXd cj = theta.C.row(j).transpose();
                if (!newton_maximize(cj, f, gh, config.inner_newton_iters,
                                     config.grad_tol, config.ridge))
                    throw RestartFailure("column sub-problem diverged");
                theta.C.row(j) = cj.transpose();
            }
        }
        // Row pass: r_i over S2_i with (F, updated C) fixed.
        {
            std::vector<MatrixXd> CFt(theta.F.size());
            for (int t = 0; t < X.T; ++t)
                CFt[static_cast<size_t>(t)] =
                    theta.C * theta.F[static_cast<size_t>(t)].transpose();
            for (int i = 0; i < X.p1; ++i) {
                const FamilyKind want = sets.row_family[static_cast<size_t>(i)];
                auto f = [&](const VectorXd& r) {
                    double ll = 0.0;
                    for (int t = 0; t < X.T; ++t) {
                        const auto& U = CFt[static_cast<size_t>(t)];
                        const auto& Ft = fams[static_cast<size_t>(t)];
                        const auto& Xt = X.values[static_cast<size_t>(t)];
                        for (int j = 0; j < X.p2; ++j) {
                            if (static_cast<FamilyKind>(Ft(i, j)) != want ||
                                !X.observed(i, j, t))
                                continue;
                            ll += loglik_cell(want, Xt(i, j),
                                              clampv(U.row(j).dot(r), clamp));
                        }
                    }
                    return ll;
                };
                auto gh = [&](const VectorXd& r, VectorXd& g, MatrixXd& H) {
                    g = VectorXd::Zero(k1);
                    H = MatrixXd::Zero(k1, k1);
                    for (int t = 0; t < X.T; ++t) {
                        const auto& U = CFt[static_cast<size_t>(t)];
                        const auto& Ft = fams[static_cast<size_t>(t)];
                        const auto& Xt = X.values[static_cast<size_t>(t)];
                        for (int j = 0; j < X.p2; ++j) {
                            if (static_cast<FamilyKind>(Ft(i, j)) != want ||
                                !X.observed(i, j, t))
                                continue;
                            VectorXd u = U.row(j).transpose();
                            CellDerivatives d = derivatives_cell(
                                want, Xt(i, j), clampv(u.dot(r), clamp));
                            g += d.d1 * u;
                            H += d.d2 * (u * u.transpose());
                        }
                    }
                };
                VectorXd ri = theta.R.row(i).transpose();
                if (!newton_maximize(ri, f, gh, config.inner_newton_iters,
                                     config.grad_tol, config.ridge))
                    throw RestartFailure("row sub-problem diverged");
                theta.R.row(i) = ri.transpose();
            }
        }
        // Slice pass: vec(F_t) over S3_t with updated loadings fixed.
        for (int t = 0; t < X.T; ++t) {
            const FamilyKind want = sets.slice_family[static_cast<size_t>(t)];
            const auto& Ftab = fams[static_cast<size_t>(t)];
            const auto& Xt = X.values[static_cast<size_t>(t)];
            auto f = [&](const VectorXd& vf) {
                MatrixXd F = Eigen::Map<const MatrixXd>(vf.data(), k1, k2);
                MatrixXd pi = theta.R * F * theta.C.transpose();
                double ll = 0.0;
                for (int j = 0; j < X.p2; ++j)
                    for (int i = 0; i < X.p1; ++i) {
                        if (static_cast<FamilyKind>(Ftab(i, j)) != want ||
                            !X.observed(i, j, t))
                            continue;
                        ll += loglik_cell(want, Xt(i, j), clampv(pi(i, j), clamp));
                    }
                return ll;
            };
            auto gh = [&](const VectorXd& vf, VectorXd& g, MatrixXd& H) {
                MatrixXd F = Eigen::Map<const MatrixXd>(vf.data(), k1, k2);
                MatrixXd pi = theta.R * F * theta.C.transpose();
                MatrixXd D1 = MatrixXd::Zero(X.p1, X.p2);
                H = MatrixXd::Zero(k1 * k2, k1 * k2);
                for (int j = 0; j < X.p2; ++j) {
                    MatrixXd Aj = MatrixXd::Zero(k1, k1);
                    bool any = false;
                    for (int i = 0; i < X.p1; ++i) {
                        if (static_cast<FamilyKind>(Ftab(i, j)) != want ||
                            !X.observed(i, j, t))
                            continue;
                        CellDerivatives d = derivatives_cell(
                            want, Xt(i, j), clampv(pi(i, j), clamp));
                        D1(i, j) = d.d1;
                        Aj += d.d2 * (theta.R.row(i).transpose() * theta.R.row(i));
                        any = true;
                    }
                    if (!any) continue;
                    VectorXd cj = theta.C.row(j).transpose();
                    for (int q = 0; q < k2; ++q)
                        for (int q2 = 0; q2 < k2; ++q2)
                            H.block(q * k1, q2 * k1, k1, k1) += cj(q) * cj(q2) * Aj;
                }
                MatrixXd S = theta.R.transpose() * D1 * theta.C;
                g = Eigen::Map<VectorXd>(S.data(), k1 * k2);
            };
            MatrixXd& F = theta.F[static_cast<size_t>(t)];
            VectorXd vf = Eigen::Map<VectorXd>(F.data(), k1 * k2);
            if (!newton_maximize(vf, f, gh, config.inner_newton_iters,
                                 config.grad_tol, config.ridge))
                throw RestartFailure("factor sub-problem diverged");
            F = Eigen::Map<const MatrixXd>(vf.data(), k1, k2);
        }

        double ll = loglik_table(X, fams, theta, clamp);
        if (!std::isfinite(ll))
            throw RestartFailure("non-finite likelihood during stage one");
        if (report && ll < ll_prev)
            report->max_monotonicity_violation =
                std::max(report->max_monotonicity_violation, ll_prev - ll);
        if (std::abs(ll - ll_prev) <= config.tol * (1.0 + std::abs(ll_prev))) {
            ll_prev = ll;
            ++outer;
            break;
        }
        ll_prev = ll;
    }
    if (outer_iters) *outer_iters = outer;
    return theta;
}

FactorParams one_step_correction(const MatrixSeries& X, const FamilyMap& map,
                                 const FactorParams& theta_tilde, double pi_clamp,
                                 double ridge, FitReport* report) {
    FactorParams theta = theta_tilde;
    auto apply = [&](const BlockDerivatives& b, VectorXd v,
                     const char* label) -> VectorXd {
        MatrixXd A = -b.hessian;
        A.diagonal().array() += ridge;
        VectorXd d = A.ldlt().solve(b.score);
        if (!d.allFinite()) {
            if (report)
                report->warnings.push_back(std::string("correction skipped for ") +
                                           label + ": singular block Hessian");
            return v;
        }
        return v + d;
    };
    for (int i = 0; i < X.p1; ++i) {
        BlockDerivatives b = row_block(i, X, map, theta_tilde, pi_clamp);
        theta.R.row(i) =
            apply(b, theta_tilde.R.row(i).transpose(), "row block").transpose();
    }
    for (int t = 0; t < X.T; ++t) {
        BlockDerivatives b = factor_block(t, X, map, theta_tilde, pi_clamp);
        VectorXd vf = Eigen::Map<const VectorXd>(
            theta_tilde.F[static_cast<size_t>(t)].data(),
            theta_tilde.k1() * theta_tilde.k2());
        VectorXd nf = apply(b, vf, "factor block");
        theta.F[static_cast<size_t>(t)] =
            Eigen::Map<const MatrixXd>(nf.data(), theta_tilde.k1(), theta_tilde.k2());
    }
    for (int j = 0; j < X.p2; ++j) {
        BlockDerivatives b = col_block(j, X, map, theta_tilde, pi_clamp);
        theta.C.row(j) =
            apply(b, theta_tilde.C.row(j).transpose(), "column block").transpose();
    }
    return theta;
}

std::pair<FactorParams, FitReport> tsam_fit(const MatrixSeries& X,
                                            const FamilyMap& map,
                                            const TsamConfig& config) {
    validate_support(X, map);
    if (config.restarts < 1 || config.k1 < 1 || config.k2 < 1 ||
        config.k1 > X.p1 || config.k2 > X.p2)
        throw std::invalid_argument("tsam_fit: invalid configuration");
    const Dims dims{X.p1, X.p2, X.T};
    const double clamp = resolve_pi_clamp(config.pi_clamp, map, dims);
    const FamTable fams = materialize_families(map, dims);
    const TypedSets sets = typed_index_sets(map, dims, config.stage1_family);

    FitReport report;
    report.algorithm = "tsam";
    report.k1 = config.k1;
    report.k2 = config.k2;
    report.pi_clamp = clamp;

    FactorParams best;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int r = 1; r <= config.restarts; ++r) {
        RestartRecord rec;
        rec.restart = r;
        rec.seed = derive_seed(config.seed, "restart/" + std::to_string(r));
        std::mt19937_64 rng(rec.seed);
        try {
            FactorParams init;
            if (r == 1 && config.warm_start)
                init = *config.warm_start;
            else
                init = random_init(dims, config.k1, config.k2, rng);
            FactorParams tilde = alternating_stage(X, map, config, init, sets,
                                                   &report, &rec.outer_iters);
            rec.loglik_stage1 = loglik_table(X, fams, tilde, clamp);
            FactorParams hat =
                one_step_correction(X, map, tilde, clamp, config.ridge, &report);
            double ll = loglik_table(X, fams, hat, clamp);
            // The Newton step can overshoot far from the optimum; fall back
            // to the stage-one iterate rather than descend.
            if (!std::isfinite(ll) || ll < rec.loglik_stage1) {
                hat = tilde;
                ll = rec.loglik_stage1;
                report.warnings.push_back(
                    "restart " + std::to_string(r) +
                    ": correction step rejected (likelihood decreased)");
            }
            rec.loglik_final = ll;
            if (ll > best_ll) {
                best_ll = ll;
                best = hat;
                report.best_restart = r;
            }
        } catch (const RestartFailure& e) {
            rec.failed = true;
            report.warnings.push_back("restart " + std::to_string(r) +
                                      " failed: " + e.what());
        }
        report.restarts.push_back(rec);
    }
    if (!std::isfinite(best_ll))
        throw std::runtime_error("tsam_fit: all restarts failed");

    report.residual_pre = constraint_residuals(best);
    FactorParams normalized = normalize(best, &report.warnings);
    report.residual_post = constraint_residuals(normalized);
    report.final_loglik = loglik_table(X, fams, normalized, clamp);
    report.converged = true;

    auto pis = natural_params(normalized);
    for (const auto& pi : pis)
        report.clamped_cells += (pi.array().abs() > clamp).count();
    if (map.contains(FamilyKind::Tobit, dims.p1, dims.p2, dims.T) ||
        map.contains(FamilyKind::Poisson, dims.p1, dims.p2, dims.T))
        report.warnings.push_back(
            "curvature bounds for Poisson/Tobit are domain-restricted (|pi| <= " +
            std::to_string(clamp) + ")");
    return {normalized, report};
}

}  // namespace gmfm
