// gmfm: command-line front end for the matrix factor model toolkit.
#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "gmfm/evalsim.hpp"
#include "gmfm/io.hpp"
#include "gmfm/normalize.hpp"
#include "gmfm/rng.hpp"
#include "gmfm/selection.hpp"
#include "gmfm/util.hpp"

using namespace gmfm;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

std::pair<FactorParams, FitReport> run_fit(const Bundle& b, const std::string& algo,
                                           int k1, int k2, int restarts,
                                           std::uint64_t seed, double pi_clamp,
                                           double tol, bool inner_exact) {
    if (algo == "mm") {
        MmConfig cfg;
        cfg.k1 = k1;
        cfg.k2 = k2;
        cfg.restarts = restarts;
        cfg.seed = seed;
        cfg.pi_clamp = pi_clamp;
        if (tol > 0) cfg.error_tol = tol;
        cfg.inner_exact = inner_exact;
        return mm_fit(b.X, b.map, cfg);
    }
    TsamConfig cfg;
    cfg.k1 = k1;
    cfg.k2 = k2;
    cfg.restarts = restarts;
    cfg.seed = seed;
    cfg.pi_clamp = pi_clamp;
    if (tol > 0) cfg.tol = tol;
    return tsam_fit(b.X, b.map, cfg);
}

int cmd_fit(const std::string& data, const std::string& algo, int k1, int k2,
            int restarts, std::uint64_t seed, double pi_clamp, double tol,
            bool inner_exact, const std::string& out, bool with_se) {
    Bundle b;
    try {
        b = read_bundle(data);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    try {
        auto [theta, report] =
            run_fit(b, algo, k1, k2, restarts, seed, pi_clamp, tol, inner_exact);
        SeBlocks se;
        if (with_se) {
            double clamp = report.pi_clamp;
            for (int i = 0; i < b.X.p1; ++i)
                se.rows.push_back(avar_row(i, b.X, b.map, theta, clamp));
            for (int j = 0; j < b.X.p2; ++j)
                se.cols.push_back(avar_col(j, b.X, b.map, theta, clamp));
            for (int t = 0; t < b.X.T; ++t)
                se.factors.push_back(avar_factor(t, b.X, b.map, theta, clamp));
        }
        write_fit_json(out, theta, report, with_se ? &se : nullptr);
        std::cout << "loglik=" << report.final_loglik
                  << " restart=" << report.best_restart
                  << " residual=" << report.residual_post.max_residual()
                  << " converged=" << (report.converged ? "yes" : "no") << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "fit failed: " << e.what() << "\n";
        return kExitNumerical;
    }
}

int cmd_select(const std::string& data, const std::string& algo, int l1_max,
               int l2_max, int restarts, std::uint64_t seed, bool warm_grid,
               int jobs, const std::string& out) {
    Bundle b;
    try {
        b = read_bundle(data);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    try {
        SelectConfig cfg;
        cfg.algo = algo;
        cfg.tsam.restarts = restarts;
        cfg.tsam.seed = seed;
        cfg.mm.restarts = restarts;
        cfg.mm.seed = seed;
        cfg.warm_grid = warm_grid;
        cfg.jobs = jobs;
        SelectionResult res =
            select_factor_numbers(b.X, b.map, {l1_max, l2_max}, cfg);
        if (!out.empty()) {
            std::ofstream csv(out);
            if (!csv) {
                std::cerr << "error: cannot write " << out << "\n";
                return kExitInput;
            }
            csv << "l1,l2,negloglik_scaled,penalty,criterion\n";
            csv.precision(12);
            for (const auto& row : res.table)
                csv << row.l1 << ',' << row.l2 << ',' << row.negloglik_scaled
                    << ',' << row.penalty << ',' << row.criterion << '\n';
        }
        for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
        std::cout << "k1=" << res.k1 << " k2=" << res.k2 << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "selection failed: " << e.what() << "\n";
        return kExitNumerical;
    }
}

int cmd_simulate(const std::string& case_id, int p1, int p2, int T,
                 std::uint64_t seed, const std::string& out) {
    try {
        SimulationSpec spec;
        spec.case_id = sim_case_from_string(case_id);
        spec.p1 = p1;
        spec.p2 = p2;
        spec.T = T;
        spec.seed = seed;
        SimulatedData sim = simulate_case(spec);
        int k1 = 0, k2 = 0;
        case_ranks(spec.case_id, &k1, &k2);
        write_bundle(out, sim.X, sim.map, k1, k2);
        write_truth_json(out + "/truth.json", sim.theta0);
        std::cout << "wrote " << out << " (" << p1 << "x" << p2 << "x" << T
                  << ", " << to_string(spec.case_id) << ")\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

int cmd_bench(const std::string& cases_csv, int p1, int p2, int T, int reps,
              std::uint64_t seed, int restarts, double pi_clamp, int jobs,
              const std::string& out) {
    std::vector<SimCase> cases;
    try {
        std::istringstream ss(cases_csv);
        std::string tok;
        while (std::getline(ss, tok, ','))
            cases.push_back(sim_case_from_string(tok));
        if (cases.empty()) throw std::invalid_argument("no cases given");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    std::ofstream csv(out);
    if (!csv) {
        std::cerr << "error: cannot write " << out << "\n";
        return kExitInput;
    }
    csv << "case,p1,p2,T,rep,method,ccorR,ccorC,seconds\n";
    csv.precision(6);
    try {
        for (SimCase c : cases) {
            int k1 = 0, k2 = 0;
            case_ranks(c, &k1, &k2);
            struct Row {
                double gR, gC, gs, bR, bC, bs;
            };
            std::vector<Row> rows(static_cast<size_t>(reps));
            parallel_for(reps, jobs, [&](int rep) {
                SimulationSpec spec;
                spec.case_id = c;
                spec.p1 = p1;
                spec.p2 = p2;
                spec.T = T;
                spec.seed = derive_seed(seed, std::string("bench/") +
                                                  to_string(c) + "/" +
                                                  std::to_string(rep));
                SimulatedData sim = simulate_case(spec);
                TsamConfig cfg;
                cfg.k1 = k1;
                cfg.k2 = k2;
                cfg.restarts = restarts;
                cfg.seed = spec.seed;
                cfg.pi_clamp = pi_clamp;
                auto t0 = std::chrono::steady_clock::now();
                FactorParams theta = tsam_fit(sim.X, sim.map, cfg).first;
                auto t1 = std::chrono::steady_clock::now();
                FactorParams base = alpha_pca_fit(sim.X, k1, k2);
                auto t2 = std::chrono::steady_clock::now();
                Row& r = rows[static_cast<size_t>(rep)];
                r.gR = ccor(theta.R, sim.theta0.R);
                r.gC = ccor(theta.C, sim.theta0.C);
                r.gs = std::chrono::duration<double>(t1 - t0).count();
                r.bR = ccor(base.R, sim.theta0.R);
                r.bC = ccor(base.C, sim.theta0.C);
                r.bs = std::chrono::duration<double>(t2 - t1).count();
            });
            for (int rep = 0; rep < reps; ++rep) {
                const Row& r = rows[static_cast<size_t>(rep)];
                csv << to_string(c) << ',' << p1 << ',' << p2 << ',' << T << ','
                    << (rep + 1) << ",gmfm," << r.gR << ',' << r.gC << ','
                    << r.gs << '\n';
                csv << to_string(c) << ',' << p1 << ',' << p2 << ',' << T << ','
                    << (rep + 1) << ",alpha_pca," << r.bR << ',' << r.bC << ','
                    << r.bs << '\n';
            }
        }
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "bench failed: " << e.what() << "\n";
        return kExitNumerical;
    }
}

int cmd_validate(const std::string& data, int window, int quarters, int k1,
                 int k2, const std::string& algo, std::uint64_t seed,
                 const std::string& out) {
    Bundle b;
    try {
        b = read_bundle(data);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    try {
        RollingResult res =
            rolling_validate(b.X, b.map, window, quarters, k1, k2, algo, seed);
        json j;
        j["mse"] = res.mse;
        j["rho"] = res.rho;
        j["mse_bar"] = res.mse_bar;
        j["rho_bar"] = res.rho_bar;
        if (!out.empty()) {
            std::ofstream f(out);
            if (!f) {
                std::cerr << "error: cannot write " << out << "\n";
                return kExitInput;
            }
            f << j.dump(1) << "\n";
        }
        std::cout << "mse_bar=" << res.mse_bar << " rho_bar=" << res.rho_bar
                  << " periods=" << res.mse.size() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "validation failed: " << e.what() << "\n";
        return kExitNumerical;
    }
}

int cmd_report(const std::string& fit_path, const std::string& truth_path) {
    try {
        auto [theta, report] = read_fit_json(fit_path);
        std::cout << "algorithm=" << report.algorithm << " k1=" << theta.k1()
                  << " k2=" << theta.k2() << " loglik=" << report.final_loglik
                  << " converged=" << (report.converged ? "yes" : "no") << "\n";
        if (!truth_path.empty()) {
            FactorParams truth = read_truth_json(truth_path);
            std::cout.precision(15);
            std::cout << "ccorR=" << ccor(theta.R, truth.R)
                      << " ccorC=" << ccor(theta.C, truth.C) << "\n";
        }
        for (const auto& w : report.warnings)
            std::cout << "warning: " << w << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized matrix factor model toolkit"};
    app.require_subcommand(1);
    int jobs = default_jobs();
    app.add_option("--jobs", jobs, "worker count (default: GMFM_JOBS or 1)");

    // fit
    std::string fit_data, fit_algo = "tsam", fit_out = "fit.json";
    int fit_k1 = 1, fit_k2 = 1, fit_restarts = 5;
    double fit_clamp = 0.0, fit_tol = 0.0;
    std::uint64_t fit_seed = 0;
    bool with_se = false, fit_inner_exact = false;
    auto* fit = app.add_subcommand("fit", "fit a model to a data bundle");
    fit->add_option("--data", fit_data, "bundle directory")->required();
    fit->add_option("--k1", fit_k1)->required();
    fit->add_option("--k2", fit_k2)->required();
    fit->add_option("--algo", fit_algo)->check(CLI::IsMember({"tsam", "mm"}));
    fit->add_option("--restarts", fit_restarts);
    fit->add_option("--seed", fit_seed);
    fit->add_option("--pi-clamp", fit_clamp, "linear-predictor clamp (0 = auto)");
    fit->add_option("--tol", fit_tol, "convergence tolerance (0 = default)");
    fit->add_flag("--inner-exact", fit_inner_exact,
                  "mm only: run the inner least-squares pass to stationarity");
    fit->add_option("--out", fit_out);
    fit->add_flag("--with-se", with_se, "attach sandwich variance blocks");

    // select
    std::string sel_data, sel_algo = "tsam", sel_out = "criterion.csv";
    int sel_l1 = 8, sel_l2 = 8, sel_restarts = 5;
    std::uint64_t sel_seed = 0;
    bool warm_grid = false;
    auto* sel = app.add_subcommand("select", "select the factor numbers");
    sel->add_option("--data", sel_data)->required();
    sel->add_option("--l1-max", sel_l1);
    sel->add_option("--l2-max", sel_l2);
    sel->add_option("--algo", sel_algo)->check(CLI::IsMember({"tsam", "mm"}));
    sel->add_option("--restarts", sel_restarts);
    sel->add_option("--seed", sel_seed);
    sel->add_flag("--warm-grid", warm_grid, "warm-start each cell from a neighbor");
    sel->add_option("--out", sel_out, "criterion table CSV");

    // simulate
    std::string sim_case = "1", sim_out = "bundle";
    int sim_p1 = 20, sim_p2 = 20, sim_T = 30;
    std::uint64_t sim_seed = 0;
    auto* sim = app.add_subcommand("simulate", "write a synthetic data bundle");
    sim->add_option("--case", sim_case, "1-6 or dgp1-dgp3")->required();
    sim->add_option("--p1", sim_p1);
    sim->add_option("--p2", sim_p2);
    sim->add_option("--T", sim_T);
    sim->add_option("--seed", sim_seed);
    sim->add_option("--out", sim_out)->required();

    // bench
    std::string bench_cases = "1", bench_out = "bench.csv";
    int bench_p1 = 20, bench_p2 = 20, bench_T = 30, bench_reps = 10,
        bench_restarts = 3;
    // Simulated count panels carry a strong latent signal; the conservative
    // automatic Poisson clamp would truncate it, so widen it by default here.
    double bench_clamp = 30.0;
    std::uint64_t bench_seed = 0;
    auto* bench = app.add_subcommand("bench", "simulation benchmark grid");
    bench->add_option("--cases", bench_cases, "comma-separated case ids");
    bench->add_option("--p1", bench_p1);
    bench->add_option("--p2", bench_p2);
    bench->add_option("--T", bench_T);
    bench->add_option("--reps", bench_reps);
    bench->add_option("--restarts", bench_restarts);
    bench->add_option("--seed", bench_seed);
    bench->add_option("--pi-clamp", bench_clamp, "linear-predictor clamp (0 = auto)");
    bench->add_option("--out", bench_out);

    // validate
    std::string val_data, val_algo = "tsam", val_out;
    int val_window = 5, val_quarters = 4, val_k1 = 1, val_k2 = 1;
    std::uint64_t val_seed = 0;
    auto* val = app.add_subcommand("validate", "rolling validation");
    val->add_option("--data", val_data)->required();
    val->add_option("--window", val_window, "training window, in periods");
    val->add_option("--quarters", val_quarters, "slices per period");
    val->add_option("--k1", val_k1);
    val->add_option("--k2", val_k2);
    val->add_option("--algo", val_algo)
        ->check(CLI::IsMember({"tsam", "mm", "alpha_pca"}));
    val->add_option("--seed", val_seed);
    val->add_option("--out", val_out, "RollingResult JSON path");

    // report
    std::string rep_fit, rep_truth;
    auto* rep = app.add_subcommand("report", "summarize a fit.json");
    rep->add_option("--fit", rep_fit)->required();
    rep->add_option("--truth", rep_truth, "truth.json for ccor computation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    if (fit->parsed())
        return cmd_fit(fit_data, fit_algo, fit_k1, fit_k2, fit_restarts, fit_seed,
                       fit_clamp, fit_tol, fit_inner_exact, fit_out, with_se);
    if (sel->parsed())
        return cmd_select(sel_data, sel_algo, sel_l1, sel_l2, sel_restarts,
                          sel_seed, warm_grid, jobs, sel_out);
    if (sim->parsed())
        return cmd_simulate(sim_case, sim_p1, sim_p2, sim_T, sim_seed, sim_out);
    if (bench->parsed())
        return cmd_bench(bench_cases, bench_p1, bench_p2, bench_T, bench_reps,
                         bench_seed, bench_restarts, bench_clamp, jobs, bench_out);
    if (val->parsed())
        return cmd_validate(val_data, val_window, val_quarters, val_k1, val_k2,
                            val_algo, val_seed, val_out);
    if (rep->parsed()) return cmd_report(rep_fit, rep_truth);
    return kExitInput;
}
