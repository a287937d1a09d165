#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gmfm/evalsim.hpp"
#include "gmfm/io.hpp"
#include "gmfm/model.hpp"
#include "gmfm/normalize.hpp"
#include "gmfm/rng.hpp"
#include "gmfm/tsam.hpp"

using namespace gmfm;
using Eigen::MatrixXd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path d = fs::temp_directory_path() / ("gmfm_test_" + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string cli() {
    const char* p = std::getenv("GMFM_CLI");
    REQUIRE_MESSAGE(p != nullptr, "GMFM_CLI must point at the built binary");
    return p;
}

int run(const std::string& args) {
    std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string run_capture(const std::string& args, int* code = nullptr) {
    fs::path out = fs::temp_directory_path() / "gmfm_cli_capture.txt";
    std::string cmd = cli() + " " + args + " >" + out.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    if (code) *code = WEXITSTATUS(rc);
    std::ifstream f(out);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

long count_lines(const fs::path& p) {
    std::ifstream f(p);
    long n = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("bundle round trip with blocks, mask and true ranks") {
    SimulationSpec spec;
    spec.case_id = SimCase::Case4;
    spec.p1 = 6; spec.p2 = 8; spec.T = 4; spec.seed = 3;
    SimulatedData sim = simulate_case(spec);
    sim.X.mask.assign(4, MaskMatrix::Ones(6, 8));
    sim.X.mask[1](2, 3) = 0;
    sim.X.mask[3](0, 0) = 0;

    fs::path d = fresh_dir("bundle");
    write_bundle(d.string(), sim.X, sim.map, 4, 4);
    Bundle b = read_bundle(d.string());
    CHECK(b.X.p1 == 6);
    CHECK(b.X.p2 == 8);
    CHECK(b.X.T == 4);
    CHECK(b.true_k1 == 4);
    CHECK(b.true_k2 == 4);
    CHECK_FALSE(b.X.observed(2, 3, 1));
    CHECK_FALSE(b.X.observed(0, 0, 3));
    CHECK(b.X.observed(1, 1, 0));
    for (int t = 0; t < 4; ++t)
        for (int j = 0; j < 8; ++j)
            for (int i = 0; i < 6; ++i) {
                CHECK(b.map.at(i, j, t) == sim.map.at(i, j, t));
                if (b.X.observed(i, j, t))
                    CHECK(b.X.values[static_cast<size_t>(t)](i, j) ==
                          sim.X.values[static_cast<size_t>(t)](i, j));
            }
}

TEST_CASE("read_bundle errors name the offending file or field") {
    fs::path d = fresh_dir("badbundle");
    CHECK_THROWS_WITH_AS(read_bundle(d.string()),
                         doctest::Contains("meta.json"), std::runtime_error);
    std::ofstream(d / "data.csv") << "t,i,j,x\n";
    std::ofstream(d / "meta.json") << R"({"p1": 4, "p2": 4, "T": "two",)"
                                   << R"( "family": "gaussian"})";
    try {
        read_bundle(d.string());
        FAIL("expected a throw");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("T") != std::string::npos);
    }
    std::ofstream(d / "meta.json")
        << R"({"p1": 4, "p2": 4, "T": 2, "family": "gaussian"})";
    fs::remove(d / "data.csv");
    try {
        read_bundle(d.string());
        FAIL("expected a throw");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("data.csv") != std::string::npos);
    }
}

TEST_CASE("fit.json and truth.json round trips") {
    SimulationSpec spec;
    spec.case_id = SimCase::Case1;
    spec.p1 = 8; spec.p2 = 8; spec.T = 5; spec.seed = 41;
    SimulatedData sim = simulate_case(spec);
    TsamConfig cfg;
    cfg.k1 = 2; cfg.k2 = 2; cfg.restarts = 1; cfg.seed = 41;
    auto [theta, report] = tsam_fit(sim.X, sim.map, cfg);

    fs::path d = fresh_dir("fitjson");
    write_fit_json((d / "fit.json").string(), theta, report);
    auto [rtheta, rreport] = read_fit_json((d / "fit.json").string());
    CHECK((rtheta.R - theta.R).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rtheta.C - theta.C).cwiseAbs().maxCoeff() == 0.0);
    for (int t = 0; t < 5; ++t)
        CHECK((rtheta.F[static_cast<size_t>(t)] - theta.F[static_cast<size_t>(t)])
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    CHECK(rreport.final_loglik == report.final_loglik);
    CHECK(rreport.algorithm == report.algorithm);
    CHECK(total_loglik(sim.X, sim.map, rtheta) ==
          doctest::Approx(rreport.final_loglik).epsilon(1e-8));

    write_truth_json((d / "truth.json").string(), sim.theta0);
    FactorParams truth = read_truth_json((d / "truth.json").string());
    CHECK((truth.R - sim.theta0.R).cwiseAbs().maxCoeff() == 0.0);
    CHECK((truth.C - sim.theta0.C).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cli simulate: row count and truth file") {
    fs::path d = fresh_dir("sim");
    int code = run("simulate --case 1 --p1 20 --p2 20 --T 30 --seed 1 --out " +
                   (d / "b").string());
    CHECK(code == 0);
    CHECK(count_lines(d / "b" / "data.csv") == 12000 + 1);  // header
    CHECK(fs::exists(d / "b" / "meta.json"));
    CHECK(fs::exists(d / "b" / "truth.json"));
    CHECK(run("simulate --case 9 --out " + (d / "x").string()) == 2);
}

TEST_CASE("cli fit/report/select round trip on a small bundle") {
    fs::path d = fresh_dir("fit");
    REQUIRE(run("simulate --case 1 --p1 12 --p2 12 --T 10 --seed 5 --out " +
                (d / "b").string()) == 0);

    int code = 0;
    std::string out = run_capture(
        "fit --data " + (d / "b").string() +
        " --k1 2 --k2 2 --algo tsam --restarts 2 --seed 7 --with-se --out " +
        (d / "fit.json").string(), &code);
    CHECK(code == 0);
    CHECK(out.find("loglik=") != std::string::npos);

    std::string rep = run_capture("report --fit " + (d / "fit.json").string() +
                                      " --truth " + (d / "b" / "truth.json").string(),
                                  &code);
    CHECK(code == 0);
    CHECK(rep.find("ccorR=") != std::string::npos);

    // The reported ccor matches an in-process recomputation.
    auto [theta, freport] = read_fit_json((d / "fit.json").string());
    FactorParams truth = read_truth_json((d / "b" / "truth.json").string());
    std::ostringstream want;
    want.precision(15);
    want << "ccorR=" << ccor(theta.R, truth.R);
    CHECK(rep.find(want.str()) != std::string::npos);

    // Missing bundle: input error.
    CHECK(run("fit --data " + (d / "nope").string() + " --k1 1 --k2 1") == 2);

    // Selection on a tiny grid.
    std::string sel = run_capture(
        "select --data " + (d / "b").string() +
        " --l1-max 3 --l2-max 3 --restarts 1 --seed 3 --warm-grid --out " +
        (d / "crit.csv").string(), &code);
    CHECK(code == 0);
    CHECK(count_lines(d / "crit.csv") == 9 + 1);
    CHECK(sel.find("k1=") != std::string::npos);
}

TEST_CASE("cli fit with mm agrees with tsam on Gaussian data") {
    fs::path d = fresh_dir("agree");
    REQUIRE(run("simulate --case 1 --p1 10 --p2 10 --T 8 --seed 9 --out " +
                (d / "b").string()) == 0);
    // Rank-1 fits: the least-squares optimum is well separated, so both
    // algorithms must land on the same natural-parameter surface.
    REQUIRE(run("fit --data " + (d / "b").string() +
                " --k1 1 --k2 1 --algo tsam --restarts 3 --seed 2 --out " +
                (d / "t.json").string()) == 0);
    REQUIRE(run("fit --data " + (d / "b").string() +
                " --k1 1 --k2 1 --algo mm --restarts 3 --seed 2 --inner-exact --out " +
                (d / "m.json").string()) == 0);
    auto [tt, tr] = read_fit_json((d / "t.json").string());
    auto [mt, mr] = read_fit_json((d / "m.json").string());
    auto tp = natural_params(tt), mp = natural_params(mt);
    double rms = 0;
    for (size_t t = 0; t < tp.size(); ++t) rms += (tp[t] - mp[t]).squaredNorm();
    rms = std::sqrt(rms / (10.0 * 10 * 8));
    CHECK(rms < 1e-3);
}

TEST_CASE("cli validate emits one entry per evaluation period") {
    fs::path d = fresh_dir("val");
    REQUIRE(run("simulate --case 1 --p1 8 --p2 8 --T 16 --seed 11 --out " +
                (d / "b").string()) == 0);
    int code = 0;
    std::string out = run_capture(
        "validate --data " + (d / "b").string() +
        " --window 2 --quarters 2 --k1 2 --k2 2 --algo alpha_pca --out " +
        (d / "roll.json").string(), &code);
    CHECK(code == 0);
    CHECK(out.find("periods=6") != std::string::npos);
    std::ifstream f(d / "roll.json");
    std::stringstream ss;
    ss << f.rdbuf();
    CHECK(ss.str().find("\"rho_bar\"") != std::string::npos);
}

TEST_CASE("cli bench writes the expected row grid") {
    fs::path d = fresh_dir("bench");
    int code = run("bench --cases 1 --p1 8 --p2 8 --T 6 --reps 2 --restarts 1 --out " +
                   (d / "bench.csv").string());
    CHECK(code == 0);
    CHECK(count_lines(d / "bench.csv") == 1 + 2 * 2);  // header + gmfm/baseline per rep
}
