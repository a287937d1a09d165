#include "gmfm/io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace gmfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json matrix_to_json(const MatrixXd& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXd matrix_from_json(const json& rows, const std::string& name) {
    if (!rows.is_array() || rows.empty() || !rows[0].is_array())
        throw std::runtime_error("field '" + name + "': expected a 2-d array");
    MatrixXd M(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
            throw std::runtime_error("field '" + name + "': ragged rows");
        for (size_t j = 0; j < rows[i].size(); ++j)
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rows[i][j].get<double>();
    }
    return M;
}

json theta_to_json(const FactorParams& theta) {
    json j;
    j["k1"] = theta.k1();
    j["k2"] = theta.k2();
    j["p1"] = theta.p1();
    j["p2"] = theta.p2();
    j["T"] = theta.T();
    j["R"] = matrix_to_json(theta.R);
    j["C"] = matrix_to_json(theta.C);
    json F = json::array();
    for (const auto& Ft : theta.F) F.push_back(matrix_to_json(Ft));
    j["F"] = std::move(F);
    return j;
}

FactorParams theta_from_json(const json& j) {
    FactorParams theta;
    theta.R = matrix_from_json(j.at("R"), "R");
    theta.C = matrix_from_json(j.at("C"), "C");
    if (!j.contains("F") || !j["F"].is_array())
        throw std::runtime_error("field 'F': expected an array of matrices");
    for (const auto& ft : j["F"])
        theta.F.push_back(matrix_from_json(ft, "F"));
    return theta;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return j;
}

void dump_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(1) << '\n';
}

int require_int(const json& j, const char* field, const std::string& where) {
    if (!j.contains(field) || !j[field].is_number_integer())
        throw std::runtime_error(where + ": missing or non-integer field '" +
                                 std::string(field) + "'");
    return j[field].get<int>();
}

}  // namespace

Bundle read_bundle(const std::string& dir) {
    const std::string meta_path = (fs::path(dir) / "meta.json").string();
    const std::string data_path = (fs::path(dir) / "data.csv").string();
    if (!fs::exists(meta_path))
        throw std::runtime_error("missing " + meta_path);
    if (!fs::exists(data_path))
        throw std::runtime_error("missing " + data_path);

    json meta = load_json_file(meta_path);
    Bundle b;
    b.X.p1 = require_int(meta, "p1", "meta.json");
    b.X.p2 = require_int(meta, "p2", "meta.json");
    b.X.T = require_int(meta, "T", "meta.json");
    if (b.X.p1 < 2 || b.X.p2 < 2 || b.X.T < 1)
        throw std::runtime_error("meta.json: invalid dims p1/p2/T");
    if (!meta.contains("family") || !meta["family"].is_string())
        throw std::runtime_error("meta.json: missing or non-string field 'family'");
    b.map.def = family_from_string(meta["family"].get<std::string>());
    if (meta.contains("blocks")) {
        if (!meta["blocks"].is_array())
            throw std::runtime_error("meta.json: field 'blocks' must be an array");
        for (const auto& jb : meta["blocks"]) {
            FamilyBlock blk;
            blk.i_lo = require_int(jb, "i_lo", "meta.json block");
            blk.i_hi = require_int(jb, "i_hi", "meta.json block");
            blk.j_lo = require_int(jb, "j_lo", "meta.json block");
            blk.j_hi = require_int(jb, "j_hi", "meta.json block");
            blk.t_lo = require_int(jb, "t_lo", "meta.json block");
            blk.t_hi = require_int(jb, "t_hi", "meta.json block");
            if (!jb.contains("family") || !jb["family"].is_string())
                throw std::runtime_error("meta.json block: missing field 'family'");
            blk.family = family_from_string(jb["family"].get<std::string>());
            b.map.blocks.push_back(blk);
        }
    }
    if (meta.contains("k1")) b.true_k1 = require_int(meta, "k1", "meta.json");
    if (meta.contains("k2")) b.true_k2 = require_int(meta, "k2", "meta.json");

    b.X.values.assign(static_cast<size_t>(b.X.T), MatrixXd::Zero(b.X.p1, b.X.p2));
    b.X.mask.assign(static_cast<size_t>(b.X.T),
                    MaskMatrix::Zero(b.X.p1, b.X.p2));

    std::ifstream in(data_path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("t,i,j,x", 0) != 0)
        throw std::runtime_error(data_path + ": expected header 't,i,j,x'");
    size_t lineno = 1;
    long cells = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tok;
        long t, i, j;
        double x;
        try {
            std::getline(ss, tok, ',');
            t = std::stol(tok);
            std::getline(ss, tok, ',');
            i = std::stol(tok);
            std::getline(ss, tok, ',');
            j = std::stol(tok);
            std::getline(ss, tok, ',');
            x = std::stod(tok);
        } catch (const std::exception&) {
            throw std::runtime_error(data_path + ":" + std::to_string(lineno) +
                                     ": malformed row");
        }
        if (t < 1 || t > b.X.T || i < 1 || i > b.X.p1 || j < 1 || j > b.X.p2)
            throw std::runtime_error(data_path + ":" + std::to_string(lineno) +
                                     ": index out of range");
        b.X.values[static_cast<size_t>(t - 1)](i - 1, j - 1) = x;
        b.X.mask[static_cast<size_t>(t - 1)](i - 1, j - 1) = 1;
        ++cells;
    }
    if (cells == 0) throw std::runtime_error(data_path + ": no data rows");
    // Fully observed bundles drop the mask so downstream loops skip it.
    bool full = cells == static_cast<long>(b.X.p1) * b.X.p2 * b.X.T;
    if (full) b.X.mask.clear();
    b.X.validate();
    return b;
}

void write_bundle(const std::string& dir, const MatrixSeries& X,
                  const FamilyMap& map, std::optional<int> true_k1,
                  std::optional<int> true_k2) {
    X.validate();
    fs::create_directories(dir);
    json meta;
    meta["p1"] = X.p1;
    meta["p2"] = X.p2;
    meta["T"] = X.T;
    meta["family"] = to_string(map.def);
    if (!map.blocks.empty()) {
        json blocks = json::array();
        for (const auto& b : map.blocks)
            blocks.push_back({{"i_lo", b.i_lo},
                              {"i_hi", b.i_hi},
                              {"j_lo", b.j_lo},
                              {"j_hi", b.j_hi},
                              {"t_lo", b.t_lo},
                              {"t_hi", b.t_hi},
                              {"family", to_string(b.family)}});
        meta["blocks"] = std::move(blocks);
    }
    if (true_k1) meta["k1"] = *true_k1;
    if (true_k2) meta["k2"] = *true_k2;
    dump_json_file((fs::path(dir) / "meta.json").string(), meta);

    std::ofstream out((fs::path(dir) / "data.csv").string());
    if (!out) throw std::runtime_error("cannot write " + dir + "/data.csv");
    out << "t,i,j,x\n";
    out.precision(17);
    for (int t = 0; t < X.T; ++t)
        for (int i = 0; i < X.p1; ++i)
            for (int j = 0; j < X.p2; ++j) {
                if (!X.observed(i, j, t)) continue;
                out << (t + 1) << ',' << (i + 1) << ',' << (j + 1) << ','
                    << X.values[static_cast<size_t>(t)](i, j) << '\n';
            }
}

namespace {

json sandwich_to_json(const SandwichEstimate& s) {
    return {{"variance", matrix_to_json(s.variance)}, {"scale", s.scale}};
}

json report_to_json(const FitReport& r) {
    json j;
    j["algorithm"] = r.algorithm;
    j["k1"] = r.k1;
    j["k2"] = r.k2;
    j["final_loglik"] = r.final_loglik;
    j["converged"] = r.converged;
    j["best_restart"] = r.best_restart;
    j["pi_clamp"] = r.pi_clamp;
    j["clamped_cells"] = r.clamped_cells;
    j["max_monotonicity_violation"] = r.max_monotonicity_violation;
    auto res = [](const ConstraintResidual& c) {
        return json{{"r_orth", c.r_orth},
                    {"c_orth", c.c_orth},
                    {"f_row_diag", c.f_row_diag},
                    {"f_col_diag", c.f_col_diag},
                    {"sign_ok", c.sign_ok}};
    };
    j["residual_pre"] = res(r.residual_pre);
    j["residual_post"] = res(r.residual_post);
    json restarts = json::array();
    for (const auto& rr : r.restarts)
        restarts.push_back({{"restart", rr.restart},
                            {"seed", rr.seed},
                            {"loglik_stage1", rr.loglik_stage1},
                            {"loglik_final", rr.loglik_final},
                            {"outer_iters", rr.outer_iters},
                            {"failed", rr.failed}});
    j["restarts"] = std::move(restarts);
    j["warnings"] = r.warnings;
    return j;
}

FitReport report_from_json(const json& j) {
    FitReport r;
    r.algorithm = j.value("algorithm", "");
    r.k1 = j.value("k1", 0);
    r.k2 = j.value("k2", 0);
    r.final_loglik = j.value("final_loglik", 0.0);
    r.converged = j.value("converged", false);
    r.best_restart = j.value("best_restart", -1);
    r.pi_clamp = j.value("pi_clamp", kDefaultPiClamp);
    r.clamped_cells = j.value("clamped_cells", 0L);
    r.max_monotonicity_violation = j.value("max_monotonicity_violation", 0.0);
    if (j.contains("warnings"))
        r.warnings = j["warnings"].get<std::vector<std::string>>();
    return r;
}

}  // namespace

void write_fit_json(const std::string& path, const FactorParams& theta,
                    const FitReport& report, const SeBlocks* se) {
    json j = theta_to_json(theta);
    j["report"] = report_to_json(report);
    if (se) {
        json js;
        js["rows"] = json::array();
        for (const auto& s : se->rows) js["rows"].push_back(sandwich_to_json(s));
        js["cols"] = json::array();
        for (const auto& s : se->cols) js["cols"].push_back(sandwich_to_json(s));
        js["factors"] = json::array();
        for (const auto& s : se->factors)
            js["factors"].push_back(sandwich_to_json(s));
        j["se"] = std::move(js);
    }
    dump_json_file(path, j);
}

std::pair<FactorParams, FitReport> read_fit_json(const std::string& path) {
    json j = load_json_file(path);
    return {theta_from_json(j), report_from_json(j.at("report"))};
}

void write_truth_json(const std::string& path, const FactorParams& theta0) {
    dump_json_file(path, theta_to_json(theta0));
}

FactorParams read_truth_json(const std::string& path) {
    return theta_from_json(load_json_file(path));
}

}  // namespace gmfm
