#ifndef GMFM_IO_HPP
#define GMFM_IO_HPP

#include <optional>
#include <string>

#include "gmfm/inference.hpp"
#include "gmfm/model.hpp"

namespace gmfm {

// On-disk dataset: a directory with meta.json (dims, family layout, optional
// true ranks) and data.csv with header t,i,j,x, one row per observed cell.
struct Bundle {
    MatrixSeries X;
    FamilyMap map;
    std::optional<int> true_k1, true_k2;
};

Bundle read_bundle(const std::string& dir);
void write_bundle(const std::string& dir, const MatrixSeries& X,
                  const FamilyMap& map, std::optional<int> true_k1 = std::nullopt,
                  std::optional<int> true_k2 = std::nullopt);

// Optional per-entity sandwich variances attached to fit.json.
struct SeBlocks {
    std::vector<SandwichEstimate> rows;     // p1 entries, k1 x k1
    std::vector<SandwichEstimate> cols;     // p2 entries, k2 x k2
    std::vector<SandwichEstimate> factors;  // T entries, k1k2 x k1k2
};

void write_fit_json(const std::string& path, const FactorParams& theta,
                    const FitReport& report,
                    const SeBlocks* se = nullptr);
std::pair<FactorParams, FitReport> read_fit_json(const std::string& path);

void write_truth_json(const std::string& path, const FactorParams& theta0);
FactorParams read_truth_json(const std::string& path);

}  // namespace gmfm

#endif
