#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scribble/grid.hpp"

namespace scribble::eval {

inline constexpr double kDefaultBeta2 = 0.3;

struct MetricsRow {
    std::string id;
    double precision = 0.0;
    double recall = 0.0;
    double f_measure = 0.0;
};

// P = TP/(TP+FP), R = TP/(TP+FN), F = (1+b2)PR/(b2 P + R); an empty
// denominator gives 0. Both masks H x W with entries exactly 0 or 1.
MetricsRow metrics(const Grid& pred, const Grid& gt, double beta2 = kDefaultBeta2, std::string id = {});

// Per-image mean with id "mean". Each column is summed in sorted order, so
// the result does not depend on row order.
MetricsRow mean_row(const std::vector<MetricsRow>& rows);

// Pairs every mask in gt_dir with the prediction of the same stem in pred_dir
// (sorted by stem) and scores each pair.
std::vector<MetricsRow> evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                      double beta2 = kDefaultBeta2);

std::string metrics_header();
std::string format_metrics(const MetricsRow& row);

}  // namespace scribble::eval
