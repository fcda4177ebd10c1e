#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace covtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// -------------------------------------------------------------------------
// Dataset
// -------------------------------------------------------------------------

/// Response, parametric covariates (no intercept column), the smooth
/// covariate t and optional cluster membership. Cluster labels are always
/// 0..n_clusters-1 in first-appearance order.
struct Dataset {
    VectorXd y;
    MatrixXd S;  // n x p, p may be 0
    VectorXd t;
    std::optional<std::vector<int>> cluster;
    int n_clusters = 0;  // 0 when cluster is absent

    std::string y_name = "y";
    std::string t_name = "t";
    std::vector<std::string> s_names;

    Eigen::Index n() const noexcept { return y.size(); }
    Eigen::Index p() const noexcept { return S.cols(); }

    /// Number of independent units: clusters if present, rows otherwise.
    Eigen::Index units() const noexcept { return cluster ? n_clusters : y.size(); }
};

/// Validates sizes and finiteness and remaps raw cluster labels.
/// Throws data errors naming the offending row.
Dataset make_dataset(VectorXd y, MatrixXd S, VectorXd t,
                     std::optional<std::vector<std::string>> raw_cluster = std::nullopt);

struct ColumnMap {
    std::string y = "y";
    std::string t = "t";
    std::vector<std::string> s;
    std::optional<std::string> cluster;
};

Dataset load_csv(const std::filesystem::path& path, const ColumnMap& columns);

/// Writes y, t, s-columns and (if present) cluster using shortest
/// round-trip formatting, so load_csv(write_csv(d)) reproduces d exactly.
void write_csv(const Dataset& d, const std::filesystem::path& path);

// -------------------------------------------------------------------------
// Summaries
// -------------------------------------------------------------------------

struct TRange {
    double t_min = 0.0;
    double t_max = 0.0;
};

struct DataSummary {
    TRange range;
    Eigen::Index n = 0;
    Eigen::Index p = 0;
    Eigen::Index distinct_t = 0;
    Eigen::Index units = 0;
};

DataSummary summarize(const Dataset& d);

/// Maps t affinely onto [0, 1]. Constant t is a config error.
Dataset rescale_t(const Dataset& d);

}  // namespace covtest
