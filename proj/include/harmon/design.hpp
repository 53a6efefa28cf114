#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "harmon/cohort.hpp"

namespace harmon {

// Covariate design: intercept column of ones first, continuous covariates in
// schema order, then dummy columns for each categorical covariate with the
// first declared level as the dropped reference ("name:level" labels).
struct DesignMatrix {
    Eigen::MatrixXd X;
    std::vector<std::string> column_labels;

    Eigen::Index n_rows() const { return X.rows(); }
    Eigen::Index n_cols() const { return X.cols(); }
};

// `schema` may be a projection of the table's own schema (covariates are
// looked up by name), which is how covariate-ablation fits are built.
DesignMatrix build_design(const CohortTable& table, const CovariateSchema& schema);

}  // namespace harmon
