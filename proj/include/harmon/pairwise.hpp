#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "harmon/combat.hpp"

namespace harmon::pairwise {

struct FitOptions {
    combat::EbOptions eb;
    // Optional row filter applied before estimation (e.g. {"diagnosis","HC"}),
    // so parameters come from controls while application stays unrestricted.
    // Tables lacking the column are used whole.
    std::optional<std::pair<std::string, std::string>> fit_filter;
};

struct FitReportInfo {
    Eigen::Index n_reference = 0;
    Eigen::Index n_moving = 0;
    bool reference_converged = true;
    bool moving_converged = true;
    // Covariate ranges observed at fit time, by covariate name.
    std::map<std::string, std::pair<double, double>> continuous_ranges;
    std::map<std::string, std::vector<std::string>> observed_levels;
};

// A reference-anchored model: one fixed reference site R and one moving site
// M, fit jointly, applied only to M's data.
struct PairwiseModel {
    combat::HarmonizationModel model;  // mode == Pairwise
    std::string reference_site;
    std::string moving_site;
    FitReportInfo report;
};

// Runs the full estimation chain on the two-site union. Each pair is fit
// independently of any other moving site, so a stored reference model never
// shifts when new sites are added.
PairwiseModel fit_pairwise(const CohortTable& reference, const CohortTable& moving,
                           const CovariateSchema& schema, const FitOptions& options = {});

// Maps moving-site rows onto the reference site:
//   y' = sigma * ( (delta*_R / delta*_M) (z - gamma*_M) + gamma*_R ) + alpha + x'beta,
// using each subject's own covariates. Works on fit-time rows and on new rows
// from the same site.
CohortTable harmonize_moving(const PairwiseModel& model, const CohortTable& rows);

}  // namespace harmon::pairwise
