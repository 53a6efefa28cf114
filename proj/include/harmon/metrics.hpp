#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "harmon/pairwise.hpp"

namespace harmon::metrics {

// Covariate-free standardized residuals of one population, anchored on a
// reference site's batch offset: (y - alpha - x'beta)/sigma - gamma*_R.
struct RectifiedSample {
    Eigen::VectorXd values;  // one entry per row, dimensionless
    std::string site_id;
};

// One sample per feature; constant features yield all-zero samples.
std::vector<RectifiedSample> rectify(const CohortTable& rows, const DesignMatrix& design,
                                     const combat::HarmonizationModel& model,
                                     const std::string& anchor_site);

// Gaussian closed form on sample moments (n-1 variances):
//   BD = 1/4 (mu_a-mu_b)^2/(s2_a+s2_b) + 1/2 ln((s2_a+s2_b)/(2 s_a s_b)).
double bhattacharyya(std::span<const double> a, std::span<const double> b);
double bhattacharyya(const RectifiedSample& a, const RectifiedSample& b);

// Mean absolute difference between paired vectors.
double mad(std::span<const double> a, std::span<const double> b);
double mad(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
// Averaged over all feature columns of two row-aligned tables.
double mad(const CohortTable& a, const CohortTable& b);

// Squared error of a variance estimate against its known target.
double variance_estimation_error(double true_delta2, double estimated_delta2);

// Per-feature before/after summary for a fitted pairwise model.
struct FitReport {
    std::vector<std::string> feature_names;
    Eigen::VectorXd bd_before;  // nats
    Eigen::VectorXd bd_after;
    double bd_before_mean = 0.0;
    double bd_after_mean = 0.0;
    // Filled when every moving subject id exists in the reference table.
    bool paired = false;
    Eigen::VectorXd mad_before;
    Eigen::VectorXd mad_after;
};

FitReport fit_report(const pairwise::PairwiseModel& model, const CohortTable& reference,
                     const CohortTable& moving);

}  // namespace harmon::metrics
