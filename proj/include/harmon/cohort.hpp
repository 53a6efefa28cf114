#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "harmon/schema.hpp"

namespace harmon {

// Continuous covariates hold a double, categorical ones a level string.
using CovariateValue = std::variant<double, std::string>;

// Generator-side record kept alongside synthetic cohorts so controlled
// distortions can be re-applied to the same subjects. `cov_term` is the
// covariate contribution x'beta per (row, feature); `eps` is the drawn noise.
struct LatentRecord {
    Eigen::MatrixXd cov_term;
    Eigen::MatrixXd eps;
    // Distortion already applied to the table values (identity if !biased).
    bool biased = false;
    double bias_additive = 1.0;        // A
    double bias_slope = 1.0;           // S
    double bias_noise = 1.0;           // M
    Eigen::VectorXd site_shift;        // gamma, feature units
    Eigen::VectorXd site_scale;        // delta, > 0
};

// Subjects x (site, covariates, features); the universal interchange record.
// Immutable by convention after construction/loading.
struct CohortTable {
    CovariateSchema schema;
    std::vector<std::string> subject_ids;
    std::vector<std::string> site_ids;
    // covariates[row][entry], aligned with schema.entries.
    std::vector<std::vector<CovariateValue>> covariates;
    // label_values[column name][row], aligned with schema.label_columns.
    std::map<std::string, std::vector<std::string>> label_values;
    Eigen::MatrixXd features;  // rows x V
    std::vector<std::string> feature_names;
    std::optional<LatentRecord> latent;

    Eigen::Index n_rows() const { return features.rows(); }
    Eigen::Index n_features() const { return features.cols(); }

    // Distinct site ids in order of first appearance.
    std::vector<std::string> sites() const;
    // Row indices per site, sites sorted lexicographically.
    std::map<std::string, std::vector<Eigen::Index>> rows_by_site() const;

    double continuous_value(Eigen::Index row, const std::string& covariate) const;
    const std::string& categorical_value(Eigen::Index row, const std::string& covariate) const;
    const std::string& label_value(Eigen::Index row, const std::string& column) const;

    // New table holding the given rows (latent and labels sliced too).
    CohortTable subset(const std::vector<Eigen::Index>& rows) const;
    // Rows where a covariate or label column equals `value`.
    std::vector<Eigen::Index> rows_where(const std::string& column, const std::string& value) const;

    CohortTable with_site_id(const std::string& new_site) const;

    // Structural invariants: unique subject ids per site, finite features,
    // covariate arity, declared levels.
    void validate() const;
};

// Cohort CSV: header `subject_id,site,<covariates...>,<labels...>,<features...>`.
// Declared covariate/label columns are matched by name anywhere after `site`;
// every remaining column is a feature. Values are written with 17 significant
// digits so numeric round-trips are exact.
CohortTable load_cohort(std::istream& in, const CovariateSchema& schema,
                        const std::string& source_name = "<stream>");
CohortTable load_cohort_file(const std::string& path, const CovariateSchema& schema);
void save_cohort(const CohortTable& table, std::ostream& out);
void save_cohort_file(const CohortTable& table, const std::string& path);

// Latent CSV export: `subject_id,site,eps_<feature...>,xb_<feature...>`.
void save_latent(const CohortTable& table, std::ostream& out);

// Deterministic stratified split; within each stratum the train count is
// round(fraction * stratum size).
std::pair<CohortTable, CohortTable> split_train_test(const CohortTable& table,
                                                     double train_fraction,
                                                     const std::vector<std::string>& stratify_by,
                                                     std::uint64_t seed);

// Exactly n rows without replacement; n/2 per sex when balanced (requires a
// categorical covariate named `sex` with two levels); optional inclusive age
// window on the continuous covariate `age`.
struct SampleOptions {
    bool sex_balanced = false;
    std::optional<std::pair<double, double>> age_window;
};
CohortTable stratified_sample(const CohortTable& table, Eigen::Index n,
                              const SampleOptions& options, std::uint64_t seed);

}  // namespace harmon
