#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "harmon/cohort.hpp"
#include "harmon/design.hpp"

namespace harmon::combat {

// Pooled linear model: per-feature intercept, covariate coefficients and
// pooled scale. sigma[v] == 0 marks a constant feature that harmonization
// passes through unchanged.
struct GlobalFit {
    Eigen::VectorXd alpha;  // V
    Eigen::MatrixXd beta;   // V x p, p = design columns minus intercept
    Eigen::VectorXd sigma;  // V, feature units
    std::vector<std::string> feature_names;
    CovariateSchema schema;
    std::vector<std::string> design_labels;
    std::vector<std::string> warnings;

    Eigen::Index n_features() const { return alpha.size(); }
    bool is_constant(Eigen::Index v) const { return sigma[v] == 0.0; }
    std::vector<bool> active_features() const;
};

struct StandardizedData {
    Eigen::MatrixXd z;  // rows x V; 0 in constant-feature columns
    std::vector<std::string> site_ids;
    std::vector<bool> active;
};

// Per-site empirical moments of the standardized data.
struct SiteMoments {
    std::string site_id;
    Eigen::Index n_subjects = 0;
    Eigen::VectorXd gamma_hat;   // per-feature mean
    Eigen::VectorXd delta2_hat;  // per-feature variance, n-1 denominator
};

// Method-of-moments prior parameters across features: Normal(mu, tau2) for
// the additive effect, InverseGamma(lambda, theta) for the variance.
struct Hyperpriors {
    double mu_bar = 0.0;
    double tau2_bar = 0.0;
    double lambda_bar = 0.0;
    double theta_bar = 0.0;
    double g_bar = 0.0;
    double s2_bar = 0.0;
    // Set when the priors are degenerate (fewer than 2 usable features or
    // zero spread of the per-feature variances); the site then keeps its
    // empirical moments.
    bool ls_fallback = false;
};

struct ShrinkResult {
    Eigen::VectorXd gamma_star;
    Eigen::VectorXd delta2_star;
    int iterations = 0;
    bool converged = true;
};

// Everything the model stores per site.
struct SiteBatch {
    std::string site_id;
    Eigen::Index n_subjects = 0;
    Eigen::VectorXd gamma_hat;
    Eigen::VectorXd delta2_hat;
    double mu_bar = 0.0;
    double tau2_bar = 0.0;
    double lambda_bar = 0.0;
    double theta_bar = 0.0;
    double g_bar = 0.0;
    double s2_bar = 0.0;
    Eigen::VectorXd gamma_star;
    Eigen::VectorXd delta2_star;
    int iterations_used = 0;
    bool converged = true;
    bool ls_mode = false;
};

enum class ModelMode { Classic, Pairwise };

struct HarmonizationModel {
    static constexpr int kFormatVersion = 1;

    int format_version = kFormatVersion;
    ModelMode mode = ModelMode::Classic;
    std::string reference_site;  // pairwise mode only
    GlobalFit global;
    std::map<std::string, SiteBatch> sites;

    const SiteBatch& site(const std::string& id) const;
    std::vector<std::string> site_ids() const;
};

struct EbOptions {
    double tol = 1e-6;
    int max_iter = 100;
    // false selects the plain location/scale estimates (no prior).
    bool empirical_bayes = true;
};

// Joint least squares of intercept+covariates with per-site indicator
// columns; site effects obey the subject-weighted sum-to-zero constraint, so
// alpha is the grand intercept and sigma^2 the mean squared residual.
GlobalFit fit_global(const CohortTable& table, const DesignMatrix& design);

// z = (y - alpha - x'beta) / sigma for non-constant features.
StandardizedData standardize(const CohortTable& table, const DesignMatrix& design,
                             const GlobalFit& fit);

// Sites sorted by id; every site needs at least 2 subjects.
std::vector<SiteMoments> estimate_site_moments(const StandardizedData& data);

Hyperpriors fit_hyperpriors(const SiteMoments& moments, const std::vector<bool>& active);

// Iterates the conditional posterior means of the additive effect and the
// variance to their joint fixed point, starting from the empirical variance.
ShrinkResult eb_shrink(const SiteMoments& moments, const Hyperpriors& priors,
                       const std::vector<bool>& active, const EbOptions& options);

// Location/scale estimates: the empirical moments, unshrunken.
ShrinkResult ls_estimate(const SiteMoments& moments);

// Full chain: design, global fit, standardization, per-site priors and
// shrinkage (with location/scale fallback where degenerate).
HarmonizationModel fit_harmonization(const CohortTable& table, const CovariateSchema& schema,
                                     const EbOptions& options);

// Removes each row's own site effects: y' = sigma/delta* (z - gamma*) +
// alpha + x'beta. Constant and zero-variance features pass through.
CohortTable apply_combat(const CohortTable& table, const DesignMatrix& design,
                         const HarmonizationModel& model);

}  // namespace harmon::combat
