#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "harmon/cohort.hpp"
#include "harmon/text_config.hpp"

namespace harmon::synth {

// Canonical linear population: y = alpha + age*beta_age + female*beta_sex + eps,
// eps ~ N(0, sigma^2), ages uniform, sex counts matched to the ratio exactly.
struct PopulationSpec {
    Eigen::Index n_subjects = 0;
    double age_lo = 20.0;
    double age_hi = 90.0;
    double sex_ratio = 0.5;  // fraction female
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta_age;  // feature units per year
    Eigen::VectorXd beta_sex;  // female offset
    Eigen::VectorXd sigma;
    std::vector<std::string> feature_names;
    std::string site_id = "SITE";
    std::uint64_t seed = 0;

    Eigen::Index n_features() const { return alpha.size(); }
    void validate() const;
};

// Controlled site distortion: y = alpha + gamma*A + (x'beta)*S + delta*eps*M.
struct BiasSpec {
    double additive = 1.0;        // A
    double slope = 1.0;           // S
    double noise = 1.0;           // M
    Eigen::VectorXd gamma;        // site additive effect, feature units
    Eigen::VectorXd delta;        // site multiplicative effect, > 0
    std::string site_id;          // empty: "<base site>-mod"

    void validate(Eigen::Index n_features) const;
};

// A random subgroup gets its intercept scaled by `additive_factor` and its
// noise by `multiplicative_factor`, plus a diagnosis label.
struct PathologySpec {
    double fraction_affected = 0.0;
    double additive_factor = 1.0;      // A_p, scales alpha
    double multiplicative_factor = 1.0;  // M_p, scales the noise term
    std::string diagnosis_label = "PATHO";

    void validate() const;
};

// Deterministic given the spec seed; retains the latent (eps, x'beta) record
// so distortions can be re-applied to the same subjects. Adds a free-text
// `diagnosis` label column defaulting to "HC".
CohortTable generate_cohort(const PopulationSpec& spec);

// Requires the latent record produced by generate_cohort(base). Keeps subject
// ids (pairing survives) and assigns the distorted site id.
CohortTable inject_bias(const CohortTable& cohort, const BiasSpec& bias,
                        const PopulationSpec& base);

// Re-derives the affected rows from the latent record with the intercept and
// noise factors applied on top of any distortion already present. Apply last;
// the latent record is not updated for the affected rows.
CohortTable mark_pathology(const CohortTable& cohort, const PathologySpec& spec,
                           const PopulationSpec& base, std::uint64_t seed);

// gamma = 0.05 * alpha, delta = 1 when unspecified.
BiasSpec default_bias(const PopulationSpec& base, double additive, double slope, double noise);

// Age/sex/diagnosis schema used by generated cohorts.
CovariateSchema synthetic_schema();

// Generator spec document: [population] plus optional [bias] and [pathology].
struct SynthJob {
    PopulationSpec population;
    std::optional<BiasSpec> bias;
    std::optional<PathologySpec> pathology;
    std::uint64_t pathology_seed = 0;
};
SynthJob job_from_config(const TextConfig& cfg);
CohortTable run_job(const SynthJob& job);

}  // namespace harmon::synth
