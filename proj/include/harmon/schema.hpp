#pragma once

#include <optional>
#include <string>
#include <vector>

#include "harmon/text_config.hpp"

namespace harmon {

enum class CovariateKind { Continuous, Categorical };

struct CovariateSpec {
    std::string name;
    CovariateKind kind = CovariateKind::Continuous;
    // Categorical only; first declared level is the reference level.
    std::vector<std::string> levels;
};

// Extra label columns (e.g. diagnosis) carried through cohort files without
// becoming covariates or features. Empty `levels` means free-form text.
struct LabelColumnSpec {
    std::string name;
    std::vector<std::string> levels;
};

// Ordered covariate declarations shared by cohort files and fitted models.
struct CovariateSchema {
    std::vector<CovariateSpec> entries;
    std::vector<LabelColumnSpec> label_columns;

    const CovariateSpec* find(const std::string& name) const;
    const LabelColumnSpec* find_label(const std::string& name) const;
    bool has_column(const std::string& name) const;

    // Checks name uniqueness, level counts and identifier charset.
    void validate() const;

    // Schema document:
    //   [covariates]
    //   age = "continuous"
    //   sex = ["M", "F"]
    //   [columns]            # optional carried-through label columns
    //   diagnosis = "text"   # or a level array
    static CovariateSchema from_config(const TextConfig& cfg);
    static CovariateSchema load_file(const std::string& path);
    std::string to_config_text() const;

    // Schema for a subset of covariates, e.g. a design without `sex`.
    CovariateSchema project(const std::vector<std::string>& covariate_names) const;
};

// Identifiers (subject/site ids, column names, categorical levels) are
// restricted to [A-Za-z0-9_-] so the CSV writer never needs quoting.
bool is_valid_identifier(const std::string& s);

}  // namespace harmon
