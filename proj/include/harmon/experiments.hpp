#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "harmon/pairwise.hpp"
#include "harmon/synth.hpp"
#include "harmon/text_config.hpp"

namespace harmon::experiments {

enum class ExperimentId { BiasSweep, SampleSize, AgeRange, SexCovariate, Pathology };

// Accepts "exp1".."exp5" or the descriptive names.
ExperimentId parse_experiment_id(const std::string& token);
std::string experiment_name(ExperimentId id);

struct ExperimentConfig {
    ExperimentId id = ExperimentId::BiasSweep;
    int repetitions = 30;
    std::uint64_t seed = 20240501;

    // Reference-site population; experiments split off `reference_size`
    // subjects (sex-stratified) and distort the remainder into the moving site.
    synth::PopulationSpec base;
    Eigen::Index reference_size = 100;
    // Moving-site distortion used by the sample-size / age-range / sex
    // experiments.
    synth::BiasSpec bias;

    // Bias sweep grids (factor sweeps run one at a time, others held at 1).
    std::vector<double> grid_additive;
    std::vector<double> grid_slope;
    std::vector<double> grid_noise;

    // Sample-size grid.
    std::vector<Eigen::Index> grid_subjects;

    // Age-range grid (span years); windows advance by decade.
    std::vector<double> grid_span;
    Eigen::Index window_sample = 32;

    // Sex-scenario sizes.
    Eigen::Index sex_moving_size = 120;
    Eigen::Index sex_reference_size = 48;

    // Pathology grid (additive == multiplicative factor) and site bias.
    std::vector<double> grid_pathology;
    synth::BiasSpec pathology_bias;
    Eigen::Index pathology_controls = 100;
    Eigen::Index pathology_cases = 100;
};

// NaN marks a metric that does not apply to the experiment/row.
struct MetricValues {
    double bd_before;
    double bd_after;
    double mad_train;
    double mad_test;
    double variance_error;
    double aux;

    MetricValues();
};

struct MeasurementRow {
    int sweep_index = 0;
    std::string sweep_key;
    int repetition = 0;
    std::uint64_t seed = 0;
    MetricValues metrics;
    std::string error;  // non-empty: the point was skipped, metrics invalid

    bool ok() const { return error.empty(); }
};

struct AggregateRow {
    int sweep_index = 0;
    std::string sweep_key;
    int count = 0;  // successful repetitions
    MetricValues mean;
    MetricValues stddev;  // n-1 sample std, 0 when count < 2
};

struct ExperimentReport {
    ExperimentId id = ExperimentId::BiasSweep;
    std::string experiment;
    std::uint64_t master_seed = 0;
    int repetitions = 0;
    std::vector<MeasurementRow> rows;

    std::vector<AggregateRow> aggregates() const;
};

ExperimentConfig default_config(ExperimentId id);
// Applies [experiment]/[population]/[bias] overrides from a config document.
void apply_overrides(ExperimentConfig& cfg, const TextConfig& file);
ExperimentConfig config_from_file(const std::string& path);

ExperimentReport run_experiment(const ExperimentConfig& cfg);

ExperimentReport exp1_bias_sweep(const ExperimentConfig& cfg);
ExperimentReport exp2_sample_size(const ExperimentConfig& cfg);
ExperimentReport exp3_age_range(const ExperimentConfig& cfg);
ExperimentReport exp4_sex_covariate(const ExperimentConfig& cfg);
ExperimentReport exp5_pathology(const ExperimentConfig& cfg);

// CSV: one `sample` row per measurement followed by one `aggregate` row per
// sweep point. Plot data: per-point mean/std columns, space delimited.
void emit_report_csv(const ExperimentReport& report, std::ostream& out);
void emit_plot_data(const ExperimentReport& report, std::ostream& out);

// Seed-splitting rule (documented, stable): the row seed for repetition k of
// sweep point s is derive_seed(master, experiment_name, s, k); the cohort
// drawn for repetition k is shared across sweep points and uses
// derive_seed(master, experiment_name + "/cohort", k).
std::uint64_t row_seed(const ExperimentConfig& cfg, int sweep_index, int repetition);
std::uint64_t cohort_seed(const ExperimentConfig& cfg, int repetition);

}  // namespace harmon::experiments
