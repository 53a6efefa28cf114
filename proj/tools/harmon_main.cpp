// harmon: fit, apply and evaluate reference-anchored harmonization models,
// generate synthetic cohorts, and run the stress-test experiment suite.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "harmon/error.hpp"
#include "harmon/experiments.hpp"
#include "harmon/metrics.hpp"
#include "harmon/model_io.hpp"
#include "harmon/numfmt.hpp"
#include "harmon/pairwise.hpp"
#include "harmon/synth.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw harmon::ValidationError("cannot open output file: " + path);
    return out;
}

std::pair<std::string, std::string> parse_filter(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
        throw harmon::ValidationError("--fit-filter expects column=value, got '" + arg + "'");
    return {arg.substr(0, eq), arg.substr(eq + 1)};
}

void print_warnings(const harmon::combat::HarmonizationModel& model) {
    for (const auto& w : model.global.warnings) std::cerr << "warning: " << w << "\n";
}

int run_fit(const std::string& reference_path, const std::string& moving_path,
            const std::string& schema_path, const std::string& out_path,
            const std::optional<std::string>& filter, const std::string& method) {
    const harmon::CovariateSchema schema = harmon::CovariateSchema::load_file(schema_path);
    const harmon::CohortTable reference = harmon::load_cohort_file(reference_path, schema);
    const harmon::CohortTable moving = harmon::load_cohort_file(moving_path, schema);

    harmon::pairwise::FitOptions options;
    options.eb.empirical_bayes = (method != "ls");
    if (filter.has_value()) options.fit_filter = parse_filter(*filter);

    const auto model = harmon::pairwise::fit_pairwise(reference, moving, schema, options);
    print_warnings(model.model);
    harmon::save_model_file(model, out_path);
    std::cerr << "fit: moved site '" << model.moving_site << "' onto '" << model.reference_site
              << "' (" << model.report.n_moving << " + " << model.report.n_reference
              << " fit rows) -> " << out_path << "\n";
    return 0;
}

int run_apply(const std::string& model_path, const std::string& in_path,
              const std::string& out_path) {
    const auto model = harmon::load_model_file(model_path);
    const harmon::CohortTable rows =
        harmon::load_cohort_file(in_path, model.model.global.schema);
    const harmon::CohortTable harmonized = harmon::pairwise::harmonize_moving(model, rows);
    auto out = open_output(out_path);
    harmon::save_cohort(harmonized, out);
    std::cerr << "apply: harmonized " << harmonized.n_rows() << " rows -> " << out_path << "\n";
    return 0;
}

int run_metric(const std::string& model_path, const std::string& reference_path,
               const std::string& moving_path, const std::string& out_path) {
    const auto model = harmon::load_model_file(model_path);
    const harmon::CovariateSchema& schema = model.model.global.schema;
    const harmon::CohortTable reference = harmon::load_cohort_file(reference_path, schema);
    const harmon::CohortTable moving = harmon::load_cohort_file(moving_path, schema);

    const harmon::metrics::FitReport report =
        harmon::metrics::fit_report(model, reference, moving);
    auto out = open_output(out_path);
    out << "feature,bd_before,bd_after";
    if (report.paired) out << ",mad_before,mad_after";
    out << "\n";
    for (std::size_t v = 0; v < report.feature_names.size(); ++v) {
        const auto i = static_cast<Eigen::Index>(v);
        out << report.feature_names[v] << "," << harmon::format_g17(report.bd_before[i]) << ","
            << harmon::format_g17(report.bd_after[i]);
        if (report.paired)
            out << "," << harmon::format_g17(report.mad_before[i]) << ","
                << harmon::format_g17(report.mad_after[i]);
        out << "\n";
    }
    out << "MEAN," << harmon::format_g17(report.bd_before_mean) << ","
        << harmon::format_g17(report.bd_after_mean);
    if (report.paired)
        out << "," << harmon::format_g17(report.mad_before.mean()) << ","
            << harmon::format_g17(report.mad_after.mean());
    out << "\n";
    std::cerr << "metric: mean bd " << harmon::format_g17(report.bd_before_mean) << " -> "
              << harmon::format_g17(report.bd_after_mean) << "\n";
    return 0;
}

int run_synth(const std::string& spec_path, const std::string& out_path,
              const std::optional<std::string>& latent_path,
              const std::optional<std::string>& schema_out) {
    const harmon::TextConfig cfg = harmon::TextConfig::parse_file(spec_path);
    const harmon::synth::SynthJob job = harmon::synth::job_from_config(cfg);
    const harmon::CohortTable table = harmon::synth::run_job(job);
    {
        auto out = open_output(out_path);
        harmon::save_cohort(table, out);
    }
    if (latent_path.has_value()) {
        auto out = open_output(*latent_path);
        harmon::save_latent(table, out);
    }
    if (schema_out.has_value()) {
        auto out = open_output(*schema_out);
        out << table.schema.to_config_text();
    }
    std::cerr << "synth: wrote " << table.n_rows() << " rows x " << table.n_features()
              << " features -> " << out_path << "\n";
    return 0;
}

int run_experiment_cmd(const std::string& id_token, const std::optional<std::string>& config_path,
                       const std::string& out_path, const std::optional<std::string>& plot_path,
                       const std::optional<int>& reps, const std::optional<std::uint64_t>& seed) {
    harmon::experiments::ExperimentConfig cfg =
        harmon::experiments::default_config(harmon::experiments::parse_experiment_id(id_token));
    if (config_path.has_value())
        harmon::experiments::apply_overrides(cfg, harmon::TextConfig::parse_file(*config_path));
    if (reps.has_value()) cfg.repetitions = *reps;
    if (seed.has_value()) cfg.seed = *seed;

    const harmon::experiments::ExperimentReport report = harmon::experiments::run_experiment(cfg);
    {
        auto out = open_output(out_path);
        harmon::experiments::emit_report_csv(report, out);
    }
    if (plot_path.has_value()) {
        auto out = open_output(*plot_path);
        harmon::experiments::emit_plot_data(report, out);
    }
    int failed = 0;
    for (const auto& row : report.rows)
        if (!row.ok()) ++failed;
    std::cerr << "experiment " << report.experiment << ": " << report.rows.size() << " rows ("
              << failed << " skipped) -> " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reference-anchored harmonization of multi-site scalar measurements"};
    app.require_subcommand(1);

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a moving site onto a reference site");
    std::string fit_reference, fit_moving, fit_schema, fit_out, fit_method = "eb";
    std::optional<std::string> fit_filter;
    fit->add_option("--reference", fit_reference, "Reference cohort CSV")->required();
    fit->add_option("--moving", fit_moving, "Moving cohort CSV")->required();
    fit->add_option("--schema", fit_schema, "Covariate schema file")->required();
    fit->add_option("--out", fit_out, "Output model path (.hmz)")->required();
    fit->add_option("--fit-filter", fit_filter,
                    "column=value row filter applied before estimation (e.g. diagnosis=HC)");
    fit->add_option("--method", fit_method, "Estimator: eb (default) or ls")
        ->check(CLI::IsMember({"eb", "ls"}));

    // apply
    auto* apply = app.add_subcommand("apply", "Harmonize moving-site rows with a fitted model");
    std::string apply_model, apply_in, apply_out;
    apply->add_option("--model", apply_model, "Fitted model (.hmz)")->required();
    apply->add_option("--in", apply_in, "Input cohort CSV (moving site)")->required();
    apply->add_option("--out", apply_out, "Output harmonized CSV")->required();

    // metric
    auto* metric = app.add_subcommand("metric", "Per-feature goodness-of-fit report");
    std::string metric_model, metric_reference, metric_moving, metric_out;
    metric->add_option("--model", metric_model, "Fitted model (.hmz)")->required();
    metric->add_option("--reference", metric_reference, "Reference cohort CSV")->required();
    metric->add_option("--moving", metric_moving, "Moving cohort CSV")->required();
    metric->add_option("--out", metric_out, "Output report CSV")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
    std::string synth_spec, synth_out;
    std::optional<std::string> synth_latent, synth_schema_out;
    synth->add_option("--spec", synth_spec, "Generator spec file")->required();
    synth->add_option("--out", synth_out, "Output cohort CSV")->required();
    synth->add_option("--latent", synth_latent, "Also write the latent record CSV");
    synth->add_option("--schema-out", synth_schema_out, "Also write the matching schema file");

    // experiment
    auto* experiment = app.add_subcommand("experiment", "Run a stress-test experiment");
    std::string exp_id, exp_out;
    std::optional<std::string> exp_config, exp_plot;
    std::optional<int> exp_reps;
    std::optional<std::uint64_t> exp_seed;
    experiment->add_option("--id", exp_id, "exp1..exp5 or a descriptive name")->required();
    experiment->add_option("--config", exp_config, "Experiment config file");
    experiment->add_option("--out", exp_out, "Output report CSV")->required();
    experiment->add_option("--plot-data", exp_plot, "Plot-ready per-point mean/std file");
    experiment->add_option("--reps", exp_reps, "Repetitions override");
    experiment->add_option("--seed", exp_seed, "Master seed override");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed())
            return run_fit(fit_reference, fit_moving, fit_schema, fit_out, fit_filter, fit_method);
        if (apply->parsed()) return run_apply(apply_model, apply_in, apply_out);
        if (metric->parsed())
            return run_metric(metric_model, metric_reference, metric_moving, metric_out);
        if (synth->parsed()) return run_synth(synth_spec, synth_out, synth_latent, synth_schema_out);
        if (experiment->parsed())
            return run_experiment_cmd(exp_id, exp_config, exp_out, exp_plot, exp_reps, exp_seed);
    } catch (const harmon::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const harmon::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const harmon::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return 0;
}
