#include "harmon/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "harmon/error.hpp"
#include "harmon/metrics.hpp"
#include "harmon/model_io.hpp"
#include "harmon/numfmt.hpp"
#include "harmon/rng.hpp"

namespace harmon::experiments {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Linear per-feature profile: real cohorts never share one intercept/slope
// across regions, and feature spread keeps the across-feature priors
// informative rather than degenerate.
Eigen::VectorXd profile(Eigen::Index V, double base, double lo, double hi) {
    Eigen::VectorXd out(V);
    for (Eigen::Index v = 0; v < V; ++v) {
        const double t = (V == 1) ? 0.0 : static_cast<double>(v) / static_cast<double>(V - 1);
        out[v] = base * (lo + (hi - lo) * t);
    }
    return out;
}

CovariateSchema design_schema(bool with_sex) {
    CovariateSchema schema;
    schema.entries.push_back({"age", CovariateKind::Continuous, {}});
    if (with_sex) schema.entries.push_back({"sex", CovariateKind::Categorical, {"M", "F"}});
    return schema;
}

// One repetition's shared cohorts: reference split, canonical values of the
// moving pool, and a reference-only fit used as the evaluation yardstick.
struct RepData {
    CohortTable reference;
    CohortTable pool_base;
    // Anchor trend fitted on the reference alone; BD is measured against it
    // so a corrupted pooled slope cannot hide in the rectification.
    combat::GlobalFit anchor;
    Eigen::MatrixXd reference_z;
};

RepData make_rep(const ExperimentConfig& cfg, int rep) {
    synth::PopulationSpec pop = cfg.base;
    pop.seed = cohort_seed(cfg, rep);
    CohortTable base = synth::generate_cohort(pop);

    RepData data;
    if (cfg.id == ExperimentId::BiasSweep) {
        // Factor sweeps distort a copy of the reference cohort itself (the
        // moving site holds the same subjects), so the distance after
        // harmonization measures the method, not split sampling noise.
        data.reference = base;
        data.pool_base = std::move(base);
    } else {
        const double fraction =
            static_cast<double>(cfg.reference_size) / static_cast<double>(pop.n_subjects);
        auto [reference, pool] =
            split_train_test(base, fraction, {"sex"}, rng::derive_seed(pop.seed, "split"));
        data.reference = std::move(reference);
        data.pool_base = std::move(pool);
    }
    const DesignMatrix anchor_design = build_design(data.reference, data.reference.schema);
    data.anchor = combat::fit_global(data.reference, anchor_design);
    data.reference_z = combat::standardize(data.reference, anchor_design, data.anchor).z;
    return data;
}

// Rows of `source` matching `subject_ids`, in that order.
CohortTable aligned_subset(const CohortTable& source, const std::vector<std::string>& subject_ids) {
    std::map<std::string, Eigen::Index> row_of;
    for (Eigen::Index i = 0; i < source.n_rows(); ++i)
        row_of[source.subject_ids[static_cast<std::size_t>(i)]] = i;
    std::vector<Eigen::Index> rows;
    rows.reserve(subject_ids.size());
    for (const auto& id : subject_ids) {
        auto it = row_of.find(id);
        if (it == row_of.end())
            throw ValidationError("internal: subject '" + id + "' missing from source table");
        rows.push_back(it->second);
    }
    return source.subset(rows);
}

CohortTable complement_subset(const CohortTable& full, const CohortTable& taken) {
    std::set<std::string> taken_ids(taken.subject_ids.begin(), taken.subject_ids.end());
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < full.n_rows(); ++i)
        if (taken_ids.count(full.subject_ids[static_cast<std::size_t>(i)]) == 0) rows.push_back(i);
    return full.subset(rows);
}

// Mean over active features of the before/after distribution distances
// between the anchored reference residuals and the moving residuals.
struct BdPair {
    double before = kNaN;
    double after = kNaN;
};

// The distorted rows are transformed copies of `truth` (same subjects, same
// draws), so the distance is measured between same-subject populations: the
// anchor-trend noise then hits both sides identically and cancels instead of
// inflating the floor.
BdPair bd_means(const RepData& data, const CohortTable& truth, const CohortTable& moving_raw,
                const CohortTable& moving_harmonized) {
    const DesignMatrix design = build_design(truth, data.anchor.schema);
    const Eigen::MatrixXd truth_z = combat::standardize(truth, design, data.anchor).z;
    const Eigen::MatrixXd raw_z = combat::standardize(moving_raw, design, data.anchor).z;
    const Eigen::MatrixXd fix_z =
        combat::standardize(moving_harmonized, design, data.anchor).z;

    double before = 0.0, after = 0.0;
    int active = 0;
    for (Eigen::Index v = 0; v < data.anchor.n_features(); ++v) {
        if (data.anchor.is_constant(v)) continue;
        const Eigen::VectorXd truth_col = truth_z.col(v);
        const Eigen::VectorXd raw_col = raw_z.col(v);
        const Eigen::VectorXd fix_col = fix_z.col(v);
        before += metrics::bhattacharyya(metrics::RectifiedSample{truth_col, "ref"},
                                         metrics::RectifiedSample{raw_col, "mov"});
        after += metrics::bhattacharyya(metrics::RectifiedSample{truth_col, "ref"},
                                        metrics::RectifiedSample{fix_col, "mov"});
        ++active;
    }
    if (active == 0) return {};
    return {before / active, after / active};
}

// Row-subset mean absolute difference over all features.
double mad_rows(const CohortTable& a, const CohortTable& b, const std::vector<Eigen::Index>& rows) {
    if (rows.empty()) throw ValidationError("mad: empty row subset");
    double total = 0.0;
    for (Eigen::Index i : rows) total += (a.features.row(i) - b.features.row(i)).cwiseAbs().mean();
    return total / static_cast<double>(rows.size());
}

using PointFn = std::function<MetricValues(const RepData&, std::uint64_t seed)>;

struct SweepPoint {
    std::string key;
    PointFn run;
};

// Shared driver: one cohort per repetition, every sweep point evaluated on
// it, canonical output order (sweep index, repetition).
ExperimentReport run_sweep(const ExperimentConfig& cfg, const std::vector<SweepPoint>& points) {
    ExperimentReport report;
    report.id = cfg.id;
    report.experiment = experiment_name(cfg.id);
    report.master_seed = cfg.seed;
    report.repetitions = cfg.repetitions;
    if (cfg.repetitions < 1) throw ValidationError("experiment: repetitions must be >= 1");

    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        const RepData data = make_rep(cfg, rep);
        for (std::size_t s = 0; s < points.size(); ++s) {
            MeasurementRow row;
            row.sweep_index = static_cast<int>(s);
            row.sweep_key = points[s].key;
            row.repetition = rep;
            row.seed = row_seed(cfg, static_cast<int>(s), rep);
            try {
                row.metrics = points[s].run(data, row.seed);
            } catch (const Error& e) {
                row.error = e.what();
            }
            report.rows.push_back(std::move(row));
        }
    }
    std::sort(report.rows.begin(), report.rows.end(), [](const auto& a, const auto& b) {
        return std::tie(a.sweep_index, a.repetition) < std::tie(b.sweep_index, b.repetition);
    });
    return report;
}

std::string format_factor(double x) {
    // Short stable labels for sweep keys: 0.2 -> "0.2".
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", x);
    return buf;
}

}  // namespace

MetricValues::MetricValues()
    : bd_before(kNaN), bd_after(kNaN), mad_train(kNaN), mad_test(kNaN), variance_error(kNaN),
      aux(kNaN) {}

ExperimentId parse_experiment_id(const std::string& token) {
    if (token == "exp1" || token == "bias_sweep") return ExperimentId::BiasSweep;
    if (token == "exp2" || token == "sample_size") return ExperimentId::SampleSize;
    if (token == "exp3" || token == "age_range") return ExperimentId::AgeRange;
    if (token == "exp4" || token == "sex_covariate") return ExperimentId::SexCovariate;
    if (token == "exp5" || token == "pathology") return ExperimentId::Pathology;
    throw ValidationError("unknown experiment id '" + token +
                          "' (expected exp1..exp5 or bias_sweep, sample_size, age_range, "
                          "sex_covariate, pathology)");
}

std::string experiment_name(ExperimentId id) {
    switch (id) {
        case ExperimentId::BiasSweep: return "bias_sweep";
        case ExperimentId::SampleSize: return "sample_size";
        case ExperimentId::AgeRange: return "age_range";
        case ExperimentId::SexCovariate: return "sex_covariate";
        case ExperimentId::Pathology: return "pathology";
    }
    throw ValidationError("unknown experiment id");
}

std::uint64_t row_seed(const ExperimentConfig& cfg, int sweep_index, int repetition) {
    return rng::derive_seed(cfg.seed, experiment_name(cfg.id),
                            static_cast<std::uint64_t>(sweep_index),
                            static_cast<std::uint64_t>(repetition));
}

std::uint64_t cohort_seed(const ExperimentConfig& cfg, int repetition) {
    return rng::derive_seed(cfg.seed, experiment_name(cfg.id) + "/cohort",
                            static_cast<std::uint64_t>(repetition), 0);
}

ExperimentConfig default_config(ExperimentId id) {
    ExperimentConfig cfg;
    cfg.id = id;
    const Eigen::Index V = 25;

    synth::PopulationSpec& pop = cfg.base;
    pop.n_subjects = 441;
    pop.age_lo = 20.0;
    pop.age_hi = 90.0;
    pop.sex_ratio = 217.0 / 441.0;
    pop.alpha = profile(V, 2.5e-3, 0.85, 1.15);
    // The bias-sweep experiment needs a strong age trend so a slope mismatch
    // dominates the shrinkage noise floor; the sample-size/age-range
    // experiments need the resulting harmonization floor to sit between the
    // small-N sampling noise and the large-N noise decay.
    pop.beta_age =
        (id == ExperimentId::BiasSweep) ? profile(V, 5.0e-6, 0.8, 1.2)
                                        : profile(V, 2.9e-6, 0.8, 1.2);
    pop.beta_sex = profile(V, 2.0e-5, 0.8, 1.2);
    pop.sigma = profile(V, 5.0e-5, 0.9, 1.1);
    pop.site_id = "REF";
    for (Eigen::Index v = 0; v < V; ++v) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "feat%02lld", static_cast<long long>(v));
        pop.feature_names.push_back(buf);
    }

    cfg.bias.additive = 0.8;
    cfg.bias.slope = 0.8;
    cfg.bias.noise = 1.1;
    // Wide per-feature spread keeps the across-feature priors weakly
    // informative; near-homogeneous site effects degenerate the moments.
    cfg.bias.gamma = profile(V, 0.12 * 2.5e-3, 0.25, 1.75);
    cfg.bias.delta = profile(V, 1.0, 0.5, 1.5);
    cfg.bias.site_id = "MOV";

    cfg.grid_additive = {0.2, 0.6, 1.0, 1.4, 1.8};
    cfg.grid_slope = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0};
    cfg.grid_noise = {0.2, 0.6, 1.0, 1.4, 1.8};
    cfg.grid_subjects = {2, 4, 8, 16, 32, 64, 128, 256, 341};
    cfg.grid_span = {10, 20, 30, 40, 50, 60, 70};
    cfg.grid_pathology = {0.8, 0.9, 1.0, 1.1, 1.2};

    cfg.pathology_bias = cfg.bias;
    cfg.pathology_bias.additive = 0.8;
    cfg.pathology_bias.slope = 1.0;
    cfg.pathology_bias.noise = 1.0;
    // Additive-only site effect: a multiplicative profile would rescale the
    // pathological displacement through the variance correction.
    cfg.pathology_bias.delta = Eigen::VectorXd::Ones(V);
    return cfg;
}

// ---------------------------------------------------------------------------
// Experiment 1: additive/slope/noise factor sweeps.
// ---------------------------------------------------------------------------

ExperimentReport exp1_bias_sweep(const ExperimentConfig& cfg) {
    const CovariateSchema schema = design_schema(true);
    std::vector<SweepPoint> points;

    auto add_points = [&](const std::string& label, const std::vector<double>& grid,
                          auto make_bias) {
        for (double value : grid) {
            synth::BiasSpec bias = make_bias(value);
            points.push_back(SweepPoint{
                label + "=" + format_factor(value),
                [bias, schema, &cfg](const RepData& data, std::uint64_t) -> MetricValues {
                    const CohortTable moving = synth::inject_bias(data.pool_base, bias, cfg.base);
                    const auto model = pairwise::fit_pairwise(data.reference, moving, schema, {});
                    const CohortTable harmonized = pairwise::harmonize_moving(model, moving);

                    MetricValues m;
                    const BdPair bd = bd_means(data, data.pool_base, moving, harmonized);
                    m.bd_before = bd.before;
                    m.bd_after = bd.after;
                    m.mad_train = metrics::mad(harmonized, data.pool_base);

                    const combat::GlobalFit& fit = model.model.global;
                    const combat::SiteBatch& site = model.model.site(model.moving_site);
                    double err = 0.0;
                    int active = 0;
                    for (Eigen::Index v = 0; v < fit.n_features(); ++v) {
                        if (fit.is_constant(v)) continue;
                        const double target = bias.delta[v] * bias.noise * cfg.base.sigma[v] /
                                              fit.sigma[v];
                        err += metrics::variance_estimation_error(target * target,
                                                                  site.delta2_star[v]);
                        ++active;
                    }
                    m.variance_error = active > 0 ? err / active : kNaN;
                    return m;
                }});
        }
    };

    add_points("A", cfg.grid_additive, [&](double a) {
        synth::BiasSpec b = cfg.bias;
        b.additive = a;
        b.slope = 1.0;
        b.noise = 1.0;
        return b;
    });
    add_points("S", cfg.grid_slope, [&](double s) {
        synth::BiasSpec b = cfg.bias;
        b.additive = 1.0;
        b.slope = s;
        b.noise = 1.0;
        return b;
    });
    add_points("M", cfg.grid_noise, [&](double m) {
        synth::BiasSpec b = cfg.bias;
        b.additive = 1.0;
        b.slope = 1.0;
        b.noise = m;
        return b;
    });

    return run_sweep(cfg, points);
}

// ---------------------------------------------------------------------------
// Experiment 2: moving-site training sample size.
// ---------------------------------------------------------------------------

ExperimentReport exp2_sample_size(const ExperimentConfig& cfg) {
    const CovariateSchema schema = design_schema(true);
    std::vector<SweepPoint> points;

    for (Eigen::Index n : cfg.grid_subjects) {
        if (n < 2) continue;  // too small for any variance estimate
        points.push_back(SweepPoint{
            "N=" + std::to_string(n),
            [n, schema, &cfg](const RepData& data, std::uint64_t seed) -> MetricValues {
                const CohortTable moving = synth::inject_bias(data.pool_base, cfg.bias, cfg.base);
                CohortTable train, test;
                if (n >= moving.n_rows()) {
                    train = moving;
                    test = moving;  // full-data floor: evaluate on everything
                } else {
                    SampleOptions opt;
                    opt.sex_balanced = true;
                    train = stratified_sample(moving, n, opt, rng::derive_seed(seed, "train"));
                    test = complement_subset(moving, train);
                }
                const auto model = pairwise::fit_pairwise(data.reference, train, schema, {});
                const CohortTable harm_train = pairwise::harmonize_moving(model, train);
                const CohortTable harm_test = pairwise::harmonize_moving(model, test);

                MetricValues m;
                const CohortTable truth_test = aligned_subset(data.pool_base, test.subject_ids);
                m.mad_train =
                    metrics::mad(harm_train, aligned_subset(data.pool_base, train.subject_ids));
                m.mad_test = metrics::mad(harm_test, truth_test);
                const BdPair bd = bd_means(data, truth_test, test, harm_test);
                m.bd_before = bd.before;
                m.bd_after = bd.after;
                return m;
            }});
    }
    return run_sweep(cfg, points);
}

// ---------------------------------------------------------------------------
// Experiment 3: moving-site training age range.
// ---------------------------------------------------------------------------

ExperimentReport exp3_age_range(const ExperimentConfig& cfg) {
    const CovariateSchema schema = design_schema(true);
    std::vector<SweepPoint> points;

    for (double span : cfg.grid_span) {
        const double last_start = std::min(cfg.base.age_hi - span, 70.0);
        for (double lo = 20.0; lo <= last_start + 1e-9; lo += 10.0) {
            const double hi = lo + span;
            for (const std::string strategy : {"full", "matched"}) {
                const std::string key = "span=" + format_factor(span) + ";win=" +
                                        format_factor(lo) + "-" + format_factor(hi) +
                                        ";ref=" + strategy;
                const bool matched = (strategy == "matched");
                points.push_back(SweepPoint{
                    key,
                    [span, lo, hi, matched, schema, &cfg](const RepData& data,
                                                          std::uint64_t) -> MetricValues {
                        const CohortTable moving =
                            synth::inject_bias(data.pool_base, cfg.bias, cfg.base);
                        SampleOptions opt;
                        opt.sex_balanced = true;
                        opt.age_window = {{lo, hi}};
                        // Same window draw for both reference strategies.
                        const std::uint64_t window_seed = rng::derive_seed(
                            cfg.seed, experiment_name(cfg.id) + "/window",
                            static_cast<std::uint64_t>(span * 1000.0 + lo), 0);
                        const CohortTable train =
                            stratified_sample(moving, cfg.window_sample, opt, window_seed);
                        const CohortTable test = complement_subset(moving, train);

                        CohortTable reference = data.reference;
                        if (matched) {
                            std::vector<Eigen::Index> rows;
                            for (Eigen::Index i = 0; i < reference.n_rows(); ++i) {
                                const double age = reference.continuous_value(i, "age");
                                if (age >= lo && age <= hi) rows.push_back(i);
                            }
                            if (rows.size() < 8)
                                throw ValidationError(
                                    "age-matched reference has too few subjects in [" +
                                    format_factor(lo) + ", " + format_factor(hi) + "]: " +
                                    std::to_string(rows.size()));
                            reference = reference.subset(rows);
                        }

                        const auto model = pairwise::fit_pairwise(reference, train, schema, {});
                        const CohortTable harm_train = pairwise::harmonize_moving(model, train);
                        const CohortTable harm_test = pairwise::harmonize_moving(model, test);

                        MetricValues m;
                        const CohortTable truth_test =
                            aligned_subset(data.pool_base, test.subject_ids);
                        m.mad_train = metrics::mad(
                            harm_train, aligned_subset(data.pool_base, train.subject_ids));
                        m.mad_test = metrics::mad(harm_test, truth_test);
                        const BdPair bd = bd_means(data, truth_test, test, harm_test);
                        m.bd_before = bd.before;
                        m.bd_after = bd.after;
                        return m;
                    }});
            }
        }
    }
    return run_sweep(cfg, points);
}

// ---------------------------------------------------------------------------
// Experiment 4: sex composition and the sex covariate.
// ---------------------------------------------------------------------------

namespace {

// comp: 'B' balanced, 'M' male-only, 'F' female-only.
CohortTable sample_composition(const CohortTable& from, char comp, Eigen::Index n,
                               std::uint64_t seed) {
    if (comp == 'B') {
        SampleOptions opt;
        opt.sex_balanced = true;
        return stratified_sample(from, n, opt, seed);
    }
    const std::string level = (comp == 'M') ? "M" : "F";
    const CohortTable single = from.subset(from.rows_where("sex", level));
    return stratified_sample(single, n, {}, seed);
}

std::string comp_name(char comp) {
    switch (comp) {
        case 'B': return "bal";
        case 'M': return "male";
        default: return "female";
    }
}

}  // namespace

ExperimentReport exp4_sex_covariate(const ExperimentConfig& cfg) {
    struct Scenario {
        char moving;
        char reference;
    };
    const std::vector<Scenario> scenarios = {
        {'B', 'B'}, {'M', 'B'}, {'M', 'M'}, {'M', 'F'}};

    std::vector<SweepPoint> points;
    for (const Scenario sc : scenarios) {
        for (bool with_sex : {true, false}) {
            const std::string key = "mov=" + comp_name(sc.moving) +
                                    ";ref=" + comp_name(sc.reference) +
                                    ";cov=" + (with_sex ? "with" : "without");
            const CovariateSchema schema = design_schema(with_sex);
            points.push_back(SweepPoint{
                key,
                [sc, schema, &cfg](const RepData& data, std::uint64_t seed) -> MetricValues {
                    const CohortTable moving =
                        synth::inject_bias(data.pool_base, cfg.bias, cfg.base);
                    const CohortTable mov_train =
                        sample_composition(moving, sc.moving, cfg.sex_moving_size,
                                           rng::derive_seed(seed, "moving"));
                    const CohortTable ref_train =
                        sample_composition(data.reference, sc.reference, cfg.sex_reference_size,
                                           rng::derive_seed(seed, "reference"));
                    const CohortTable test = complement_subset(moving, mov_train);

                    const auto model = pairwise::fit_pairwise(ref_train, mov_train, schema, {});
                    const CohortTable harm_train = pairwise::harmonize_moving(model, mov_train);
                    const CohortTable harm_test = pairwise::harmonize_moving(model, test);

                    MetricValues m;
                    const CohortTable truth_test =
                        aligned_subset(data.pool_base, test.subject_ids);
                    m.mad_train = metrics::mad(
                        harm_train, aligned_subset(data.pool_base, mov_train.subject_ids));
                    m.mad_test = metrics::mad(harm_test, truth_test);
                    const BdPair bd = bd_means(data, truth_test, test, harm_test);
                    m.bd_before = bd.before;
                    m.bd_after = bd.after;
                    return m;
                }});
        }
    }
    return run_sweep(cfg, points);
}

// ---------------------------------------------------------------------------
// Experiment 5: pathological subgroup contamination.
// ---------------------------------------------------------------------------

ExperimentReport exp5_pathology(const ExperimentConfig& cfg) {
    const CovariateSchema schema = design_schema(true);
    std::vector<SweepPoint> points;

    for (double factor : cfg.grid_pathology) {
        for (const std::string regime : {"hc_only", "hc_patho"}) {
            const std::string key = "Ap=" + format_factor(factor) + ";fit=" + regime;
            const bool hc_only = (regime == "hc_only");
            points.push_back(SweepPoint{
                key,
                [factor, hc_only, schema, &cfg](const RepData& data,
                                                std::uint64_t seed) -> MetricValues {
                    const Eigen::Index group =
                        cfg.pathology_controls + cfg.pathology_cases;
                    synth::PathologySpec patho;
                    patho.fraction_affected =
                        static_cast<double>(cfg.pathology_cases) / static_cast<double>(group);
                    patho.additive_factor = factor;
                    patho.multiplicative_factor = factor;
                    patho.diagnosis_label = "PATHO";

                    // Same subjects and same affected subset on both the truth
                    // and the distorted side: the draw depends only on the
                    // repetition, not on the fit regime.
                    const std::uint64_t sample_seed = rng::derive_seed(seed, "group", 1);
                    const std::uint64_t patho_seed = rng::derive_seed(seed, "patho", 2);

                    SampleOptions opt;
                    opt.sex_balanced = true;
                    const CohortTable train_base =
                        stratified_sample(data.pool_base, group, opt, sample_seed);
                    const CohortTable moving =
                        synth::inject_bias(data.pool_base, cfg.pathology_bias, cfg.base);
                    const CohortTable train_mov_raw =
                        aligned_subset(moving, train_base.subject_ids);

                    const CohortTable truth =
                        synth::mark_pathology(train_base, patho, cfg.base, patho_seed);
                    const CohortTable train_mov =
                        synth::mark_pathology(train_mov_raw, patho, cfg.base, patho_seed);

                    const CohortTable test_base = complement_subset(data.pool_base, train_base);
                    const CohortTable test_mov = aligned_subset(moving, test_base.subject_ids);

                    pairwise::FitOptions options;
                    if (hc_only) options.fit_filter = {{"diagnosis", "HC"}};
                    const auto model =
                        pairwise::fit_pairwise(data.reference, train_mov, schema, options);
                    const CohortTable harm_train = pairwise::harmonize_moving(model, train_mov);
                    const CohortTable harm_test = pairwise::harmonize_moving(model, test_mov);

                    std::vector<Eigen::Index> hc_rows, patho_rows;
                    for (Eigen::Index i = 0; i < truth.n_rows(); ++i) {
                        if (truth.label_value(i, "diagnosis") == "PATHO")
                            patho_rows.push_back(i);
                        else
                            hc_rows.push_back(i);
                    }

                    MetricValues m;
                    m.mad_train = mad_rows(harm_train, truth, hc_rows);
                    m.mad_test = metrics::mad(harm_test, test_base);
                    const BdPair bd = bd_means(data, test_base, test_mov, harm_test);
                    m.bd_before = bd.before;
                    m.bd_after = bd.after;

                    // Pathological group-mean displacement from the healthy
                    // group (covariate-adjusted on each side), relative to the
                    // generator's displacement. Differencing against the
                    // harmonized controls cancels the common re-anchoring onto
                    // the reference level.
                    if (!patho_rows.empty() && !hc_rows.empty()) {
                        const combat::GlobalFit& fit = model.model.global;
                        const DesignMatrix dm = build_design(train_mov, fit.schema);
                        const Eigen::MatrixXd cov_part = dm.X.rightCols(dm.n_cols() - 1);
                        auto group_mean = [&](const Eigen::MatrixXd& values,
                                              const std::vector<Eigen::Index>& rows,
                                              Eigen::Index v, bool fitted_trend) {
                            double sum = 0.0;
                            for (Eigen::Index i : rows) {
                                const double cov = fitted_trend
                                                       ? cov_part.row(i).dot(fit.beta.row(v))
                                                       : truth.latent->cov_term(i, v);
                                sum += values(i, v) - cov;
                            }
                            return sum / static_cast<double>(rows.size());
                        };
                        double after_l1 = 0.0, true_l1 = 0.0;
                        for (Eigen::Index v = 0; v < fit.n_features(); ++v) {
                            after_l1 += std::abs(group_mean(harm_train.features, patho_rows, v, true) -
                                                 group_mean(harm_train.features, hc_rows, v, true));
                            true_l1 += std::abs(group_mean(truth.features, patho_rows, v, false) -
                                                group_mean(truth.features, hc_rows, v, false));
                        }
                        if (true_l1 > 1e-12 * static_cast<double>(fit.n_features()))
                            m.aux = after_l1 / true_l1;
                    }
                    return m;
                }});
        }
    }
    return run_sweep(cfg, points);
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.id) {
        case ExperimentId::BiasSweep: return exp1_bias_sweep(cfg);
        case ExperimentId::SampleSize: return exp2_sample_size(cfg);
        case ExperimentId::AgeRange: return exp3_age_range(cfg);
        case ExperimentId::SexCovariate: return exp4_sex_covariate(cfg);
        case ExperimentId::Pathology: return exp5_pathology(cfg);
    }
    throw ValidationError("unknown experiment id");
}

// ---------------------------------------------------------------------------
// Aggregation and report emission.
// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
    int n = 0;
    double sum = 0.0;
    double sumsq = 0.0;

    void add(double x) {
        if (!std::isfinite(x)) return;
        ++n;
        sum += x;
        sumsq += x * x;
    }
    double mean() const { return n > 0 ? sum / n : kNaN; }
    double stddev() const {
        if (n < 2) return n == 1 ? 0.0 : kNaN;
        const double m = mean();
        const double var = std::max(0.0, (sumsq - n * m * m) / (n - 1));
        return std::sqrt(var);
    }
};

const std::vector<std::string> kMetricNames = {"bd_before",      "bd_after", "mad_train",
                                               "mad_test",       "variance_error", "aux"};

std::vector<double> metric_list(const MetricValues& m) {
    return {m.bd_before, m.bd_after, m.mad_train, m.mad_test, m.variance_error, m.aux};
}

void assign_metric(MetricValues& m, std::size_t idx, double value) {
    switch (idx) {
        case 0: m.bd_before = value; break;
        case 1: m.bd_after = value; break;
        case 2: m.mad_train = value; break;
        case 3: m.mad_test = value; break;
        case 4: m.variance_error = value; break;
        default: m.aux = value; break;
    }
}

std::string csv_value(double x) { return std::isfinite(x) ? format_g17(x) : std::string(); }

}  // namespace

std::vector<AggregateRow> ExperimentReport::aggregates() const {
    std::map<int, AggregateRow> by_index;
    std::map<int, std::vector<Accumulator>> acc;
    for (const auto& row : rows) {
        auto& slot = by_index[row.sweep_index];
        slot.sweep_index = row.sweep_index;
        slot.sweep_key = row.sweep_key;
        auto& a = acc[row.sweep_index];
        if (a.empty()) a.resize(kMetricNames.size());
        if (!row.ok()) continue;
        ++slot.count;
        const auto values = metric_list(row.metrics);
        for (std::size_t i = 0; i < values.size(); ++i) a[i].add(values[i]);
    }
    std::vector<AggregateRow> out;
    for (auto& [index, slot] : by_index) {
        const auto& a = acc[index];
        for (std::size_t i = 0; i < a.size(); ++i) {
            assign_metric(slot.mean, i, a[i].mean());
            assign_metric(slot.stddev, i, a[i].stddev());
        }
        out.push_back(slot);
    }
    return out;
}

void emit_report_csv(const ExperimentReport& report, std::ostream& out) {
    out << "kind,experiment,sweep_index,sweep_key,repetition,seed,count";
    for (const auto& name : kMetricNames) out << "," << name;
    for (const auto& name : kMetricNames) out << ",std_" << name;
    out << ",error\n";

    for (const auto& row : report.rows) {
        out << "sample," << report.experiment << "," << row.sweep_index << "," << row.sweep_key
            << "," << row.repetition << "," << row.seed << ",";
        for (double v : metric_list(row.metrics)) out << "," << (row.ok() ? csv_value(v) : "");
        for (std::size_t i = 0; i < kMetricNames.size(); ++i) out << ",";
        out << "," << row.error << "\n";
    }
    for (const auto& agg : report.aggregates()) {
        out << "aggregate," << report.experiment << "," << agg.sweep_index << "," << agg.sweep_key
            << ",,," << agg.count;
        for (double v : metric_list(agg.mean)) out << "," << csv_value(v);
        for (double v : metric_list(agg.stddev)) out << "," << csv_value(v);
        out << ",\n";
    }
}

void emit_plot_data(const ExperimentReport& report, std::ostream& out) {
    out << "# experiment=" << report.experiment << " master_seed=" << report.master_seed
        << " repetitions=" << report.repetitions << "\n";
    out << "# sweep_index sweep_key count";
    for (const auto& name : kMetricNames) out << " mean_" << name << " std_" << name;
    out << "\n";
    for (const auto& agg : report.aggregates()) {
        out << agg.sweep_index << " " << agg.sweep_key << " " << agg.count;
        const auto means = metric_list(agg.mean);
        const auto stds = metric_list(agg.stddev);
        for (std::size_t i = 0; i < means.size(); ++i) {
            out << " " << (std::isfinite(means[i]) ? format_g17(means[i]) : "nan");
            out << " " << (std::isfinite(stds[i]) ? format_g17(stds[i]) : "nan");
        }
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Config files.
// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd broadcast_cfg(const std::vector<double>& values, Eigen::Index V,
                              const std::string& context) {
    if (values.size() == 1) return Eigen::VectorXd::Constant(V, values[0]);
    if (static_cast<Eigen::Index>(values.size()) != V)
        throw ValidationError(context + ": expected 1 or " + std::to_string(V) +
                              " values, got " + std::to_string(values.size()));
    return Eigen::Map<const Eigen::VectorXd>(values.data(), V);
}

}  // namespace

void apply_overrides(ExperimentConfig& cfg, const TextConfig& file) {
    if (const ConfigSection* exp = file.find_section("experiment")) {
        if (const ConfigValue* v = exp->find("id")) {
            const ExperimentId id = parse_experiment_id(v->as_string("id"));
            if (id != cfg.id)
                throw ValidationError(file.source_name() + ": config id '" +
                                      experiment_name(id) + "' conflicts with requested '" +
                                      experiment_name(cfg.id) + "'");
        }
        if (const ConfigValue* v = exp->find("repetitions"))
            cfg.repetitions = static_cast<int>(v->as_number("repetitions"));
        if (const ConfigValue* v = exp->find("seed"))
            cfg.seed = static_cast<std::uint64_t>(v->as_number("seed"));
        if (const ConfigValue* v = exp->find("reference_size"))
            cfg.reference_size = static_cast<Eigen::Index>(v->as_number("reference_size"));
        if (const ConfigValue* v = exp->find("window_sample"))
            cfg.window_sample = static_cast<Eigen::Index>(v->as_number("window_sample"));
        if (const ConfigValue* v = exp->find("grid_additive"))
            cfg.grid_additive = v->as_number_array("grid_additive");
        if (const ConfigValue* v = exp->find("grid_slope"))
            cfg.grid_slope = v->as_number_array("grid_slope");
        if (const ConfigValue* v = exp->find("grid_noise"))
            cfg.grid_noise = v->as_number_array("grid_noise");
        if (const ConfigValue* v = exp->find("grid_subjects")) {
            cfg.grid_subjects.clear();
            for (double x : v->as_number_array("grid_subjects"))
                cfg.grid_subjects.push_back(static_cast<Eigen::Index>(x));
        }
        if (const ConfigValue* v = exp->find("grid_span"))
            cfg.grid_span = v->as_number_array("grid_span");
        if (const ConfigValue* v = exp->find("grid_pathology"))
            cfg.grid_pathology = v->as_number_array("grid_pathology");
    }

    if (const ConfigSection* pop = file.find_section("population")) {
        synth::PopulationSpec& p = cfg.base;
        if (const ConfigValue* v = pop->find("n_subjects"))
            p.n_subjects = static_cast<Eigen::Index>(v->as_number("n_subjects"));
        if (const ConfigValue* v = pop->find("age_range")) {
            const auto range = v->as_number_array("age_range");
            if (range.size() != 2) throw ValidationError("population: age_range expects [lo, hi]");
            p.age_lo = range[0];
            p.age_hi = range[1];
        }
        if (const ConfigValue* v = pop->find("sex_ratio"))
            p.sex_ratio = v->as_number("sex_ratio");
        if (const ConfigValue* v = pop->find("site_id")) p.site_id = v->as_string("site_id");
        const Eigen::Index V = p.n_features();
        if (const ConfigValue* v = pop->find("alpha"))
            p.alpha = broadcast_cfg(v->as_number_array("alpha"), V, "alpha");
        if (const ConfigValue* v = pop->find("beta_age"))
            p.beta_age = broadcast_cfg(v->as_number_array("beta_age"), V, "beta_age");
        if (const ConfigValue* v = pop->find("beta_sex"))
            p.beta_sex = broadcast_cfg(v->as_number_array("beta_sex"), V, "beta_sex");
        if (const ConfigValue* v = pop->find("sigma"))
            p.sigma = broadcast_cfg(v->as_number_array("sigma"), V, "sigma");
        p.validate();
    }

    if (const ConfigSection* bias = file.find_section("bias")) {
        const Eigen::Index V = cfg.base.n_features();
        if (const ConfigValue* v = bias->find("A")) cfg.bias.additive = v->as_number("A");
        if (const ConfigValue* v = bias->find("S")) cfg.bias.slope = v->as_number("S");
        if (const ConfigValue* v = bias->find("M")) cfg.bias.noise = v->as_number("M");
        if (const ConfigValue* v = bias->find("gamma"))
            cfg.bias.gamma = broadcast_cfg(v->as_number_array("gamma"), V, "gamma");
        if (const ConfigValue* v = bias->find("delta"))
            cfg.bias.delta = broadcast_cfg(v->as_number_array("delta"), V, "delta");
        cfg.bias.validate(V);
        cfg.pathology_bias.gamma = cfg.bias.gamma;
        cfg.pathology_bias.delta = cfg.bias.delta;
    }
}

ExperimentConfig config_from_file(const std::string& path) {
    const TextConfig file = TextConfig::parse_file(path);
    const ConfigSection& exp = file.section("experiment");
    const ConfigValue* id = exp.find("id");
    if (id == nullptr) throw ValidationError(path + ": [experiment] needs an 'id'");
    ExperimentConfig cfg = default_config(parse_experiment_id(id->as_string("id")));
    apply_overrides(cfg, file);
    return cfg;
}

}  // namespace harmon::experiments
