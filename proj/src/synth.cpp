#include "harmon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "harmon/error.hpp"
#include "harmon/rng.hpp"

namespace harmon::synth {

namespace {

Eigen::VectorXd broadcast(const std::vector<double>& values, Eigen::Index V,
                          const std::string& context) {
    if (values.size() == 1) return Eigen::VectorXd::Constant(V, values[0]);
    if (static_cast<Eigen::Index>(values.size()) != V)
        throw ValidationError(context + ": expected 1 or " + std::to_string(V) + " values, got " +
                              std::to_string(values.size()));
    return Eigen::Map<const Eigen::VectorXd>(values.data(), V);
}

std::string subject_name(Eigen::Index i, Eigen::Index n) {
    int width = 1;
    for (Eigen::Index x = n; x >= 10; x /= 10) ++width;
    width = std::clamp(width, 4, 19);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%0*lld", width, static_cast<long long>(i + 1));
    return buf;
}

}  // namespace

void PopulationSpec::validate() const {
    if (n_subjects < 1) throw ValidationError("population: n_subjects must be >= 1");
    if (!(age_lo < age_hi)) throw ValidationError("population: age range must satisfy lo < hi");
    if (!(sex_ratio >= 0.0 && sex_ratio <= 1.0))
        throw ValidationError("population: sex_ratio must be in [0, 1]");
    const Eigen::Index V = alpha.size();
    if (V < 1) throw ValidationError("population: at least one feature required");
    if (beta_age.size() != V || beta_sex.size() != V || sigma.size() != V)
        throw ValidationError("population: alpha/beta_age/beta_sex/sigma must share one length");
    if ((sigma.array() <= 0.0).any())
        throw ValidationError("population: sigma must be positive elementwise");
    if (static_cast<Eigen::Index>(feature_names.size()) != V)
        throw ValidationError("population: feature_names length mismatch");
    if (!is_valid_identifier(site_id))
        throw ValidationError("population: invalid site id '" + site_id + "'");
}

void BiasSpec::validate(Eigen::Index n_features) const {
    if (gamma.size() != n_features || delta.size() != n_features)
        throw ValidationError("bias: gamma/delta must have one value per feature");
    if ((delta.array() <= 0.0).any())
        throw ValidationError("bias: delta must be positive elementwise");
    if (noise < 0.0) throw ValidationError("bias: the noise factor must be >= 0");
    if (!site_id.empty() && !is_valid_identifier(site_id))
        throw ValidationError("bias: invalid site id '" + site_id + "'");
}

void PathologySpec::validate() const {
    if (!(fraction_affected >= 0.0 && fraction_affected <= 1.0))
        throw ValidationError("pathology: fraction must be in [0, 1]");
    if (multiplicative_factor < 0.0)
        throw ValidationError("pathology: multiplicative factor must be >= 0");
    if (!is_valid_identifier(diagnosis_label))
        throw ValidationError("pathology: invalid diagnosis label");
}

CovariateSchema synthetic_schema() {
    CovariateSchema schema;
    schema.entries.push_back({"age", CovariateKind::Continuous, {}});
    schema.entries.push_back({"sex", CovariateKind::Categorical, {"M", "F"}});
    schema.label_columns.push_back({"diagnosis", {}});
    return schema;
}

CohortTable generate_cohort(const PopulationSpec& spec) {
    spec.validate();
    const Eigen::Index n = spec.n_subjects;
    const Eigen::Index V = spec.n_features();
    rng::Rng gen(spec.seed);

    std::vector<double> ages(static_cast<std::size_t>(n));
    for (auto& a : ages) a = gen.uniform(spec.age_lo, spec.age_hi);

    // Exact counts, random placement.
    const auto n_female = static_cast<std::size_t>(
        std::llround(spec.sex_ratio * static_cast<double>(n)));
    std::vector<std::string> sexes(static_cast<std::size_t>(n), "M");
    for (std::size_t i = 0; i < n_female && i < sexes.size(); ++i) sexes[i] = "F";
    gen.shuffle(sexes);

    CohortTable table;
    table.schema = synthetic_schema();
    table.feature_names = spec.feature_names;
    table.features.resize(n, V);
    LatentRecord latent;
    latent.cov_term.resize(n, V);
    latent.eps.resize(n, V);

    auto& diagnosis = table.label_values["diagnosis"];
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        table.subject_ids.push_back(subject_name(i, n));
        table.site_ids.push_back(spec.site_id);
        table.covariates.push_back({CovariateValue{ages[r]}, CovariateValue{sexes[r]}});
        diagnosis.push_back("HC");
        const double female = (sexes[r] == "F") ? 1.0 : 0.0;
        for (Eigen::Index v = 0; v < V; ++v) {
            const double cov = ages[r] * spec.beta_age[v] + female * spec.beta_sex[v];
            const double eps = spec.sigma[v] * gen.normal();
            latent.cov_term(i, v) = cov;
            latent.eps(i, v) = eps;
            table.features(i, v) = spec.alpha[v] + cov + eps;
        }
    }
    table.latent = std::move(latent);
    table.validate();
    return table;
}

CohortTable inject_bias(const CohortTable& cohort, const BiasSpec& bias,
                        const PopulationSpec& base) {
    base.validate();
    bias.validate(cohort.n_features());
    if (!cohort.latent.has_value())
        throw ValidationError("inject_bias: cohort carries no latent record");
    if (cohort.n_features() != base.n_features())
        throw ValidationError("inject_bias: base spec feature count mismatch");

    CohortTable out = cohort.with_site_id(bias.site_id.empty() ? base.site_id + "-mod"
                                                               : bias.site_id);
    const LatentRecord& latent = *cohort.latent;
    for (Eigen::Index i = 0; i < out.n_rows(); ++i)
        for (Eigen::Index v = 0; v < out.n_features(); ++v)
            out.features(i, v) = base.alpha[v] + bias.gamma[v] * bias.additive +
                                 latent.cov_term(i, v) * bias.slope +
                                 bias.delta[v] * latent.eps(i, v) * bias.noise;

    LatentRecord& applied = *out.latent;
    applied.biased = true;
    applied.bias_additive = bias.additive;
    applied.bias_slope = bias.slope;
    applied.bias_noise = bias.noise;
    applied.site_shift = bias.gamma;
    applied.site_scale = bias.delta;
    return out;
}

CohortTable mark_pathology(const CohortTable& cohort, const PathologySpec& spec,
                           const PopulationSpec& base, std::uint64_t seed) {
    base.validate();
    spec.validate();
    if (!cohort.latent.has_value())
        throw ValidationError("mark_pathology: cohort carries no latent record");
    if (cohort.n_features() != base.n_features())
        throw ValidationError("mark_pathology: base spec feature count mismatch");

    const Eigen::Index n = cohort.n_rows();
    const auto count = static_cast<std::size_t>(
        std::llround(spec.fraction_affected * static_cast<double>(n)));
    CohortTable out = cohort;
    if (out.label_values.count("diagnosis") == 0) {
        if (out.schema.find_label("diagnosis") == nullptr)
            out.schema.label_columns.push_back({"diagnosis", {}});
        out.label_values["diagnosis"].assign(static_cast<std::size_t>(n), "HC");
    }
    if (count == 0) return out;

    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    rng::Rng gen(seed);
    std::vector<Eigen::Index> affected = gen.sample(rows, count);

    const LatentRecord& latent = *cohort.latent;
    for (Eigen::Index i : affected) {
        out.label_values["diagnosis"][static_cast<std::size_t>(i)] = spec.diagnosis_label;
        for (Eigen::Index v = 0; v < out.n_features(); ++v) {
            const double site_term =
                latent.biased ? latent.site_shift[v] * latent.bias_additive : 0.0;
            const double scale = latent.biased ? latent.site_scale[v] * latent.bias_noise : 1.0;
            const double slope = latent.biased ? latent.bias_slope : 1.0;
            out.features(i, v) = base.alpha[v] * spec.additive_factor + site_term +
                                 latent.cov_term(i, v) * slope +
                                 scale * latent.eps(i, v) * spec.multiplicative_factor;
        }
    }
    return out;
}

BiasSpec default_bias(const PopulationSpec& base, double additive, double slope, double noise) {
    BiasSpec bias;
    bias.additive = additive;
    bias.slope = slope;
    bias.noise = noise;
    bias.gamma = 0.05 * base.alpha;
    bias.delta = Eigen::VectorXd::Ones(base.n_features());
    return bias;
}

SynthJob job_from_config(const TextConfig& cfg) {
    SynthJob job;
    const ConfigSection& pop = cfg.section("population");
    auto require = [&](const ConfigSection& sec, const std::string& key) -> const ConfigValue& {
        const ConfigValue* v = sec.find(key);
        if (v == nullptr)
            throw ValidationError(cfg.source_name() + ": [" + sec.name + "] is missing '" + key + "'");
        return *v;
    };

    PopulationSpec& p = job.population;
    p.n_subjects = static_cast<Eigen::Index>(require(pop, "n_subjects").as_number("n_subjects"));
    const auto range = require(pop, "age_range").as_number_array("age_range");
    if (range.size() != 2) throw ValidationError("population: age_range expects [lo, hi]");
    p.age_lo = range[0];
    p.age_hi = range[1];
    p.sex_ratio = require(pop, "sex_ratio").as_number("sex_ratio");
    if (const ConfigValue* v = pop.find("site_id")) p.site_id = v->as_string("site_id");
    if (const ConfigValue* v = pop.find("seed"))
        p.seed = static_cast<std::uint64_t>(v->as_number("seed"));

    Eigen::Index V = 0;
    if (const ConfigValue* v = pop.find("feature_names")) {
        p.feature_names = v->as_string_array("feature_names");
        V = static_cast<Eigen::Index>(p.feature_names.size());
    } else if (const ConfigValue* v2 = pop.find("n_features")) {
        V = static_cast<Eigen::Index>(v2->as_number("n_features"));
        std::string prefix = "feat";
        if (const ConfigValue* pv = pop.find("feature_prefix"))
            prefix = pv->as_string("feature_prefix");
        for (Eigen::Index i = 0; i < V; ++i) {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "%02lld", static_cast<long long>(i));
            p.feature_names.push_back(prefix + buf);
        }
    } else {
        throw ValidationError("population: need feature_names or n_features");
    }
    p.alpha = broadcast(require(pop, "alpha").as_number_array("alpha"), V, "alpha");
    p.beta_age = broadcast(require(pop, "beta_age").as_number_array("beta_age"), V, "beta_age");
    p.beta_sex = broadcast(require(pop, "beta_sex").as_number_array("beta_sex"), V, "beta_sex");
    p.sigma = broadcast(require(pop, "sigma").as_number_array("sigma"), V, "sigma");
    p.validate();

    if (const ConfigSection* bias_sec = cfg.find_section("bias")) {
        BiasSpec bias = default_bias(p, 1.0, 1.0, 1.0);
        if (const ConfigValue* v = bias_sec->find("A")) bias.additive = v->as_number("A");
        if (const ConfigValue* v = bias_sec->find("S")) bias.slope = v->as_number("S");
        if (const ConfigValue* v = bias_sec->find("M")) bias.noise = v->as_number("M");
        if (const ConfigValue* v = bias_sec->find("gamma"))
            bias.gamma = broadcast(v->as_number_array("gamma"), V, "gamma");
        if (const ConfigValue* v = bias_sec->find("delta"))
            bias.delta = broadcast(v->as_number_array("delta"), V, "delta");
        if (const ConfigValue* v = bias_sec->find("site_id"))
            bias.site_id = v->as_string("site_id");
        bias.validate(V);
        job.bias = std::move(bias);
    }

    if (const ConfigSection* patho_sec = cfg.find_section("pathology")) {
        PathologySpec patho;
        patho.fraction_affected = require(*patho_sec, "fraction").as_number("fraction");
        if (const ConfigValue* v = patho_sec->find("additive_factor"))
            patho.additive_factor = v->as_number("additive_factor");
        if (const ConfigValue* v = patho_sec->find("multiplicative_factor"))
            patho.multiplicative_factor = v->as_number("multiplicative_factor");
        if (const ConfigValue* v = patho_sec->find("label"))
            patho.diagnosis_label = v->as_string("label");
        patho.validate();
        job.pathology = patho;
        job.pathology_seed = p.seed + 1;
        if (const ConfigValue* v = patho_sec->find("seed"))
            job.pathology_seed = static_cast<std::uint64_t>(v->as_number("seed"));
    }
    return job;
}

CohortTable run_job(const SynthJob& job) {
    CohortTable table = generate_cohort(job.population);
    if (job.bias.has_value()) table = inject_bias(table, *job.bias, job.population);
    if (job.pathology.has_value())
        table = mark_pathology(table, *job.pathology, job.population, job.pathology_seed);
    return table;
}

}  // namespace harmon::synth
