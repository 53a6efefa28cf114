#include "harmon/pairwise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "harmon/error.hpp"

namespace harmon::pairwise {

namespace {

std::string single_site_of(const CohortTable& table, const std::string& role) {
    auto sites = table.sites();
    if (sites.empty()) throw ValidationError(role + " table is empty");
    if (sites.size() != 1)
        throw ValidationError(role + " table must hold exactly one site, got " +
                              std::to_string(sites.size()));
    return sites.front();
}

CohortTable apply_fit_filter(const CohortTable& table,
                             const std::optional<std::pair<std::string, std::string>>& filter,
                             bool* applied) {
    if (!filter.has_value()) return table;
    const auto& [column, value] = *filter;
    const bool has_column = table.schema.has_column(column);
    if (!has_column) return table;
    *applied = true;
    return table.subset(table.rows_where(column, value));
}

// Moving features reordered to the reference order; mismatches are named.
std::vector<Eigen::Index> feature_permutation(const std::vector<std::string>& reference,
                                              const std::vector<std::string>& moving) {
    std::vector<Eigen::Index> perm;
    perm.reserve(reference.size());
    for (const auto& name : reference) {
        auto it = std::find(moving.begin(), moving.end(), name);
        if (it == moving.end())
            throw ValidationError("feature mismatch: moving table lacks feature '" + name + "'");
        perm.push_back(static_cast<Eigen::Index>(it - moving.begin()));
    }
    for (const auto& name : moving)
        if (std::find(reference.begin(), reference.end(), name) == reference.end())
            throw ValidationError("feature mismatch: reference table lacks feature '" + name + "'");
    return perm;
}

// Two-site stack carrying exactly the design covariates.
CohortTable make_union_table(const CohortTable& reference, const CohortTable& moving,
                             const CovariateSchema& schema) {
    const auto perm = feature_permutation(reference.feature_names, moving.feature_names);
    CohortTable out;
    out.schema.entries = schema.entries;
    out.feature_names = reference.feature_names;
    const Eigen::Index n = reference.n_rows() + moving.n_rows();
    const Eigen::Index V = reference.n_features();
    out.features.resize(n, V);

    auto push_rows = [&](const CohortTable& src, Eigen::Index offset, bool permute) {
        for (Eigen::Index i = 0; i < src.n_rows(); ++i) {
            const auto r = static_cast<std::size_t>(i);
            out.subject_ids.push_back(src.subject_ids[r]);
            out.site_ids.push_back(src.site_ids[r]);
            std::vector<CovariateValue> cov;
            cov.reserve(schema.entries.size());
            for (const auto& e : schema.entries) {
                if (e.kind == CovariateKind::Continuous)
                    cov.emplace_back(src.continuous_value(i, e.name));
                else
                    cov.emplace_back(src.categorical_value(i, e.name));
            }
            out.covariates.push_back(std::move(cov));
            for (Eigen::Index v = 0; v < V; ++v)
                out.features(offset + i, v) = src.features(i, permute ? perm[static_cast<std::size_t>(v)] : v);
        }
    };
    push_rows(reference, 0, false);
    push_rows(moving, reference.n_rows(), true);
    out.validate();
    return out;
}

}  // namespace

PairwiseModel fit_pairwise(const CohortTable& reference, const CohortTable& moving,
                           const CovariateSchema& schema, const FitOptions& options) {
    const std::string ref_site = single_site_of(reference, "reference");
    const std::string mov_site = single_site_of(moving, "moving");
    if (ref_site == mov_site)
        throw ValidationError("reference and moving tables share the site id '" + ref_site + "'");

    bool filter_used = false;
    const CohortTable ref_fit = apply_fit_filter(reference, options.fit_filter, &filter_used);
    const CohortTable mov_fit = apply_fit_filter(moving, options.fit_filter, &filter_used);
    if (options.fit_filter.has_value() && !filter_used)
        throw ValidationError("fit filter column '" + options.fit_filter->first +
                              "' exists in neither table");
    if (ref_fit.n_rows() < 2)
        throw ValidationError("reference site '" + ref_site + "' has fewer than 2 fit rows");
    if (mov_fit.n_rows() < 2)
        throw ValidationError("moving site '" + mov_site + "' has fewer than 2 fit rows");

    const CohortTable joint = make_union_table(ref_fit, mov_fit, schema);
    PairwiseModel pw;
    pw.model = combat::fit_harmonization(joint, schema, options.eb);
    pw.model.mode = combat::ModelMode::Pairwise;
    pw.model.reference_site = ref_site;
    pw.reference_site = ref_site;
    pw.moving_site = mov_site;

    pw.report.n_reference = ref_fit.n_rows();
    pw.report.n_moving = mov_fit.n_rows();
    pw.report.reference_converged = pw.model.site(ref_site).converged;
    pw.report.moving_converged = pw.model.site(mov_site).converged;
    for (const auto& e : schema.entries) {
        if (e.kind == CovariateKind::Continuous) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < joint.n_rows(); ++i) {
                const double x = joint.continuous_value(i, e.name);
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            pw.report.continuous_ranges[e.name] = {lo, hi};
        } else {
            std::set<std::string> seen;
            for (Eigen::Index i = 0; i < joint.n_rows(); ++i)
                seen.insert(joint.categorical_value(i, e.name));
            pw.report.observed_levels[e.name] = {seen.begin(), seen.end()};
        }
    }
    return pw;
}

CohortTable harmonize_moving(const PairwiseModel& pw, const CohortTable& rows) {
    if (pw.model.mode != combat::ModelMode::Pairwise)
        throw ValidationError("harmonize_moving needs a reference-anchored model");
    for (const auto& s : rows.sites()) {
        if (s != pw.moving_site)
            throw ValidationError("rows belong to site '" + s + "' but the model moves site '" +
                                  pw.moving_site + "' onto '" + pw.reference_site + "'");
    }
    if (rows.feature_names != pw.model.global.feature_names)
        throw ValidationError("harmonize_moving: feature names do not match the fitted model");

    const combat::GlobalFit& fit = pw.model.global;
    const combat::SiteBatch& ref = pw.model.site(pw.reference_site);
    const combat::SiteBatch& mov = pw.model.site(pw.moving_site);

    const DesignMatrix design = build_design(rows, fit.schema);
    const Eigen::MatrixXd covariate_part = design.X.rightCols(design.n_cols() - 1);

    CohortTable out = rows;
    out.latent.reset();
    for (Eigen::Index i = 0; i < rows.n_rows(); ++i) {
        for (Eigen::Index v = 0; v < rows.n_features(); ++v) {
            if (fit.is_constant(v) || mov.delta2_star[v] <= 0.0 || ref.delta2_star[v] <= 0.0)
                continue;
            const double fitted = fit.alpha[v] + covariate_part.row(i).dot(fit.beta.row(v));
            const double z = (rows.features(i, v) - fitted) / fit.sigma[v];
            const double scale = std::sqrt(ref.delta2_star[v] / mov.delta2_star[v]);
            out.features(i, v) =
                fit.sigma[v] * (scale * (z - mov.gamma_star[v]) + ref.gamma_star[v]) + fitted;
        }
    }
    return out;
}

}  // namespace harmon::pairwise
