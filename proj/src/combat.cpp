#include "harmon/combat.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "harmon/error.hpp"

namespace harmon::combat {

namespace {

// Residual scale below this fraction of the feature magnitude is treated as
// an exact fit (constant feature after covariate removal).
constexpr double kConstantRelTol = 1e-12;

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += sep;
        out += parts[i];
    }
    return out;
}

void check_design_compatible(const GlobalFit& fit, const DesignMatrix& design) {
    if (design.column_labels != fit.design_labels)
        throw ValidationError(
            "design/schema mismatch: model expects columns [" + join(fit.design_labels, ", ") +
            "], got [" + join(design.column_labels, ", ") + "]");
}

void check_features_compatible(const GlobalFit& fit, const CohortTable& table) {
    if (table.feature_names != fit.feature_names)
        throw ValidationError("feature mismatch: model expects [" + join(fit.feature_names, ", ") +
                              "], got [" + join(table.feature_names, ", ") + "]");
}

}  // namespace

std::vector<bool> GlobalFit::active_features() const {
    std::vector<bool> out(static_cast<std::size_t>(alpha.size()));
    for (Eigen::Index v = 0; v < alpha.size(); ++v)
        out[static_cast<std::size_t>(v)] = !is_constant(v);
    return out;
}

const SiteBatch& HarmonizationModel::site(const std::string& id) const {
    auto it = sites.find(id);
    if (it == sites.end()) {
        std::vector<std::string> known;
        for (const auto& [k, v] : sites) known.push_back(k);
        throw ValidationError("unknown site '" + id + "'; known sites: [" + join(known, ", ") + "]");
    }
    return it->second;
}

std::vector<std::string> HarmonizationModel::site_ids() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : sites) out.push_back(k);
    return out;
}

GlobalFit fit_global(const CohortTable& table, const DesignMatrix& design) {
    const Eigen::Index n = table.n_rows();
    const Eigen::Index V = table.n_features();
    if (design.n_rows() != n) throw ValidationError("fit: design row count mismatch");
    if (design.n_cols() < 1 || design.column_labels.front() != "intercept")
        throw ValidationError("fit: design must carry a leading intercept column");

    auto site_rows = table.rows_by_site();
    const Eigen::Index n_sites = static_cast<Eigen::Index>(site_rows.size());
    const Eigen::Index p = design.n_cols() - 1;
    const Eigen::Index cols = n_sites + p;
    if (n <= cols)
        throw NumericError("fit: need more subjects (" + std::to_string(n) +
                           ") than model columns (" + std::to_string(cols) + ")");

    // Per-site indicator columns replace the shared intercept; together with
    // the subject-weighted recentering below this realizes the sum-to-zero
    // site-effect constraint.
    Eigen::MatrixXd X(n, cols);
    X.setZero();
    std::vector<std::string> aug_labels;
    Eigen::Index c = 0;
    for (const auto& [site, rows] : site_rows) {
        for (Eigen::Index r : rows) X(r, c) = 1.0;
        aug_labels.push_back("site:" + site);
        ++c;
    }
    X.rightCols(p) = design.X.rightCols(p);
    for (Eigen::Index j = 1; j < design.n_cols(); ++j)
        aug_labels.push_back(design.column_labels[static_cast<std::size_t>(j)]);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < cols) {
        std::vector<std::string> collinear;
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < cols; ++k)
            collinear.push_back(aug_labels[static_cast<std::size_t>(perm[k])]);
        std::sort(collinear.begin(), collinear.end());
        throw NumericError("fit: rank-deficient design; collinear columns: [" +
                           join(collinear, ", ") + "]");
    }

    GlobalFit fit;
    fit.feature_names = table.feature_names;
    fit.schema = table.schema;
    fit.design_labels = design.column_labels;
    fit.alpha.resize(V);
    fit.beta.resize(V, p);
    fit.sigma.resize(V);

    Eigen::VectorXd site_weight(n_sites);
    c = 0;
    for (const auto& [site, rows] : site_rows)
        site_weight[c++] = static_cast<double>(rows.size()) / static_cast<double>(n);

    for (Eigen::Index v = 0; v < V; ++v) {
        const Eigen::VectorXd y = table.features.col(v);
        const Eigen::VectorXd coef = qr.solve(y);
        const Eigen::VectorXd site_intercepts = coef.head(n_sites);
        fit.alpha[v] = site_weight.dot(site_intercepts);
        fit.beta.row(v) = coef.tail(p).transpose();
        const Eigen::VectorXd resid = y - X * coef;
        const double sigma2 = resid.squaredNorm() / static_cast<double>(n);
        const double rms_y = std::sqrt(y.squaredNorm() / static_cast<double>(n));
        double sigma = std::sqrt(sigma2);
        if (sigma <= kConstantRelTol * std::max(rms_y, 1e-300)) {
            sigma = 0.0;
            fit.warnings.push_back("feature '" + fit.feature_names[static_cast<std::size_t>(v)] +
                                   "' has zero residual scale; passed through unharmonized");
        }
        fit.sigma[v] = sigma;
    }
    return fit;
}

StandardizedData standardize(const CohortTable& table, const DesignMatrix& design,
                             const GlobalFit& fit) {
    check_design_compatible(fit, design);
    check_features_compatible(fit, table);
    const Eigen::Index n = table.n_rows();
    const Eigen::Index V = table.n_features();
    if (design.n_rows() != n) throw ValidationError("standardize: design row count mismatch");

    StandardizedData out;
    out.site_ids = table.site_ids;
    out.active = fit.active_features();
    out.z.setZero(n, V);
    const Eigen::MatrixXd covariate_part = design.X.rightCols(design.n_cols() - 1);
    for (Eigen::Index v = 0; v < V; ++v) {
        if (fit.is_constant(v)) continue;
        out.z.col(v) =
            (table.features.col(v).array() - fit.alpha[v] -
             (covariate_part * fit.beta.row(v).transpose()).array()) /
            fit.sigma[v];
    }
    if (!out.z.allFinite()) throw NumericError("standardize: non-finite standardized values");
    return out;
}

std::vector<SiteMoments> estimate_site_moments(const StandardizedData& data) {
    std::map<std::string, std::vector<Eigen::Index>> site_rows;
    for (std::size_t i = 0; i < data.site_ids.size(); ++i)
        site_rows[data.site_ids[i]].push_back(static_cast<Eigen::Index>(i));

    const Eigen::Index V = data.z.cols();
    std::vector<SiteMoments> out;
    for (const auto& [site, rows] : site_rows) {
        const auto J = static_cast<Eigen::Index>(rows.size());
        if (J < 2)
            throw ValidationError("site '" + site + "' has " + std::to_string(J) +
                                  " subject(s); at least 2 are required");
        SiteMoments m;
        m.site_id = site;
        m.n_subjects = J;
        m.gamma_hat.setZero(V);
        m.delta2_hat.setZero(V);
        for (Eigen::Index v = 0; v < V; ++v) {
            if (!data.active[static_cast<std::size_t>(v)]) continue;
            double mean = 0.0;
            for (Eigen::Index r : rows) mean += data.z(r, v);
            mean /= static_cast<double>(J);
            double ss = 0.0;
            for (Eigen::Index r : rows) {
                const double d = data.z(r, v) - mean;
                ss += d * d;
            }
            m.gamma_hat[v] = mean;
            m.delta2_hat[v] = ss / static_cast<double>(J - 1);
        }
        out.push_back(std::move(m));
    }
    return out;
}

Hyperpriors fit_hyperpriors(const SiteMoments& moments, const std::vector<bool>& active) {
    Hyperpriors hp;
    Eigen::Index n_active = 0;
    for (bool a : active)
        if (a) ++n_active;
    if (n_active < 2) {
        hp.ls_fallback = true;
        return hp;
    }

    const Eigen::Index V = moments.gamma_hat.size();
    double mu = 0.0, g = 0.0;
    for (Eigen::Index v = 0; v < V; ++v) {
        if (!active[static_cast<std::size_t>(v)]) continue;
        mu += moments.gamma_hat[v];
        g += moments.delta2_hat[v];
    }
    mu /= static_cast<double>(n_active);
    g /= static_cast<double>(n_active);
    double tau2 = 0.0, s2 = 0.0;
    for (Eigen::Index v = 0; v < V; ++v) {
        if (!active[static_cast<std::size_t>(v)]) continue;
        tau2 += (moments.gamma_hat[v] - mu) * (moments.gamma_hat[v] - mu);
        s2 += (moments.delta2_hat[v] - g) * (moments.delta2_hat[v] - g);
    }
    tau2 /= static_cast<double>(n_active - 1);
    s2 /= static_cast<double>(n_active - 1);

    hp.mu_bar = mu;
    hp.tau2_bar = tau2;
    hp.g_bar = g;
    hp.s2_bar = s2;
    if (s2 <= 0.0 || g <= 0.0) {
        // Degenerate inverse-gamma prior; the caller keeps empirical moments.
        hp.ls_fallback = true;
        return hp;
    }
    hp.lambda_bar = (g * g + 2.0 * s2) / s2;
    hp.theta_bar = (g * g * g + g * s2) / s2;
    return hp;
}

ShrinkResult eb_shrink(const SiteMoments& moments, const Hyperpriors& priors,
                       const std::vector<bool>& active, const EbOptions& options) {
    if (priors.ls_fallback)
        throw ValidationError("eb_shrink: degenerate priors; use the location/scale estimates");
    if (!(std::isfinite(priors.mu_bar) && std::isfinite(priors.tau2_bar) &&
          std::isfinite(priors.lambda_bar) && std::isfinite(priors.theta_bar)))
        throw NumericError("eb_shrink: non-finite hyperpriors");

    const Eigen::Index V = moments.gamma_hat.size();
    const double J = static_cast<double>(moments.n_subjects);
    ShrinkResult res;
    res.gamma_star = moments.gamma_hat;
    res.delta2_star = moments.delta2_hat;

    auto rel_change = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
    };

    res.converged = false;
    int it = 0;
    for (; it < options.max_iter; ++it) {
        double worst = 0.0;
        for (Eigen::Index v = 0; v < V; ++v) {
            if (!active[static_cast<std::size_t>(v)]) continue;
            const double gamma_hat = moments.gamma_hat[v];
            const double delta2 = res.delta2_star[v];
            const double gamma_new =
                (J * priors.tau2_bar * gamma_hat + delta2 * priors.mu_bar) /
                (J * priors.tau2_bar + delta2);
            // Sum of squares about the shrunken mean, via the moment identity
            // sum (z - g)^2 = (J-1) delta2_hat + J (gamma_hat - g)^2.
            const double sse = (J - 1.0) * moments.delta2_hat[v] +
                               J * (gamma_hat - gamma_new) * (gamma_hat - gamma_new);
            const double delta2_new =
                (priors.theta_bar + 0.5 * sse) / (J / 2.0 + priors.lambda_bar - 1.0);
            if (!std::isfinite(gamma_new) || !std::isfinite(delta2_new))
                throw NumericError("eb_shrink: non-finite iterate for feature index " +
                                   std::to_string(v));
            worst = std::max(worst, rel_change(gamma_new, res.gamma_star[v]));
            worst = std::max(worst, rel_change(delta2_new, res.delta2_star[v]));
            res.gamma_star[v] = gamma_new;
            res.delta2_star[v] = delta2_new;
        }
        if (worst < options.tol) {
            res.converged = true;
            ++it;
            break;
        }
    }
    res.iterations = it;

    // Constant features keep identity parameters.
    for (Eigen::Index v = 0; v < V; ++v) {
        if (!active[static_cast<std::size_t>(v)]) {
            res.gamma_star[v] = 0.0;
            res.delta2_star[v] = 1.0;
        }
    }
    return res;
}

ShrinkResult ls_estimate(const SiteMoments& moments) {
    ShrinkResult res;
    res.gamma_star = moments.gamma_hat;
    res.delta2_star = moments.delta2_hat;
    res.iterations = 0;
    res.converged = true;
    return res;
}

HarmonizationModel fit_harmonization(const CohortTable& table, const CovariateSchema& schema,
                                     const EbOptions& options) {
    const DesignMatrix design = build_design(table, schema);
    HarmonizationModel model;
    model.global = fit_global(table, design);
    model.global.schema = schema;
    const StandardizedData z = standardize(table, design, model.global);
    const std::vector<SiteMoments> moments = estimate_site_moments(z);

    for (const auto& m : moments) {
        SiteBatch batch;
        batch.site_id = m.site_id;
        batch.n_subjects = m.n_subjects;
        batch.gamma_hat = m.gamma_hat;
        batch.delta2_hat = m.delta2_hat;

        Hyperpriors hp = fit_hyperpriors(m, z.active);
        batch.mu_bar = hp.mu_bar;
        batch.tau2_bar = hp.tau2_bar;
        batch.lambda_bar = hp.lambda_bar;
        batch.theta_bar = hp.theta_bar;
        batch.g_bar = hp.g_bar;
        batch.s2_bar = hp.s2_bar;

        if (!options.empirical_bayes || hp.ls_fallback) {
            ShrinkResult r = ls_estimate(m);
            batch.gamma_star = r.gamma_star;
            batch.delta2_star = r.delta2_star;
            batch.iterations_used = 0;
            batch.converged = true;
            batch.ls_mode = true;
            if (options.empirical_bayes)
                model.global.warnings.push_back("site '" + m.site_id +
                                                "': degenerate priors, location/scale estimates kept");
        } else {
            ShrinkResult r = eb_shrink(m, hp, z.active, options);
            batch.gamma_star = r.gamma_star;
            batch.delta2_star = r.delta2_star;
            batch.iterations_used = r.iterations;
            batch.converged = r.converged;
            batch.ls_mode = false;
            if (!r.converged)
                model.global.warnings.push_back("site '" + m.site_id + "': shrinkage stopped after " +
                                                std::to_string(r.iterations) +
                                                " iterations without converging");
        }
        model.sites.emplace(batch.site_id, std::move(batch));
    }
    return model;
}

CohortTable apply_combat(const CohortTable& table, const DesignMatrix& design,
                         const HarmonizationModel& model) {
    check_design_compatible(model.global, design);
    check_features_compatible(model.global, table);
    const Eigen::Index n = table.n_rows();
    const Eigen::Index V = table.n_features();
    const Eigen::MatrixXd covariate_part = design.X.rightCols(design.n_cols() - 1);

    CohortTable out = table;
    out.latent.reset();
    for (Eigen::Index i = 0; i < n; ++i) {
        const SiteBatch& batch = model.site(table.site_ids[static_cast<std::size_t>(i)]);
        for (Eigen::Index v = 0; v < V; ++v) {
            if (model.global.is_constant(v) || batch.delta2_star[v] <= 0.0) continue;
            const double fitted =
                model.global.alpha[v] + covariate_part.row(i).dot(model.global.beta.row(v));
            const double z = (table.features(i, v) - fitted) / model.global.sigma[v];
            out.features(i, v) =
                model.global.sigma[v] / std::sqrt(batch.delta2_star[v]) * (z - batch.gamma_star[v]) +
                fitted;
        }
    }
    return out;
}

}  // namespace harmon::combat
