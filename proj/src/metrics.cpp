#include "harmon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "harmon/error.hpp"

namespace harmon::metrics {

namespace {

struct SampleMoments {
    double mean = 0.0;
    double var = 0.0;  // n-1 denominator
};

SampleMoments moments_of(std::span<const double> x) {
    if (x.size() < 2)
        throw ValidationError("distance: samples need at least 2 values, got " +
                              std::to_string(x.size()));
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return {mean, ss / static_cast<double>(x.size() - 1)};
}

}  // namespace

std::vector<RectifiedSample> rectify(const CohortTable& rows, const DesignMatrix& design,
                                     const combat::HarmonizationModel& model,
                                     const std::string& anchor_site) {
    const combat::SiteBatch& anchor = model.site(anchor_site);
    const combat::StandardizedData z = combat::standardize(rows, design, model.global);

    std::string tag = rows.site_ids.empty() ? std::string() : rows.site_ids.front();
    std::vector<RectifiedSample> out;
    out.reserve(static_cast<std::size_t>(rows.n_features()));
    for (Eigen::Index v = 0; v < rows.n_features(); ++v) {
        RectifiedSample s;
        s.site_id = tag;
        s.values = z.z.col(v);
        if (z.active[static_cast<std::size_t>(v)])
            s.values.array() -= anchor.gamma_star[v];
        out.push_back(std::move(s));
    }
    return out;
}

double bhattacharyya(std::span<const double> a, std::span<const double> b) {
    const SampleMoments ma = moments_of(a);
    const SampleMoments mb = moments_of(b);
    if (ma.var <= 0.0 || mb.var <= 0.0)
        throw NumericError("distance: zero sample variance (degenerate Gaussian)");
    const double var_sum = ma.var + mb.var;
    const double mean_diff = ma.mean - mb.mean;
    return 0.25 * mean_diff * mean_diff / var_sum +
           0.5 * std::log(var_sum / (2.0 * std::sqrt(ma.var) * std::sqrt(mb.var)));
}

double bhattacharyya(const RectifiedSample& a, const RectifiedSample& b) {
    return bhattacharyya(std::span<const double>(a.values.data(), static_cast<std::size_t>(a.values.size())),
                         std::span<const double>(b.values.data(), static_cast<std::size_t>(b.values.size())));
}

double mad(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ValidationError("mad: length mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    if (a.empty()) throw ValidationError("mad: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total / static_cast<double>(a.size());
}

double mad(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return mad(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
               std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

double mad(const CohortTable& a, const CohortTable& b) {
    if (a.n_rows() != b.n_rows() || a.n_features() != b.n_features())
        throw ValidationError("mad: tables are not row/feature aligned");
    if (a.n_rows() == 0) throw ValidationError("mad: empty tables");
    return (a.features - b.features).cwiseAbs().mean();
}

double variance_estimation_error(double true_delta2, double estimated_delta2) {
    const double d = estimated_delta2 - true_delta2;
    return d * d;
}

FitReport fit_report(const pairwise::PairwiseModel& pw, const CohortTable& reference,
                     const CohortTable& moving) {
    const combat::GlobalFit& fit = pw.model.global;
    FitReport report;
    report.feature_names = fit.feature_names;

    const DesignMatrix ref_design = build_design(reference, fit.schema);
    const DesignMatrix mov_design = build_design(moving, fit.schema);
    const CohortTable harmonized = pairwise::harmonize_moving(pw, moving);

    const auto ref_rect = rectify(reference, ref_design, pw.model, pw.reference_site);
    const auto raw_rect = rectify(moving, mov_design, pw.model, pw.reference_site);
    const auto fixed_rect = rectify(harmonized, mov_design, pw.model, pw.reference_site);

    const Eigen::Index V = fit.n_features();
    report.bd_before.setZero(V);
    report.bd_after.setZero(V);
    for (Eigen::Index v = 0; v < V; ++v) {
        if (fit.is_constant(v)) continue;
        const auto u = static_cast<std::size_t>(v);
        report.bd_before[v] = bhattacharyya(ref_rect[u], raw_rect[u]);
        report.bd_after[v] = bhattacharyya(ref_rect[u], fixed_rect[u]);
    }
    report.bd_before_mean = report.bd_before.mean();
    report.bd_after_mean = report.bd_after.mean();

    // Subject-paired differences when the moving table is a transformed copy
    // of reference subjects.
    std::map<std::string, Eigen::Index> ref_row;
    for (Eigen::Index i = 0; i < reference.n_rows(); ++i)
        ref_row[reference.subject_ids[static_cast<std::size_t>(i)]] = i;
    bool paired = moving.n_rows() > 0;
    for (const auto& id : moving.subject_ids)
        if (ref_row.count(id) == 0) {
            paired = false;
            break;
        }
    report.paired = paired;
    if (paired) {
        report.mad_before.setZero(V);
        report.mad_after.setZero(V);
        for (Eigen::Index v = 0; v < V; ++v) {
            double before = 0.0, after = 0.0;
            for (Eigen::Index i = 0; i < moving.n_rows(); ++i) {
                const Eigen::Index r = ref_row[moving.subject_ids[static_cast<std::size_t>(i)]];
                before += std::abs(moving.features(i, v) - reference.features(r, v));
                after += std::abs(harmonized.features(i, v) - reference.features(r, v));
            }
            report.mad_before[v] = before / static_cast<double>(moving.n_rows());
            report.mad_after[v] = after / static_cast<double>(moving.n_rows());
        }
    }
    return report;
}

}  // namespace harmon::metrics
