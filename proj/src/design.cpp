#include "harmon/design.hpp"

#include "harmon/error.hpp"

namespace harmon {

DesignMatrix build_design(const CohortTable& table, const CovariateSchema& schema) {
    schema.validate();
    const Eigen::Index n = table.n_rows();

    Eigen::Index cols = 1;
    for (const auto& e : schema.entries) {
        if (e.kind == CovariateKind::Continuous)
            cols += 1;
        else
            cols += static_cast<Eigen::Index>(e.levels.size()) - 1;
    }

    DesignMatrix design;
    design.X.setZero(n, cols);
    design.X.col(0).setOnes();
    design.column_labels.push_back("intercept");

    Eigen::Index c = 1;
    for (const auto& e : schema.entries) {
        if (e.kind == CovariateKind::Continuous) {
            for (Eigen::Index i = 0; i < n; ++i)
                design.X(i, c) = table.continuous_value(i, e.name);
            design.column_labels.push_back(e.name);
            ++c;
        }
    }
    for (const auto& e : schema.entries) {
        if (e.kind != CovariateKind::Categorical) continue;
        for (std::size_t l = 1; l < e.levels.size(); ++l) {
            for (Eigen::Index i = 0; i < n; ++i)
                design.X(i, c) = (table.categorical_value(i, e.name) == e.levels[l]) ? 1.0 : 0.0;
            design.column_labels.push_back(e.name + ":" + e.levels[l]);
            ++c;
        }
    }
    return design;
}

}  // namespace harmon
