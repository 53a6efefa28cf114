#include "harmon/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "harmon/error.hpp"
#include "harmon/numfmt.hpp"
#include "harmon/rng.hpp"

namespace harmon {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& token, const std::string& source, std::size_t row,
                    const std::string& column) {
    const char* begin = token.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw ValidationError(source + ": row " + std::to_string(row) + ", column '" +
                              column + "': not a number: '" + token + "'");
    if (!std::isfinite(v))
        throw ValidationError(source + ": row " + std::to_string(row) + ", column '" +
                              column + "': non-finite value '" + token + "'");
    return v;
}

}  // namespace

std::vector<std::string> CohortTable::sites() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : site_ids)
        if (seen.insert(s).second) out.push_back(s);
    return out;
}

std::map<std::string, std::vector<Eigen::Index>> CohortTable::rows_by_site() const {
    std::map<std::string, std::vector<Eigen::Index>> out;
    for (Eigen::Index i = 0; i < n_rows(); ++i) out[site_ids[i]].push_back(i);
    return out;
}

double CohortTable::continuous_value(Eigen::Index row, const std::string& covariate) const {
    for (std::size_t k = 0; k < schema.entries.size(); ++k) {
        if (schema.entries[k].name == covariate) {
            if (schema.entries[k].kind != CovariateKind::Continuous)
                throw ValidationError("covariate '" + covariate + "' is not continuous");
            return std::get<double>(covariates[static_cast<std::size_t>(row)][k]);
        }
    }
    throw ValidationError("unknown covariate '" + covariate + "'");
}

const std::string& CohortTable::categorical_value(Eigen::Index row,
                                                  const std::string& covariate) const {
    for (std::size_t k = 0; k < schema.entries.size(); ++k) {
        if (schema.entries[k].name == covariate) {
            if (schema.entries[k].kind != CovariateKind::Categorical)
                throw ValidationError("covariate '" + covariate + "' is not categorical");
            return std::get<std::string>(covariates[static_cast<std::size_t>(row)][k]);
        }
    }
    throw ValidationError("unknown covariate '" + covariate + "'");
}

const std::string& CohortTable::label_value(Eigen::Index row, const std::string& column) const {
    auto it = label_values.find(column);
    if (it == label_values.end())
        throw ValidationError("unknown label column '" + column + "'");
    return it->second[static_cast<std::size_t>(row)];
}

CohortTable CohortTable::subset(const std::vector<Eigen::Index>& rows) const {
    CohortTable out;
    out.schema = schema;
    out.feature_names = feature_names;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), n_features());
    out.subject_ids.reserve(rows.size());
    out.site_ids.reserve(rows.size());
    out.covariates.reserve(rows.size());
    for (const auto& [name, values] : label_values)
        out.label_values[name].reserve(rows.size());
    if (latent.has_value()) {
        LatentRecord lr = *latent;
        lr.cov_term.resize(static_cast<Eigen::Index>(rows.size()), n_features());
        lr.eps.resize(static_cast<Eigen::Index>(rows.size()), n_features());
        out.latent = std::move(lr);
    }
    Eigen::Index r = 0;
    for (Eigen::Index i : rows) {
        if (i < 0 || i >= n_rows()) throw ValidationError("subset: row index out of range");
        out.subject_ids.push_back(subject_ids[static_cast<std::size_t>(i)]);
        out.site_ids.push_back(site_ids[static_cast<std::size_t>(i)]);
        out.covariates.push_back(covariates[static_cast<std::size_t>(i)]);
        for (const auto& [name, values] : label_values)
            out.label_values[name].push_back(values[static_cast<std::size_t>(i)]);
        out.features.row(r) = features.row(i);
        if (latent.has_value()) {
            out.latent->cov_term.row(r) = latent->cov_term.row(i);
            out.latent->eps.row(r) = latent->eps.row(i);
        }
        ++r;
    }
    return out;
}

std::vector<Eigen::Index> CohortTable::rows_where(const std::string& column,
                                                  const std::string& value) const {
    std::vector<Eigen::Index> out;
    if (label_values.count(column) > 0) {
        const auto& values = label_values.at(column);
        for (Eigen::Index i = 0; i < n_rows(); ++i)
            if (values[static_cast<std::size_t>(i)] == value) out.push_back(i);
        return out;
    }
    const CovariateSpec* spec = schema.find(column);
    if (spec == nullptr || spec->kind != CovariateKind::Categorical)
        throw ValidationError("row filter: no categorical covariate or label column named '" +
                              column + "'");
    for (Eigen::Index i = 0; i < n_rows(); ++i)
        if (categorical_value(i, column) == value) out.push_back(i);
    return out;
}

CohortTable CohortTable::with_site_id(const std::string& new_site) const {
    if (!is_valid_identifier(new_site))
        throw ValidationError("invalid site id '" + new_site + "'");
    CohortTable out = *this;
    std::fill(out.site_ids.begin(), out.site_ids.end(), new_site);
    return out;
}

void CohortTable::validate() const {
    schema.validate();
    const std::size_t n = subject_ids.size();
    if (site_ids.size() != n || covariates.size() != n ||
        static_cast<std::size_t>(features.rows()) != n)
        throw ValidationError("cohort: inconsistent row counts");
    if (static_cast<std::size_t>(features.cols()) != feature_names.size())
        throw ValidationError("cohort: feature name count does not match feature columns");
    if (feature_names.empty()) throw ValidationError("cohort: at least one feature required");

    std::set<std::string> fnames;
    for (const auto& f : feature_names) {
        if (!is_valid_identifier(f))
            throw ValidationError("cohort: invalid feature name '" + f + "'");
        if (schema.has_column(f))
            throw ValidationError("cohort: feature name '" + f + "' collides with a schema column");
        if (!fnames.insert(f).second)
            throw ValidationError("cohort: duplicate feature name '" + f + "'");
    }

    std::set<std::pair<std::string, std::string>> ids;
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_valid_identifier(subject_ids[i]))
            throw ValidationError("cohort: invalid subject id '" + subject_ids[i] + "'");
        if (!is_valid_identifier(site_ids[i]))
            throw ValidationError("cohort: invalid site id '" + site_ids[i] + "'");
        if (!ids.insert({site_ids[i], subject_ids[i]}).second)
            throw ValidationError("cohort: duplicate subject id '" + subject_ids[i] +
                                  "' within site '" + site_ids[i] + "'");
        if (covariates[i].size() != schema.entries.size())
            throw ValidationError("cohort: covariate arity mismatch at row " + std::to_string(i + 1));
        for (std::size_t k = 0; k < schema.entries.size(); ++k) {
            const CovariateSpec& spec = schema.entries[k];
            if (spec.kind == CovariateKind::Continuous) {
                if (!std::holds_alternative<double>(covariates[i][k]) ||
                    !std::isfinite(std::get<double>(covariates[i][k])))
                    throw ValidationError("cohort: bad continuous value for '" + spec.name +
                                          "' at row " + std::to_string(i + 1));
            } else {
                if (!std::holds_alternative<std::string>(covariates[i][k]))
                    throw ValidationError("cohort: bad categorical value for '" + spec.name +
                                          "' at row " + std::to_string(i + 1));
                const std::string& v = std::get<std::string>(covariates[i][k]);
                if (std::find(spec.levels.begin(), spec.levels.end(), v) == spec.levels.end())
                    throw ValidationError("cohort: unknown level '" + v + "' for '" + spec.name +
                                          "' at row " + std::to_string(i + 1));
            }
        }
    }
    for (const auto& [name, values] : label_values) {
        if (values.size() != n)
            throw ValidationError("cohort: label column '" + name + "' row count mismatch");
        const LabelColumnSpec* spec = schema.find_label(name);
        if (spec == nullptr)
            throw ValidationError("cohort: undeclared label column '" + name + "'");
        if (!spec->levels.empty()) {
            for (const auto& v : values)
                if (std::find(spec->levels.begin(), spec->levels.end(), v) == spec->levels.end())
                    throw ValidationError("cohort: unknown level '" + v + "' for column '" +
                                          name + "'");
        }
    }
    if (!features.allFinite())
        throw ValidationError("cohort: non-finite feature values");
    if (latent.has_value()) {
        if (latent->cov_term.rows() != features.rows() || latent->cov_term.cols() != features.cols() ||
            latent->eps.rows() != features.rows() || latent->eps.cols() != features.cols())
            throw ValidationError("cohort: latent record shape mismatch");
    }
}

CohortTable load_cohort(std::istream& in, const CovariateSchema& schema,
                        const std::string& source_name) {
    schema.validate();
    std::string line;
    if (!std::getline(in, line))
        throw ValidationError(source_name + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "subject_id" || header[1] != "site")
        throw ValidationError(source_name + ": header must start with 'subject_id,site'");

    // Map declared columns; the rest are features.
    std::vector<int> cov_col(schema.entries.size(), -1);
    std::map<std::string, int> label_col;
    std::vector<std::size_t> feature_cols;
    std::vector<std::string> feature_names;
    for (std::size_t c = 2; c < header.size(); ++c) {
        const std::string& name = header[c];
        bool matched = false;
        for (std::size_t k = 0; k < schema.entries.size(); ++k) {
            if (schema.entries[k].name == name) {
                if (cov_col[k] != -1)
                    throw ValidationError(source_name + ": duplicate column '" + name + "'");
                cov_col[k] = static_cast<int>(c);
                matched = true;
                break;
            }
        }
        if (!matched && schema.find_label(name) != nullptr) {
            if (label_col.count(name) > 0)
                throw ValidationError(source_name + ": duplicate column '" + name + "'");
            label_col[name] = static_cast<int>(c);
            matched = true;
        }
        if (!matched) {
            feature_cols.push_back(c);
            feature_names.push_back(name);
        }
    }
    for (std::size_t k = 0; k < schema.entries.size(); ++k)
        if (cov_col[k] == -1)
            throw ValidationError(source_name + ": missing covariate column '" +
                                  schema.entries[k].name + "'");
    for (const auto& lc : schema.label_columns)
        if (label_col.count(lc.name) == 0)
            throw ValidationError(source_name + ": missing column '" + lc.name + "'");
    if (feature_cols.empty())
        throw ValidationError(source_name + ": no feature columns");

    CohortTable table;
    table.schema = schema;
    table.feature_names = feature_names;
    for (const auto& lc : schema.label_columns) table.label_values[lc.name] = {};

    std::vector<std::vector<double>> feature_rows;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ValidationError(source_name + ": row " + std::to_string(row_no) + ": expected " +
                                  std::to_string(header.size()) + " columns, got " +
                                  std::to_string(cells.size()));
        table.subject_ids.push_back(cells[0]);
        table.site_ids.push_back(cells[1]);
        std::vector<CovariateValue> row_cov;
        row_cov.reserve(schema.entries.size());
        for (std::size_t k = 0; k < schema.entries.size(); ++k) {
            const std::string& cell = cells[static_cast<std::size_t>(cov_col[k])];
            const CovariateSpec& spec = schema.entries[k];
            if (spec.kind == CovariateKind::Continuous) {
                row_cov.emplace_back(parse_number(cell, source_name, row_no, spec.name));
            } else {
                if (std::find(spec.levels.begin(), spec.levels.end(), cell) == spec.levels.end())
                    throw ValidationError(source_name + ": row " + std::to_string(row_no) +
                                          ", column '" + spec.name + "': unknown level '" +
                                          cell + "'");
                row_cov.emplace_back(cell);
            }
        }
        table.covariates.push_back(std::move(row_cov));
        for (const auto& [name, col] : label_col)
            table.label_values[name].push_back(cells[static_cast<std::size_t>(col)]);
        std::vector<double> fr;
        fr.reserve(feature_cols.size());
        for (std::size_t fc : feature_cols)
            fr.push_back(parse_number(cells[fc], source_name, row_no, header[fc]));
        feature_rows.push_back(std::move(fr));
    }

    table.features.resize(static_cast<Eigen::Index>(feature_rows.size()),
                          static_cast<Eigen::Index>(feature_cols.size()));
    for (std::size_t i = 0; i < feature_rows.size(); ++i)
        for (std::size_t v = 0; v < feature_cols.size(); ++v)
            table.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(v)) =
                feature_rows[i][v];

    table.validate();
    return table;
}

CohortTable load_cohort_file(const std::string& path, const CovariateSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open cohort file: " + path);
    return load_cohort(in, schema, path);
}

void save_cohort(const CohortTable& table, std::ostream& out) {
    out << "subject_id,site";
    for (const auto& e : table.schema.entries) out << "," << e.name;
    for (const auto& lc : table.schema.label_columns) out << "," << lc.name;
    for (const auto& f : table.feature_names) out << "," << f;
    out << "\n";
    for (Eigen::Index i = 0; i < table.n_rows(); ++i) {
        const auto r = static_cast<std::size_t>(i);
        out << table.subject_ids[r] << "," << table.site_ids[r];
        for (std::size_t k = 0; k < table.schema.entries.size(); ++k) {
            out << ",";
            if (table.schema.entries[k].kind == CovariateKind::Continuous)
                out << format_g17(std::get<double>(table.covariates[r][k]));
            else
                out << std::get<std::string>(table.covariates[r][k]);
        }
        for (const auto& lc : table.schema.label_columns)
            out << "," << table.label_values.at(lc.name)[r];
        for (Eigen::Index v = 0; v < table.n_features(); ++v)
            out << "," << format_g17(table.features(i, v));
        out << "\n";
    }
}

void save_cohort_file(const CohortTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open output file: " + path);
    save_cohort(table, out);
}

void save_latent(const CohortTable& table, std::ostream& out) {
    if (!table.latent.has_value())
        throw ValidationError("cohort has no latent record to export");
    out << "subject_id,site";
    for (const auto& f : table.feature_names) out << ",eps_" << f;
    for (const auto& f : table.feature_names) out << ",xb_" << f;
    out << "\n";
    for (Eigen::Index i = 0; i < table.n_rows(); ++i) {
        const auto r = static_cast<std::size_t>(i);
        out << table.subject_ids[r] << "," << table.site_ids[r];
        for (Eigen::Index v = 0; v < table.n_features(); ++v)
            out << "," << format_g17(table.latent->eps(i, v));
        for (Eigen::Index v = 0; v < table.n_features(); ++v)
            out << "," << format_g17(table.latent->cov_term(i, v));
        out << "\n";
    }
}

std::pair<CohortTable, CohortTable> split_train_test(const CohortTable& table,
                                                     double train_fraction,
                                                     const std::vector<std::string>& stratify_by,
                                                     std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0))
        throw ValidationError("split: train fraction must be in (0, 1]");
    if (table.n_rows() == 0) throw ValidationError("split: empty table");

    // Stratum key: concatenation of the chosen covariate values.
    auto stratum_key = [&](Eigen::Index row) {
        std::string key;
        for (const auto& name : stratify_by) {
            const CovariateSpec* spec = table.schema.find(name);
            if (spec == nullptr) throw ValidationError("split: unknown covariate '" + name + "'");
            key += '|';
            if (spec->kind == CovariateKind::Categorical)
                key += table.categorical_value(row, name);
            else
                key += format_g17(table.continuous_value(row, name));
        }
        return key;
    };

    std::map<std::string, std::vector<Eigen::Index>> strata;
    for (Eigen::Index i = 0; i < table.n_rows(); ++i) strata[stratum_key(i)].push_back(i);

    rng::Rng gen(seed);
    std::vector<Eigen::Index> train_rows, test_rows;
    for (auto& [key, rows] : strata) {
        auto picked = gen.sample(rows, static_cast<std::size_t>(std::llround(
                                           train_fraction * static_cast<double>(rows.size()))));
        std::set<Eigen::Index> in_train(picked.begin(), picked.end());
        for (Eigen::Index r : rows)
            (in_train.count(r) ? train_rows : test_rows).push_back(r);
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {table.subset(train_rows), table.subset(test_rows)};
}

CohortTable stratified_sample(const CohortTable& table, Eigen::Index n,
                              const SampleOptions& options, std::uint64_t seed) {
    if (n < 1) throw ValidationError("sample: n must be >= 1");

    std::vector<Eigen::Index> eligible;
    for (Eigen::Index i = 0; i < table.n_rows(); ++i) {
        if (options.age_window.has_value()) {
            double age = table.continuous_value(i, "age");
            if (age < options.age_window->first || age > options.age_window->second) continue;
        }
        eligible.push_back(i);
    }

    rng::Rng gen(seed);
    std::vector<Eigen::Index> chosen;
    if (options.sex_balanced) {
        if (n % 2 != 0) throw ValidationError("sample: sex-balanced draws need an even n");
        const CovariateSpec* sex = table.schema.find("sex");
        if (sex == nullptr || sex->kind != CovariateKind::Categorical || sex->levels.size() != 2)
            throw ValidationError("sample: sex-balanced draws need a two-level 'sex' covariate");
        std::vector<Eigen::Index> groups[2];
        for (Eigen::Index r : eligible)
            groups[table.categorical_value(r, "sex") == sex->levels[0] ? 0 : 1].push_back(r);
        const auto half = static_cast<std::size_t>(n / 2);
        for (int g = 0; g < 2; ++g) {
            if (groups[g].size() < half)
                throw ValidationError("sample: insufficient eligible subjects for sex '" +
                                      sex->levels[static_cast<std::size_t>(g)] + "': need " +
                                      std::to_string(half) + ", have " +
                                      std::to_string(groups[g].size()));
            auto picked = gen.sample(groups[g], half);
            chosen.insert(chosen.end(), picked.begin(), picked.end());
        }
    } else {
        if (eligible.size() < static_cast<std::size_t>(n))
            throw ValidationError("sample: insufficient eligible subjects: need " +
                                  std::to_string(n) + ", have " + std::to_string(eligible.size()));
        chosen = gen.sample(eligible, static_cast<std::size_t>(n));
    }
    std::sort(chosen.begin(), chosen.end());
    return table.subset(chosen);
}

}  // namespace harmon
