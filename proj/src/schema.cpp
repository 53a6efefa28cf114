#include "harmon/schema.hpp"

#include <set>
#include <sstream>

#include "harmon/error.hpp"

namespace harmon {

bool is_valid_identifier(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
                  (c >= '0' && c <= '9') || c == '_' || c == '-';
        if (!ok) return false;
    }
    return true;
}

const CovariateSpec* CovariateSchema::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

const LabelColumnSpec* CovariateSchema::find_label(const std::string& name) const {
    for (const auto& e : label_columns)
        if (e.name == name) return &e;
    return nullptr;
}

bool CovariateSchema::has_column(const std::string& name) const {
    return find(name) != nullptr || find_label(name) != nullptr;
}

void CovariateSchema::validate() const {
    std::set<std::string> seen;
    auto check_name = [&](const std::string& name) {
        if (!is_valid_identifier(name))
            throw ValidationError("schema: invalid column name '" + name + "'");
        if (name == "subject_id" || name == "site")
            throw ValidationError("schema: column name '" + name + "' is reserved");
        if (!seen.insert(name).second)
            throw ValidationError("schema: duplicate column name '" + name + "'");
    };
    for (const auto& e : entries) {
        check_name(e.name);
        if (e.kind == CovariateKind::Categorical) {
            if (e.levels.size() < 2)
                throw ValidationError("schema: categorical covariate '" + e.name +
                                      "' needs at least 2 levels");
            std::set<std::string> lv;
            for (const auto& l : e.levels) {
                if (!is_valid_identifier(l))
                    throw ValidationError("schema: invalid level '" + l + "' for '" +
                                          e.name + "'");
                if (!lv.insert(l).second)
                    throw ValidationError("schema: duplicate level '" + l + "' for '" +
                                          e.name + "'");
            }
        } else if (!e.levels.empty()) {
            throw ValidationError("schema: continuous covariate '" + e.name +
                                  "' must not declare levels");
        }
    }
    for (const auto& c : label_columns) {
        check_name(c.name);
        for (const auto& l : c.levels)
            if (!is_valid_identifier(l))
                throw ValidationError("schema: invalid level '" + l + "' for column '" +
                                      c.name + "'");
    }
}

CovariateSchema CovariateSchema::from_config(const TextConfig& cfg) {
    CovariateSchema schema;
    const ConfigSection& cov = cfg.section("covariates");
    for (const auto& [key, value] : cov.entries) {
        CovariateSpec spec;
        spec.name = key;
        if (value.is_string() && value.str == "continuous") {
            spec.kind = CovariateKind::Continuous;
        } else {
            spec.kind = CovariateKind::Categorical;
            spec.levels = value.as_string_array(cfg.source_name() + ": covariate '" + key + "'");
        }
        schema.entries.push_back(std::move(spec));
    }
    if (const ConfigSection* cols = cfg.find_section("columns")) {
        for (const auto& [key, value] : cols->entries) {
            LabelColumnSpec spec;
            spec.name = key;
            if (!(value.is_string() && value.str == "text"))
                spec.levels = value.as_string_array(cfg.source_name() + ": column '" + key + "'");
            schema.label_columns.push_back(std::move(spec));
        }
    }
    schema.validate();
    return schema;
}

CovariateSchema CovariateSchema::load_file(const std::string& path) {
    return from_config(TextConfig::parse_file(path));
}

std::string CovariateSchema::to_config_text() const {
    std::ostringstream out;
    out << "[covariates]\n";
    for (const auto& e : entries) {
        out << e.name << " = ";
        if (e.kind == CovariateKind::Continuous) {
            out << "\"continuous\"\n";
        } else {
            out << "[";
            for (std::size_t i = 0; i < e.levels.size(); ++i) {
                if (i > 0) out << ", ";
                out << "\"" << e.levels[i] << "\"";
            }
            out << "]\n";
        }
    }
    if (!label_columns.empty()) {
        out << "[columns]\n";
        for (const auto& c : label_columns) {
            if (c.levels.empty()) {
                out << c.name << " = \"text\"\n";
            } else {
                out << c.name << " = [";
                for (std::size_t i = 0; i < c.levels.size(); ++i) {
                    if (i > 0) out << ", ";
                    out << "\"" << c.levels[i] << "\"";
                }
                out << "]\n";
            }
        }
    }
    return out.str();
}

CovariateSchema CovariateSchema::project(const std::vector<std::string>& covariate_names) const {
    CovariateSchema out;
    for (const auto& name : covariate_names) {
        const CovariateSpec* spec = find(name);
        if (spec == nullptr)
            throw ValidationError("schema: unknown covariate '" + name + "' in projection");
        out.entries.push_back(*spec);
    }
    out.label_columns = label_columns;
    out.validate();
    return out;
}

}  // namespace harmon
