#include "harmon/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "harmon/error.hpp"
#include "harmon/numfmt.hpp"

namespace harmon {

namespace {

constexpr const char* kMagic = "harmon-model";

void write_vector(std::ostream& out, const std::string& key, const Eigen::VectorXd& v) {
    out << key << " =";
    for (Eigen::Index i = 0; i < v.size(); ++i) out << " " << format_g17(v[i]);
    out << "\n";
}

void write_tokens(std::ostream& out, const std::string& key,
                  const std::vector<std::string>& tokens) {
    out << key << " =";
    for (const auto& t : tokens) out << " " << t;
    out << "\n";
}

// --- strict line reader ------------------------------------------------

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw ValidationError(source_ + ":" + std::to_string(line_no_) + ": " + what);
    }

    std::string next_line() {
        std::string line;
        if (!std::getline(in_, line)) fail("truncated model document");
        ++line_no_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    }

    void expect_literal(const std::string& literal) {
        std::string line = next_line();
        if (line != literal) fail("expected '" + literal + "', got '" + line + "'");
    }

    // Parses "key = v1 v2 ..." and returns the value tokens.
    std::vector<std::string> expect_key(const std::string& key) {
        std::string line = next_line();
        const std::string prefix = key + " =";
        if (line.compare(0, prefix.size(), prefix) != 0)
            fail("expected field '" + key + "', got '" + line + "'");
        std::istringstream rest(line.substr(prefix.size()));
        std::vector<std::string> tokens;
        std::string t;
        while (rest >> t) tokens.push_back(t);
        return tokens;
    }

    std::string expect_scalar(const std::string& key) {
        auto tokens = expect_key(key);
        if (tokens.size() != 1) fail("field '" + key + "' expects exactly one value");
        return tokens[0];
    }

    double expect_number(const std::string& key) { return to_number(expect_scalar(key), key); }

    long expect_integer(const std::string& key) {
        const double v = expect_number(key);
        if (v != std::floor(v)) fail("field '" + key + "' expects an integer");
        return static_cast<long>(v);
    }

    bool expect_boolean(const std::string& key) {
        const std::string v = expect_scalar(key);
        if (v == "true") return true;
        if (v == "false") return false;
        fail("field '" + key + "' expects true/false");
    }

    Eigen::VectorXd expect_vector(const std::string& key, Eigen::Index size) {
        auto tokens = expect_key(key);
        if (static_cast<Eigen::Index>(tokens.size()) != size)
            fail("field '" + key + "' expects " + std::to_string(size) + " values, got " +
                 std::to_string(tokens.size()));
        Eigen::VectorXd v(size);
        for (Eigen::Index i = 0; i < size; ++i)
            v[i] = to_number(tokens[static_cast<std::size_t>(i)], key);
        return v;
    }

    double to_number(const std::string& token, const std::string& key) const {
        const char* begin = token.c_str();
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin || *end != '\0')
            fail("field '" + key + "': bad number '" + token + "'");
        return v;
    }

    void expect_eof() {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) fail("trailing content after [end]");
        }
    }

private:
    std::istream& in_;
    std::string source_;
    int line_no_ = 0;
};

}  // namespace

void save_model(const pairwise::PairwiseModel& pw, std::ostream& out) {
    const combat::HarmonizationModel& model = pw.model;
    const combat::GlobalFit& fit = model.global;
    const Eigen::Index V = fit.n_features();
    const Eigen::Index p = fit.beta.cols();

    out << kMagic << "\n";
    out << "format_version = " << model.format_version << "\n";
    out << "mode = " << (model.mode == combat::ModelMode::Pairwise ? "pairwise" : "classic")
        << "\n";

    out << "[schema]\n";
    out << "covariates = " << fit.schema.entries.size() << "\n";
    for (std::size_t k = 0; k < fit.schema.entries.size(); ++k) {
        const auto& e = fit.schema.entries[k];
        out << "covariate_" << k << " = " << e.name;
        if (e.kind == CovariateKind::Continuous) {
            out << " continuous";
        } else {
            out << " categorical";
            for (const auto& l : e.levels) out << " " << l;
        }
        out << "\n";
    }
    out << "label_columns = " << fit.schema.label_columns.size() << "\n";
    for (std::size_t k = 0; k < fit.schema.label_columns.size(); ++k) {
        const auto& c = fit.schema.label_columns[k];
        out << "label_" << k << " = " << c.name;
        if (c.levels.empty()) {
            out << " text";
        } else {
            out << " levels";
            for (const auto& l : c.levels) out << " " << l;
        }
        out << "\n";
    }

    out << "[global]\n";
    out << "features = " << V << "\n";
    write_tokens(out, "feature_names", fit.feature_names);
    out << "design_columns = " << fit.design_labels.size() << "\n";
    write_tokens(out, "design_labels", fit.design_labels);
    write_vector(out, "alpha", fit.alpha);
    write_vector(out, "sigma", fit.sigma);
    for (Eigen::Index v = 0; v < V; ++v)
        write_vector(out, "beta_" + std::to_string(v), fit.beta.row(v).transpose());

    for (const auto& [id, site] : model.sites) {
        out << "[site " << id << "]\n";
        out << "n_subjects = " << site.n_subjects << "\n";
        out << "mu_bar = " << format_g17(site.mu_bar) << "\n";
        out << "tau2_bar = " << format_g17(site.tau2_bar) << "\n";
        out << "lambda_bar = " << format_g17(site.lambda_bar) << "\n";
        out << "theta_bar = " << format_g17(site.theta_bar) << "\n";
        out << "g_bar = " << format_g17(site.g_bar) << "\n";
        out << "s2_bar = " << format_g17(site.s2_bar) << "\n";
        out << "ls_mode = " << (site.ls_mode ? "true" : "false") << "\n";
        out << "converged = " << (site.converged ? "true" : "false") << "\n";
        out << "iterations_used = " << site.iterations_used << "\n";
        write_vector(out, "gamma_hat", site.gamma_hat);
        write_vector(out, "delta2_hat", site.delta2_hat);
        write_vector(out, "gamma_star", site.gamma_star);
        write_vector(out, "delta2_star", site.delta2_star);
    }

    if (model.mode == combat::ModelMode::Pairwise) {
        out << "[pairwise]\n";
        out << "reference_site = " << pw.reference_site << "\n";
        out << "moving_site = " << pw.moving_site << "\n";
        out << "n_reference = " << pw.report.n_reference << "\n";
        out << "n_moving = " << pw.report.n_moving << "\n";
        out << "reference_converged = " << (pw.report.reference_converged ? "true" : "false")
            << "\n";
        out << "moving_converged = " << (pw.report.moving_converged ? "true" : "false") << "\n";
        for (const auto& [name, range] : pw.report.continuous_ranges)
            out << "range_" << name << " = " << format_g17(range.first) << " "
                << format_g17(range.second) << "\n";
        for (const auto& [name, levels] : pw.report.observed_levels)
            write_tokens(out, "levels_" + name, levels);
    }
    out << "[end]\n";
}

void save_model_file(const pairwise::PairwiseModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open output file: " + path);
    save_model(model, out);
}

pairwise::PairwiseModel load_model(std::istream& in, const std::string& source_name) {
    Reader r(in, source_name);
    r.expect_literal(kMagic);
    const long version = r.expect_integer("format_version");
    if (version != combat::HarmonizationModel::kFormatVersion)
        r.fail("unsupported format_version " + std::to_string(version) + " (expected " +
               std::to_string(combat::HarmonizationModel::kFormatVersion) + ")");
    const std::string mode = r.expect_scalar("mode");
    if (mode != "pairwise" && mode != "classic") r.fail("unknown mode '" + mode + "'");

    pairwise::PairwiseModel pw;
    combat::HarmonizationModel& model = pw.model;
    model.format_version = static_cast<int>(version);
    model.mode = (mode == "pairwise") ? combat::ModelMode::Pairwise : combat::ModelMode::Classic;

    r.expect_literal("[schema]");
    combat::GlobalFit& fit = model.global;
    const long n_cov = r.expect_integer("covariates");
    for (long k = 0; k < n_cov; ++k) {
        auto tokens = r.expect_key("covariate_" + std::to_string(k));
        if (tokens.size() < 2) r.fail("malformed covariate declaration");
        CovariateSpec spec;
        spec.name = tokens[0];
        if (tokens[1] == "continuous") {
            if (tokens.size() != 2) r.fail("continuous covariate takes no levels");
            spec.kind = CovariateKind::Continuous;
        } else if (tokens[1] == "categorical") {
            spec.kind = CovariateKind::Categorical;
            spec.levels.assign(tokens.begin() + 2, tokens.end());
        } else {
            r.fail("unknown covariate kind '" + tokens[1] + "'");
        }
        fit.schema.entries.push_back(std::move(spec));
    }
    const long n_labels = r.expect_integer("label_columns");
    for (long k = 0; k < n_labels; ++k) {
        auto tokens = r.expect_key("label_" + std::to_string(k));
        if (tokens.size() < 2) r.fail("malformed label column declaration");
        LabelColumnSpec spec;
        spec.name = tokens[0];
        if (tokens[1] == "levels")
            spec.levels.assign(tokens.begin() + 2, tokens.end());
        else if (tokens[1] != "text")
            r.fail("unknown label column kind '" + tokens[1] + "'");
        fit.schema.label_columns.push_back(std::move(spec));
    }
    fit.schema.validate();

    r.expect_literal("[global]");
    const long V = r.expect_integer("features");
    if (V < 1) r.fail("model needs at least one feature");
    fit.feature_names = r.expect_key("feature_names");
    if (static_cast<long>(fit.feature_names.size()) != V)
        r.fail("feature_names count mismatch");
    const long n_design = r.expect_integer("design_columns");
    fit.design_labels = r.expect_key("design_labels");
    if (static_cast<long>(fit.design_labels.size()) != n_design || n_design < 1)
        r.fail("design_labels count mismatch");
    fit.alpha = r.expect_vector("alpha", V);
    fit.sigma = r.expect_vector("sigma", V);
    fit.beta.resize(V, n_design - 1);
    for (long v = 0; v < V; ++v)
        fit.beta.row(v) = r.expect_vector("beta_" + std::to_string(v), n_design - 1).transpose();

    // Site sections until [pairwise] or [end].
    std::string line = r.next_line();
    while (line.rfind("[site ", 0) == 0) {
        if (line.back() != ']') r.fail("malformed site header");
        combat::SiteBatch site;
        site.site_id = line.substr(6, line.size() - 7);
        if (!is_valid_identifier(site.site_id)) r.fail("invalid site id '" + site.site_id + "'");
        site.n_subjects = r.expect_integer("n_subjects");
        site.mu_bar = r.expect_number("mu_bar");
        site.tau2_bar = r.expect_number("tau2_bar");
        site.lambda_bar = r.expect_number("lambda_bar");
        site.theta_bar = r.expect_number("theta_bar");
        site.g_bar = r.expect_number("g_bar");
        site.s2_bar = r.expect_number("s2_bar");
        site.ls_mode = r.expect_boolean("ls_mode");
        site.converged = r.expect_boolean("converged");
        site.iterations_used = static_cast<int>(r.expect_integer("iterations_used"));
        site.gamma_hat = r.expect_vector("gamma_hat", V);
        site.delta2_hat = r.expect_vector("delta2_hat", V);
        site.gamma_star = r.expect_vector("gamma_star", V);
        site.delta2_star = r.expect_vector("delta2_star", V);
        if (model.sites.count(site.site_id) > 0) r.fail("duplicate site '" + site.site_id + "'");
        model.sites.emplace(site.site_id, std::move(site));
        line = r.next_line();
    }
    if (model.sites.empty()) r.fail("model holds no sites");

    if (model.mode == combat::ModelMode::Pairwise) {
        if (line != "[pairwise]") r.fail("expected [pairwise] section, got '" + line + "'");
        pw.reference_site = r.expect_scalar("reference_site");
        pw.moving_site = r.expect_scalar("moving_site");
        model.reference_site = pw.reference_site;
        pw.report.n_reference = r.expect_integer("n_reference");
        pw.report.n_moving = r.expect_integer("n_moving");
        pw.report.reference_converged = r.expect_boolean("reference_converged");
        pw.report.moving_converged = r.expect_boolean("moving_converged");
        // Ranges and levels are written in name-sorted order (map iteration),
        // so read them back the same way.
        std::vector<std::string> continuous_names, categorical_names;
        for (const auto& e : fit.schema.entries) {
            (e.kind == CovariateKind::Continuous ? continuous_names : categorical_names)
                .push_back(e.name);
        }
        std::sort(continuous_names.begin(), continuous_names.end());
        std::sort(categorical_names.begin(), categorical_names.end());
        for (const auto& name : continuous_names) {
            auto tokens = r.expect_key("range_" + name);
            if (tokens.size() != 2) r.fail("range for '" + name + "' expects two values");
            pw.report.continuous_ranges[name] = {r.to_number(tokens[0], "range_" + name),
                                                 r.to_number(tokens[1], "range_" + name)};
        }
        for (const auto& name : categorical_names)
            pw.report.observed_levels[name] = r.expect_key("levels_" + name);
        if (pw.reference_site == pw.moving_site)
            r.fail("reference and moving sites must differ");
        if (model.sites.count(pw.reference_site) == 0 || model.sites.count(pw.moving_site) == 0)
            r.fail("pairwise sites missing from the site map");
        line = r.next_line();
    }

    if (line != "[end]") r.fail("expected [end], got '" + line + "'");
    r.expect_eof();
    return pw;
}

pairwise::PairwiseModel load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file: " + path);
    return load_model(in, path);
}

}  // namespace harmon
