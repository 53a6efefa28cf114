#include "harmon/text_config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "harmon/error.hpp"

namespace harmon {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& what) {
    throw ValidationError(source + ":" + std::to_string(line) + ": " + what);
}

bool is_bare_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
           c == '.' || c == '+' || c == 'e' || c == 'E';
}

// Parses one scalar or array value from `text` starting at `pos`.
ConfigValue parse_value(const std::string& text, std::size_t& pos,
                        const std::string& source, int line);

ConfigValue parse_scalar(const std::string& text, std::size_t& pos,
                         const std::string& source, int line) {
    ConfigValue v;
    if (text[pos] == '"') {
        std::size_t end = text.find('"', pos + 1);
        if (end == std::string::npos) fail(source, line, "unterminated string");
        v.kind = ConfigValue::Kind::String;
        v.str = text.substr(pos + 1, end - pos - 1);
        pos = end + 1;
        return v;
    }
    std::size_t start = pos;
    while (pos < text.size() && is_bare_char(text[pos])) ++pos;
    std::string token = text.substr(start, pos - start);
    if (token.empty()) fail(source, line, "expected a value");
    if (token == "true" || token == "false") {
        v.kind = ConfigValue::Kind::Boolean;
        v.boolean = (token == "true");
        return v;
    }
    char* endp = nullptr;
    double num = std::strtod(token.c_str(), &endp);
    if (endp != nullptr && *endp == '\0' && endp != token.c_str()) {
        v.kind = ConfigValue::Kind::Number;
        v.num = num;
        v.str = token;
        return v;
    }
    v.kind = ConfigValue::Kind::String;
    v.str = token;
    return v;
}

void skip_spaces(const std::string& text, std::size_t& pos) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
}

ConfigValue parse_value(const std::string& text, std::size_t& pos,
                        const std::string& source, int line) {
    skip_spaces(text, pos);
    if (pos >= text.size()) fail(source, line, "missing value");
    if (text[pos] != '[') return parse_scalar(text, pos, source, line);

    ConfigValue arr;
    arr.kind = ConfigValue::Kind::Array;
    ++pos;
    skip_spaces(text, pos);
    if (pos < text.size() && text[pos] == ']') {
        ++pos;
        return arr;
    }
    while (true) {
        skip_spaces(text, pos);
        if (pos >= text.size()) fail(source, line, "unterminated array");
        arr.items.push_back(parse_scalar(text, pos, source, line));
        skip_spaces(text, pos);
        if (pos >= text.size()) fail(source, line, "unterminated array");
        if (text[pos] == ',') {
            ++pos;
            continue;
        }
        if (text[pos] == ']') {
            ++pos;
            return arr;
        }
        fail(source, line, "expected ',' or ']' in array");
    }
}

}  // namespace

const ConfigValue* ConfigSection::find(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

const std::string& ConfigValue::as_string(const std::string& context) const {
    if (kind != Kind::String)
        throw ValidationError(context + ": expected a string value");
    return str;
}

double ConfigValue::as_number(const std::string& context) const {
    if (kind != Kind::Number)
        throw ValidationError(context + ": expected a numeric value");
    return num;
}

bool ConfigValue::as_boolean(const std::string& context) const {
    if (kind != Kind::Boolean)
        throw ValidationError(context + ": expected true or false");
    return boolean;
}

std::vector<double> ConfigValue::as_number_array(const std::string& context) const {
    if (kind == Kind::Number) return {num};
    if (kind != Kind::Array)
        throw ValidationError(context + ": expected a number or an array of numbers");
    std::vector<double> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.as_number(context));
    return out;
}

std::vector<std::string> ConfigValue::as_string_array(const std::string& context) const {
    if (kind == Kind::String) return {str};
    if (kind != Kind::Array)
        throw ValidationError(context + ": expected a string or an array of strings");
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.as_string(context));
    return out;
}

TextConfig TextConfig::parse(std::istream& in, const std::string& source_name) {
    TextConfig cfg;
    cfg.source_ = source_name;
    cfg.sections_.push_back(ConfigSection{"", {}});  // root section

    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        // Strip comments outside of strings.
        bool in_string = false;
        std::string line;
        for (char c : raw) {
            if (c == '"') in_string = !in_string;
            if (c == '#' && !in_string) break;
            line.push_back(c);
        }
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                fail(source_name, line_no, "malformed section header");
            std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) fail(source_name, line_no, "empty section name");
            cfg.sections_.push_back(ConfigSection{name, {}});
            continue;
        }

        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            fail(source_name, line_no, "expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) fail(source_name, line_no, "empty key");
        std::string rest = line.substr(eq + 1);
        std::size_t pos = 0;
        ConfigValue value = parse_value(rest, pos, source_name, line_no);
        skip_spaces(rest, pos);
        if (pos != rest.size())
            fail(source_name, line_no, "trailing characters after value");

        ConfigSection& sec = cfg.sections_.back();
        if (sec.find(key) != nullptr)
            fail(source_name, line_no, "duplicate key '" + key + "'");
        sec.entries.emplace_back(key, std::move(value));
    }
    return cfg;
}

TextConfig TextConfig::parse_string(const std::string& text, const std::string& source_name) {
    std::istringstream in(text);
    return parse(in, source_name);
}

TextConfig TextConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    return parse(in, path);
}

const ConfigSection* TextConfig::find_section(const std::string& name) const {
    for (const auto& s : sections_)
        if (s.name == name) return &s;
    return nullptr;
}

const ConfigSection& TextConfig::section(const std::string& name) const {
    const ConfigSection* s = find_section(name);
    if (s == nullptr)
        throw ValidationError(source_ + ": missing required section [" + name + "]");
    return *s;
}

}  // namespace harmon
