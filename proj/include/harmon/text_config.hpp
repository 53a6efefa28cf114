#pragma once

#include <istream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace harmon {

// Minimal TOML-subset document used for schema files, generator specs and
// experiment configs. Supported syntax:
//   # comment
//   [section]
//   key = "string" | bare_word | number | true | false | [v1, v2, ...]
// Sections and keys keep file order; duplicate keys within a section are
// rejected. Anything outside this subset is a parse error.
struct ConfigValue {
    enum class Kind { String, Number, Boolean, Array };

    Kind kind = Kind::String;
    std::string str;
    double num = 0.0;
    bool boolean = false;
    std::vector<ConfigValue> items;

    bool is_string() const { return kind == Kind::String; }
    bool is_number() const { return kind == Kind::Number; }
    bool is_array() const { return kind == Kind::Array; }

    // Typed accessors; throw ValidationError naming `context` on mismatch.
    const std::string& as_string(const std::string& context) const;
    double as_number(const std::string& context) const;
    bool as_boolean(const std::string& context) const;
    std::vector<double> as_number_array(const std::string& context) const;
    std::vector<std::string> as_string_array(const std::string& context) const;
};

struct ConfigSection {
    std::string name;
    std::vector<std::pair<std::string, ConfigValue>> entries;

    const ConfigValue* find(const std::string& key) const;
    bool has(const std::string& key) const { return find(key) != nullptr; }
};

class TextConfig {
public:
    static TextConfig parse(std::istream& in, const std::string& source_name);
    static TextConfig parse_string(const std::string& text, const std::string& source_name);
    static TextConfig parse_file(const std::string& path);

    const std::vector<ConfigSection>& sections() const { return sections_; }
    const ConfigSection* find_section(const std::string& name) const;
    // Throwing variant.
    const ConfigSection& section(const std::string& name) const;

    const std::string& source_name() const { return source_; }

private:
    std::vector<ConfigSection> sections_;
    std::string source_;
};

}  // namespace harmon
